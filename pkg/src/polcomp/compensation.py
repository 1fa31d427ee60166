"""Automated polarization compensation loop.

The compensator is a stack of liquid-crystal retarders at 0/45/0 (and
optionally a fourth at 45) degrees.  One *step* is one polarization
measurement.  The coarse phase inverts the current compensator setting
to estimate the state entering the stack, solves directly for the three
retardances that map it onto the target, and actuates them through the
calibration curves.  Once the measured fidelity clears the coarse
threshold, a fine phase hill-climbs the drive voltages one cell at a
time in small steps until the fine threshold (or the step budget) is
reached.

The retardance solve is a damped Gauss-Newton (Levenberg-style) descent
on the three-component residual ``R(d) @ u - t`` with an analytic
Jacobian, restarted from uniformly drawn initial guesses until one
converges.  Solutions are wrapped into the physical actuation window
``[0.2*pi, 2.2*pi)`` and, when calibration curves are at hand, the
candidate whose drive voltages sit on the shallowest parts of the
curves is preferred (less retardance error per volt of actuation
noise).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .lcvr import RetardanceCurve, curve_slope_at, retardance_for_voltage, voltage_for_retardance
from .stokes import (
    NormalizedStokes,
    fidelity,
    invert_retarder,
    mueller_lcvr,
    mueller_lcvr_triple,
    transform_normalized,
)

__all__ = [
    "SolverFailureError",
    "RETARDANCE_WINDOW",
    "RetardanceTriple",
    "LoopConfig",
    "CompensatorState",
    "StepRecord",
    "CompensationRun",
    "MeasurementProvider",
    "shift_to_range",
    "infer_disturbed",
    "solve_retardances",
    "coarse_step",
    "fine_tune_step",
    "run_compensation",
    "qber_opt",
    "qber_total",
]

#: Physical actuation window for a full-wave cell: one wave of headroom
#: starting above the high-voltage residual retardance.
RETARDANCE_WINDOW = (0.2 * math.pi, 2.2 * math.pi)

#: Fidelity levels reported in run statistics, independent of the
#: configured loop thresholds.
REPORT_LEVELS = (0.97, 0.99, 0.995)

#: Orientations of the retarder stack, radians from horizontal.
_STACK_ANGLES = (0.0, math.pi / 4.0, 0.0, math.pi / 4.0)

#: Weight pulling the fine-tune acceptance baseline toward a losing
#: reading, so a lucky high one cannot freeze the climb (0 = never
#: relax, 1 = baseline is always the latest reading).
_BASELINE_RELAXATION = 0.3

MeasurementProvider = Callable[[Sequence[float]], NormalizedStokes]
"""Applies the given drive voltages and returns one measured state."""


class SolverFailureError(RuntimeError):
    """No multistart converged to the requested residual tolerance."""


@dataclass(frozen=True)
class RetardanceTriple:
    """Retardances of the three solving cells, radians."""

    d1: float
    d2: float
    d3: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.d1, self.d2, self.d3)

    def shifted(self) -> "RetardanceTriple":
        """Equivalent triple inside the physical actuation window."""
        return RetardanceTriple(*(shift_to_range(d) for d in self.as_tuple()))


@dataclass(frozen=True)
class LoopConfig:
    """Knobs of the compensation loop; defaults match the reference bench."""

    coarse_threshold: float = 0.97
    fine_threshold: float = 0.995
    max_coarse_steps: int = 25
    max_fine_steps: int = 150
    fine_step_v: float = 0.02  # 2x the usual 0.01 V curve granularity
    multistart_count: int = 8
    solver_tolerance: float = 1e-10

    def __post_init__(self) -> None:
        if not (0.0 < self.coarse_threshold < self.fine_threshold < 1.0):
            raise ValueError(
                "thresholds must satisfy 0 < coarse < fine < 1, got "
                f"{self.coarse_threshold!r} and {self.fine_threshold!r}"
            )
        if self.max_coarse_steps < 1 or self.max_fine_steps < 0:
            raise ValueError("step budgets must allow at least the coarse phase")
        if not (self.fine_step_v > 0.0):
            raise ValueError(f"fine_step_v must be positive, got {self.fine_step_v!r}")
        if self.multistart_count < 1:
            raise ValueError("multistart_count must be at least 1")
        if not (0.0 < self.solver_tolerance < 1e-2):
            raise ValueError(f"unreasonable solver tolerance {self.solver_tolerance!r}")


def shift_to_range(d: float) -> float:
    """Wrap a retardance by whole waves into ``[0.2*pi, 2.2*pi)``."""
    d = float(d)
    if not math.isfinite(d):
        raise ValueError(f"retardance must be finite, got {d!r}")
    lo, _ = RETARDANCE_WINDOW
    return d - 2.0 * math.pi * math.floor((d - lo) / (2.0 * math.pi))


def infer_disturbed(s_meas: NormalizedStokes, current: RetardanceTriple) -> NormalizedStokes:
    """State at the compensator input, given what was measured behind it."""
    m_inv = invert_retarder(mueller_lcvr_triple(*current.as_tuple()))
    return transform_normalized(m_inv, s_meas)


def _rotated_and_jacobian(d: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``R(d) @ u`` and its 3x3 Jacobian w.r.t. the three retardances."""
    c1, s1 = math.cos(d[0]), math.sin(d[0])
    c2, s2 = math.cos(d[1]), math.sin(d[1])
    c3, s3 = math.cos(d[2]), math.sin(d[2])
    u1, u2, u3 = u

    # Intermediate states: after cell 1, then cell 2 (closed forms of the
    # 0/45/0 rotation chain; avoids building matrices in the hot loop).
    a2 = c1 * u2 + s1 * u3
    a3 = -s1 * u2 + c1 * u3
    b1 = c2 * u1 - s2 * a3
    b3 = s2 * u1 + c2 * a3
    f = np.array([b1, c3 * a2 + s3 * b3, -s3 * a2 + c3 * b3])

    # d/dd1 through the chain.
    da2 = -s1 * u2 + c1 * u3
    da3 = -c1 * u2 - s1 * u3
    col1 = np.array([-s2 * da3, c3 * da2 + s3 * c2 * da3, -s3 * da2 + c3 * c2 * da3])
    # d/dd2.
    db1 = -s2 * u1 - c2 * a3
    db3 = c2 * u1 - s2 * a3
    col2 = np.array([db1, s3 * db3, c3 * db3])
    # d/dd3.
    col3 = np.array([0.0, -s3 * a2 + c3 * b3, -c3 * a2 - s3 * b3])
    return f, np.column_stack([col1, col2, col3])


def _damped_gauss_newton(
    u: np.ndarray, t: np.ndarray, x0: np.ndarray, tol: float, max_iter: int = 120
) -> tuple[np.ndarray, float]:
    x = np.array(x0, dtype=float)
    lam = 1e-3
    f, jac = _rotated_and_jacobian(x, u)
    r = f - t
    cost = float(r @ r)
    eye = np.eye(3)
    for _ in range(max_iter):
        if math.sqrt(cost) <= tol:
            break
        g = jac.T @ r
        h = jac.T @ jac
        improved = False
        for _ in range(40):
            try:
                dx = np.linalg.solve(h + lam * eye, -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            xt = x + dx
            ft, jt = _rotated_and_jacobian(xt, u)
            rt = ft - t
            ct = float(rt @ rt)
            if ct < cost:
                x, r, jac, cost = xt, rt, jt, ct
                lam = max(lam / 3.0, 1e-14)
                improved = True
                break
            lam *= 5.0
            if lam > 1e12:
                return x, math.sqrt(cost)
        if not improved:
            break
    return x, math.sqrt(cost)


def solve_retardances(
    s_dis: NormalizedStokes,
    s_target: NormalizedStokes,
    config: LoopConfig,
    curves: Sequence[RetardanceCurve] | None = None,
    rng: np.random.Generator | None = None,
) -> RetardanceTriple:
    """Retardances that rotate ``s_dis`` onto ``s_target`` through the stack.

    Multistart damped Gauss-Newton; initial guesses are drawn uniformly
    from ``[0, 2*pi)^3``.  Every returned component is wrapped into the
    physical window.  With ``curves`` given, the converged candidate whose
    mapped drive voltages sit on the shallowest curve regions wins;
    otherwise the smallest-residual candidate does.

    Raises
    ------
    SolverFailureError
        If none of ``config.multistart_count`` starts reaches
        ``config.solver_tolerance``.
    """
    u = s_dis.as_array()
    t = s_target.as_array()
    if rng is None:
        rng = np.random.default_rng(0)
    tol = config.solver_tolerance
    candidates: list[tuple[float, RetardanceTriple]] = []
    for _ in range(config.multistart_count):
        x0 = rng.uniform(0.0, 2.0 * math.pi, 3)
        x, res = _damped_gauss_newton(u, t, x0, tol)
        if res <= tol:
            candidates.append((res, RetardanceTriple(*x).shifted()))
    if not candidates:
        raise SolverFailureError(
            f"no convergent start in {config.multistart_count} attempts "
            f"(tolerance {tol:g})"
        )
    if curves is not None and len(curves) >= 3:
        def steepness(item: tuple[float, RetardanceTriple]) -> float:
            total = 0.0
            for curve, d in zip(curves, item[1].as_tuple()):
                total += curve_slope_at(curve, voltage_for_retardance(curve, d).voltage)
            return total

        return min(candidates, key=steepness)[1]
    return min(candidates, key=lambda item: item[0])[1]


@dataclass
class CompensatorState:
    """Current actuation of the stack: retardances and drive voltages."""

    triple: RetardanceTriple
    fourth_retardance: float | None
    voltages: tuple[float, ...]

    def n_cells(self) -> int:
        return len(self.voltages)

    def all_retardances(self) -> tuple[float, ...]:
        if self.fourth_retardance is None:
            return self.triple.as_tuple()
        return (*self.triple.as_tuple(), self.fourth_retardance)


@dataclass(frozen=True)
class StepRecord:
    """One measurement: what was set, what was seen, how close it is."""

    step: int
    phase: str
    retardances: tuple[float, ...]
    voltages: tuple[float, ...]
    stokes: tuple[float, float, float]
    fidelity: float


@dataclass
class CompensationRun:
    """Single-owner record of one compensation session, mutated in place."""

    config: LoopConfig
    target: NormalizedStokes
    curves: list[RetardanceCurve]
    state: CompensatorState
    rng: np.random.Generator
    steps: list[StepRecord] = field(default_factory=list)
    phase: str = "coarse"
    complete: bool = False
    reason: str | None = None
    current_fidelity: float = -math.inf
    coarse_used: int = 0
    fine_used: int = 0
    steps_to_97: int | None = None
    steps_to_99: int | None = None
    steps_to_995: int | None = None
    # Fine-phase coordinate-descent state.
    fine_index: int = 0
    fine_directions: list[int] = field(default_factory=list)
    # Best coarse measurement so far, for regression recovery.
    best_fidelity: float = -math.inf
    best_state: CompensatorState | None = None
    best_stokes: NormalizedStokes | None = None

    @classmethod
    def begin(
        cls,
        curves: Sequence[RetardanceCurve],
        target: NormalizedStokes,
        config: LoopConfig,
        seed: int = 0,
    ) -> "CompensationRun":
        curves = list(curves)
        if len(curves) not in (3, 4):
            raise ValueError(f"need 3 or 4 calibration curves, got {len(curves)}")
        # Identity-equivalent start: a full wave per cell keeps an
        # undisturbed link untouched at the first probe.
        full_wave = 2.0 * math.pi
        voltages = []
        retardances = []
        for curve in curves:
            v = voltage_for_retardance(curve, full_wave).voltage
            voltages.append(v)
            retardances.append(retardance_for_voltage(curve, v))
        state = CompensatorState(
            triple=RetardanceTriple(*retardances[:3]),
            fourth_retardance=retardances[3] if len(curves) == 4 else None,
            voltages=tuple(voltages),
        )
        rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, 0xC0A5]))
        run = cls(config=config, target=target, curves=curves, state=state, rng=rng)
        run.fine_directions = [1] * len(curves)
        return run

    def total_steps(self) -> int:
        return len(self.steps)

    def record(self, phase: str, stokes: NormalizedStokes, fid: float) -> StepRecord:
        rec = StepRecord(
            step=len(self.steps) + 1,
            phase=phase,
            retardances=self.state.all_retardances(),
            voltages=self.state.voltages,
            stokes=(stokes.u1, stokes.u2, stokes.u3),
            fidelity=fid,
        )
        self.steps.append(rec)
        if self.steps_to_97 is None and fid > REPORT_LEVELS[0]:
            self.steps_to_97 = rec.step
        if self.steps_to_99 is None and fid > REPORT_LEVELS[1]:
            self.steps_to_99 = rec.step
        if self.steps_to_995 is None and fid > REPORT_LEVELS[2]:
            self.steps_to_995 = rec.step
        return rec

    def finish(self, reason: str) -> None:
        self.complete = True
        self.reason = reason

    def summary(self) -> dict:
        return {
            "steps_to_97": self.steps_to_97,
            "steps_to_99": self.steps_to_99,
            "steps_to_995": self.steps_to_995,
            "reason": self.reason,
        }


def _fourth_inverse(state: CompensatorState) -> np.ndarray | None:
    if state.fourth_retardance is None:
        return None
    return invert_retarder(mueller_lcvr(_STACK_ANGLES[3], state.fourth_retardance))


def _actuate_triple(run: CompensationRun, triple: RetardanceTriple) -> None:
    """Map solved retardances to voltages and store the implied setting."""
    voltages = list(run.state.voltages)
    implied = []
    for i in range(3):
        v = voltage_for_retardance(run.curves[i], triple.as_tuple()[i]).voltage
        voltages[i] = v
        implied.append(retardance_for_voltage(run.curves[i], v))
    run.state = CompensatorState(
        triple=RetardanceTriple(*implied),
        fourth_retardance=run.state.fourth_retardance,
        voltages=tuple(voltages),
    )


def _random_window_triple(rng: np.random.Generator) -> RetardanceTriple:
    lo, hi = RETARDANCE_WINDOW
    return RetardanceTriple(*rng.uniform(lo, hi, 3))


def coarse_step(
    run: CompensationRun,
    measure: MeasurementProvider,
    curves: Sequence[RetardanceCurve],
    target: NormalizedStokes,
    config: LoopConfig,
) -> CompensationRun:
    """One coarse cycle: measure, then infer, solve, and actuate as needed.

    The measurement is recorded against the settings that produced it.
    The very first cycle always applies a correction — the probe
    measurement exists to seed the solver, not to be judged against the
    threshold.  On later cycles, a measurement that clears the coarse
    threshold moves the run to the fine phase and keeps the settings
    that earned it; re-solving from a noisy snapshot of an already-good
    state would only re-randomize it at the measurement-noise floor.
    Below the threshold, the cycle corrects: if the measurement
    regressed below the best coarse measurement so far, the best
    settings are restored before the next inference.  A solver failure
    falls back to a fresh random actuation (a randomized restart through
    the hardware), which still costs the one recorded step.
    """
    stokes = measure(run.state.voltages)
    fid = fidelity(stokes, target)
    run.record("coarse", stokes, fid)
    first = run.coarse_used == 0
    run.coarse_used += 1
    run.current_fidelity = fid

    if fid >= config.coarse_threshold:
        run.phase = "fine"
        if not first:
            if run.best_state is None or fid >= run.best_fidelity:
                run.best_fidelity = fid
                run.best_state = run.state
                run.best_stokes = stokes
            return run

    if run.best_state is not None and fid < run.best_fidelity:
        # Regressed: fall back to the best-known setting and its measurement.
        run.state = run.best_state
        stokes = run.best_stokes  # type: ignore[assignment]
    else:
        run.best_fidelity = fid
        run.best_state = run.state
        run.best_stokes = stokes

    m4_inv = _fourth_inverse(run.state)
    target_eff = target if m4_inv is None else transform_normalized(m4_inv, target)
    seen = stokes if m4_inv is None else transform_normalized(m4_inv, stokes)
    s_dis = infer_disturbed(seen, run.state.triple)
    try:
        solution = solve_retardances(s_dis, target_eff, config, curves=curves[:3], rng=run.rng)
    except SolverFailureError:
        solution = _random_window_triple(run.rng)
    _actuate_triple(run, solution)
    return run


def fine_tune_step(
    run: CompensationRun,
    measure: MeasurementProvider,
    config: LoopConfig,
) -> CompensationRun:
    """One fine-phase probe: nudge one cell's voltage and keep improvements.

    Cells are visited round-robin; each keeps a remembered direction that
    flips whenever a nudge fails.  A failed nudge reverts the voltage and
    advances to the next cell.  The comparison baseline is a running
    estimate of the held setting's reading: a kept move resets it to the
    reading that won, a failed one relaxes it toward the reading that
    lost.  Without the relaxation a single optimistic reading would
    become a bar that no honest later reading can clear, freezing the
    climb on a noisy bench.  No-op if the run already sits at or above
    the fine threshold.
    """
    if run.current_fidelity >= config.fine_threshold:
        run.finish("fine_threshold_met")
        return run

    n = run.state.n_cells()
    step_v = config.fine_step_v
    for _ in range(2 * n):
        i = run.fine_index
        direction = run.fine_directions[i]
        v_new = run.state.voltages[i] + direction * step_v
        curve = run.curves[i]
        if curve.drive_voltages[0] <= v_new <= curve.drive_voltages[-1]:
            break
        # Out of actuation range: treat as a failed direction, no measurement.
        run.fine_directions[i] = -direction
        run.fine_index = (i + 1) % n
    else:  # pragma: no cover - every cell has one feasible direction
        raise RuntimeError("no feasible fine-tune move")

    voltages = list(run.state.voltages)
    voltages[i] = v_new
    implied = [retardance_for_voltage(run.curves[j], voltages[j]) for j in range(n)]
    trial_state = CompensatorState(
        triple=RetardanceTriple(*implied[:3]),
        fourth_retardance=implied[3] if n == 4 else None,
        voltages=tuple(voltages),
    )

    previous = run.state
    run.state = trial_state
    stokes = measure(trial_state.voltages)
    fid = fidelity(stokes, run.target)
    run.record("fine", stokes, fid)
    run.fine_used += 1

    if fid > run.current_fidelity:
        run.current_fidelity = fid  # keep the move, stay on this cell
    else:
        run.state = previous
        run.fine_directions[i] = -direction
        run.fine_index = (i + 1) % n
        run.current_fidelity += _BASELINE_RELAXATION * (fid - run.current_fidelity)

    if fid >= config.fine_threshold:
        run.finish("fine_threshold_met")
    return run


def run_compensation(
    apparatus: MeasurementProvider,
    curves: Sequence[RetardanceCurve],
    target: NormalizedStokes,
    config: LoopConfig | None = None,
    seed: int = 0,
) -> CompensationRun:
    """Drive the full loop until the fine threshold or the budget is hit.

    ``apparatus`` is any callable that accepts the tuple of drive
    voltages and returns the measured :class:`NormalizedStokes` — a
    virtual bench in tests, real hardware in the lab.  Each call is one
    step.  Determinism: the same apparatus behavior, curves, target,
    config and seed reproduce the identical run transcript.
    """
    if config is None:
        config = LoopConfig()
    run = CompensationRun.begin(curves, target, config, seed=seed)
    while not run.complete:
        if run.phase == "coarse":
            if run.coarse_used >= config.max_coarse_steps:
                run.finish("budget_exhausted")
                break
            coarse_step(run, apparatus, run.curves, target, config)
        else:
            if run.current_fidelity >= config.fine_threshold:
                run.finish("fine_threshold_met")
                break
            if run.fine_used >= config.max_fine_steps:
                run.finish("budget_exhausted")
                break
            fine_tune_step(run, apparatus, config)
    return run


def qber_opt(fid: float) -> float:
    """Optical QBER contribution of imperfect compensation: ``(1 - F) / 2``."""
    fid = float(fid)
    if not (math.isfinite(fid) and 0.0 <= fid <= 1.0):
        raise ValueError(f"fidelity must be in [0, 1], got {fid!r}")
    return (1.0 - fid) / 2.0


def qber_total(opt: float, det: float, acc: float) -> float:
    """Total QBER as the sum of optical, detector and accidental rates."""
    parts = (float(opt), float(det), float(acc))
    for name, val in zip(("opt", "det", "acc"), parts):
        if not (math.isfinite(val) and val >= 0.0):
            raise ValueError(f"{name} must be a non-negative rate, got {val!r}")
    return sum(parts)
