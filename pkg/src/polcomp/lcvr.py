"""Liquid-crystal variable retarder calibration.

A characterization sweep steps the drive voltage while the cell sits
between crossed/parallel polarizers, so the photodiode sees

    V_pd(delta) = V_back + (V_max - V_back) * (1 - cos delta) / 2.

Inverting the cosine gives only the principal value ``arccos`` in
``[0, pi]``; a full-wave cell folds the true curve at every multiple of
pi.  :func:`unwrap_retardance` undoes the folding by walking the
sequence, flipping the branch at every fold, and placing each flip at
the position that minimizes the discontinuity of the rebuilt curve
(its local second differences).  :func:`build_curve` then orients the
result as a monotonically non-increasing curve (retardance drops as
voltage rises in a nematic cell) and shifts it into the physical branch
whose minimum lies in the first wave.

The propagated retardance uncertainty uses the closed form

    ddelta = sqrt((dV_meas^2 + dV_back^2)
                  / ((V_meas - V_back) * (V_max - V_meas))),

the first-order propagation of the arccos with the calibration span
``V_max - V_back`` treated as a fixed constant.  It diverges at the
sweep endpoints, where the curve records a missing error bar instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "CalibrationError",
    "UnwrapAmbiguityError",
    "CharacterizationSweep",
    "RetardanceCurve",
    "VoltageLookup",
    "retardance_from_intensity",
    "retardance_error",
    "unwrap_retardance",
    "build_curve",
    "retardance_for_voltage",
    "voltage_for_retardance",
    "curve_slope_at",
]

#: Default distance from a branch boundary (0 or pi) within which a
#: trend reversal is treated as a fold.
FOLD_THRESHOLD = 0.15
#: Gap (in samples) under which two boundary visits merge into one fold
#: candidate; suppresses double-counting when noise briefly exits the
#: boundary region.
_MERGE_GAP = 3
#: Slack when shifting the unwrapped curve into [0, 2*pi): lets noisy
#: fold dips reach slightly below zero without dragging the whole curve
#: up by a full wave.
_BRANCH_SLACK = 0.3
#: Minimum number of sweep points accepted for calibration.
MIN_SWEEP_POINTS = 10


class CalibrationError(ValueError):
    """Sweep data cannot be converted to retardance (bad span, etc.)."""


class UnwrapAmbiguityError(ValueError):
    """The folded sequence does not determine a unique continuous curve."""


@dataclass
class CharacterizationSweep:
    """Voltage sweep of one LCVR: drive RMS voltage vs mean PD voltage."""

    drive_voltages: np.ndarray
    mean_pd_voltages: np.ndarray
    pd_voltage_sems: np.ndarray
    background_voltage: float
    background_sem: float = 0.0

    def __post_init__(self) -> None:
        self.drive_voltages = np.asarray(self.drive_voltages, dtype=float).copy()
        self.mean_pd_voltages = np.asarray(self.mean_pd_voltages, dtype=float).copy()
        self.pd_voltage_sems = np.asarray(self.pd_voltage_sems, dtype=float).copy()
        n = self.drive_voltages.size
        if self.mean_pd_voltages.size != n or self.pd_voltage_sems.size != n:
            raise ValueError("sweep columns must have equal length")
        if n < MIN_SWEEP_POINTS:
            raise ValueError(f"need at least {MIN_SWEEP_POINTS} sweep points, got {n}")
        for name, arr in (
            ("drive_voltages", self.drive_voltages),
            ("mean_pd_voltages", self.mean_pd_voltages),
            ("pd_voltage_sems", self.pd_voltage_sems),
        ):
            if arr.ndim != 1 or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be 1-D and finite")
        if np.any(np.diff(self.drive_voltages) <= 0.0):
            raise ValueError("drive voltages must be strictly increasing")
        if np.any(self.pd_voltage_sems < 0.0):
            raise ValueError("pd_voltage_sems must be non-negative")
        if not math.isfinite(self.background_voltage):
            raise ValueError("background_voltage must be finite")
        if not (math.isfinite(self.background_sem) and self.background_sem >= 0.0):
            raise ValueError("background_sem must be a non-negative number")

    def __len__(self) -> int:
        return int(self.drive_voltages.size)


@dataclass
class RetardanceCurve:
    """Unwrapped retardance vs drive voltage for one cell.

    ``retardance_errors`` holds NaN where no finite error bar exists
    (clamped arccos arguments and the sweep maximum).  ``fold_count`` is
    recorded by :func:`build_curve`; curves constructed directly (e.g.
    synthetic ones) may leave it ``None``.
    """

    drive_voltages: np.ndarray
    retardances: np.ndarray
    retardance_errors: np.ndarray
    voltage_step: float = 0.0
    wavelength_nm: float | None = None
    fold_count: int | None = None

    def __post_init__(self) -> None:
        self.drive_voltages = np.asarray(self.drive_voltages, dtype=float).copy()
        self.retardances = np.asarray(self.retardances, dtype=float).copy()
        self.retardance_errors = np.asarray(self.retardance_errors, dtype=float).copy()
        n = self.drive_voltages.size
        if self.retardances.size != n or self.retardance_errors.size != n:
            raise ValueError("curve columns must have equal length")
        if n < 2:
            raise ValueError("curve needs at least two points")
        if not np.all(np.isfinite(self.drive_voltages)):
            raise ValueError("drive voltages must be finite")
        if not np.all(np.isfinite(self.retardances)):
            raise ValueError("retardances must be finite")
        if np.any(np.diff(self.drive_voltages) <= 0.0):
            raise ValueError("drive voltages must be strictly increasing")
        if self.voltage_step == 0.0:
            self.voltage_step = float(np.median(np.diff(self.drive_voltages)))

    def __len__(self) -> int:
        return int(self.drive_voltages.size)

    def retardance_span(self) -> float:
        return float(self.retardances.max() - self.retardances.min())


class VoltageLookup(NamedTuple):
    """Inverse-lookup result; ``clamped`` marks out-of-span targets."""

    voltage: float
    clamped: bool


def _principal_retardance(v_meas, v_back: float, v_max: float):
    """arccos inversion with clamping; returns (retardance, clamped mask)."""
    arg = 1.0 - 2.0 * (np.asarray(v_meas, dtype=float) - v_back) / (v_max - v_back)
    clamped = np.abs(arg) > 1.0
    return np.arccos(np.clip(arg, -1.0, 1.0)), clamped


def retardance_from_intensity(v_meas, v_back: float, v_max: float):
    """Principal-value retardance ``arccos(1 - 2 (V - Vb) / (Vmax - Vb))``.

    Accepts a scalar or an array of measured voltages.  Arguments that
    fall outside [-1, 1] from measurement noise are clamped to the
    nearest bound, so the result always lies in ``[0, pi]``.

    Raises
    ------
    CalibrationError
        If ``v_max <= v_back`` (no usable span).
    """
    v_back = float(v_back)
    v_max = float(v_max)
    if not (math.isfinite(v_back) and math.isfinite(v_max)):
        raise CalibrationError("v_back and v_max must be finite")
    if v_max <= v_back:
        raise CalibrationError(
            f"v_max ({v_max!r}) must exceed v_back ({v_back!r})"
        )
    ret, _ = _principal_retardance(v_meas, v_back, v_max)
    if np.ndim(v_meas) == 0:
        return float(ret)
    return ret


def _error_array(v_meas, v_back, v_max, sem_meas, sem_back):
    # Valid strictly inside the span; callers mask the endpoints.
    num = np.asarray(sem_meas, dtype=float) ** 2 + float(sem_back) ** 2
    den = (np.asarray(v_meas, dtype=float) - v_back) * (v_max - np.asarray(v_meas, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.sqrt(num / den)


def retardance_error(
    v_meas: float, v_back: float, v_max: float, sem_meas: float, sem_back: float
) -> float:
    """Propagated retardance uncertainty (radians) at one sweep point.

    First-order propagation of the arccos with the span ``v_max - v_back``
    held fixed.  Undefined at the endpoints, where the derivative of the
    arccos diverges.

    Raises
    ------
    ValueError
        If ``v_meas`` does not lie strictly between ``v_back`` and
        ``v_max``, or an uncertainty is negative.
    """
    v_meas, v_back, v_max = float(v_meas), float(v_back), float(v_max)
    sem_meas, sem_back = float(sem_meas), float(sem_back)
    if v_max <= v_back:
        raise CalibrationError(f"v_max ({v_max!r}) must exceed v_back ({v_back!r})")
    if not (v_back < v_meas < v_max):
        raise ValueError(
            f"v_meas = {v_meas!r} must lie strictly inside ({v_back!r}, {v_max!r}); "
            "the error bar is undefined at the endpoints"
        )
    if sem_meas < 0.0 or sem_back < 0.0:
        raise ValueError("uncertainties must be non-negative")
    return float(_error_array(v_meas, v_back, v_max, sem_meas, sem_back))


def _boundary_runs(raw: np.ndarray, threshold: float) -> list[tuple[int, int, int]]:
    """Contiguous visits to a branch boundary: (first, last, boundary 0|1)."""
    runs: list[tuple[int, int, int]] = []
    for boundary, mask in ((0, raw < threshold), (1, raw > math.pi - threshold)):
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            continue
        splits = np.flatnonzero(np.diff(idx) > 1) + 1
        for chunk in np.split(idx, splits):
            runs.append((int(chunk[0]), int(chunk[-1]), boundary))
    runs.sort()
    # Merge same-boundary visits separated by a few stray samples.
    merged: list[tuple[int, int, int]] = []
    for run in runs:
        if merged and merged[-1][2] == run[2] and run[0] - merged[-1][1] - 1 <= _MERGE_GAP:
            merged[-1] = (merged[-1][0], run[1], run[2])
        else:
            merged.append(run)
    return merged


def _flipped_branch(s: int, k: int, boundary: int) -> tuple[int, int]:
    # Continuity across a fold: out = s*raw + 2*pi*k.  A fold at 0 keeps
    # the offset; a fold at pi shifts it by one wave in the old direction.
    if boundary == 0:
        return -s, k
    return -s, k + s


def _choose_flip(
    raw: np.ndarray,
    a: int,
    b: int,
    boundary: int,
    s: int,
    k: int,
    lo_limit: int,
    hi_limit: int,
) -> int:
    """Flip position (between j and j+1) minimizing local second differences.

    Noise-free data is rebuilt exactly: every sample keeps its true
    branch because any off-by-one flip adds a kink whose cost strictly
    exceeds the smooth baseline.
    """
    two_pi = 2.0 * math.pi
    s2, k2 = _flipped_branch(s, k, boundary)
    w0 = max(0, a - 3, lo_limit)
    w1 = min(raw.size - 1, b + 3, hi_limit)
    j_lo = max(a - 1, lo_limit, 0)
    j_hi = min(b, raw.size - 2)
    if w1 - w0 < 3 or j_hi < j_lo:
        # Window too cramped to score candidates; fall back to the extremum.
        seg = raw[a : b + 1]
        return a + int(np.argmin(seg) if boundary == 0 else np.argmax(seg))
    window = raw[w0 : w1 + 1]
    positions = np.arange(w0, w1 + 1)
    best_j, best_cost = j_lo, math.inf
    for j in range(j_lo, j_hi + 1):
        seg = np.where(positions <= j, s * window + two_pi * k, s2 * window + two_pi * k2)
        cost = float(np.abs(np.diff(seg, 2)).sum())
        if cost < best_cost:
            best_j, best_cost = j, cost
    return best_j


def _unwrap_with_folds(
    raw: np.ndarray, fold_threshold: float = FOLD_THRESHOLD
) -> tuple[np.ndarray, list[int]]:
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 1 or raw.size < 3:
        raise ValueError("need a 1-D sequence of at least 3 principal values")
    if not np.all(np.isfinite(raw)):
        raise ValueError("principal values must be finite")
    if np.any(raw < -1e-9) or np.any(raw > math.pi + 1e-9):
        raise ValueError("principal values must lie in [0, pi]")
    if not (0.0 < fold_threshold < 1.0):
        raise ValueError(f"fold_threshold must be in (0, 1), got {fold_threshold!r}")
    if np.any(np.abs(np.diff(raw)) >= math.pi / 2.0):
        raise UnwrapAmbiguityError(
            "consecutive principal values jump by >= pi/2; sampling too coarse to unwrap"
        )
    if float(np.ptp(raw)) < fold_threshold:
        raise UnwrapAmbiguityError("no retardance variation to unwrap")

    n = raw.size
    two_pi = 2.0 * math.pi
    out = np.empty(n)
    s, k = 1, 0
    pos = 0
    folds: list[int] = []
    runs = _boundary_runs(raw, fold_threshold)
    for ridx, (a, b, boundary) in enumerate(runs):
        if a <= 0 or b >= n - 1:
            continue  # a reversal cannot be confirmed at the sequence ends
        hi_limit = runs[ridx + 1][0] - 1 if ridx + 1 < len(runs) else n - 1
        j = _choose_flip(raw, a, b, boundary, s, k, pos, hi_limit)
        out[pos : j + 1] = s * raw[pos : j + 1] + two_pi * k
        pos = j + 1
        s, k = _flipped_branch(s, k, boundary)
        folds.append(j)
    out[pos:] = s * raw[pos:] + two_pi * k
    if np.any(np.abs(np.diff(out)) >= math.pi / 2.0):
        raise UnwrapAmbiguityError("rebuilt sequence is discontinuous; fold placement failed")
    return out, folds


def unwrap_retardance(raw, fold_threshold: float = FOLD_THRESHOLD) -> np.ndarray:
    """Rebuild a continuous retardance sequence from arccos principal values.

    The output preserves ``cos(out) == cos(raw)`` pointwise and starts on
    the branch of the first sample (``out[0] == raw[0]``); the caller owns
    any global reflection/offset (see :func:`build_curve`).

    Raises
    ------
    UnwrapAmbiguityError
        When consecutive samples are too far apart to identify folds, or
        the sequence carries no variation at all.
    """
    out, _ = _unwrap_with_folds(raw, fold_threshold)
    return out


def build_curve(
    sweep: CharacterizationSweep,
    fold_threshold: float = FOLD_THRESHOLD,
    wavelength_nm: float | None = None,
) -> RetardanceCurve:
    """Calibrate one LCVR: sweep -> continuous retardance-vs-voltage curve.

    ``v_max`` is taken as the largest observed mean PD voltage (its own
    uncertainty is excluded from the propagated error bars).  After
    unwrapping, the curve is oriented to be non-increasing with voltage
    and shifted so its minimum sits inside the first wave — the branch a
    nematic cell actually occupies at high drive.  Points whose arccos
    argument was clamped, and the extremes of the span, get NaN error
    bars rather than infinite ones.
    """
    v_back = sweep.background_voltage
    v_max = float(sweep.mean_pd_voltages.max())
    if v_max <= v_back:
        raise CalibrationError(
            f"sweep maximum {v_max!r} does not exceed background {v_back!r}"
        )
    raw, clamped = _principal_retardance(sweep.mean_pd_voltages, v_back, v_max)
    unwrapped, folds = _unwrap_with_folds(raw, fold_threshold)

    # Orient as non-increasing (compare robust ends, noise tolerant).
    head = float(np.median(unwrapped[: min(5, unwrapped.size)]))
    tail = float(np.median(unwrapped[-min(5, unwrapped.size) :]))
    if tail > head:
        unwrapped = -unwrapped
    # Shift the whole curve so its minimum lies in the first wave.
    k = math.floor((float(unwrapped.min()) + _BRANCH_SLACK) / (2.0 * math.pi))
    if k != 0:
        unwrapped = unwrapped - 2.0 * math.pi * k

    errors = _error_array(
        sweep.mean_pd_voltages, v_back, v_max, sweep.pd_voltage_sems, sweep.background_sem
    )
    bad = clamped | (sweep.mean_pd_voltages <= v_back) | (sweep.mean_pd_voltages >= v_max)
    errors = np.where(bad, np.nan, errors)

    return RetardanceCurve(
        drive_voltages=sweep.drive_voltages,
        retardances=unwrapped,
        retardance_errors=errors,
        wavelength_nm=wavelength_nm,
        fold_count=len(folds),
    )


def retardance_for_voltage(curve: RetardanceCurve, voltage: float) -> float:
    """Piecewise-linear interpolation of the curve at a drive voltage."""
    voltage = float(voltage)
    lo = float(curve.drive_voltages[0])
    hi = float(curve.drive_voltages[-1])
    if not (lo <= voltage <= hi):
        raise ValueError(f"voltage {voltage!r} outside calibrated span [{lo!r}, {hi!r}]")
    return float(np.interp(voltage, curve.drive_voltages, curve.retardances))


def voltage_for_retardance(curve: RetardanceCurve, target: float) -> VoltageLookup:
    """Drive voltage whose interpolated retardance is nearest to ``target``.

    Targets outside the curve span clamp to the corresponding endpoint
    voltage and are flagged, never fatal: the caller decides whether a
    clamped actuation is acceptable.
    """
    target = float(target)
    if not math.isfinite(target):
        raise ValueError(f"target retardance must be finite, got {target!r}")
    r = curve.retardances
    v = curve.drive_voltages
    i_min = int(np.argmin(r))
    i_max = int(np.argmax(r))
    if target <= r[i_min]:
        return VoltageLookup(float(v[i_min]), bool(target < r[i_min]))
    if target >= r[i_max]:
        return VoltageLookup(float(v[i_max]), bool(target > r[i_max]))
    nearest = int(np.argmin(np.abs(r - target)))
    # Refine within the knot interval that brackets the target.
    for j in (nearest - 1, nearest + 1):
        if 0 <= j < r.size and (r[nearest] - target) * (r[j] - target) <= 0.0:
            lo, hi = sorted((nearest, j))
            if r[hi] == r[lo]:
                return VoltageLookup(float(v[lo]), False)
            frac = (target - r[lo]) / (r[hi] - r[lo])
            return VoltageLookup(float(v[lo] + frac * (v[hi] - v[lo])), False)
    return VoltageLookup(float(v[nearest]), False)


def curve_slope_at(curve: RetardanceCurve, voltage: float) -> float:
    """Local |d(retardance)/d(voltage)| near a drive voltage."""
    v = curve.drive_voltages
    r = curve.retardances
    i = int(np.clip(np.searchsorted(v, float(voltage)), 1, v.size - 1))
    lo = max(0, i - 1)
    hi = min(v.size - 1, i + 1)
    return abs(float((r[hi] - r[lo]) / (v[hi] - v[lo])))
