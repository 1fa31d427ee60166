"""Command-line front end.

Subcommands mirror the bench workflow: ``characterize`` turns a voltage
sweep into a retardance curve, ``tomography`` analyzes polarimeter
scans, ``compensate`` runs one closed-loop session against the virtual
bench, ``bench`` aggregates many trials, and ``replay`` re-executes a
recorded invocation from its manifest.

Every command that writes a primary output also writes
``<output>.manifest.json`` recording the exact argument vector, so any
result file can be regenerated bit-for-bit (all randomness is seeded).
Relative output paths are placed under ``$POLCOMP_OUT_DIR`` when that
variable is set.

Exit codes: 0 success, 1 bad input data, 2 usage errors (argparse),
3 compensation budget exhausted before reaching the fine threshold.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (
    NoiseModel,
    VirtualApparatus,
    random_disturbance,
    run_trials,
)
from .compensation import LoopConfig, run_compensation
from .io import (
    FileFormatError,
    read_curve,
    read_scan,
    read_scan_metadata,
    read_sweep,
    sidecar_path,
    write_curve,
    write_json_doc,
    write_run_log,
)
from .lcvr import FOLD_THRESHOLD, build_curve
from .polarimetry import measure_stokes
from .stokes import CARDINAL_STOKES, NormalizedStokes, cardinal_target, fidelity

__all__ = ["main", "build_parser"]

EXIT_OK = 0
EXIT_DATA_ERROR = 1
EXIT_BUDGET = 3

_ENV_OUT_DIR = "POLCOMP_OUT_DIR"


def _resolve_out(path_str: str) -> Path:
    p = Path(path_str)
    if p.is_absolute():
        return p
    base = os.environ.get(_ENV_OUT_DIR)
    return Path(base) / p if base else p


def _manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


def _write_manifest(out: Path, command: str, argv: list[str], outputs: list[str]) -> None:
    write_json_doc(
        _manifest_path(out),
        {
            "command": command,
            "argv": list(argv),
            "outputs": list(outputs),
            "version": __version__,
        },
    )


def parse_target(text: str) -> NormalizedStokes:
    """A cardinal name (H, V, D, A, R, L) or a comma-separated unit vector."""
    name = text.strip().upper()
    if name in CARDINAL_STOKES:
        return cardinal_target(name)
    parts = text.split(",")
    if len(parts) != 3:
        raise ValueError(
            f"target must be one of {'/'.join(CARDINAL_STOKES)} or 'u1,u2,u3', got {text!r}"
        )
    try:
        vec = np.array([float(p) for p in parts])
    except ValueError:
        raise ValueError(f"target components must be numbers, got {text!r}") from None
    norm = float(np.linalg.norm(vec))
    if norm < 1e-9:
        raise ValueError("target vector must be non-zero")
    vec = vec / norm
    return NormalizedStokes(*vec)


def _noise_from_preset(preset: str) -> NoiseModel:
    if preset == "none":
        return NoiseModel.none()
    if preset == "lab":
        return NoiseModel.lab()
    raise ValueError(f"unknown noise preset {preset!r}")


def _config_from_args(args: argparse.Namespace) -> LoopConfig:
    kwargs = {}
    if args.coarse_threshold is not None:
        kwargs["coarse_threshold"] = args.coarse_threshold
    if args.fine_threshold is not None:
        kwargs["fine_threshold"] = args.fine_threshold
    if args.max_steps is not None:
        kwargs["max_coarse_steps"] = args.max_steps
        kwargs["max_fine_steps"] = args.max_steps
    return LoopConfig(**kwargs)


def _add_loop_options(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--coarse-threshold", type=float, default=None,
                     help="fidelity that ends the coarse phase (default 0.97)")
    sub.add_argument("--fine-threshold", type=float, default=None,
                     help="fidelity that ends the run (default 0.995)")
    sub.add_argument("--max-steps", type=int, default=None,
                     help="cap both the coarse and fine step budgets")
    sub.add_argument("--noise-preset", choices=("none", "lab"), default="none",
                     help="virtual bench imperfection budget (default: none)")
    sub.add_argument("--seed", type=int, default=0, help="measurement/solver seed")


def cmd_characterize(args: argparse.Namespace, argv: list[str]) -> int:
    sweep = read_sweep(args.sweep)
    curve = build_curve(
        sweep, fold_threshold=args.fold_threshold, wavelength_nm=args.wavelength_nm
    )
    out = _resolve_out(args.output)
    write_curve(out, curve)
    _write_manifest(out, "characterize", argv, [args.output])
    lo = float(curve.retardances.min())
    hi = float(curve.retardances.max())
    print(
        f"curve: {len(curve)} points, {curve.fold_count} folds, "
        f"retardance {lo:.4f}..{hi:.4f} rad -> {out}"
    )
    return EXIT_OK


def cmd_tomography(args: argparse.Namespace, argv: list[str]) -> int:
    root = Path(args.path)
    if root.is_dir():
        files = sorted(p for p in root.glob("*.csv") if not p.name.endswith(".manifest.csv"))
        if not files:
            raise FileFormatError(f"{root}: no scan CSV files found")
    else:
        files = [root]

    entries = []
    fidelities = []
    for f in files:
        scan = read_scan(f)
        u = measure_stokes(scan)
        entry: dict = {"file": f.name, "stokes": [u.u1, u.u2, u.u3]}
        meta = read_scan_metadata(f)
        line = f"{f.name}: u = ({u.u1:+.6f}, {u.u2:+.6f}, {u.u3:+.6f})"
        if "true_state" in meta:
            true = meta["true_state"]
            fid = fidelity(u, NormalizedStokes(*[float(x) for x in true]))
            entry["fidelity"] = fid
            fidelities.append(fid)
            line += f"  fidelity = {fid:.6f}"
        entries.append(entry)
        print(line)

    report: dict = {"scans": entries}
    if fidelities:
        report["mean_fidelity"] = float(np.mean(fidelities))
        print(f"mean fidelity over {len(fidelities)} scans: {report['mean_fidelity']:.6f}")
    if args.output:
        out = _resolve_out(args.output)
        write_json_doc(out, report)
        _write_manifest(out, "tomography", argv, [args.output])
    return EXIT_OK


def cmd_compensate(args: argparse.Namespace, argv: list[str]) -> int:
    if len(args.curve) not in (3, 4):
        raise ValueError(f"need 3 or 4 --curve files, got {len(args.curve)}")
    curves = [read_curve(p) for p in args.curve]
    target = parse_target(args.target)
    noise = _noise_from_preset(args.noise_preset)
    config = _config_from_args(args)
    apparatus = VirtualApparatus(
        disturbance=random_disturbance(args.disturbance_seed),
        curves=curves,
        noise=noise,
        seed=args.seed,
    )
    run = run_compensation(apparatus, curves, target, config, seed=args.seed)

    out = _resolve_out(args.output)
    write_run_log(out, run)
    _write_manifest(out, "compensate", argv, [args.output])
    last = run.steps[-1]
    print(
        f"{run.reason}: {run.total_steps()} steps, final fidelity {last.fidelity:.6f}, "
        f"steps to 0.995: {run.steps_to_995} -> {out}"
    )
    return EXIT_BUDGET if run.reason == "budget_exhausted" else EXIT_OK


def cmd_bench(args: argparse.Namespace, argv: list[str]) -> int:
    target = parse_target(args.target)
    noise = _noise_from_preset(args.noise_preset)
    config = _config_from_args(args)
    curves = [read_curve(p) for p in args.curve] if args.curve else None
    if curves is not None and len(curves) not in (3, 4):
        raise ValueError(f"need 3 or 4 --curve files, got {len(curves)}")
    keep = args.log_dir is not None
    stats = run_trials(
        args.trials,
        config=config,
        noise=noise,
        base_seed=args.seed,
        curves=curves,
        target=target,
        keep_runs=keep,
    )
    out = _resolve_out(args.output)
    write_json_doc(out, stats.to_json())
    outputs = [args.output]
    if keep and stats.runs is not None:
        log_dir = _resolve_out(args.log_dir)
        for i, run in enumerate(stats.runs):
            name = f"trial_{i:04d}.jsonl"
            write_run_log(log_dir / name, run)
            outputs.append(str(Path(args.log_dir) / name))
    _write_manifest(out, "bench", argv, outputs)
    print(
        f"{stats.trials} trials: mean steps to 0.97/0.99/0.995 = "
        f"{stats.mean_steps_to_97}/{stats.mean_steps_to_99}/{stats.mean_steps_to_995}, "
        f"unreached 0.995: {stats.unreached_995} -> {out}"
    )
    return EXIT_OK


def cmd_replay(args: argparse.Namespace, argv: list[str]) -> int:
    from .io import read_json_doc

    doc = read_json_doc(args.manifest)
    for key in ("command", "argv"):
        if key not in doc:
            raise FileFormatError(f"{args.manifest}: manifest is missing {key!r}")
    recorded = [str(a) for a in doc["argv"]]
    if recorded and recorded[0] == "replay":
        raise ValueError("refusing to replay a replay")
    print(f"replaying: polcomp {' '.join(recorded)}")
    if args.out_dir is not None:
        previous = os.environ.get(_ENV_OUT_DIR)
        os.environ[_ENV_OUT_DIR] = str(args.out_dir)
        try:
            return main(recorded)
        finally:
            if previous is None:
                os.environ.pop(_ENV_OUT_DIR, None)
            else:
                os.environ[_ENV_OUT_DIR] = previous
    return main(recorded)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polcomp",
        description="LCVR characterization, Stokes polarimetry and "
        "automated polarization compensation.",
    )
    parser.add_argument("--version", action="version", version=f"polcomp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("characterize", help="turn a voltage sweep into a retardance curve")
    p.add_argument("sweep", help="sweep CSV (with JSON sidecar)")
    p.add_argument("-o", "--output", required=True, help="curve CSV to write")
    p.add_argument("--fold-threshold", type=float, default=FOLD_THRESHOLD,
                   help="distance from 0/pi treated as a fold region (rad)")
    p.add_argument("--wavelength-nm", type=float, default=None)
    p.set_defaults(func=cmd_characterize)

    p = sub.add_parser("tomography", help="reconstruct Stokes states from scan files")
    p.add_argument("path", help="scan CSV or a directory of them")
    p.add_argument("-o", "--output", default=None, help="JSON report to write")
    p.set_defaults(func=cmd_tomography)

    p = sub.add_parser("compensate", help="run one closed-loop session (virtual bench)")
    p.add_argument("--curve", action="append", required=True,
                   help="calibration curve CSV, once per cell (3 or 4)")
    p.add_argument("--target", required=True,
                   help="H/V/D/A/R/L or 'u1,u2,u3'")
    p.add_argument("--disturbance-seed", type=int, default=0,
                   help="seed of the simulated fiber disturbance")
    p.add_argument("-o", "--output", required=True, help="run transcript (JSON lines)")
    _add_loop_options(p)
    p.set_defaults(func=cmd_compensate)

    p = sub.add_parser("bench", help="aggregate many virtual compensation trials")
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--curve", action="append", default=None,
                   help="calibration curve CSV (default: built-in synthetic set)")
    p.add_argument("--target", default="H", help="H/V/D/A/R/L or 'u1,u2,u3'")
    p.add_argument("--log-dir", default=None, help="also write one transcript per trial")
    p.add_argument("-o", "--output", required=True, help="statistics JSON to write")
    _add_loop_options(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("replay", help="re-execute a recorded invocation")
    p.add_argument("manifest", help="a *.manifest.json written by another command")
    p.add_argument("--out-dir", default=None,
                   help="redirect relative outputs of the replayed command")
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv: list[str] | None = None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, list(argv))
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_DATA_ERROR
    except ValueError as exc:
        # Covers FileFormatError, CalibrationError, UnwrapAmbiguityError
        # and plain validation failures.
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
