"""Command-line entry points: sweep, trial, spectrum, calibrate, render."""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import AppConfig, ConfigError, default_app_config, load_config
from .engine import US_PER_S
from .harness import (RunManifest, ScriptError, SweepSpec, parse_matrix_csv,
                      render_matrix, run_spectrum_scenario, run_sweep)
from .plant import Profile
from .trial import CalibrationSpace, TrialTrace, calibrate, run_trial, symmetric_profiles

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CALIBRATION = 3


def _load_app(args) -> AppConfig:
    app = load_config(args.config) if args.config else default_app_config()
    spec = app.sweep
    if args.seed is not None:
        spec = replace(spec, master_seed=args.seed)
    if getattr(args, "trial_seconds", None) is not None:
        spec = replace(spec, trial_seconds=args.trial_seconds)
    app.sweep = spec
    return app


def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(text)
    return path


def cmd_sweep(args) -> int:
    app = _load_app(args)
    manifest = RunManifest.for_run(app.sweep, app.default_loop, app.adapted_loop,
                                   order=args.order)
    started = time.monotonic()
    result = run_sweep(app.sweep, app.default_loop, app.adapted_loop, order=args.order)
    manifest.wall_clock_seconds = time.monotonic() - started

    out_dir = Path(args.output_dir)
    paths = {
        "matrix_csv": str(_write(out_dir, "matrix.csv", render_matrix(result, "csv"))),
        "matrix_md": str(_write(out_dir, "matrix.md", render_matrix(result, "markdown"))),
        "matrix_ndjson": str(_write(out_dir, "matrix.ndjson",
                                    render_matrix(result, "structured"))),
    }
    manifest.output_paths = paths
    paths["manifest"] = str(_write(out_dir, "manifest.json", manifest.to_json()))
    print(render_matrix(result, "markdown"))
    print(f"wrote {', '.join(sorted(paths))} to {out_dir}")
    return EXIT_OK


def cmd_trial(args) -> int:
    app = _load_app(args)
    config = app.default_loop if args.profile == "default" else app.adapted_loop
    if args.latency_ms is not None and args.jitter_ms is not None:
        cmd, fb = symmetric_profiles(args.latency_ms, args.jitter_ms)
    elif app.command_profile is not None and app.feedback_profile is not None:
        cmd, fb = app.command_profile, app.feedback_profile
    else:
        raise ConfigError("trial needs --latency-ms/--jitter-ms or "
                          "[channel.command]/[channel.feedback] config sections")
    trace = TrialTrace() if args.trace else None
    verdict = run_trial(
        config, cmd, fb, trajectory=app.trajectory,
        trial_length_us=round(app.sweep.trial_seconds * US_PER_S),
        seed=app.sweep.master_seed,
        control_ring=app.control_ring, sensor_ring=app.sensor_ring,
        overlay_profile=app.overlay_profile, trace=trace)
    if trace is not None:
        Path(args.trace).write_text(trace.to_csv())
    outcome = "PASS" if verdict.passed else f"FAIL ({verdict.fail_cause.value})"
    print(f"trial latency={cmd.mean_delay_us / 1000:g} ms "
          f"jitter={cmd.jitter_us / 1000:g} ms "
          f"profile={args.profile}: {outcome}  "
          f"max_following_error={verdict.max_following_error_mm:.4f} mm  "
          f"survived={verdict.survived_us / US_PER_S:.3f} s")
    return EXIT_OK


def cmd_spectrum(args) -> int:
    script = Path(args.script).read_text()
    result = run_spectrum_scenario(script)
    for record in result.manager.audit_log:
        grant = f" grant=#{record.grant_id}" if record.grant_id else ""
        reason = f" ({record.reason})" if record.reason else ""
        print(f"t={record.time} {record.requester}: {record.verdict} "
              f"{record.bandwidth_mhz:g} MHz, occupied {record.occupied_mhz:g} MHz"
              f"{grant}{reason}")
    print()
    print(result.occupancy_report(), end="")
    if args.output_dir:
        _write(Path(args.output_dir), "occupancy.txt", result.occupancy_report())
    return EXIT_OK


def cmd_calibrate(args) -> int:
    app = _load_app(args)
    result = calibrate(CalibrationSpace(), master_seed=app.sweep.master_seed,
                       screen_trial_seconds=args.screen_seconds,
                       validation_spec=app.sweep)
    print(result.report())
    if args.output_dir and result.matrix is not None:
        out_dir = Path(args.output_dir)
        _write(out_dir, "matrix.csv", render_matrix(result.matrix, "csv"))
        manifest = RunManifest.for_run(app.sweep, result.default_config,
                                       result.adapted_config)
        _write(out_dir, "calibrated.json", manifest.to_json())
    return EXIT_OK if result.success else EXIT_CALIBRATION


def cmd_render(args) -> int:
    result = parse_matrix_csv(Path(args.matrix).read_text())
    print(render_matrix(result, args.format), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ringmill",
        description="Deterministic shop-floor network and machine-tool loop simulator")
    parser.add_argument("--version", action="version", version=f"ringmill {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, trial_seconds=True):
        p.add_argument("--config", help="INI scenario file")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        if trial_seconds:
            p.add_argument("--trial-seconds", type=float, default=None,
                           help="simulated seconds per trial")

    p = sub.add_parser("sweep", help="run the latency x jitter feasibility sweep")
    common(p)
    p.add_argument("--output-dir", default="out", help="artifact directory")
    p.add_argument("--order", choices=("severe-first", "mild-first"),
                   default="severe-first")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("trial", help="run one closed-loop trial")
    common(p)
    p.add_argument("--latency-ms", type=float, default=None)
    p.add_argument("--jitter-ms", type=float, default=None)
    p.add_argument("--profile", choices=("default", "adapted"), default="default")
    p.add_argument("--trace", help="write per-tick control trace CSV here")
    p.set_defaults(func=cmd_trial)

    p = sub.add_parser("spectrum", help="replay a spectrum request/release script")
    p.add_argument("--script", required=True)
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("calibrate", help="grid-search loop configs against the target pattern")
    common(p)
    p.add_argument("--output-dir", default=None)
    p.add_argument("--screen-seconds", type=float, default=12.0)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("render", help="re-render a matrix CSV")
    p.add_argument("--matrix", required=True)
    p.add_argument("--format", choices=("markdown", "csv", "structured"),
                   default="markdown")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ScriptError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
