"""Experiment orchestration: latency/jitter sweeps, rendering, manifests.

A sweep evaluates every (latency, jitter) cell to one of three classes:

* ``Pass`` - the stock driver configuration survives every seeded trial;
* ``PassWithAdaptation`` - the stock configuration fails at least one
  seed but the adapted configuration survives all of them;
* ``Fail`` - even the adapted configuration fails a seed.

All randomness is pre-assigned per (cell, seed index), so evaluation
order cannot influence any verdict, and a run manifest is sufficient to
reproduce a sweep byte-for-byte.
"""

from __future__ import annotations

import enum
import json
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable

from .channel import ChannelProfile
from .engine import US_PER_MS, US_PER_S, derive_seed
from .plant import FailCause, LoopConfig, PidGains, Profile, TrialVerdict, validate_config_pair
from .spectrum import (CoverageArea, Rejection, SpectrumManager, SpectrumRequest,
                       UnknownGrantError)
from .trial import run_trial, symmetric_profiles

ARTIFACT_VERSION = "0.1.0"

DEFAULT_LATENCIES_MS = (0.5, 1.0, 1.5, 2.0, 3.0, 5.0)
DEFAULT_JITTERS_MS = (0.05, 0.1, 0.15, 0.2, 0.3)


class CellClass(enum.Enum):
    PASS = "pass"
    PASS_WITH_ADAPTATION = "pass-with-adaptation"
    FAIL = "fail"

    @property
    def symbol(self) -> str:
        return {CellClass.PASS: "✓",
                CellClass.PASS_WITH_ADAPTATION: "(✓)",
                CellClass.FAIL: "x"}[self]


def reference_pattern(latencies_ms: Iterable[float] = DEFAULT_LATENCIES_MS,
                      jitters_ms: Iterable[float] = DEFAULT_JITTERS_MS,
                      ) -> dict[tuple[float, float], CellClass]:
    """Known-good verdict pattern over the default axes; the calibration target.

    Operation is clean up to 3 ms latency at jitter up to 0.15 ms; the
    0.2 ms jitter row needs the adapted driver except on the fastest
    link; nothing works at 5 ms latency or 0.3 ms jitter.
    """
    pattern = {}
    for lat in latencies_ms:
        for jit in jitters_ms:
            if lat >= 5.0 or jit >= 0.3:
                cls = CellClass.FAIL
            elif jit >= 0.2:
                cls = CellClass.PASS if lat <= 0.5 else CellClass.PASS_WITH_ADAPTATION
            else:
                cls = CellClass.PASS
            pattern[(lat, jit)] = cls
    return pattern


@dataclass(frozen=True)
class SweepSpec:
    latencies_ms: tuple[float, ...] = DEFAULT_LATENCIES_MS
    jitters_ms: tuple[float, ...] = DEFAULT_JITTERS_MS
    seeds_per_cell: int = 3
    trial_seconds: float = 60.0
    master_seed: int = 0

    def __post_init__(self):
        for name, axis in (("latencies", self.latencies_ms), ("jitters", self.jitters_ms)):
            if not axis:
                raise ValueError(f"{name} axis is empty")
            if any(b <= a for a, b in zip(axis, axis[1:])):
                raise ValueError(f"{name} axis must be strictly increasing")
        if self.seeds_per_cell < 1:
            raise ValueError("seeds_per_cell must be >= 1")
        if self.trial_seconds <= 0:
            raise ValueError("trial_seconds must be positive")


@dataclass(frozen=True)
class TrialOutcome:
    seed_index: int
    passed: bool
    fail_cause: str
    max_following_error_mm: float
    survived_us: int

    @classmethod
    def from_verdict(cls, seed_index: int, verdict: TrialVerdict) -> "TrialOutcome":
        return cls(seed_index, verdict.passed, verdict.fail_cause.value,
                   verdict.max_following_error_mm, verdict.survived_us)


@dataclass(frozen=True)
class CellVerdict:
    latency_ms: float
    jitter_ms: float
    cell_class: CellClass
    default_outcomes: tuple[TrialOutcome, ...]
    adapted_outcomes: tuple[TrialOutcome, ...]


@dataclass
class SweepResult:
    spec: SweepSpec
    cells: list[CellVerdict]  # sorted ascending (latency, jitter)

    def cell(self, latency_ms: float, jitter_ms: float) -> CellVerdict:
        for c in self.cells:
            if c.latency_ms == latency_ms and c.jitter_ms == jitter_ms:
                return c
        raise KeyError((latency_ms, jitter_ms))

    def classes(self) -> dict[tuple[float, float], CellClass]:
        return {(c.latency_ms, c.jitter_ms): c.cell_class for c in self.cells}


def _trial_seed(master_seed: int, latency_ms: float, jitter_ms: float,
                seed_index: int) -> int:
    return derive_seed(master_seed, "trial",
                       round(latency_ms * US_PER_MS), round(jitter_ms * US_PER_MS),
                       seed_index)


def evaluate_cell(default_config: LoopConfig, adapted_config: LoopConfig,
                  latency_ms: float, jitter_ms: float,
                  seeds_per_cell: int, trial_seconds: float,
                  master_seed: int) -> CellVerdict:
    """Classify one cell; trials stop early once the class is decided."""
    length_us = round(trial_seconds * US_PER_S)
    cmd, fb = symmetric_profiles(latency_ms, jitter_ms)

    default_outcomes: list[TrialOutcome] = []
    default_failed = False
    for i in range(seeds_per_cell):
        verdict = run_trial(default_config, cmd, fb,
                            trial_length_us=length_us,
                            seed=_trial_seed(master_seed, latency_ms, jitter_ms, i))
        default_outcomes.append(TrialOutcome.from_verdict(i, verdict))
        if not verdict.passed:
            default_failed = True
            break

    if not default_failed:
        return CellVerdict(latency_ms, jitter_ms, CellClass.PASS,
                           tuple(default_outcomes), ())

    adapted_outcomes: list[TrialOutcome] = []
    for i in range(seeds_per_cell):
        verdict = run_trial(adapted_config, cmd, fb,
                            trial_length_us=length_us,
                            seed=_trial_seed(master_seed, latency_ms, jitter_ms, i))
        adapted_outcomes.append(TrialOutcome.from_verdict(i, verdict))
        if not verdict.passed:
            return CellVerdict(latency_ms, jitter_ms, CellClass.FAIL,
                               tuple(default_outcomes), tuple(adapted_outcomes))
    return CellVerdict(latency_ms, jitter_ms, CellClass.PASS_WITH_ADAPTATION,
                       tuple(default_outcomes), tuple(adapted_outcomes))


def classify_screening_cell(default_config: LoopConfig, adapted_config: LoopConfig,
                            latency_ms: float, jitter_ms: float,
                            master_seed: int, trial_seconds: float) -> CellClass:
    """Single-seed, short-trial classification used by the calibration screen."""
    return evaluate_cell(default_config, adapted_config, latency_ms, jitter_ms,
                         1, trial_seconds, master_seed).cell_class


def run_sweep(spec: SweepSpec, default_config: LoopConfig, adapted_config: LoopConfig,
              order: str = "severe-first") -> SweepResult:
    """Evaluate the full matrix; `order` must not (and cannot) change verdicts."""
    validate_config_pair(default_config, adapted_config)
    cells = [(lat, jit) for lat in spec.latencies_ms for jit in spec.jitters_ms]
    if order == "severe-first":
        cells.sort(key=lambda c: (-c[0], -c[1]))
    elif order == "mild-first":
        cells.sort()
    else:
        raise ValueError(f"unknown evaluation order {order!r}")

    verdicts = [
        evaluate_cell(default_config, adapted_config, lat, jit,
                      spec.seeds_per_cell, spec.trial_seconds, spec.master_seed)
        for lat, jit in cells
    ]
    verdicts.sort(key=lambda v: (v.latency_ms, v.jitter_ms))
    return SweepResult(spec=spec, cells=verdicts)


# ---------------------------------------------------------------------------
# Rendering and parsing.


def _fmt(value: float) -> str:
    return f"{value:g}"


def render_matrix(result: SweepResult, fmt: str = "markdown") -> str:
    if fmt == "markdown":
        return _render_markdown(result)
    if fmt == "csv":
        return _render_csv(result)
    if fmt == "structured":
        return _render_structured(result)
    raise ValueError(f"unknown format {fmt!r}")


def _render_markdown(result: SweepResult) -> str:
    lats = result.spec.latencies_ms
    classes = result.classes()
    header = "| Jitter \\ Latency (ms) | " + " | ".join(_fmt(l) for l in lats) + " |"
    rule = "|" + "---|" * (len(lats) + 1)
    lines = [header, rule]
    for jit in result.spec.jitters_ms:
        row = [f"| {_fmt(jit)} |"]
        for lat in lats:
            row.append(f" {classes[(lat, jit)].symbol} |")
        lines.append("".join(row))
    return "\n".join(lines) + "\n"


def _encode_outcomes(outcomes: tuple[TrialOutcome, ...]) -> str:
    return ";".join(
        f"{o.seed_index}|{'pass' if o.passed else 'fail'}|{o.fail_cause}"
        f"|{o.max_following_error_mm:.9f}|{o.survived_us}"
        for o in outcomes)


def _decode_outcomes(text: str) -> tuple[TrialOutcome, ...]:
    if not text:
        return ()
    outcomes = []
    for token in text.split(";"):
        idx, status, cause, max_fe, survived = token.split("|")
        outcomes.append(TrialOutcome(int(idx), status == "pass", cause,
                                     float(max_fe), int(survived)))
    return tuple(outcomes)


def _render_csv(result: SweepResult) -> str:
    spec = result.spec
    lines = [
        "# ringmill-matrix v1 "
        f"seeds={spec.seeds_per_cell} trial_seconds={_fmt(spec.trial_seconds)} "
        f"master_seed={spec.master_seed}",
        "latency_ms,jitter_ms,class,default_outcomes,adapted_outcomes",
    ]
    for c in result.cells:
        lines.append(
            f"{_fmt(c.latency_ms)},{_fmt(c.jitter_ms)},{c.cell_class.value},"
            f"{_encode_outcomes(c.default_outcomes)},{_encode_outcomes(c.adapted_outcomes)}")
    return "\n".join(lines) + "\n"


def parse_matrix_csv(text: str) -> SweepResult:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 2 or not lines[0].startswith("# ringmill-matrix v1"):
        raise ValueError("not a ringmill matrix CSV")
    meta = dict(tok.split("=") for tok in lines[0].split()[3:])
    cells = []
    for line in lines[2:]:
        lat, jit, cls, default_enc, adapted_enc = line.split(",")
        cells.append(CellVerdict(float(lat), float(jit), CellClass(cls),
                                 _decode_outcomes(default_enc), _decode_outcomes(adapted_enc)))
    lats = tuple(sorted({c.latency_ms for c in cells}))
    jits = tuple(sorted({c.jitter_ms for c in cells}))
    spec = SweepSpec(latencies_ms=lats, jitters_ms=jits,
                     seeds_per_cell=int(meta["seeds"]),
                     trial_seconds=float(meta["trial_seconds"]),
                     master_seed=int(meta["master_seed"]))
    cells.sort(key=lambda v: (v.latency_ms, v.jitter_ms))
    return SweepResult(spec=spec, cells=cells)


def _render_structured(result: SweepResult) -> str:
    lines = []
    for c in result.cells:
        lines.append(json.dumps({
            "latency_ms": c.latency_ms,
            "jitter_ms": c.jitter_ms,
            "class": c.cell_class.value,
            "default": [asdict(o) for o in c.default_outcomes],
            "adapted": [asdict(o) for o in c.adapted_outcomes],
        }, sort_keys=True))
    summary = {
        "kind": "sweep-summary",
        "spec": asdict(result.spec),
        "classes": {f"{_fmt(k[0])},{_fmt(k[1])}": v.value
                    for k, v in sorted(result.classes().items())},
    }
    lines.append(json.dumps(summary, sort_keys=True))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Run manifests.


def _gains_to_dict(gains: PidGains) -> dict:
    return {"kp": gains.kp, "ki": gains.ki, "kd": gains.kd,
            "integral_clamp": gains.integral_clamp}


def loop_config_to_dict(config: LoopConfig) -> dict:
    return {
        "profile": config.profile.value,
        "gains": _gains_to_dict(config.gains),
        "servo_period_us": config.servo_period_us,
        "watchdog_timeout_us": config.watchdog_timeout_us,
        "init_grace_us": config.init_grace_us,
        "fe_limit_mm": config.fe_limit_mm,
        "delay_spread_tolerance_us": config.delay_spread_tolerance_us,
        "rtt_rescue_budget_us": config.rtt_rescue_budget_us,
    }


def loop_config_from_dict(data: dict) -> LoopConfig:
    return LoopConfig(
        profile=Profile(data["profile"]),
        gains=PidGains(**data["gains"]),
        servo_period_us=data["servo_period_us"],
        watchdog_timeout_us=data["watchdog_timeout_us"],
        init_grace_us=data["init_grace_us"],
        fe_limit_mm=data["fe_limit_mm"],
        delay_spread_tolerance_us=data["delay_spread_tolerance_us"],
        rtt_rescue_budget_us=data["rtt_rescue_budget_us"],
    )


@dataclass
class RunManifest:
    """Everything needed to reproduce a sweep bit-exactly."""

    artifact_version: str
    master_seed: int
    latencies_ms: tuple[float, ...]
    jitters_ms: tuple[float, ...]
    seeds_per_cell: int
    trial_seconds: float
    eval_order: str
    default_config: dict
    adapted_config: dict
    output_paths: dict = field(default_factory=dict)
    wall_clock_seconds: float = 0.0

    @classmethod
    def for_run(cls, spec: SweepSpec, default_config: LoopConfig,
                adapted_config: LoopConfig, order: str = "severe-first") -> "RunManifest":
        return cls(
            artifact_version=ARTIFACT_VERSION,
            master_seed=spec.master_seed,
            latencies_ms=spec.latencies_ms,
            jitters_ms=spec.jitters_ms,
            seeds_per_cell=spec.seeds_per_cell,
            trial_seconds=spec.trial_seconds,
            eval_order=order,
            default_config=loop_config_to_dict(default_config),
            adapted_config=loop_config_to_dict(adapted_config),
        )

    def spec(self) -> SweepSpec:
        return SweepSpec(latencies_ms=tuple(self.latencies_ms),
                         jitters_ms=tuple(self.jitters_ms),
                         seeds_per_cell=self.seeds_per_cell,
                         trial_seconds=self.trial_seconds,
                         master_seed=self.master_seed)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        data = json.loads(text)
        data["latencies_ms"] = tuple(data["latencies_ms"])
        data["jitters_ms"] = tuple(data["jitters_ms"])
        return cls(**data)


def run_from_manifest(manifest: RunManifest) -> tuple[SweepResult, str]:
    """Re-execute a manifest; returns the result and its verdict CSV."""
    started = time.monotonic()
    result = run_sweep(manifest.spec(),
                       loop_config_from_dict(manifest.default_config),
                       loop_config_from_dict(manifest.adapted_config),
                       order=manifest.eval_order)
    manifest.wall_clock_seconds = time.monotonic() - started
    return result, render_matrix(result, "csv")


# ---------------------------------------------------------------------------
# Scripted spectrum scenarios.


class ScriptError(ValueError):
    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


@dataclass
class ScenarioResult:
    manager: SpectrumManager
    granted: int
    rejected: int
    released: int

    def occupancy_report(self) -> str:
        lines = ["active grants:"]
        for g in sorted(self.manager.active_grants(), key=lambda g: g.grant_id):
            lines.append(
                f"  #{g.grant_id} {g.requester}: "
                f"[{g.block.low_mhz:g}, {g.block.high_mhz:g}] MHz "
                f"at ({g.area.x:g}, {g.area.y:g}) r={g.area.radius:g} m")
        centers = sorted({(g.area.x, g.area.y) for g in self.manager.active_grants()})
        lines.append("occupancy at grant centers:")
        for x, y in centers:
            _, total = self.manager.occupancy_at(x, y)
            lines.append(f"  ({x:g}, {y:g}): {total:g} MHz")
        return "\n".join(lines) + "\n"


def _parse_kv(tokens: list[str], line_no: int) -> dict[str, str]:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ScriptError(line_no, f"expected key=value, got {tok!r}")
        key, value = tok.split("=", 1)
        out[key] = value
    return out


def run_spectrum_scenario(script: str, manager: SpectrumManager | None = None) -> ScenarioResult:
    """Replay a timed request/release script through a spectrum manager.

    Line format (times in microseconds, positions in meters, bandwidth MHz)::

        at <t> request <requester> x=<x> y=<y> r=<radius> bw=<mhz> [expires=<t>]
        at <t> release <requester>

    Blank lines and ``#`` comments are skipped.  Parse errors report the
    line number.  Releases free the oldest active grant of a requester.
    """
    manager = manager or SpectrumManager()
    commands = []
    for line_no, raw in enumerate(script.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) < 3 or tokens[0] != "at":
            raise ScriptError(line_no, "expected: at <time_us> request|release ...")
        try:
            t = int(tokens[1])
        except ValueError:
            raise ScriptError(line_no, f"bad time {tokens[1]!r}") from None
        verb = tokens[2]
        if verb == "request":
            if len(tokens) < 4:
                raise ScriptError(line_no, "request needs a requester name")
            kv = _parse_kv(tokens[4:], line_no)
            try:
                area = CoverageArea(float(kv["x"]), float(kv["y"]), float(kv["r"]))
                bw = float(kv["bw"])
                expires = int(kv["expires"]) if "expires" in kv else None
            except KeyError as missing:
                raise ScriptError(line_no, f"request missing {missing}") from None
            except ValueError as bad:
                raise ScriptError(line_no, str(bad)) from None
            commands.append((t, line_no, "request", tokens[3], area, bw, expires))
        elif verb == "release":
            if len(tokens) != 4:
                raise ScriptError(line_no, "release takes exactly a requester name")
            commands.append((t, line_no, "release", tokens[3], None, None, None))
        else:
            raise ScriptError(line_no, f"unknown verb {verb!r}")

    commands.sort(key=lambda c: (c[0], c[1]))
    by_requester: dict[str, list[int]] = {}
    granted = rejected = released = 0
    for t, line_no, verb, requester, area, bw, expires in commands:
        if verb == "request":
            outcome = manager.request_spectrum(
                SpectrumRequest(requester=requester, area=area, bandwidth_mhz=bw),
                now=t, expires_at=expires)
            if isinstance(outcome, Rejection):
                rejected += 1
            else:
                granted += 1
                by_requester.setdefault(requester, []).append(outcome.grant_id)
        else:
            held = by_requester.get(requester, [])
            if not held:
                raise ScriptError(line_no, f"{requester!r} holds no grant to release")
            try:
                manager.release_spectrum(held.pop(0), now=t)
            except UnknownGrantError as exc:
                raise ScriptError(line_no, str(exc)) from None
            released += 1
        manager.check_invariants(now=t)
    return ScenarioResult(manager, granted, rejected, released)
