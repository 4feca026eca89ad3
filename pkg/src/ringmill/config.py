"""INI scenario configuration.

Every section is optional; omitted values fall back to the shipped
calibrated defaults.  The full schema is documented in the README.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, replace
from pathlib import Path

from .channel import ChannelProfile, JitterDistribution
from .harness import SweepSpec
from .plant import LoopConfig, PidGains, Profile, TrapezoidTrajectory, load_trajectory_csv
from .ring import RingConfig
from .spectrum import Band
from .trial import (ADAPTED_LOOP_CONFIG, DEFAULT_CONTROL_RING, DEFAULT_LOOP_CONFIG,
                    DEFAULT_OVERLAY_PROFILE, DEFAULT_SENSOR_RING)


class ConfigError(ValueError):
    pass


@dataclass
class AppConfig:
    sweep: SweepSpec
    default_loop: LoopConfig
    adapted_loop: LoopConfig
    control_ring: RingConfig
    sensor_ring: RingConfig | None
    overlay_profile: ChannelProfile
    trajectory: object
    band: Band
    static_plan: bool
    # fixed channel pair for single trials; None = take them from CLI flags
    command_profile: ChannelProfile | None = None
    feedback_profile: ChannelProfile | None = None


def default_app_config() -> AppConfig:
    return AppConfig(
        sweep=SweepSpec(),
        default_loop=DEFAULT_LOOP_CONFIG,
        adapted_loop=ADAPTED_LOOP_CONFIG,
        control_ring=DEFAULT_CONTROL_RING,
        sensor_ring=DEFAULT_SENSOR_RING,
        overlay_profile=DEFAULT_OVERLAY_PROFILE,
        trajectory=TrapezoidTrajectory(),
        band=Band(),
        static_plan=True,
    )


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in raw.replace(",", " ").split())


def _gains(section, fallback: PidGains) -> PidGains:
    return PidGains(
        kp=section.getfloat("kp", fallback.kp),
        ki=section.getfloat("ki", fallback.ki),
        kd=section.getfloat("kd", fallback.kd),
        integral_clamp=section.getfloat("integral_clamp", fallback.integral_clamp),
    )


def _loop(section, gains: PidGains, fallback: LoopConfig) -> LoopConfig:
    return replace(
        fallback,
        gains=gains,
        servo_period_us=section.getint("servo_period_us", fallback.servo_period_us),
        watchdog_timeout_us=section.getint("watchdog_timeout_us", fallback.watchdog_timeout_us),
        init_grace_us=section.getint("init_grace_us", fallback.init_grace_us),
        fe_limit_mm=section.getfloat("fe_limit_mm", fallback.fe_limit_mm),
        delay_spread_tolerance_us=section.getint(
            "delay_spread_tolerance_us", fallback.delay_spread_tolerance_us),
        rtt_rescue_budget_us=section.getint(
            "rtt_rescue_budget_us", fallback.rtt_rescue_budget_us),
    )


def _ring(section, fallback: RingConfig) -> RingConfig:
    nodes = fallback.nodes
    if "nodes" in section:
        nodes = tuple(tok.strip() for tok in section["nodes"].split(",") if tok.strip())
    return RingConfig(
        ring_id=fallback.ring_id,
        nodes=nodes,
        slot_time_us=section.getint("slot_time_us", fallback.slot_time_us),
        tx_time_us=section.getint("tx_time_us", fallback.tx_time_us),
        queue_depth=section.getint("queue_depth", fallback.queue_depth),
        loss_rate=section.getfloat("loss_rate", fallback.loss_rate),
    )


def _channel(section, fallback: ChannelProfile) -> ChannelProfile:
    return ChannelProfile.from_ms(
        section.getfloat("mean_delay_ms", fallback.mean_delay_us / 1000.0),
        section.getfloat("jitter_ms", fallback.jitter_us / 1000.0),
        distribution=JitterDistribution(
            section.get("distribution", fallback.distribution.value)),
        loss_rate=section.getfloat("loss_rate", fallback.loss_rate),
        reorder_allowed=section.getboolean("reorder", fallback.reorder_allowed),
    )


def load_config(path: str | Path) -> AppConfig:
    parser = configparser.ConfigParser()
    text = Path(path).read_text()
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None

    app = default_app_config()
    known = set(parser.sections())

    def section(name):
        if not parser.has_section(name):
            parser.add_section(name)
        return parser[name]

    try:
        sweep_sec = section("sweep")
        app.sweep = SweepSpec(
            latencies_ms=_floats(sweep_sec.get("latencies_ms", "")) or app.sweep.latencies_ms,
            jitters_ms=_floats(sweep_sec.get("jitters_ms", "")) or app.sweep.jitters_ms,
            seeds_per_cell=sweep_sec.getint("seeds_per_cell", app.sweep.seeds_per_cell),
            trial_seconds=sweep_sec.getfloat("trial_seconds", app.sweep.trial_seconds),
            master_seed=sweep_sec.getint("master_seed", app.sweep.master_seed),
        )

        default_gains = _gains(section("gains.default"), app.default_loop.gains)
        adapted_gains = _gains(section("gains.adapted"), app.adapted_loop.gains)
        app.default_loop = _loop(section("loop.default"), default_gains, app.default_loop)
        app.adapted_loop = _loop(section("loop.adapted"), adapted_gains, app.adapted_loop)

        app.control_ring = _ring(section("ring.control"), app.control_ring)
        if not section("ring.sensor").getboolean("enabled", True):
            app.sensor_ring = None
        else:
            app.sensor_ring = _ring(section("ring.sensor"), app.sensor_ring)
        app.overlay_profile = _channel(section("channel.overlay"), app.overlay_profile)
        if "channel.command" in known:
            app.command_profile = _channel(section("channel.command"),
                                           ChannelProfile(0, 0))
        if "channel.feedback" in known:
            app.feedback_profile = _channel(section("channel.feedback"),
                                            ChannelProfile(0, 0))

        if "trajectory" in known:
            traj_sec = section("trajectory")
            if "file" in traj_sec:
                app.trajectory = load_trajectory_csv(Path(traj_sec["file"]).read_text())
            else:
                app.trajectory = TrapezoidTrajectory(
                    amplitude_mm=traj_sec.getfloat("amplitude_mm", 20.0),
                    velocity_mm_s=traj_sec.getfloat("velocity_mm_s", 50.0),
                    accel_mm_s2=traj_sec.getfloat("accel_mm_s2", 1000.0),
                    dwell_s=traj_sec.getfloat("dwell_s", 0.2),
                )

        band_sec = section("band")
        app.band = Band(band_sec.getfloat("low_mhz", app.band.low_mhz),
                        band_sec.getfloat("high_mhz", app.band.high_mhz))
        app.static_plan = section("spectrum").getboolean("static_plan", app.static_plan)
    except (ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from None
    return app
