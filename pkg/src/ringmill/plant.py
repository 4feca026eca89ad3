"""Machine-tool axis model, position controller and loop configuration.

One axis with a first-order velocity lag and kinematic clamps stands in
for the milling machine: simple enough to reason about, yet genuinely
sensitive to loop delay and jitter.  The controller is a PID on position
error with velocity feedforward, emitting velocity commands toward the
remote motion stage.  ``LoopConfig`` carries the supervision parameters
(following-error limit, watchdog, init-qualification thresholds) in the
``default`` and ``adapted`` driver flavours.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, replace

from .engine import SimTime, US_PER_S


@dataclass(frozen=True)
class QosProfile:
    max_latency_us: int
    max_jitter_us: int
    max_loss_rate: float


#: Closed-loop machine-tool control class: sub-10 ms deadlines, near-zero loss.
URLLC_QOS = QosProfile(max_latency_us=10_000, max_jitter_us=300, max_loss_rate=1e-9)


def is_urllc_conformant(profile: QosProfile) -> bool:
    return (500 <= profile.max_latency_us <= 10_000
            and profile.max_loss_rate <= 1e-9)


@dataclass
class AxisModel:
    """Single translational axis driven by velocity commands."""

    time_constant_s: float = 0.005
    max_velocity_mm_s: float = 50.0
    max_accel_mm_s2: float = 1000.0
    position_mm: float = 0.0
    velocity_mm_s: float = 0.0

    def __post_init__(self):
        if self.time_constant_s <= 0:
            raise ValueError("axis time constant must be positive")


def step_axis(axis: AxisModel, command_mm_s: float, dt_us: int) -> AxisModel:
    """Advance the axis by dt under a held velocity command (mutates and returns).

    First-order lag toward the command, with acceleration and velocity
    clamped to the axis limits, then position integration at the new
    velocity.
    """
    if dt_us <= 0:
        raise ValueError("dt must be positive")
    dt = dt_us / US_PER_S
    dv = (dt / axis.time_constant_s) * (command_mm_s - axis.velocity_mm_s)
    max_dv = axis.max_accel_mm_s2 * dt
    if dv > max_dv:
        dv = max_dv
    elif dv < -max_dv:
        dv = -max_dv
    v = axis.velocity_mm_s + dv
    limit = axis.max_velocity_mm_s
    if v > limit:
        v = limit
    elif v < -limit:
        v = -limit
    axis.velocity_mm_s = v
    axis.position_mm += v * dt
    return axis


@dataclass(frozen=True)
class PidGains:
    kp: float  # (mm/s) per mm
    ki: float = 0.0  # (mm/s) per mm*s
    kd: float = 0.0  # (mm/s) per mm/s
    integral_clamp: float = 0.05  # mm*s bound on the accumulated error


class PidController:
    """PID on position error with anti-windup clamp and velocity feedforward."""

    def __init__(self, gains: PidGains, period_us: int):
        self.gains = gains
        self.dt = period_us / US_PER_S
        self.integral = 0.0
        self._last_error: float | None = None

    def reset(self) -> None:
        self.integral = 0.0
        self._last_error = None

    def tick(self, setpoint_mm: float, feedback_mm: float,
             feedforward_mm_s: float = 0.0) -> float:
        """One servo-period update; returns the velocity command in mm/s."""
        error = setpoint_mm - feedback_mm
        g = self.gains
        self.integral += error * self.dt
        clamp = g.integral_clamp
        if self.integral > clamp:
            self.integral = clamp
        elif self.integral < -clamp:
            self.integral = -clamp
        derivative = 0.0
        if g.kd != 0.0 and self._last_error is not None:
            derivative = (error - self._last_error) / self.dt
        self._last_error = error
        return feedforward_mm_s + g.kp * error + g.ki * self.integral + g.kd * derivative


# ---------------------------------------------------------------------------
# Reference trajectories.


class TrapezoidTrajectory:
    """Repeating trapezoidal move between 0 and `amplitude_mm` with dwells.

    A stand-in for milling motion: accelerate at `accel_mm_s2` to
    `velocity_mm_s`, cruise, decelerate, dwell, and return.
    """

    def __init__(self, amplitude_mm: float = 20.0, velocity_mm_s: float = 50.0,
                 accel_mm_s2: float = 1000.0, dwell_s: float = 0.2):
        if amplitude_mm <= 0 or velocity_mm_s <= 0 or accel_mm_s2 <= 0 or dwell_s < 0:
            raise ValueError("trajectory parameters must be positive")
        self.amplitude = amplitude_mm
        self.vmax = velocity_mm_s
        self.accel = accel_mm_s2
        self.dwell = dwell_s
        t_ramp = velocity_mm_s / accel_mm_s2
        d_ramp = 0.5 * accel_mm_s2 * t_ramp * t_ramp
        if 2 * d_ramp > amplitude_mm:
            # short move: triangular profile, never reaches vmax
            t_ramp = (amplitude_mm / accel_mm_s2) ** 0.5
            d_ramp = amplitude_mm / 2
            self.vmax = accel_mm_s2 * t_ramp
        self._t_ramp = t_ramp
        self._d_ramp = d_ramp
        self._t_cruise = (amplitude_mm - 2 * d_ramp) / self.vmax if self.vmax > 0 else 0.0
        self._t_move = 2 * t_ramp + self._t_cruise
        self.period_s = 2 * (self._t_move + dwell_s)

    def _leg(self, t: float) -> tuple[float, float]:
        """Position/velocity within one forward move starting at rest at 0."""
        a, vm, tr, tc = self.accel, self.vmax, self._t_ramp, self._t_cruise
        if t < tr:
            return 0.5 * a * t * t, a * t
        if t < tr + tc:
            return self._d_ramp + vm * (t - tr), vm
        if t < self._t_move:
            td = self._t_move - t
            return self.amplitude - 0.5 * a * td * td, a * td
        return self.amplitude, 0.0

    def sample(self, t_us: SimTime) -> tuple[float, float]:
        """(setpoint mm, feedforward velocity mm/s) at trajectory time t."""
        t = (t_us / US_PER_S) % self.period_s
        half = self._t_move + self.dwell
        if t < half:
            return self._leg(t)
        pos, vel = self._leg(t - half)
        return self.amplitude - pos, -vel

    def position(self, t_us: SimTime) -> float:
        return self.sample(t_us)[0]

    def velocity(self, t_us: SimTime) -> float:
        return self.sample(t_us)[1]


class TabulatedTrajectory:
    """Trajectory from (time ms, setpoint mm) samples, linearly interpolated."""

    def __init__(self, points: list[tuple[float, float]]):
        if len(points) < 2:
            raise ValueError("trajectory table needs at least two points")
        self._t = [p[0] / 1000.0 for p in points]  # seconds
        self._x = [p[1] for p in points]
        if any(b <= a for a, b in zip(self._t, self._t[1:])):
            raise ValueError("trajectory times must be strictly increasing")
        self.period_s = self._t[-1]

    def sample(self, t_us: SimTime) -> tuple[float, float]:
        t = (t_us / US_PER_S) % self.period_s
        lo, hi = 0, len(self._t) - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if self._t[mid] <= t:
                lo = mid
            else:
                hi = mid
        span = self._t[hi] - self._t[lo]
        frac = (t - self._t[lo]) / span
        vel = (self._x[hi] - self._x[lo]) / span
        return self._x[lo] + frac * (self._x[hi] - self._x[lo]), vel

    def position(self, t_us: SimTime) -> float:
        return self.sample(t_us)[0]

    def velocity(self, t_us: SimTime) -> float:
        return self.sample(t_us)[1]


def load_trajectory_csv(text: str) -> TabulatedTrajectory:
    """Parse a `time_ms,setpoint_mm` CSV (header optional)."""
    points = []
    for row in csv.reader(io.StringIO(text)):
        if not row or not row[0].strip():
            continue
        try:
            points.append((float(row[0]), float(row[1])))
        except ValueError:
            if points:
                raise
            continue  # header row
    return TabulatedTrajectory(points)


# ---------------------------------------------------------------------------
# Loop configuration and trial verdicts.


class Profile(enum.Enum):
    DEFAULT = "default"
    ADAPTED = "adapted"


@dataclass(frozen=True)
class LoopConfig:
    """Supervision and tuning parameters for one driver flavour.

    The adapted flavour models the driver/watchdog/controller retuning a
    marginal link needs: it must not be tighter than the default one on
    init grace or watchdog timeout.
    """

    profile: Profile
    gains: PidGains
    servo_period_us: int = 1000
    watchdog_timeout_us: int = 2_100
    init_grace_us: int = 2_000_000
    fe_limit_mm: float = 0.1
    # link-qualification thresholds applied during initialization
    delay_spread_tolerance_us: int = 1_140
    rtt_rescue_budget_us: int = 3_400

    def __post_init__(self):
        if self.servo_period_us <= 0:
            raise ValueError("servo period must be positive")
        if self.watchdog_timeout_us <= 0 or self.init_grace_us <= 0:
            raise ValueError("watchdog timeout and init grace must be positive")
        if self.fe_limit_mm <= 0:
            raise ValueError("following-error limit must be positive")


def validate_config_pair(default: LoopConfig, adapted: LoopConfig) -> None:
    if default.profile is not Profile.DEFAULT or adapted.profile is not Profile.ADAPTED:
        raise ValueError("config pair must be (default, adapted)")
    if adapted.init_grace_us < default.init_grace_us:
        raise ValueError("adapted init grace must be >= default's")
    if adapted.watchdog_timeout_us < default.watchdog_timeout_us:
        raise ValueError("adapted watchdog timeout must be >= default's")


class FailCause(enum.Enum):
    NONE = "none"
    FOLLOWING_ERROR = "following-error"
    WATCHDOG = "watchdog"
    INIT_FAILURE = "init-failure"


@dataclass(frozen=True)
class TrialVerdict:
    passed: bool
    fail_cause: FailCause
    max_following_error_mm: float
    survived_us: SimTime

    def __post_init__(self):
        if self.passed != (self.fail_cause is FailCause.NONE):
            raise ValueError("outcome and fail cause disagree")
