"""Slot-scheduled wireless token rings with bounded medium access.

The ring is modelled at slot level: each node holds the token for a
fixed ``slot_time_us`` (handoff overhead included), cycling through the
configured node order forever, so the token position is a pure function
of the clock.  A node may start transmitting at any instant strictly
inside its slot; a transmission takes ``tx_time_us`` and reaches its
destination directly (single wireless hop).  The longest wait a frame at
the head of its queue can see is therefore

    (node_count - 1) * slot_time_us + tx_time_us

which the configured rings keep below the 2 ms bound the hardware class
is specified for.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import Callable

from .engine import SimTime, Simulator

MAX_RING_NODES = 8
CONTROL_FRAME_MIN_BYTES = 80
CONTROL_FRAME_MAX_BYTES = 159


class RingConfigError(ValueError):
    pass


class FrameClass(enum.Enum):
    URLLC = "urllc"
    SENSOR = "sensor"
    BRIDGED = "bridged"


@dataclass(frozen=True)
class RingConfig:
    ring_id: str
    nodes: tuple[str, ...]
    slot_time_us: int
    tx_time_us: int
    queue_depth: int = 16
    loss_rate: float = 1e-9

    def __post_init__(self):
        n = len(self.nodes)
        if not 2 <= n <= MAX_RING_NODES:
            raise RingConfigError(f"ring {self.ring_id}: node count {n} outside [2, {MAX_RING_NODES}]")
        if len(set(self.nodes)) != n:
            raise RingConfigError(f"ring {self.ring_id}: duplicate node ids")
        if self.slot_time_us < 0 or self.tx_time_us < 0:
            raise RingConfigError(f"ring {self.ring_id}: negative timing")
        if 0 < self.slot_time_us < self.tx_time_us:
            raise RingConfigError(
                f"ring {self.ring_id}: slot {self.slot_time_us} us cannot start "
                f"a {self.tx_time_us} us transmission")
        if self.queue_depth < 1:
            raise RingConfigError(f"ring {self.ring_id}: queue depth must be >= 1")
        if not 0.0 <= self.loss_rate <= 1.0:
            raise RingConfigError(f"ring {self.ring_id}: loss rate {self.loss_rate}")


def worst_case_access_latency(config: RingConfig) -> int:
    """Upper bound on enqueue-to-delivery time for a head-of-queue frame."""
    return (len(config.nodes) - 1) * config.slot_time_us + config.tx_time_us


@dataclass(slots=True)
class Frame:
    frame_id: int
    source: str
    dest: str
    payload_size: int
    enqueue_time: SimTime
    frame_class: FrameClass = FrameClass.URLLC

    def __post_init__(self):
        if self.frame_class is FrameClass.URLLC and not (
                CONTROL_FRAME_MIN_BYTES <= self.payload_size <= CONTROL_FRAME_MAX_BYTES):
            raise ValueError(
                f"control-loop frame size {self.payload_size} outside "
                f"[{CONTROL_FRAME_MIN_BYTES}, {CONTROL_FRAME_MAX_BYTES}] bytes")


@dataclass
class RingStats:
    enqueued: int = 0
    delivered: int = 0
    dropped_overflow: int = 0
    dropped_loss: int = 0
    latency_histogram_us: dict[int, int] = field(default_factory=dict)
    histogram_bucket_us: int = 100

    @property
    def dropped(self) -> int:
        return self.dropped_overflow + self.dropped_loss

    @property
    def in_queue(self) -> int:
        return self.enqueued - self.delivered - self.dropped

    def record_delivery(self, latency_us: int) -> None:
        self.delivered += 1
        bucket = latency_us // self.histogram_bucket_us
        self.latency_histogram_us[bucket] = self.latency_histogram_us.get(bucket, 0) + 1


class TokenRing:
    """One deterministic token ring attached to a simulation instance."""

    def __init__(self, config: RingConfig, sim: Simulator, rng: random.Random):
        self.config = config
        self.sim = sim
        self.rng = rng
        self.stats = RingStats()
        self._index = {node: i for i, node in enumerate(config.nodes)}
        self._watermark: dict[str, SimTime] = {node: 0 for node in config.nodes}
        self._pending: dict[str, list[SimTime]] = {node: [] for node in config.nodes}
        self._cycle = len(config.nodes) * config.slot_time_us

    def token_node_at(self, t: SimTime) -> str:
        """Pure function of (t, config); ignores traffic entirely."""
        if self.config.slot_time_us == 0:
            return self.config.nodes[0]
        return self.config.nodes[(t // self.config.slot_time_us) % len(self.config.nodes)]

    def _tx_start(self, node_idx: int, t0: SimTime) -> SimTime:
        """Earliest instant >= t0 at which this node may start transmitting."""
        slot = self.config.slot_time_us
        if slot == 0:
            return t0
        base = (t0 // self._cycle) * self._cycle + node_idx * slot
        if t0 < base:
            return base
        if t0 < base + slot:
            return t0
        return base + self._cycle

    def enqueue(self, node: str, frame: Frame, now: SimTime,
                on_deliver: Callable[[Frame, SimTime], None] | None = None) -> int | None:
        """Queue a frame at a member node; returns its queue position or None if dropped.

        Delivery is scheduled as an engine event at the computed transmission
        end.  Per-node FIFO is enforced by the transmission watermark.
        """
        if node not in self._index:
            raise RingConfigError(f"node {node!r} is not a member of ring {self.config.ring_id}")
        if frame.dest not in self._index:
            raise RingConfigError(f"dest {frame.dest!r} is not a member of ring {self.config.ring_id}")
        self.stats.enqueued += 1

        pending = self._pending[node]
        while pending and pending[0] <= now:
            pending.pop(0)
        position = len(pending)
        if position >= self.config.queue_depth:
            self.stats.dropped_overflow += 1
            return None
        if self.config.loss_rate > 0 and self.rng.random() < self.config.loss_rate:
            self.stats.dropped_loss += 1
            return None

        start = self._tx_start(self._index[node], max(now, self._watermark[node]))
        delivery = start + self.config.tx_time_us
        self._watermark[node] = delivery
        pending.append(delivery)

        def deliver(frame=frame, delivery=delivery):
            self.stats.record_delivery(delivery - frame.enqueue_time)
            if on_deliver is not None:
                on_deliver(frame, delivery)

        self.sim.schedule(delivery, deliver,
                          component=f"ring:{self.config.ring_id}", kind="deliver")
        return position


class MasterNode:
    """Gateway device that is a member of both underlay rings.

    Sensor and bridged traffic arriving here is relayed to the overlay
    uplink; control-class frames terminate inside their ring and are
    never bridged.  Configuration traffic from the overlay enters the
    rings through this node.
    """

    def __init__(self, node_id: str, rings: dict[str, TokenRing], overlay_uplink):
        self.node_id = node_id
        self.rings = rings
        self.overlay_uplink = overlay_uplink
        self.bridged_up = 0
        self.bridged_down = 0
        for ring in rings.values():
            if node_id not in ring.config.nodes:
                raise RingConfigError(
                    f"master {node_id!r} is not a member of ring {ring.config.ring_id}")

    def bridge_frame(self, frame: Frame, now: SimTime) -> SimTime | None:
        """Relay an in-ring frame up to the overlay; returns delivery time or None."""
        if frame.frame_class is FrameClass.URLLC:
            return None
        record = self.overlay_uplink.transmit(frame.frame_id, now)
        if record.delivered is not None:
            self.bridged_up += 1
        return record.delivered

    def deliver_from_overlay(self, ring_id: str, frame: Frame, now: SimTime,
                             on_deliver=None) -> int | None:
        """Push an overlay-originated frame (e.g. a config command) into a ring."""
        self.bridged_down += 1
        return self.rings[ring_id].enqueue(self.node_id, frame, now, on_deliver)
