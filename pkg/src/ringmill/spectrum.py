"""Location-aware spectrum management over a shared local band.

A central manager partitions a 100 MHz band (3700-3800 MHz by default)
among networks that request bandwidth at a specific place.  Coverage is
modelled as closed planar discs; two grants conflict only if their discs
intersect, so the same frequencies can be reused at disjoint sites.
Assignment is first-fit ascending: the lowest contiguous free sub-block
that fits.  Every decision is appended to an audit log.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

from .engine import SimTime

DEFAULT_BAND_LOW_MHZ = 3700.0
DEFAULT_BAND_HIGH_MHZ = 3800.0


class SpectrumError(ValueError):
    """Malformed band, block, area or request."""


class UnknownGrantError(LookupError):
    """Release of a grant id that is not active."""


@dataclass(frozen=True)
class Band:
    low_mhz: float = DEFAULT_BAND_LOW_MHZ
    high_mhz: float = DEFAULT_BAND_HIGH_MHZ

    def __post_init__(self):
        if not self.low_mhz < self.high_mhz:
            raise SpectrumError(f"band edges out of order: {self.low_mhz}..{self.high_mhz}")

    @property
    def width_mhz(self) -> float:
        return self.high_mhz - self.low_mhz


@dataclass(frozen=True)
class SpectrumBlock:
    low_mhz: float
    high_mhz: float

    def __post_init__(self):
        if not self.low_mhz < self.high_mhz:
            raise SpectrumError(f"empty spectrum block: {self.low_mhz}..{self.high_mhz}")

    @property
    def width_mhz(self) -> float:
        return self.high_mhz - self.low_mhz

    def overlaps(self, other: "SpectrumBlock") -> bool:
        return self.low_mhz < other.high_mhz and other.low_mhz < self.high_mhz


@dataclass(frozen=True)
class CoverageArea:
    """Closed disc footprint in a planar site frame (meters)."""

    x: float
    y: float
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise SpectrumError(f"coverage radius must be positive, got {self.radius}")

    def intersects(self, other: "CoverageArea") -> bool:
        return math.hypot(self.x - other.x, self.y - other.y) <= self.radius + other.radius

    def contains(self, x: float, y: float) -> bool:
        return math.hypot(self.x - x, self.y - y) <= self.radius


@dataclass(frozen=True)
class SpectrumRequest:
    requester: str
    area: CoverageArea
    bandwidth_mhz: float
    qos: object | None = None  # QosProfile of the requesting network, informational

    def __post_init__(self):
        if not self.bandwidth_mhz > 0:
            raise SpectrumError(f"bandwidth must be positive, got {self.bandwidth_mhz}")


@dataclass(frozen=True)
class SpectrumGrant:
    grant_id: int
    requester: str
    block: SpectrumBlock
    area: CoverageArea
    expires_at: SimTime | None = None  # None = static plan, never expires


@dataclass(frozen=True)
class Rejection:
    reason: str
    occupied_mhz: float


@dataclass(frozen=True)
class DecisionRecord:
    """One audit-log entry per request/release."""

    time: SimTime
    requester: str
    verdict: str  # "granted" | "rejected" | "released"
    bandwidth_mhz: float
    occupied_mhz: float
    grant_id: int | None
    reason: str = ""


def union_width_mhz(blocks: Iterable[SpectrumBlock]) -> float:
    """Total width covered by the union of (possibly overlapping) blocks."""
    edges = sorted((b.low_mhz, b.high_mhz) for b in blocks)
    total = 0.0
    cur_low = cur_high = None
    for low, high in edges:
        if cur_high is None or low > cur_high:
            if cur_high is not None:
                total += cur_high - cur_low
            cur_low, cur_high = low, high
        else:
            cur_high = max(cur_high, high)
    if cur_high is not None:
        total += cur_high - cur_low
    return total


class SpectrumManager:
    """Central grant/reject authority for one shared band.

    All requests pass through this single object in call order, which is
    the serialized decision queue of the central network controller.
    """

    def __init__(self, band: Band | None = None):
        self.band = band or Band()
        self._grants: dict[int, SpectrumGrant] = {}
        self._next_id = 1
        self.audit_log: list[DecisionRecord] = []

    # -- queries ------------------------------------------------------------

    def active_grants(self, now: SimTime = 0) -> list[SpectrumGrant]:
        return [g for g in self._grants.values()
                if g.expires_at is None or g.expires_at > now]

    def occupancy_at(self, x: float, y: float, now: SimTime = 0) -> tuple[list[tuple[int, SpectrumBlock]], float]:
        """Grants covering a point, plus the union MHz they occupy there."""
        hits = [(g.grant_id, g.block) for g in self.active_grants(now)
                if g.area.contains(x, y)]
        return hits, union_width_mhz(b for _, b in hits)

    def _conflicting_blocks(self, area: CoverageArea, now: SimTime) -> list[SpectrumBlock]:
        return [g.block for g in self.active_grants(now) if g.area.intersects(area)]

    # -- commands -----------------------------------------------------------

    def configure_static_plan(self, site: CoverageArea | None = None) -> list[SpectrumGrant]:
        """Install the static three-network plan on an empty manager.

        Two 20 MHz blocks for the low-latency control and the sensor
        underlay networks, and the remaining 60 MHz for the overlay's
        non-critical traffic, tiling the band exactly.
        """
        if self._grants:
            raise SpectrumError("static plan requires an empty manager")
        site = site or CoverageArea(0.0, 0.0, 50.0)
        plan = [
            ("underlay-control", 20.0),
            ("underlay-sensor", 20.0),
            ("overlay", 60.0),
        ]
        grants = []
        for requester, width in plan:
            outcome = self.request_spectrum(
                SpectrumRequest(requester=requester, area=site, bandwidth_mhz=width))
            if isinstance(outcome, Rejection):  # cannot happen on an empty band
                raise SpectrumError(f"static plan failed for {requester}: {outcome.reason}")
            grants.append(outcome)
        return grants

    def request_spectrum(self, req: SpectrumRequest, now: SimTime = 0,
                         expires_at: SimTime | None = None) -> SpectrumGrant | Rejection:
        """Grant the lowest free sub-block at the requested place, or reject."""
        self._purge_expired(now)
        occupied_blocks = self._conflicting_blocks(req.area, now)
        occupied = union_width_mhz(occupied_blocks)
        if req.bandwidth_mhz > self.band.width_mhz:
            rejection = Rejection("oversized request", occupied)
            self._log(now, req, "rejected", occupied, None, rejection.reason)
            return rejection

        low = self._first_fit(occupied_blocks, req.bandwidth_mhz)
        if low is None:
            rejection = Rejection("no contiguous block free at this place", occupied)
            self._log(now, req, "rejected", occupied, None, rejection.reason)
            return rejection

        grant = SpectrumGrant(
            grant_id=self._next_id,
            requester=req.requester,
            block=SpectrumBlock(low, low + req.bandwidth_mhz),
            area=req.area,
            expires_at=expires_at,
        )
        self._next_id += 1
        self._grants[grant.grant_id] = grant
        self._log(now, req, "granted", occupied, grant.grant_id)
        return grant

    def release_spectrum(self, grant_id: int, now: SimTime = 0) -> None:
        if grant_id not in self._grants:
            raise UnknownGrantError(f"grant {grant_id} is not active")
        grant = self._grants.pop(grant_id)
        self.audit_log.append(DecisionRecord(
            time=now, requester=grant.requester, verdict="released",
            bandwidth_mhz=grant.block.width_mhz, occupied_mhz=0.0,
            grant_id=grant_id))

    # -- internals ----------------------------------------------------------

    def _first_fit(self, occupied: list[SpectrumBlock], width: float) -> float | None:
        """Lowest start frequency of a free gap that fits `width`, else None."""
        cursor = self.band.low_mhz
        for block in sorted(occupied, key=lambda b: b.low_mhz):
            if block.low_mhz - cursor >= width:
                return cursor
            cursor = max(cursor, block.high_mhz)
        if self.band.high_mhz - cursor >= width:
            return cursor
        return None

    def _purge_expired(self, now: SimTime) -> None:
        expired = [gid for gid, g in self._grants.items()
                   if g.expires_at is not None and g.expires_at <= now]
        for gid in expired:
            del self._grants[gid]

    def _log(self, now, req, verdict, occupied, grant_id, reason=""):
        self.audit_log.append(DecisionRecord(
            time=now, requester=req.requester, verdict=verdict,
            bandwidth_mhz=req.bandwidth_mhz, occupied_mhz=occupied,
            grant_id=grant_id, reason=reason))

    # -- integrity check used by tests and the scenario runner ---------------

    def check_invariants(self, now: SimTime = 0) -> None:
        """Pairwise non-interference and per-point capacity, by brute force."""
        grants = self.active_grants(now)
        for i, a in enumerate(grants):
            for b in grants[i + 1:]:
                if a.area.intersects(b.area) and a.block.overlaps(b.block):
                    raise AssertionError(
                        f"interference: grants {a.grant_id} and {b.grant_id} overlap "
                        f"in both area and frequency")
        for g in grants:
            _, total = self.occupancy_at(g.area.x, g.area.y, now)
            if total > self.band.width_mhz + 1e-9:
                raise AssertionError(
                    f"capacity exceeded at grant {g.grant_id} center: {total} MHz")
