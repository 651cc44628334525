"""Handover connection manager.

MPTCP has no notion of RSUs coming into or going out of range, so the CM
does it: the first beacon heard from an RSU brings up a tunnel to it and
then a subflow over that tunnel; when beacons stop for ``loss_timeout`` the
subflow is removed and the tunnel torn down.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

from srmptcp.mptcp import Connection
from srmptcp.radio import RadioMedium
from srmptcp.sim import EventHandle, Simulator, ms, seconds


@dataclass
class CmParams:
    beacon_period: int = seconds(1)
    loss_timeout: int = seconds(3)

    def __post_init__(self):
        if self.beacon_period <= 0:
            raise ValueError("beacon_period must be positive")
        if self.loss_timeout < self.beacon_period:
            raise ValueError("loss_timeout must be at least beacon_period")


@dataclass(frozen=True)
class Beacon:
    rsu_id: Any
    sent_at: int
    position: tuple[float, float] = (0.0, 0.0)
    signal_strength: float = -70.0


class RangeSchedule:
    """Per-RSU ``[start, end)`` intervals during which the OBU hears the RSU."""

    def __init__(self, intervals: dict[Any, Iterable[tuple[int, int]]]):
        self.intervals: dict[Any, list[tuple[int, int]]] = {}
        for rsu, spans in intervals.items():
            spans = sorted((int(a), int(b)) for a, b in spans)
            for a, b in spans:
                if a < 0 or b <= a:
                    raise ValueError(f"RSU {rsu!r}: bad interval [{a}, {b})")
            for (a0, b0), (a1, b1) in zip(spans, spans[1:]):
                if a1 < b0:
                    raise ValueError(f"RSU {rsu!r}: intervals [{a0}, {b0}) and [{a1}, {b1}) overlap")
            self.intervals[rsu] = spans
        self._starts = {rsu: [a for a, _ in spans] for rsu, spans in self.intervals.items()}

    def in_range(self, rsu_id: Any, t: int) -> bool:
        spans = self.intervals.get(rsu_id)
        if not spans:
            return False
        i = bisect_right(self._starts[rsu_id], t) - 1
        return i >= 0 and t < spans[i][1]

    def beacon_times(self, rsu_id: Any, period: int) -> list[int]:
        out = []
        for a, b in self.intervals.get(rsu_id, []):
            t = a
            while t < b:
                out.append(t)
                t += period
        return out


@dataclass
class RsuLinkSpec:
    prop_delay: int = ms(2)
    extra_delay: int = 0
    position: tuple[float, float] = (0.0, 0.0)


@dataclass
class _LiveRsu:
    link_id: int
    subflow_id: int
    timer: EventHandle | None = None
    last_beacon: int = 0


class HandoverCM:
    def __init__(
        self,
        sim: Simulator,
        medium: RadioMedium,
        connection: Connection,
        params: CmParams | None = None,
        links: dict[Any, RsuLinkSpec] | None = None,
        record_event: Callable[[int, str, int, str], None] | None = None,
    ):
        self.sim = sim
        self.medium = medium
        self.connection = connection
        self.params = params or CmParams()
        self.links = links or {}
        self._record = record_event
        self.live: dict[Any, _LiveRsu] = {}
        self.subflow_rsu: dict[int, Any] = {}
        self.beacons_heard = 0

    def _event(self, kind: str, subflow_id: int, detail: str) -> None:
        if self._record is not None:
            self._record(self.sim.now, kind, subflow_id, detail)

    def start(self, schedule: RangeSchedule) -> None:
        """Pre-schedule every beacon the OBU will hear."""
        for rsu in schedule.intervals:
            spec = self.links.setdefault(rsu, RsuLinkSpec())
            for t in schedule.beacon_times(rsu, self.params.beacon_period):
                beacon = Beacon(rsu, t, spec.position)
                self.sim.schedule(t, self.on_beacon, beacon, kind="beacon")

    def on_beacon(self, beacon: Beacon) -> None:
        self.beacons_heard += 1
        state = self.live.get(beacon.rsu_id)
        if state is None:
            spec = self.links.setdefault(beacon.rsu_id, RsuLinkSpec())
            # tunnel first, then the subflow over it
            link_id = self.medium.attach_link(beacon.rsu_id, spec.prop_delay, spec.extra_delay)
            self._event("link_up", 0, f"rsu={beacon.rsu_id} link={link_id}")
            if not self.connection.opened:
                sid = self.connection.open_connection(link_id).subflow_id
            else:
                sid = self.connection.add_subflow(link_id)
            state = _LiveRsu(link_id, sid)
            self.live[beacon.rsu_id] = state
            self.subflow_rsu[sid] = beacon.rsu_id
        state.last_beacon = self.sim.now
        self.sim.cancel(state.timer)
        state.timer = self.sim.schedule_in(
            self.params.loss_timeout, self.on_liveness_timeout, beacon.rsu_id, kind="liveness_timeout"
        )

    def on_liveness_timeout(self, rsu_id: Any) -> None:
        state = self.live.pop(rsu_id, None)
        if state is None:
            return
        self.connection.remove_subflow(state.subflow_id)
        self.medium.detach_link(state.link_id)
        self._event("link_down", 0, f"rsu={rsu_id} link={state.link_id}")

    def live_rsus(self) -> list[Any]:
        return list(self.live)
