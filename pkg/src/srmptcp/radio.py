"""Single shared half-duplex radio carrying several logical links.

Each :class:`LogicalLink` stands for one GRE tunnel between the OBU and an
RSU. All links, in both directions, contend for the same channel. The
channel serves one frame at a time and picks the next frame round-robin
over the non-empty ``(link, direction)`` queues.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable

from srmptcp.sim import SimulationError, Simulator, ms, to_seconds


class Direction(enum.IntEnum):
    UPLINK = 0
    DOWNLINK = 1


class LinkState(enum.Enum):
    UP = "up"
    DOWN = "down"


class LinkDownError(SimulationError):
    """Raised when a frame is handed to a link that is not Up."""


@dataclass
class MediumConfig:
    phy_rate: float = 9_000_000.0
    frame_overhead: int = 82
    background_occupancy: float = 0.0
    wired_delay: int = ms(5)
    queue_capacity: int = 100

    def __post_init__(self):
        if self.phy_rate <= 0:
            raise ValueError("phy_rate must be positive")
        if not 0.0 <= self.background_occupancy < 1.0:
            raise ValueError("background_occupancy must be in [0, 1)")
        if self.queue_capacity < 1:
            raise ValueError("queue_capacity must be at least 1")
        if self.wired_delay < 0 or self.frame_overhead < 0:
            raise ValueError("wired_delay and frame_overhead must be non-negative")


@dataclass(eq=False)
class Frame:
    link_id: int
    direction: Direction
    payload_bytes: int
    payload: Any = None
    enqueued_at: int = -1

    def __post_init__(self):
        if self.payload_bytes < 0:
            raise ValueError("payload_bytes must be non-negative")


@dataclass(eq=False)
class LogicalLink:
    link_id: int
    rsu_id: Any
    prop_delay: int = ms(2)
    extra_delay: int = 0
    state: LinkState = LinkState.UP
    queues: tuple = field(default_factory=lambda: (deque(), deque()))
    # id(frame) -> frame, for frames past their airtime but still propagating
    in_flight: dict = field(default_factory=dict)

    @property
    def uplink_queue(self) -> deque:
        return self.queues[Direction.UPLINK]

    @property
    def downlink_queue(self) -> deque:
        return self.queues[Direction.DOWNLINK]

    @property
    def up(self) -> bool:
        return self.state is LinkState.UP


class RadioMedium:
    """Airtime arbiter for the OBU's single radio.

    ``on_deliver(frame)`` is called when a frame reaches its far end: the
    server for uplink frames, the OBU for downlink frames. ``reachable``
    tells whether the RSU behind a link is physically in range; frames sent
    on an unreachable link still use airtime but are lost.
    """

    def __init__(
        self,
        sim: Simulator,
        config: MediumConfig | None = None,
        on_deliver: Callable[[Frame], None] | None = None,
        reachable: Callable[[Any, int], bool] | None = None,
        bin_width: int = 1_000_000,
    ):
        self.sim = sim
        self.config = config or MediumConfig()
        self.on_deliver = on_deliver or (lambda frame: None)
        self.reachable = reachable
        self.links: dict[int, LogicalLink] = {}
        self._next_link_id = 1
        # arbitration order: (link_id, direction) in attach order
        self._ring: list[tuple[LogicalLink, Direction]] = []
        self._cursor = 0
        self._current: Frame | None = None
        self._current_end = 0
        self._busy = False
        self._last_tx_end = 0
        self._bits_per_second = self.config.phy_rate * (1.0 - self.config.background_occupancy)
        self._airtime_cache: dict[int, int] = {}
        self.bin_width = bin_width
        # per-bin accounting: occupied airtime and nominal (bits / phy_rate) airtime, in us
        self.busy_us: dict[int, float] = {}
        self.nominal_us: dict[int, float] = {}
        self.payload_bits: dict[int, float] = {}
        self.frames_sent = 0
        self.frames_lost_out_of_range = 0
        self.frames_dropped_queue = 0
        self.overlap_violations = 0

    # -- link management -------------------------------------------------

    def attach_link(self, rsu_id: Any, prop_delay: int = ms(2), extra_delay: int = 0) -> int:
        if extra_delay < 0 or prop_delay < 0:
            raise ValueError("link delays must be non-negative")
        for link in self.links.values():
            if link.rsu_id == rsu_id and link.up:
                raise SimulationError(f"RSU {rsu_id!r} already has an Up link ({link.link_id})", self.sim.now)
        link = LogicalLink(self._next_link_id, rsu_id, prop_delay, extra_delay)
        self._next_link_id += 1
        self.links[link.link_id] = link
        self._ring.append((link, Direction.UPLINK))
        self._ring.append((link, Direction.DOWNLINK))
        return link.link_id

    def detach_link(self, link_id: int) -> list[Frame]:
        """Take a link Down and return every frame that will now never arrive."""
        link = self._link(link_id)
        if not link.up:
            return []
        link.state = LinkState.DOWN
        dropped: list[Frame] = []
        if self._current is not None and self._current.link_id == link_id:
            # the airtime is already spent; only the delivery is lost
            dropped.append(self._current)
            self._current = None
        dropped.extend(link.in_flight.values())
        link.in_flight.clear()
        for q in link.queues:
            dropped.extend(q)
            q.clear()
        idx = [i for i, (lk, _) in enumerate(self._ring) if lk is link]
        for i in reversed(idx):
            del self._ring[i]
            if i < self._cursor:
                self._cursor -= 1
        if self._ring:
            self._cursor %= len(self._ring)
        else:
            self._cursor = 0
        return dropped

    def active_links(self) -> list[int]:
        return [lid for lid, link in self.links.items() if link.up]

    def arbitration_set_size(self) -> int:
        return len(self.active_links())

    def _link(self, link_id: int) -> LogicalLink:
        try:
            return self.links[link_id]
        except KeyError:
            raise SimulationError(f"unknown link_id {link_id}", self.sim.now) from None

    # -- frames ----------------------------------------------------------

    def airtime(self, payload_bytes: int) -> int:
        """Channel time (us) one frame occupies, including foreign-station occupancy.

        Rounded up so that integer airtime never undercuts the exact value.
        """
        cached = self._airtime_cache.get(payload_bytes)
        if cached is None:
            bits = (payload_bytes + self.config.frame_overhead) * 8
            cached = self._airtime_cache[payload_bytes] = max(1, math.ceil(bits * 1_000_000 / self._bits_per_second))
        return cached

    def send_frame(self, link_id: int, frame: Frame) -> bool:
        """Enqueue a frame. False means the queue was full and the frame is lost."""
        link = self._link(link_id)
        if not link.up:
            raise LinkDownError(f"link {link_id} is Down", self.sim.now)
        q = link.queues[frame.direction]
        if len(q) >= self.config.queue_capacity:
            self.frames_dropped_queue += 1
            return False
        frame.link_id = link_id
        frame.enqueued_at = self.sim.now
        q.append(frame)
        if not self._busy:
            self.arbitrate()
        return True

    def send_from_server(self, link_id: int, frame: Frame) -> None:
        """Hand a downlink frame to the wired segment; it reaches the RSU queue after ``wired_delay``."""
        frame.direction = Direction.DOWNLINK
        self.sim.post(self.sim.now + self.config.wired_delay, self._wired_arrival, link_id, frame)

    def _wired_arrival(self, link_id: int, frame: Frame) -> None:
        link = self.links.get(link_id)
        if link is None or not link.up:
            return
        self.send_frame(link_id, frame)

    def queue_length(self, link_id: int, direction: Direction) -> int:
        return len(self._link(link_id).queues[direction])

    @property
    def idle(self) -> bool:
        return not self._busy

    # -- arbitration -----------------------------------------------------

    def _next_queue(self) -> tuple[LogicalLink, Direction] | None:
        """Next non-empty (link, direction) queue after the cursor, round-robin."""
        ring = self._ring
        n = len(ring)
        for step in range(n):
            i = (self._cursor + step) % n
            link, direction = ring[i]
            if link.queues[direction]:
                self._cursor = (i + 1) % n
                return link, direction
        return None

    def arbitrate(self) -> int | None:
        """Start the next frame on an idle channel and return its completion time.

        Airtime is ``(payload + overhead) * 8 / (phy_rate * (1 - occupancy))``.
        Returns None when the channel is busy or every queue is empty.
        """
        if not self.idle:
            return None
        choice = self._next_queue()
        if choice is None:
            return None
        link, direction = choice
        frame = link.queues[direction].popleft()
        start = self.sim.now
        if start < self._last_tx_end:
            self.overlap_violations += 1
        duration = self.airtime(frame.payload_bytes)
        end = start + duration
        self._current = frame
        self._current_end = end
        self._account(start, end, frame)
        self._busy = True
        self.sim.post(end, self._tx_complete)
        return end

    def _account(self, start: int, end: int, frame: Frame) -> None:
        bits = (frame.payload_bytes + self.config.frame_overhead) * 8
        nominal_total = bits * 1_000_000 / self.config.phy_rate
        payload_total = frame.payload_bytes * 8
        width = self.bin_width
        self.frames_sent += 1
        b = start // width
        if (end - 1) // width == b:
            self.busy_us[b] = self.busy_us.get(b, 0.0) + (end - start)
            self.nominal_us[b] = self.nominal_us.get(b, 0.0) + nominal_total
            self.payload_bits[b] = self.payload_bits.get(b, 0.0) + payload_total
            return
        # frame straddles a bin boundary: split pro rata
        span = end - start
        t = start
        while t < end:
            b = t // width
            seg_end = min(end, (b + 1) * width)
            part = seg_end - t
            self.busy_us[b] = self.busy_us.get(b, 0.0) + part
            self.nominal_us[b] = self.nominal_us.get(b, 0.0) + nominal_total * part / span
            self.payload_bits[b] = self.payload_bits.get(b, 0.0) + payload_total * part / span
            t = seg_end

    def _tx_complete(self) -> None:
        self._busy = False
        self._last_tx_end = self.sim.now
        frame = self._current
        self._current = None
        if frame is not None:
            link = self.links[frame.link_id]
            delay = link.prop_delay + link.extra_delay
            if frame.direction is Direction.UPLINK:
                delay += self.config.wired_delay
            if self.reachable is not None and not self.reachable(link.rsu_id, self.sim.now):
                self.frames_lost_out_of_range += 1
            else:
                link.in_flight[id(frame)] = frame
                self.sim.post(self.sim.now + delay, self._deliver, frame)
        self.arbitrate()

    def _deliver(self, frame: Frame) -> None:
        # frames cut off by detach_link are no longer in in_flight
        if self.links[frame.link_id].in_flight.pop(id(frame), None) is not None:
            self.on_deliver(frame)

    # -- accounting ------------------------------------------------------

    def bin_report(self, b: int) -> dict:
        width = self.bin_width
        return {
            "bin": b,
            "start_s": to_seconds(b * width),
            "busy_us": self.busy_us.get(b, 0.0),
            "nominal_us": self.nominal_us.get(b, 0.0),
            "payload_bits": self.payload_bits.get(b, 0.0),
        }
