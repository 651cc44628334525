"""MPTCP connection: one data sequence space spread over per-link subflows.

The sender lives on the OBU and the receiver on the server; both ends are
modelled by the same :class:`Connection` object. Data segments travel as
uplink frames on the radio, acknowledgements come back as downlink frames.
Every segment carries a DSN mapping, every ACK carries the subflow's
cumulative SSN ack and the connection-level DATA_ACK.

Loss recovery per subflow is NewReno-like without SACK: three duplicate
ACKs trigger a fast retransmit of the earliest unacked mapping, partial
ACKs retransmit the next hole, and an RTO retransmits the earliest mapping
with exponential backoff. When a subflow times out or is removed, its
outstanding mappings are queued for reinjection on the other subflows.
Reinjected data is always scheduled before new data.
"""

from __future__ import annotations

import enum
import heapq
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from typing import Callable

from srmptcp.congestion import CongestionPolicy, CouplingSnapshot, LossCause, on_ack_increase, on_decrease
from srmptcp.radio import Direction, Frame, RadioMedium
from srmptcp.scheduler import Candidate, Decision, MinRttScheduler
from srmptcp.sim import SimulationError, Simulator, ms, seconds

UNLIMITED = None


@dataclass
class EngineParams:
    mss: int = 1400
    ack_policy: str = "every_segment"
    min_rto: int = ms(200)
    max_rto: int = seconds(60)
    initial_rto: int = seconds(1)
    dupack_threshold: int = 3
    initial_cwnd_segments: int = 10
    # bytes; 0 means unbounded (classic "arbitrarily high")
    initial_ssthresh: int = 65_536

    def __post_init__(self):
        if self.mss <= 0:
            raise ValueError("mss must be positive")
        if self.ack_policy != "every_segment":
            raise ValueError("only ack_policy='every_segment' is supported")
        if self.dupack_threshold < 1:
            raise ValueError("dupack_threshold must be at least 1")
        if self.min_rto <= 0 or self.initial_cwnd_segments < 2 or self.initial_ssthresh < 0:
            raise ValueError("invalid timer or window parameter")


class SubflowRole(enum.Enum):
    MAIN = "main"
    JOINED = "joined"


class SubflowState(enum.Enum):
    ACTIVATING = "activating"
    ACTIVE = "active"
    REMOVED = "removed"


@dataclass
class SegmentMapping:
    dsn_start: int
    length: int
    ssn_start: int
    send_time: int
    retransmitted: bool = False
    reinjected: bool = False

    @property
    def dsn_end(self) -> int:
        return self.dsn_start + self.length

    @property
    def ssn_end(self) -> int:
        return self.ssn_start + self.length


class DataSegment:
    __slots__ = ("subflow_id", "ssn", "dsn", "length", "sent_at", "retransmitted")

    def __init__(self, subflow_id, ssn, dsn, length, sent_at, retransmitted):
        self.subflow_id = subflow_id
        self.ssn = ssn
        self.dsn = dsn
        self.length = length
        self.sent_at = sent_at
        self.retransmitted = retransmitted


class AckSegment:
    __slots__ = ("subflow_id", "ssn_ack", "data_ack", "echo_sent_at", "echo_retransmitted")

    def __init__(self, subflow_id, ssn_ack, data_ack, echo_sent_at, echo_retransmitted):
        self.subflow_id = subflow_id
        self.ssn_ack = ssn_ack
        self.data_ack = data_ack
        self.echo_sent_at = echo_sent_at
        self.echo_retransmitted = echo_retransmitted


@dataclass(eq=False)
class Subflow:
    subflow_id: int
    link_id: int
    role: SubflowRole
    cwnd: float
    ssthresh: float
    base_rtt: int
    rto: int
    state: SubflowState = SubflowState.ACTIVATING
    next_ssn: int = 0
    subflow_acked: int = 0
    srtt: float | None = None
    rttvar: float | None = None
    dup_acks: int = 0
    in_recovery: bool = False
    recovery_cause: LossCause | None = None
    recover: int = 0
    mappings: "OrderedDict[int, SegmentMapping]" = field(default_factory=OrderedDict)
    # RTO deadline; the timer event itself is re-armed lazily when it fires early
    rto_deadline: int | None = None
    rto_timer: object = None
    created_at: int = 0
    removed_at: int | None = None
    # server-side subflow receiver
    rcv_nxt: int = 0
    rcv_ooo: dict = field(default_factory=dict)
    # SRTT samples since the last metrics tick, drained by the runner
    bin_rtt_sum: float = 0.0
    bin_rtt_count: int = 0
    retransmits: int = 0
    timeouts: int = 0

    @property
    def inflight(self) -> int:
        return self.next_ssn - self.subflow_acked

    @property
    def cwnd_space(self) -> float:
        return self.cwnd - self.inflight

    @property
    def rtt_estimate(self) -> float:
        """SRTT in microseconds, or the link's base RTT before the first sample."""
        return self.srtt if self.srtt is not None else float(self.base_rtt)

    @property
    def schedulable(self) -> bool:
        return self.state is SubflowState.ACTIVE


class AppSink:
    """Server-side application: receives the in-order byte stream."""

    def __init__(self, keep_log: bool = False):
        self.bytes_received = 0
        self.log: list[tuple[int, int, int]] | None = [] if keep_log else None
        self.violations = 0
        self.last_delivery_at: int | None = None

    def deliver(self, start: int, end: int, now: int) -> None:
        if start != self.bytes_received or end <= start:
            self.violations += 1
        self.bytes_received = max(self.bytes_received, end)
        if self.log is not None:
            self.log.append((start, end, now))
        self.last_delivery_at = now


EventRecorder = Callable[[int, str, int, str], None]


class Connection:
    """Both ends of one MPTCP connection over a :class:`RadioMedium`.

    ``app_limit`` bounds the number of bytes the sending application
    offers; None means a greedy, always-backlogged source.
    """

    def __init__(
        self,
        sim: Simulator,
        medium: RadioMedium,
        params: EngineParams | None = None,
        scheduler=None,
        congestion: CongestionPolicy | str = CongestionPolicy.LIA,
        app_limit: int | None = UNLIMITED,
        record_event: EventRecorder | None = None,
        record_decisions: bool = False,
        keep_delivery_log: bool = False,
        bin_width: int = seconds(1),
    ):
        self.sim = sim
        self.medium = medium
        self.params = params or EngineParams()
        self.scheduler = scheduler or MinRttScheduler()
        self.congestion = CongestionPolicy(congestion)
        self.app_limit = app_limit
        self._record = record_event
        self.decisions: list[Decision] | None = [] if record_decisions else None

        self.subflows: dict[int, Subflow] = {}
        self._by_link: dict[int, Subflow] = {}
        self._next_subflow_id = 1
        self.next_dsn = 0
        self.data_acked = 0
        self.reinject_queue: deque[tuple[int, int]] = deque()
        self._reinject_queued: set[int] = set()
        self.opened = False

        # server side
        self.recv_data_ack = 0
        self._recv_heap: list[tuple[int, int, int, int]] = []
        self.bin_width = bin_width
        # (arrival bin, subflow id) -> bytes delivered to the application
        self.credit: dict[tuple[int, int], int] = {}
        self.sink = AppSink(keep_log=keep_delivery_log)

        self.segments_sent = 0
        self.segments_lost_at_queue = 0
        self.reinjected_bytes = 0
        self.max_delivery_gap = 0
        self._gap_anchor: int | None = None

        medium.on_deliver = self._on_frame

    # -- bookkeeping ----------------------------------------------------

    def _event(self, kind: str, subflow_id: int, detail: str = "") -> None:
        if self._record is not None:
            self._record(self.sim.now, kind, subflow_id, detail)

    def live_subflows(self) -> list[Subflow]:
        return [sf for sf in self.subflows.values() if sf.state is not SubflowState.REMOVED]

    def subflow_on_link(self, link_id: int) -> Subflow | None:
        sf = self._by_link.get(link_id)
        if sf is not None and sf.state is SubflowState.REMOVED:
            return None
        return sf

    def _base_rtt(self, link_id: int) -> int:
        link = self.medium.links[link_id]
        one_way = link.prop_delay + link.extra_delay
        return 2 * one_way + 2 * self.medium.config.wired_delay + self.medium.airtime(
            self.params.mss
        ) + self.medium.airtime(0)

    def _gap_mark(self) -> None:
        """Close the current no-delivery interval at ``now``."""
        if self._gap_anchor is not None:
            self.max_delivery_gap = max(self.max_delivery_gap, self.sim.now - self._gap_anchor)

    # -- path management ------------------------------------------------

    def open_connection(self, link_id: int) -> Subflow:
        if self.opened:
            raise SimulationError("connection already opened", self.sim.now)
        link = self.medium.links.get(link_id)
        if link is None or not link.up:
            raise SimulationError(f"cannot open connection: link {link_id} is not Up", self.sim.now)
        self.opened = True
        return self._new_subflow(link_id, SubflowRole.MAIN)

    def add_subflow(self, link_id: int) -> int:
        if not self.opened:
            raise SimulationError("add_subflow before open_connection", self.sim.now)
        link = self.medium.links.get(link_id)
        if link is None or not link.up:
            raise SimulationError(f"cannot add subflow: link {link_id} is not Up", self.sim.now)
        if self.subflow_on_link(link_id) is not None:
            raise SimulationError(f"link {link_id} already carries a subflow", self.sim.now)
        return self._new_subflow(link_id, SubflowRole.JOINED).subflow_id

    def _new_subflow(self, link_id: int, role: SubflowRole) -> Subflow:
        p = self.params
        base = self._base_rtt(link_id)
        sf = Subflow(
            subflow_id=self._next_subflow_id,
            link_id=link_id,
            role=role,
            cwnd=float(p.initial_cwnd_segments * p.mss),
            ssthresh=float(p.initial_ssthresh) if p.initial_ssthresh else float("inf"),
            base_rtt=base,
            rto=p.initial_rto,
            created_at=self.sim.now,
        )
        self._next_subflow_id += 1
        self.subflows[sf.subflow_id] = sf
        self._by_link[link_id] = sf
        if self._gap_anchor is None:
            self._gap_anchor = self.sim.now
        self._event("subflow_add", sf.subflow_id, f"link={link_id} role={role.value}")
        # MP_CAPABLE / MP_JOIN exchange collapsed into one base RTT
        self.sim.schedule_in(base, self._activate, sf, kind="subflow_activate")
        return sf

    def _activate(self, sf: Subflow) -> None:
        if sf.state is SubflowState.ACTIVATING:
            sf.state = SubflowState.ACTIVE
            self.try_send()

    def remove_subflow(self, subflow_id: int) -> int:
        """Destroy a subflow and queue its unacknowledged data elsewhere.

        Returns the number of bytes put on the reinjection queue. Mappings
        already reinjected after an earlier timeout are not queued again:
        their new copies are owned by another subflow.
        """
        sf = self.subflows.get(subflow_id)
        if sf is None or sf.state is SubflowState.REMOVED:
            raise SimulationError(f"unknown subflow {subflow_id}", self.sim.now)
        self._gap_mark()
        sf.state = SubflowState.REMOVED
        sf.removed_at = self.sim.now
        self._stop_rto(sf)
        moved = self._reinject(sf, skip_reinjected=True)
        sf.mappings.clear()
        self._event("subflow_remove", subflow_id, f"link={sf.link_id} reinjected={moved}")
        if not self.live_subflows():
            # a stalled connection with no path is not a delivery gap
            self._gap_anchor = None
        self.try_send()
        return moved

    def _reinject(self, sf: Subflow, skip_reinjected: bool) -> int:
        moved = 0
        for m in sf.mappings.values():
            if m.dsn_end <= self.data_acked or (skip_reinjected and m.reinjected):
                continue
            m.reinjected = True
            if m.dsn_start in self._reinject_queued:
                continue
            self._reinject_queued.add(m.dsn_start)
            self.reinject_queue.append((m.dsn_start, m.length))
            moved += m.length
        if moved:
            # keep the queue in DSN order so the oldest hole is filled first
            self.reinject_queue = deque(sorted(self.reinject_queue))
            self.reinjected_bytes += moved
            self._event("reinjection", sf.subflow_id, f"bytes={moved}")
        return moved

    # -- sending ----------------------------------------------------------

    def _next_chunk(self) -> tuple[int, int, bool] | None:
        """Next (dsn, length, is_reinjection) to send, without consuming it."""
        q = self.reinject_queue
        while q and q[0][0] + q[0][1] <= self.data_acked:
            self._reinject_queued.discard(q.popleft()[0])
        if q:
            return q[0][0], q[0][1], True
        length = self.params.mss
        if self.app_limit is not None:
            length = min(length, self.app_limit - self.next_dsn)
            if length <= 0:
                return None
        return self.next_dsn, length, False

    def try_send(self) -> int:
        """Send as many segments as the scheduler and windows allow."""
        sent = 0
        sim = self.sim
        decisions = self.decisions
        ACTIVE = SubflowState.ACTIVE
        while True:
            chunk = self._next_chunk()
            if chunk is None:
                break
            dsn, length, is_reinjection = chunk
            candidates = [
                Candidate(sf.subflow_id, sf.srtt if sf.srtt is not None else float(sf.base_rtt),
                          sf.cwnd - (sf.next_ssn - sf.subflow_acked))
                for sf in self.subflows.values()
                if sf.state is ACTIVE
            ]
            if not candidates:
                break
            need = length
            chosen = self.scheduler.select_subflow(candidates, need)
            if decisions is not None:
                decisions.append(Decision(sim.now, tuple(candidates), need, chosen))
            if chosen is None:
                break
            sf = self.subflows[chosen]
            if is_reinjection:
                self._reinject_queued.discard(self.reinject_queue.popleft()[0])
            else:
                self.next_dsn += length
            m = SegmentMapping(dsn, length, sf.next_ssn, sim.now)
            sf.mappings[m.ssn_start] = m
            sf.next_ssn += length
            self._transmit(sf, m)
            sent += 1
        return sent

    def _transmit(self, sf: Subflow, m: SegmentMapping) -> None:
        seg = DataSegment(sf.subflow_id, m.ssn_start, m.dsn_start, m.length, m.send_time, m.retransmitted)
        frame = Frame(sf.link_id, Direction.UPLINK, m.length, seg)
        self.segments_sent += 1
        if not self.medium.send_frame(sf.link_id, frame):
            self.segments_lost_at_queue += 1
        if sf.rto_deadline is None:
            self._arm_rto(sf)

    def _retransmit_earliest(self, sf: Subflow, why: str) -> None:
        if not sf.mappings:
            return
        m = next(iter(sf.mappings.values()))
        m.retransmitted = True
        m.send_time = self.sim.now
        sf.retransmits += 1
        self._event("retransmit", sf.subflow_id, f"{why} ssn={m.ssn_start} dsn={m.dsn_start}")
        self._transmit(sf, m)

    def _arm_rto(self, sf: Subflow) -> None:
        sf.rto_deadline = deadline = self.sim.now + sf.rto
        timer = sf.rto_timer
        if timer is not None and timer.pending and timer.fire_at <= deadline:
            return
        self.sim.cancel(timer)
        sf.rto_timer = self.sim.schedule(deadline, self._rto_fired, sf, kind="rto")

    def _stop_rto(self, sf: Subflow) -> None:
        sf.rto_deadline = None
        self.sim.cancel(sf.rto_timer)
        sf.rto_timer = None

    def _rto_fired(self, sf: Subflow) -> None:
        sf.rto_timer = None
        if sf.rto_deadline is None:
            return
        if self.sim.now < sf.rto_deadline:
            sf.rto_timer = self.sim.schedule(sf.rto_deadline, self._rto_fired, sf, kind="rto")
            return
        self.on_timeout(sf)

    # -- frame dispatch -----------------------------------------------------

    def _on_frame(self, frame: Frame) -> None:
        if frame.direction is Direction.UPLINK:
            self._server_receive(frame)
        else:
            ack = frame.payload
            sf = self.subflows.get(ack.subflow_id)
            if sf is not None and sf.state is not SubflowState.REMOVED:
                self.on_subflow_ack(sf, ack)

    # -- receiver (server) --------------------------------------------------

    def _server_receive(self, frame: Frame) -> None:
        seg: DataSegment = frame.payload
        sf = self.subflows.get(seg.subflow_id)
        if sf is None:
            return
        start, end = seg.ssn, seg.ssn + seg.length
        if start == sf.rcv_nxt:
            sf.rcv_nxt = end
            ooo = sf.rcv_ooo
            while sf.rcv_nxt in ooo:
                sf.rcv_nxt = ooo.pop(sf.rcv_nxt)
        elif start > sf.rcv_nxt:
            sf.rcv_ooo[start] = end
        data_ack = self.receiver_on_segment(seg.dsn, seg.length, seg.subflow_id)
        ack = AckSegment(sf.subflow_id, sf.rcv_nxt, data_ack, seg.sent_at, seg.retransmitted)
        link = self.medium.links.get(sf.link_id)
        if link is not None and link.up:
            self.medium.send_from_server(sf.link_id, Frame(sf.link_id, Direction.DOWNLINK, 0, ack))

    def receiver_on_segment(self, dsn_start: int, length: int, subflow_id: int = 0) -> int:
        """Connection-level reassembly. Returns the cumulative DATA_ACK.

        Bytes handed to the application are credited to the subflow that
        carried them and to the metrics bin in which they reached the
        server, so a burst released by a filled hole is not counted twice
        as fast as the radio could have carried it.
        """
        end = dsn_start + length
        if end > self.recv_data_ack:
            heapq.heappush(self._recv_heap, (dsn_start, end, subflow_id, self.sim.now // self.bin_width))
        heap = self._recv_heap
        while heap and heap[0][0] <= self.recv_data_ack:
            start, end, carrier, arrival_bin = heapq.heappop(heap)
            if end <= self.recv_data_ack:
                continue
            begin = self.recv_data_ack
            self.recv_data_ack = end
            key = (arrival_bin, carrier)
            self.credit[key] = self.credit.get(key, 0) + end - begin
            self.sink.deliver(begin, end, self.sim.now)
            self._gap_mark()
            if self._gap_anchor is not None:
                self._gap_anchor = self.sim.now
        return self.recv_data_ack

    # -- ack processing (OBU) -----------------------------------------------

    def on_subflow_ack(self, sf: Subflow, ack: AckSegment) -> None:
        p = self.params
        now = self.sim.now
        if ack.data_ack > self.data_acked:
            self.data_acked = ack.data_ack
        acked = ack.ssn_ack
        if acked > sf.subflow_acked:
            bytes_acked = acked - sf.subflow_acked
            sf.subflow_acked = acked
            mappings = sf.mappings
            while mappings:
                first = next(iter(mappings.values()))
                if first.ssn_end > acked:
                    break
                mappings.popitem(last=False)
            sf.dup_acks = 0
            if not ack.echo_retransmitted:
                self._rtt_sample(sf, now - ack.echo_sent_at)
            if sf.in_recovery:
                if acked >= sf.recover:
                    sf.in_recovery = False
                    sf.recovery_cause = None
                else:
                    self._retransmit_earliest(sf, "partial_ack")
                    if sf.recovery_cause is LossCause.TIMEOUT:
                        sf.cwnd = on_ack_increase(sf.cwnd, sf.ssthresh, bytes_acked, p.mss)
            if not sf.in_recovery:
                snapshot = self._snapshot() if sf.cwnd >= sf.ssthresh else None
                sf.cwnd = on_ack_increase(sf.cwnd, sf.ssthresh, bytes_acked, p.mss, snapshot, self.congestion)
            if sf.inflight > 0:
                self._arm_rto(sf)
            else:
                self._stop_rto(sf)
        elif acked == sf.subflow_acked and sf.inflight > 0:
            sf.dup_acks += 1
            if sf.dup_acks == p.dupack_threshold and not sf.in_recovery:
                sf.cwnd, sf.ssthresh = on_decrease(sf.cwnd, p.mss, LossCause.FAST_RETRANSMIT)
                sf.in_recovery = True
                sf.recovery_cause = LossCause.FAST_RETRANSMIT
                sf.recover = sf.next_ssn
                self._retransmit_earliest(sf, "fast_retransmit")
                self._arm_rto(sf)
        self.try_send()

    def _rtt_sample(self, sf: Subflow, sample: int) -> None:
        r = float(max(sample, 1))
        if sf.srtt is None:
            sf.srtt = r
            sf.rttvar = r / 2
        else:
            sf.rttvar = 0.75 * sf.rttvar + 0.25 * abs(sf.srtt - r)
            sf.srtt = 0.875 * sf.srtt + 0.125 * r
        rto = int(sf.srtt + 4 * sf.rttvar)
        sf.rto = min(max(rto, self.params.min_rto), self.params.max_rto)
        sf.bin_rtt_sum += sf.srtt
        sf.bin_rtt_count += 1

    def _snapshot(self) -> CouplingSnapshot | None:
        """Coupling state of the established subflows; None when there is only one."""
        active = [sf for sf in self.subflows.values() if sf.state is SubflowState.ACTIVE]
        if len(active) < 2:
            return None
        return CouplingSnapshot(tuple(sf.cwnd for sf in active), tuple(sf.rtt_estimate / 1e6 for sf in active))

    def on_timeout(self, sf: Subflow) -> None:
        """Retransmission timeout: back off, collapse cwnd, retransmit, reinject elsewhere."""
        sf.rto_deadline = None
        if sf.state is SubflowState.REMOVED or sf.inflight == 0:
            return
        p = self.params
        sf.timeouts += 1
        sf.cwnd, sf.ssthresh = on_decrease(sf.cwnd, p.mss, LossCause.TIMEOUT)
        sf.rto = min(sf.rto * 2, p.max_rto)
        sf.dup_acks = 0
        sf.in_recovery = True
        sf.recovery_cause = LossCause.TIMEOUT
        sf.recover = sf.next_ssn
        self._retransmit_earliest(sf, "timeout")
        others = [o for o in self.subflows.values() if o is not sf and o.state is SubflowState.ACTIVE]
        if others:
            self._reinject(sf, skip_reinjected=True)
        self._arm_rto(sf)
        self.try_send()

    # -- run end ----------------------------------------------------------------

    def finish(self) -> None:
        """Account for a trailing no-delivery interval at the end of a run."""
        self._gap_mark()
