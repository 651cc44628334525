"""Packet schedulers choosing which subflow carries the next segment."""

from __future__ import annotations

import enum
from typing import NamedTuple, Sequence


class SchedulerPolicy(str, enum.Enum):
    MIN_RTT = "minrtt"
    ROUND_ROBIN = "roundrobin"


class Candidate(NamedTuple):
    subflow_id: int
    srtt: float
    cwnd_space: float


class Decision(NamedTuple):
    """One scheduling decision, kept for post-run dominance checks."""

    time: int
    candidates: tuple[Candidate, ...]
    need: int
    chosen: int | None


class MinRttScheduler:
    """Lowest-SRTT subflow that still has window space; ties go to the lower id."""

    policy = SchedulerPolicy.MIN_RTT

    def select_subflow(self, candidates: Sequence[Candidate], need: int) -> int | None:
        best = None
        for c in candidates:
            if c.cwnd_space < need:
                continue
            if best is None or (c.srtt, c.subflow_id) < (best.srtt, best.subflow_id):
                best = c
        return None if best is None else best.subflow_id


class RoundRobinScheduler:
    policy = SchedulerPolicy.ROUND_ROBIN

    def __init__(self):
        self._last: int | None = None

    def select_subflow(self, candidates: Sequence[Candidate], need: int) -> int | None:
        ready = sorted(c.subflow_id for c in candidates if c.cwnd_space >= need)
        if not ready:
            return None
        if self._last is not None:
            for sid in ready:
                if sid > self._last:
                    self._last = sid
                    return sid
        self._last = ready[0]
        return ready[0]


def make_scheduler(policy: SchedulerPolicy | str):
    policy = SchedulerPolicy(policy)
    if policy is SchedulerPolicy.MIN_RTT:
        return MinRttScheduler()
    return RoundRobinScheduler()


def dominance_violations(decisions: Sequence[Decision]) -> list[Decision]:
    """Decisions where a candidate with space had strictly lower SRTT than the chosen one."""
    bad = []
    for d in decisions:
        if d.chosen is None:
            if any(c.cwnd_space >= d.need for c in d.candidates):
                bad.append(d)
            continue
        chosen = next(c for c in d.candidates if c.subflow_id == d.chosen)
        if chosen.cwnd_space < d.need or any(
            c.cwnd_space >= d.need and c.srtt < chosen.srtt for c in d.candidates
        ):
            bad.append(d)
    return bad
