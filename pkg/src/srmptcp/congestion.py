"""Linked Increase Algorithm (RFC 6356) and the standard loss responses.

Windows are in bytes, RTTs in seconds. All functions are pure; the engine
builds a fresh :class:`CouplingSnapshot` on every ACK.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence


class CongestionPolicy(str, enum.Enum):
    LIA = "lia"
    UNCOUPLED = "uncoupled"


class LossCause(enum.Enum):
    FAST_RETRANSMIT = "fast_retransmit"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class CouplingSnapshot:
    cwnds: tuple[float, ...]
    srtts: tuple[float, ...]

    def __post_init__(self):
        if len(self.cwnds) != len(self.srtts):
            raise ValueError("cwnds and srtts must have the same length")
        if any(r <= 0 for r in self.srtts):
            raise ValueError("every srtt must be positive")

    @classmethod
    def of(cls, pairs: Sequence[tuple[float, float]]) -> "CouplingSnapshot":
        return cls(tuple(c for c, _ in pairs), tuple(r for _, r in pairs))

    @property
    def cwnd_total(self) -> float:
        return sum(self.cwnds)

    def __len__(self) -> int:
        return len(self.cwnds)


def alpha(snapshot: CouplingSnapshot) -> float:
    """LIA aggressiveness factor.

    ``cwnd_total * max_i(cwnd_i / rtt_i**2) / (sum_i cwnd_i / rtt_i)**2``.
    Exactly 1 for one subflow, 1/n for n identical subflows.
    """
    if len(snapshot) == 0:
        raise ValueError("alpha of an empty snapshot")
    if len(snapshot) == 1:
        return 1.0
    best = max(c / (r * r) for c, r in zip(snapshot.cwnds, snapshot.srtts))
    denom = sum(c / r for c, r in zip(snapshot.cwnds, snapshot.srtts))
    return snapshot.cwnd_total * best / (denom * denom)


def coupled_increase(bytes_acked: float, cwnd: float, mss: int, snapshot: CouplingSnapshot) -> float:
    """Congestion-avoidance increment for one subflow, capped by the uncoupled increment."""
    uncoupled = bytes_acked * mss / cwnd
    if len(snapshot) <= 1:
        return uncoupled
    coupled = alpha(snapshot) * bytes_acked * mss / snapshot.cwnd_total
    return min(coupled, uncoupled)


def on_ack_increase(
    cwnd: float,
    ssthresh: float,
    bytes_acked: float,
    mss: int,
    snapshot: CouplingSnapshot | None = None,
    policy: CongestionPolicy = CongestionPolicy.LIA,
) -> float:
    """New cwnd after an ACK for new data: slow start below ssthresh, LIA above."""
    if cwnd < ssthresh:
        return cwnd + bytes_acked
    if policy is CongestionPolicy.UNCOUPLED or snapshot is None:
        return cwnd + bytes_acked * mss / cwnd
    return cwnd + coupled_increase(bytes_acked, cwnd, mss, snapshot)


def on_decrease(cwnd: float, mss: int, cause: LossCause) -> tuple[float, float]:
    """Return ``(cwnd, ssthresh)`` after a loss; neither drops below 2 MSS."""
    ssthresh = max(cwnd / 2, 2 * mss)
    if cause is LossCause.TIMEOUT:
        return float(2 * mss), ssthresh
    return ssthresh, ssthresh
