"""Desk-scale simulator of MPTCP over a single shared vehicular radio.

One OBU radio carries several logical links (GRE-style tunnels) to the
roadside units in range. A handover connection manager opens and closes
MPTCP subflows over those links as RSUs come and go, while a minRTT
scheduler and LIA coupled congestion control drive the subflows.
"""

from srmptcp.sim import EventHandle, SimulationError, Simulator, ms, seconds, to_seconds

__all__ = [
    "EventHandle",
    "SimulationError",
    "Simulator",
    "ms",
    "seconds",
    "to_seconds",
]

__version__ = "0.1.0"
