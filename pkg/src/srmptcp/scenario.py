"""Scenario configuration: JSON schema, validation and the two built-in experiments.

All times in a config file are in seconds (floats allowed); they are
converted to integer microseconds when the config is loaded.

Example::

    {
      "duration": 140,
      "seed": 1,
      "medium": {"phy_rate": 9000000, "wired_delay": 0.005},
      "engine": {"mss": 1400},
      "cm": {"beacon_period": 1.0, "loss_timeout": 3.0},
      "scheduler": "minrtt",
      "congestion": "lia",
      "rsus": [
        {"rsu_id": "RSU1", "intervals": [[0, 50]]},
        {"rsu_id": "RSU2", "intervals": [[20, 140]], "extra_delay": 0.2}
      ],
      "metrics_bin": 1.0
    }
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from srmptcp.congestion import CongestionPolicy
from srmptcp.handover import CmParams, RangeSchedule, RsuLinkSpec
from srmptcp.mptcp import EngineParams
from srmptcp.radio import MediumConfig
from srmptcp.scheduler import SchedulerPolicy
from srmptcp.sim import ms, seconds, to_seconds


class ConfigError(ValueError):
    """A scenario config is malformed; the message names the offending key."""


@dataclass
class RsuConfig:
    rsu_id: Any
    intervals: list[tuple[int, int]]
    extra_delay: int = 0
    prop_delay: int = ms(2)
    position: tuple[float, float] = (0.0, 0.0)


@dataclass
class ScenarioConfig:
    rsus: list[RsuConfig]
    duration: int = seconds(140)
    seed: int = 1
    medium: MediumConfig = field(default_factory=MediumConfig)
    engine: EngineParams = field(default_factory=EngineParams)
    cm: CmParams = field(default_factory=CmParams)
    scheduler: SchedulerPolicy = SchedulerPolicy.MIN_RTT
    congestion: CongestionPolicy = CongestionPolicy.LIA
    metrics_bin: int = seconds(1)

    def range_schedule(self) -> RangeSchedule:
        return RangeSchedule({r.rsu_id: r.intervals for r in self.rsus})

    def link_specs(self) -> dict[Any, RsuLinkSpec]:
        return {r.rsu_id: RsuLinkSpec(r.prop_delay, r.extra_delay, r.position) for r in self.rsus}

    def rsu(self, rsu_id: Any) -> RsuConfig:
        for r in self.rsus:
            if r.rsu_id == rsu_id:
                return r
        raise KeyError(rsu_id)

    def to_dict(self) -> dict:
        m, e, c = self.medium, self.engine, self.cm
        return {
            "duration": to_seconds(self.duration),
            "seed": self.seed,
            "medium": {
                "phy_rate": m.phy_rate,
                "frame_overhead": m.frame_overhead,
                "background_occupancy": m.background_occupancy,
                "wired_delay": to_seconds(m.wired_delay),
                "queue_capacity": m.queue_capacity,
            },
            "engine": {
                "mss": e.mss,
                "ack_policy": e.ack_policy,
                "min_rto": to_seconds(e.min_rto),
                "max_rto": to_seconds(e.max_rto),
                "initial_rto": to_seconds(e.initial_rto),
                "dupack_threshold": e.dupack_threshold,
                "initial_cwnd_segments": e.initial_cwnd_segments,
                "initial_ssthresh": e.initial_ssthresh,
            },
            "cm": {"beacon_period": to_seconds(c.beacon_period), "loss_timeout": to_seconds(c.loss_timeout)},
            "scheduler": self.scheduler.value,
            "congestion": self.congestion.value,
            "rsus": [
                {
                    "rsu_id": r.rsu_id,
                    "intervals": [[to_seconds(a), to_seconds(b)] for a, b in r.intervals],
                    "extra_delay": to_seconds(r.extra_delay),
                    "prop_delay": to_seconds(r.prop_delay),
                    "position": list(r.position),
                }
                for r in self.rsus
            ],
            "metrics_bin": to_seconds(self.metrics_bin),
        }


# key -> (converter, is_time)
_MEDIUM_KEYS = {
    "phy_rate": (float, False),
    "frame_overhead": (int, False),
    "background_occupancy": (float, False),
    "wired_delay": (float, True),
    "queue_capacity": (int, False),
}
_ENGINE_KEYS = {
    "mss": (int, False),
    "ack_policy": (str, False),
    "min_rto": (float, True),
    "max_rto": (float, True),
    "initial_rto": (float, True),
    "dupack_threshold": (int, False),
    "initial_cwnd_segments": (int, False),
    "initial_ssthresh": (int, False),
}
_CM_KEYS = {"beacon_period": (float, True), "loss_timeout": (float, True)}
_TOP_KEYS = {"duration", "seed", "medium", "engine", "cm", "scheduler", "congestion", "rsus", "metrics_bin"}
_RSU_KEYS = {"rsu_id", "intervals", "extra_delay", "prop_delay", "position"}


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    return value


def _section(raw: Any, keys: dict, cls: type, where: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object")
    kwargs = {}
    for key, value in raw.items():
        if key not in keys:
            raise ConfigError(f"{where}.{key}: unknown key")
        conv, is_time = keys[key]
        if conv is str:
            if not isinstance(value, str):
                raise ConfigError(f"{where}.{key}: expected a string")
            kwargs[key] = value
            continue
        num = _number(value, f"{where}.{key}")
        if conv is int and not is_time and num != int(num):
            raise ConfigError(f"{where}.{key}: expected an integer, got {value!r}")
        kwargs[key] = seconds(num) if is_time else conv(num)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(raw: Any) -> ScenarioConfig:
    """Validate a decoded JSON object and fill defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object at top level")
    for key in raw:
        if key not in _TOP_KEYS:
            raise ConfigError(f"{key}: unknown key")
    if "duration" not in raw:
        raise ConfigError("duration: required key missing")
    if "rsus" not in raw:
        raise ConfigError("rsus: required key missing")
    duration_s = _number(raw["duration"], "duration")
    if duration_s <= 0:
        raise ConfigError("duration: must be positive")
    duration = seconds(duration_s)

    seed = raw.get("seed", 1)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError(f"seed: expected an integer, got {seed!r}")
    if not 0 <= seed < 2**64:
        raise ConfigError("seed: must fit in 64 bits")

    medium = _section(raw.get("medium"), _MEDIUM_KEYS, MediumConfig, "medium")
    engine = _section(raw.get("engine"), _ENGINE_KEYS, EngineParams, "engine")
    cm = _section(raw.get("cm"), _CM_KEYS, CmParams, "cm")

    try:
        scheduler = SchedulerPolicy(raw.get("scheduler", SchedulerPolicy.MIN_RTT.value))
    except ValueError:
        choices = ", ".join(p.value for p in SchedulerPolicy)
        raise ConfigError(f"scheduler: unknown policy {raw.get('scheduler')!r} (expected one of {choices})") from None
    try:
        congestion = CongestionPolicy(raw.get("congestion", CongestionPolicy.LIA.value))
    except ValueError:
        choices = ", ".join(p.value for p in CongestionPolicy)
        raise ConfigError(f"congestion: unknown policy {raw.get('congestion')!r} (expected one of {choices})") from None

    bin_s = _number(raw.get("metrics_bin", 1.0), "metrics_bin")
    if bin_s <= 0:
        raise ConfigError("metrics_bin: must be positive")

    rsus_raw = raw["rsus"]
    if not isinstance(rsus_raw, list) or not rsus_raw:
        raise ConfigError("rsus: expected a non-empty list")
    rsus, seen = [], set()
    for i, r in enumerate(rsus_raw):
        where = f"rsus[{i}]"
        if not isinstance(r, dict):
            raise ConfigError(f"{where}: expected an object")
        for key in r:
            if key not in _RSU_KEYS:
                raise ConfigError(f"{where}.{key}: unknown key")
        if "rsu_id" not in r:
            raise ConfigError(f"{where}.rsu_id: required key missing")
        rsu_id = r["rsu_id"]
        if not isinstance(rsu_id, (str, int)) or isinstance(rsu_id, bool):
            raise ConfigError(f"{where}.rsu_id: expected a string or integer")
        if rsu_id in seen:
            raise ConfigError(f"{where}.rsu_id: duplicate id {rsu_id!r}")
        seen.add(rsu_id)
        intervals = []
        for j, span in enumerate(r.get("intervals", [])):
            iw = f"{where}.intervals[{j}]"
            if not isinstance(span, (list, tuple)) or len(span) != 2:
                raise ConfigError(f"{iw}: expected [start, end]")
            a, b = _number(span[0], iw), _number(span[1], iw)
            if a < 0 or b <= a:
                raise ConfigError(f"{iw}: need 0 <= start < end, got [{a}, {b}]")
            if seconds(b) > duration:
                raise ConfigError(f"{iw}: end {b} exceeds duration {duration_s}")
            intervals.append((seconds(a), seconds(b)))
        intervals.sort()
        for (a0, b0), (a1, b1) in zip(intervals, intervals[1:]):
            if a1 < b0:
                raise ConfigError(
                    f"{where}.intervals: [{to_seconds(a0)}, {to_seconds(b0)}] overlaps "
                    f"[{to_seconds(a1)}, {to_seconds(b1)}]"
                )
        extra = _number(r.get("extra_delay", 0.0), f"{where}.extra_delay")
        prop = _number(r.get("prop_delay", 0.002), f"{where}.prop_delay")
        if extra < 0 or prop < 0:
            raise ConfigError(f"{where}: delays must be non-negative")
        pos = r.get("position", [0.0, 0.0])
        if not isinstance(pos, (list, tuple)) or len(pos) != 2:
            raise ConfigError(f"{where}.position: expected [x, y]")
        position = (float(_number(pos[0], f"{where}.position")), float(_number(pos[1], f"{where}.position")))
        rsus.append(RsuConfig(rsu_id, intervals, seconds(extra), seconds(prop), position))

    return ScenarioConfig(
        rsus=rsus,
        duration=duration,
        seed=seed,
        medium=medium,
        engine=engine,
        cm=cm,
        scheduler=scheduler,
        congestion=congestion,
        metrics_bin=seconds(bin_s),
    )


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(raw)


_BASELINE = {
    "duration": 140,
    "seed": 1,
    "rsus": [
        {"rsu_id": "RSU1", "intervals": [[0, 50]], "position": [0.0, 0.0]},
        {"rsu_id": "RSU2", "intervals": [[20, 140]], "position": [500.0, 0.0]},
        {"rsu_id": "RSU3", "intervals": [[100, 140]], "position": [1000.0, 0.0]},
    ],
}

BUILTIN_NAMES = ("baseline", "delay200")


def builtin_config(name: str) -> dict:
    """Raw JSON-style dict of a built-in scenario."""
    if name not in BUILTIN_NAMES:
        raise ConfigError(f"builtin: unknown scenario {name!r} (expected one of {', '.join(BUILTIN_NAMES)})")
    raw = copy.deepcopy(_BASELINE)
    if name == "delay200":
        raw["rsus"][1]["extra_delay"] = 0.2
    return raw


def builtin_scenario(name: str) -> ScenarioConfig:
    """``baseline``: RSU1 [0,50), RSU2 [20,140), RSU3 [100,140). ``delay200``: plus 200 ms on RSU2."""
    return parse_config(builtin_config(name))
