from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple, Union

from .channel_model import ChannelKey, MarkovChannel
from .errors import ScenarioError
from .multihop_planner import BruteForceCaps, DualSettings
from .sensing import SensorProfile
from .video_model import MulticastGroup, VideoSource

INFRASTRUCTURE = "infrastructure"
MULTIHOP = "multihop"

SWEEP_KEYS = {
    INFRASTRUCTURE: ("gamma", "channels", "eta", "sensing"),
    MULTIHOP: ("gamma", "channels", "eta", "sensing", "slot_s"),
}

SweepValue = Union[float, int, Tuple[float, float]]


@dataclass(frozen=True)
class ChannelSpec:
    lam: float
    mu: float
    epsilon: float
    delta: float
    gamma: float

    def markov(self) -> MarkovChannel:
        return MarkovChannel(lam=self.lam, mu=self.mu)

    def profile(self) -> SensorProfile:
        return SensorProfile(epsilon=self.epsilon, delta=self.delta)

    def with_eta(self, eta: float) -> "ChannelSpec":
        # keep the one-step memory, clamped into [0, 0.99]
        ch = MarkovChannel.from_utilization(eta, min(max(0.0, self.lam - self.mu), 0.99))
        return replace(self, lam=ch.lam, mu=ch.mu)


@dataclass(frozen=True)
class GroupSpec:
    name: str
    source: VideoSource
    audience: Tuple[int, ...]
    payload: Tuple[float, ...]
    # (first GoP, audience) pairs, sorted by GoP
    audience_schedule: Tuple[Tuple[int, Tuple[int, ...]], ...] = ()

    def group_at(self, gop: int) -> MulticastGroup:
        audience = self.audience
        for start, scheduled in self.audience_schedule:
            if gop >= start:
                audience = scheduled
        return MulticastGroup(self.source, audience, self.payload, self.name)


@dataclass(frozen=True)
class InfrastructureSpec:
    gop_slots: int
    est_slots: int
    groups: Tuple[GroupSpec, ...]
    n_tangents: int = 8


@dataclass(frozen=True)
class LinkSpec:
    a: int
    b: int
    delay: float
    losses: Tuple[float, ...]


@dataclass(frozen=True)
class SessionSpec:
    name: str
    source: int
    dest: int
    video: VideoSource


@dataclass(frozen=True)
class MultihopSpec:
    networks: int
    nodes: Dict[int, int]
    links: Tuple[LinkSpec, ...]
    sessions: Tuple[SessionSpec, ...]
    delay_bound: float
    packet_kb: float
    slot_s: float
    gop_slots: int
    max_paths: Optional[int] = None
    observers: Optional[int] = None
    # per network, sensing users per channel
    sensing_users: Tuple[Tuple[int, ...], ...] = ()
    xi: int = 1
    validate_plans: bool = False
    dual: DualSettings = field(default_factory=DualSettings)
    caps: BruteForceCaps = field(default_factory=BruteForceCaps)

    def observer_count(self, network: int, channel: int) -> int:
        if self.sensing_users:
            row = self.sensing_users[network]
            return row[min(channel, len(row) - 1)]
        if self.observers is not None:
            return self.observers
        return sum(1 for k in self.nodes.values() if k == network)


@dataclass(frozen=True)
class Sweep:
    key: str
    values: Tuple[SweepValue, ...]


@dataclass(frozen=True)
class Scenario:
    name: str
    mode: str
    seeds: Tuple[int, ...]
    horizon_gops: int
    channel_count: int
    channel_defaults: ChannelSpec
    schemes: Tuple[str, ...]
    channel_overrides: Dict[ChannelKey, ChannelSpec] = field(default_factory=dict)
    infrastructure: Optional[InfrastructureSpec] = None
    multihop: Optional[MultihopSpec] = None
    sweep: Optional[Sweep] = None

    @property
    def networks(self) -> int:
        return self.multihop.networks if self.mode == MULTIHOP and self.multihop else 1

    def channel_keys(self) -> List[ChannelKey]:
        return [(k, m) for k in range(self.networks) for m in range(self.channel_count)]

    def channel_spec(self, key: ChannelKey) -> ChannelSpec:
        return self.channel_overrides.get(key, self.channel_defaults)

    def sweep_points(self) -> List[Tuple[str, Optional[SweepValue], "Scenario"]]:
        if self.sweep is None:
            return [("", None, self)]
        return [(self.sweep.key, value, self.with_point(self.sweep.key, value)) for value in self.sweep.values]

    def with_point(self, key: str, value: SweepValue) -> "Scenario":
        if key not in SWEEP_KEYS[self.mode]:
            raise ScenarioError(
                f"sweep.key: {key!r} is not a {self.mode} sweep axis",
                {"sweep.key": [f"expected one of {', '.join(SWEEP_KEYS[self.mode])}"]},
            )
        if key == "gamma":
            return self._map_channels(lambda spec: replace(spec, gamma=float(value)))
        if key == "eta":
            return self._map_channels(lambda spec: spec.with_eta(float(value)))
        if key == "sensing":
            epsilon, delta = value  # type: ignore[misc]
            return self._map_channels(lambda spec: replace(spec, epsilon=float(epsilon), delta=float(delta)))
        if key == "channels":
            count = int(value)  # type: ignore[arg-type]
            overrides = {k: v for k, v in self.channel_overrides.items() if k[1] < count}
            return replace(self, channel_count=count, channel_overrides=overrides)
        assert self.multihop is not None
        return replace(self, multihop=replace(self.multihop, slot_s=float(value)))  # type: ignore[arg-type]

    def _map_channels(self, fn) -> "Scenario":
        return replace(
            self,
            channel_defaults=fn(self.channel_defaults),
            channel_overrides={key: fn(spec) for key, spec in self.channel_overrides.items()},
        )
