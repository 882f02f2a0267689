from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Tuple

import numpy as np

from .errors import ChannelModelError

logger = logging.getLogger(__name__)

# (primary network k, channel m)
ChannelKey = Tuple[int, int]

IDLE = 0
BUSY = 1

# spawn-key prefixes keep the per-purpose streams of one seed apart
_CHANNEL_STREAM = 0
_SENSING_STREAM = 1
_ACCESS_STREAM = 2


def derive_stream(seed: int, *path: int) -> np.random.Generator:
    """Child generator of ``seed`` addressed by ``path``.

    Streams with different paths are statistically independent, so adding a
    channel (a new path) leaves every existing trajectory untouched.
    """
    if seed < 0:
        raise ChannelModelError(f"seed must be nonnegative, got {seed}")
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(path)))


@dataclass(frozen=True)
class MarkovChannel:
    lam: float  # P(idle -> idle)
    mu: float  # P(busy -> idle)
    state: int = IDLE

    def __post_init__(self) -> None:
        for name in ("lam", "mu"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ChannelModelError(f"{name} must lie in [0, 1], got {value}")
        if self.state not in (IDLE, BUSY):
            raise ChannelModelError(f"state must be 0 (idle) or 1 (busy), got {self.state}")

    @classmethod
    def from_utilization(cls, eta: float, correlation: float = 0.5, state: int = IDLE) -> "MarkovChannel":
        """Channel with busy fraction ``eta`` and one-step memory ``correlation`` = lam - mu."""
        if not 0.0 <= eta <= 1.0:
            raise ChannelModelError(f"eta must lie in [0, 1], got {eta}")
        if not 0.0 <= correlation < 1.0:
            raise ChannelModelError(f"correlation must lie in [0, 1), got {correlation}")
        lam = 1.0 - eta * (1.0 - correlation)
        mu = (1.0 - eta) * (1.0 - correlation)
        return cls(lam=lam, mu=mu, state=state)

    @property
    def correlation(self) -> float:
        return self.lam - self.mu

    def with_state(self, state: int) -> "MarkovChannel":
        if state == self.state:
            return self
        return replace(self, state=state)


def utilization(ch: MarkovChannel) -> float:
    denominator = 1.0 - ch.lam + ch.mu
    if denominator <= 0.0:
        # lam == 1 and mu == 0: a chain that starts idle never leaves it
        return 0.0
    return (1.0 - ch.lam) / denominator


def _next_state(ch: MarkovChannel, draw: float) -> int:
    if ch.state == IDLE:
        return IDLE if draw < ch.lam else BUSY
    return IDLE if draw < ch.mu else BUSY


@dataclass(frozen=True)
class ChannelBank:
    """Ground-truth occupancy of every licensed channel, one random stream per channel."""

    channels: Dict[ChannelKey, MarkovChannel]
    streams: Dict[ChannelKey, np.random.Generator] = field(repr=False, compare=False)
    slot: int = 0

    def __post_init__(self) -> None:
        if set(self.channels) != set(self.streams):
            raise ChannelModelError("every channel needs exactly one random stream")
        if self.slot < 0:
            raise ChannelModelError(f"slot counter must be nonnegative, got {self.slot}")

    @classmethod
    def create(cls, params: Mapping[ChannelKey, MarkovChannel], seed: int) -> "ChannelBank":
        channels: Dict[ChannelKey, MarkovChannel] = {}
        streams: Dict[ChannelKey, np.random.Generator] = {}
        for key in sorted(params):
            network, channel = key
            stream = derive_stream(seed, _CHANNEL_STREAM, network, channel)
            ch = params[key]
            # stationary start: busy with probability eta
            busy = stream.random() < utilization(ch)
            channels[key] = ch.with_state(BUSY if busy else IDLE)
            streams[key] = stream
        return cls(channels=channels, streams=streams)

    def keys(self) -> List[ChannelKey]:
        return sorted(self.channels)

    def states(self) -> np.ndarray:
        return np.array([self.channels[key].state for key in self.keys()], dtype=np.int8)

    def is_idle(self, key: ChannelKey) -> bool:
        return self.channels[key].state == IDLE

    def __len__(self) -> int:
        return len(self.channels)


def step(bank: ChannelBank) -> ChannelBank:
    """Advance every channel one slot using its own stream.

    The streams are shared with the returned bank; the input bank's
    occupancy is left as it was.
    """
    channels = {
        key: ch.with_state(_next_state(ch, bank.streams[key].random()))
        for key, ch in bank.channels.items()
    }
    return ChannelBank(channels=channels, streams=bank.streams, slot=bank.slot + 1)


def trajectory(ch: MarkovChannel, n_slots: int, rng: np.random.Generator) -> np.ndarray:
    """States of the next ``n_slots`` slots, sampled from geometric sojourn times.

    Equal in distribution to ``n_slots`` calls of ``step`` but drawn in bulk,
    which is what long stationarity runs need.
    """
    if n_slots < 0:
        raise ChannelModelError(f"n_slots must be nonnegative, got {n_slots}")
    out = np.empty(n_slots, dtype=np.int8)
    if n_slots == 0:
        return out
    leave = {IDLE: 1.0 - ch.lam, BUSY: ch.mu}
    state = ch.state
    first = True
    filled = 0
    while filled < n_slots:
        p_here, p_there = leave[state], leave[1 - state]
        if p_here <= 0.0:
            out[filled:] = state
            break
        if p_there <= 0.0:
            # one more sojourn here, then absorbed in the other state
            run = int(rng.geometric(p_here)) - (1 if first else 0)
            run = min(run, n_slots - filled)
            out[filled:filled + run] = state
            out[filled + run:] = 1 - state
            break
        mean_cycle = 1.0 / p_here + 1.0 / p_there
        pairs = max(16, int((n_slots - filled) / mean_cycle) + 16)
        runs = np.empty(2 * pairs, dtype=np.int64)
        runs[0::2] = rng.geometric(p_here, size=pairs)
        runs[1::2] = rng.geometric(p_there, size=pairs)
        if first:
            # the current slot already counts toward the first sojourn
            runs[0] -= 1
        values = np.empty(2 * pairs, dtype=np.int8)
        values[0::2] = state
        values[1::2] = 1 - state
        chunk = np.repeat(values, runs)[: n_slots - filled]
        out[filled:filled + chunk.size] = chunk
        filled += chunk.size
        first = False
    return out


@dataclass(frozen=True)
class RandomStreams:
    """Per-replica streams for sensing votes and access/loss draws."""

    sensing: np.random.Generator
    access: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "RandomStreams":
        return cls(
            sensing=derive_stream(seed, _SENSING_STREAM),
            access=derive_stream(seed, _ACCESS_STREAM),
        )
