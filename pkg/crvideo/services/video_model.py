from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Sequence, Tuple

import numpy as np

from .errors import BaseLayerMissingError, VideoModelError

# Rates are kb per GoP, PSNR in dB, utilities in nats.


@dataclass(frozen=True)
class VideoSource:
    q_base: float  # PSNR with the base layer only
    beta: float  # dB per kb of enhancement
    r_base: float
    r_enh_max: float

    def __post_init__(self) -> None:
        if self.beta <= 0:
            raise VideoModelError(f"beta must be positive, got {self.beta}")
        if self.q_base <= 0:
            raise VideoModelError(f"q_base must be positive, got {self.q_base}")
        if self.r_base < 0 or self.r_enh_max < 0:
            raise VideoModelError("r_base and r_enh_max must be nonnegative")

    @property
    def q0(self) -> float:
        return self.q_base - self.beta * self.r_base


@dataclass(frozen=True)
class MulticastGroup:
    source: VideoSource
    audience: Tuple[int, ...]  # users able to decode MC scheme m
    payload: Tuple[float, ...]  # kb carried by one tile under MC scheme m
    name: str = ""

    def __post_init__(self) -> None:
        if not self.payload or len(self.audience) != len(self.payload):
            raise VideoModelError("audience and payload need one entry per MC scheme")
        if any(n < 0 for n in self.audience):
            raise VideoModelError("audience counts must be nonnegative")
        if any(a < b for a, b in zip(self.audience, self.audience[1:])):
            raise VideoModelError(f"audience must be nonincreasing in the MC index, got {list(self.audience)}")
        if self.payload[0] <= 0 or any(a >= b for a, b in zip(self.payload, self.payload[1:])):
            raise VideoModelError(f"payload must be positive and strictly increasing, got {list(self.payload)}")

    @property
    def layers(self) -> int:
        return len(self.payload)

    @property
    def weights(self) -> np.ndarray:
        """Users whose best decodable MC scheme is exactly m."""
        n = np.asarray(self.audience, dtype=float)
        return n - np.append(n[1:], 0.0)

    def with_audience(self, audience: Sequence[int]) -> "MulticastGroup":
        return replace(self, audience=tuple(int(n) for n in audience))


@dataclass
class TileAllocation:
    tiles: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=np.int64))

    def __post_init__(self) -> None:
        self.tiles = np.asarray(self.tiles, dtype=np.int64)
        if self.tiles.ndim != 2:
            raise VideoModelError("tile allocation must be a groups x MC-schemes matrix")
        if (self.tiles < 0).any():
            raise VideoModelError("tile counts must be nonnegative")

    @classmethod
    def zeros(cls, groups: int, layers: int) -> "TileAllocation":
        return cls(np.zeros((groups, layers), dtype=np.int64))

    def row(self, g: int) -> np.ndarray:
        return self.tiles[g]

    def total(self) -> int:
        return int(self.tiles.sum())

    def copy(self) -> "TileAllocation":
        return TileAllocation(self.tiles.copy())

    def rate(self, g: int, group: MulticastGroup) -> float:
        return float(np.dot(group.payload, self.tiles[g]))

    def feasible(self, groups: Sequence[MulticastGroup], t_e: float, tol: float = 1e-9) -> bool:
        if self.total() > t_e + tol:
            return False
        return all(self.rate(g, group) <= group.source.r_enh_max + tol for g, group in enumerate(groups))

    def as_lists(self) -> List[List[int]]:
        return self.tiles.tolist()


def psnr(source: VideoSource, rate: float) -> float:
    if rate < source.r_base - 1e-9:
        raise BaseLayerMissingError(f"rate {rate} kb is below the base layer's {source.r_base} kb")
    return source.q0 + source.beta * rate


def session_utility(source: VideoSource, rate: float) -> float:
    return math.log(psnr(source, rate))


def _stratum_quality(group: MulticastGroup, tiles: Sequence[int]) -> np.ndarray:
    # PSNR seen by users who decode MC schemes up to k
    enh = np.cumsum(np.asarray(group.payload, dtype=float) * np.asarray(tiles, dtype=float))
    return group.source.q_base + group.source.beta * enh


def group_utility(group: MulticastGroup, tiles: Sequence[int]) -> float:
    return float(np.dot(group.weights, np.log(_stratum_quality(group, tiles))))


def system_utility(groups: Sequence[MulticastGroup], alloc: TileAllocation) -> float:
    return float(sum(group_utility(group, alloc.row(g)) for g, group in enumerate(groups)))


def inc(group: MulticastGroup, tiles: Sequence[int], m: int, i: int) -> float:
    """Utility gained by the i-th tile (1-based) of MC scheme m (0-based).

    Only tiles below m enter; on a layered state (nothing allocated above m)
    this equals the exact utility difference.
    """
    if i < 1:
        raise VideoModelError(f"tile ordinal must be at least 1, got {i}")
    beta, b = group.source.beta, group.payload
    below = sum(b[u] * tiles[u] for u in range(m))
    base = group.source.q_base + beta * below + (i - 1) * beta * b[m]
    return float(group.weights[m:].sum() * math.log1p(beta * b[m] / base))


def marginal_gains(group: MulticastGroup, tiles: Sequence[int]) -> np.ndarray:
    """Exact utility change of adding one tile at each MC scheme."""
    x = _stratum_quality(group, tiles)
    step = group.source.beta * np.asarray(group.payload, dtype=float)
    terms = group.weights[None, :] * np.log1p(step[:, None] / x[None, :])
    # adding at m lifts the quality of every stratum k >= m
    return np.triu(terms).sum(axis=1)


def marginal_losses(group: MulticastGroup, tiles: Sequence[int]) -> np.ndarray:
    """Exact utility change of removing one tile at each MC scheme; inf where none is allocated."""
    x = _stratum_quality(group, tiles)
    step = group.source.beta * np.asarray(group.payload, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = -group.weights[None, :] * np.log1p(-step[:, None] / x[None, :])
    losses = np.triu(np.nan_to_num(terms, nan=0.0)).sum(axis=1)
    losses[np.asarray(tiles) <= 0] = np.inf
    return losses
