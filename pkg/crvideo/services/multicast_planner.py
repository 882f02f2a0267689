from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from .channel_model import IDLE, ChannelBank, ChannelKey, MarkovChannel, RandomStreams, step, utilization
from .errors import SchemeError, VideoModelError
from .lp_core import LinearProgram, LPResult, log_envelope, solve_lp
from .sensing import (
    AccessPolicy,
    BeliefState,
    SensorProfile,
    apply_feedback,
    predicted_sum,
    sense,
    tx_probability,
    update_belief,
)
from .video_model import (
    MulticastGroup,
    TileAllocation,
    group_utility,
    inc,
    marginal_gains,
    marginal_losses,
)

logger = logging.getLogger(__name__)

BASE_LAYER = -1
SCHEMES = ("equal", "sf", "greedy")


@dataclass
class PlannerState:
    alloc: TileAllocation
    active: FrozenSet[int]
    t_e: float
    gop_len: int = 150
    est_horizon: int = 10
    n_ack: Tuple[int, ...] = ()
    # highest sub-layer granted so far, per group
    frontier: Tuple[int, ...] = ()
    acked: Optional[np.ndarray] = None
    carry: float = 0.0

    def __post_init__(self) -> None:
        groups = self.alloc.tiles.shape[0]
        if not set(self.active) <= set(range(groups)):
            raise VideoModelError("active groups must be a subset of the allocation's groups")
        if self.t_e < 0:
            raise VideoModelError(f"tile budget must be nonnegative, got {self.t_e}")
        if not 1 <= self.est_horizon <= self.gop_len:
            raise VideoModelError("estimation horizon must lie between 1 and the GoP length")
        if self.acked is None:
            self.acked = np.zeros_like(self.alloc.tiles)


@dataclass(frozen=True)
class TileGrant:
    channel: ChannelKey
    group: int
    layer: int  # BASE_LAYER or the MC scheme index
    ordinal: int  # 1-based within the layer
    success_prob: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.success_prob <= 1.0:
            raise VideoModelError(f"success probability must lie in [0, 1], got {self.success_prob}")

    @property
    def target(self) -> Tuple[int, int, int]:
        return (self.group, self.layer, self.ordinal)


@dataclass(frozen=True)
class PendingTile:
    group: int
    layer: int
    ordinal: int
    inc: float


def _layer_count(groups: Sequence[MulticastGroup]) -> int:
    counts = {group.layers for group in groups}
    if len(counts) > 1:
        raise VideoModelError("all groups must use the same MC scheme set")
    return counts.pop() if counts else 0


def base_tiles(group: MulticastGroup) -> int:
    return int(math.ceil(group.source.r_base / group.payload[0] - 1e-12))


def estimate_budget(
    beliefs: BeliefState,
    channels: Mapping[ChannelKey, MarkovChannel],
    t: int,
    state: PlannerState,
) -> float:
    t_min = min(state.est_horizon - 1, state.gop_len - (t % state.gop_len))
    return float(sum(predicted_sum(beliefs.a[key], channels[key], t_min) for key in sorted(beliefs.a)))


def remaining_budget(
    beliefs: BeliefState,
    channels: Mapping[ChannelKey, MarkovChannel],
    t: int,
    state: PlannerState,
) -> float:
    """Idle tiles predicted for the rest of the GoP, extrapolated from the estimation window."""
    s = t % state.gop_len
    window = min(state.est_horizon - 1, state.gop_len - s) + 1
    return estimate_budget(beliefs, channels, t, state) * (state.gop_len - s) / window


def _floor(frontier: Sequence[int], g: int) -> int:
    return frontier[g] if g < len(frontier) else 0


def _normalized(gains: np.ndarray, payload: Sequence[float], r_total: float, t_e: float) -> np.ndarray:
    # gain per unit of the resource the tile consumes
    if t_e <= 0:
        return gains
    return gains / (np.asarray(payload, dtype=float) + r_total / t_e)


class _GainTable:
    """Normalized add/remove scores per group, refreshed only for the group that changed."""

    def __init__(self, groups: Sequence[MulticastGroup], alloc: TileAllocation, t_e: float) -> None:
        self.groups = groups
        self.alloc = alloc
        self.t_e = t_e
        self.r_total = float(sum(group.source.r_enh_max for group in groups))
        self._gains: Dict[int, np.ndarray] = {}
        self._losses: Dict[int, np.ndarray] = {}

    def touch(self, g: int) -> None:
        self._gains.pop(g, None)
        self._losses.pop(g, None)

    def gains(self, g: int) -> np.ndarray:
        if g not in self._gains:
            group = self.groups[g]
            raw = marginal_gains(group, self.alloc.row(g))
            self._gains[g] = _normalized(raw, group.payload, self.r_total, self.t_e)
        return self._gains[g]

    def losses(self, g: int) -> np.ndarray:
        if g not in self._losses:
            group = self.groups[g]
            raw = marginal_losses(group, self.alloc.row(g))
            self._losses[g] = _normalized(raw, group.payload, self.r_total, self.t_e)
        return self._losses[g]

    def best_addition(self, active: Sequence[int], frontier: Sequence[int] = ()) -> Optional[Tuple[int, int]]:
        best: Optional[Tuple[int, int]] = None
        best_value = -math.inf
        for g in sorted(active):
            gains = self.gains(g)
            for m in range(_floor(frontier, g), gains.size):
                if gains[m] > best_value:
                    best, best_value = (g, m), gains[m]
        return best

    def cheapest_removal(self, acked: np.ndarray, frontier: Sequence[int] = ()) -> Optional[Tuple[int, int]]:
        best: Optional[Tuple[int, int]] = None
        best_value = math.inf
        for g in range(len(self.groups)):
            losses = self.losses(g)
            for m in range(_floor(frontier, g), losses.size):
                if self.alloc.tiles[g, m] <= acked[g, m]:
                    continue
                if losses[m] < best_value:
                    best, best_value = (g, m), losses[m]
        return best


def _add_one(table: _GainTable, active: Set[int], frontier: Sequence[int] = ()) -> bool:
    """One greedy step with rollback; False once nothing can be added."""
    while active:
        pick = table.best_addition(sorted(active), frontier)
        if pick is None:
            return False
        g, m = pick
        group = table.groups[g]
        table.alloc.tiles[g, m] += 1
        if table.alloc.rate(g, group) > group.source.r_enh_max + 1e-9:
            table.alloc.tiles[g, m] -= 1
            active.discard(g)
            continue
        table.touch(g)
        return True
    return False


def _grd1(groups: Sequence[MulticastGroup], t_e: float) -> Tuple[TileAllocation, Set[int]]:
    alloc = TileAllocation.zeros(len(groups), _layer_count(groups))
    active = set(range(len(groups)))
    table = _GainTable(groups, alloc, t_e)
    while alloc.total() + 1 <= t_e + 1e-9:
        if not _add_one(table, active):
            break
    return alloc, active


def grd1(groups: Sequence[MulticastGroup], t_e: float) -> TileAllocation:
    if t_e < 0:
        raise VideoModelError(f"tile budget must be nonnegative, got {t_e}")
    return _grd1(groups, t_e)[0]


def equal_allocation(groups: Sequence[MulticastGroup], t_e: float) -> TileAllocation:
    """Even budget split across groups, each share filled by GRD1 within the group."""
    alloc = TileAllocation.zeros(len(groups), _layer_count(groups))
    if not groups:
        return alloc
    share = t_e / len(groups)
    for g, group in enumerate(groups):
        alloc.tiles[g] = grd1([group], share).row(0)
    return alloc


def rlt_program(groups: Sequence[MulticastGroup], t_e: float, n_tangents: int = 8) -> LinearProgram:
    """LP over tile counts l and stratum log-quality proxies z bounded by tangent cuts."""
    G, M = len(groups), _layer_count(groups)
    n_l = G * M
    n = 2 * n_l
    objective = np.zeros(n)
    bounds: List[Tuple[float, float]] = []
    for group in groups:
        for m in range(M):
            cap = min(math.floor(group.source.r_enh_max / group.payload[m] + 1e-9), math.floor(t_e + 1e-9))
            bounds.append((0.0, float(max(cap, 0))))
    for g, group in enumerate(groups):
        objective[n_l + g * M:n_l + (g + 1) * M] = group.weights
        lo = group.source.q_base
        bounds.extend([(math.log(lo), math.inf)] * M)

    lp = LinearProgram(objective, [], bounds)
    budget = np.zeros(n)
    budget[:n_l] = 1.0
    lp.add_constraint(budget, "<=", t_e)
    for g, group in enumerate(groups):
        row = np.zeros(n)
        row[g * M:(g + 1) * M] = group.payload
        lp.add_constraint(row, "<=", group.source.r_enh_max)

        lo = group.source.q_base
        hi = lo + group.source.beta * group.source.r_enh_max
        if hi <= lo:
            for k in range(M):
                bounds[n_l + g * M + k] = (math.log(lo), math.log(lo))
            continue
        envelope = log_envelope(lo, hi, n_tangents)
        for k in range(M):
            for tangent in envelope.tangents:
                # z_k - s * beta * sum_{m<=k} b_m l_m <= s * q_base + c
                cut = np.zeros(n)
                cut[n_l + g * M + k] = 1.0
                cut[g * M:g * M + k + 1] = -tangent.slope * group.source.beta * np.asarray(group.payload[: k + 1])
                lp.add_constraint(cut, "<=", tangent.slope * lo + tangent.intercept)
    return lp.with_bounds(bounds)


def rlt_relaxation(groups: Sequence[MulticastGroup], t_e: float, n_tangents: int = 8) -> LPResult:
    return solve_lp(rlt_program(groups, t_e, n_tangents))


def sequential_fixing(groups: Sequence[MulticastGroup], t_e: float, n_tangents: int = 8) -> TileAllocation:
    G, M = len(groups), _layer_count(groups)
    alloc = TileAllocation.zeros(G, M)
    if G == 0 or t_e < 1:
        return alloc
    lp = rlt_program(groups, t_e, n_tangents)
    bounds = list(lp.bounds)
    result = solve_lp(lp)
    if not result.optimal:
        logger.warning("tile relaxation is %s; falling back to an empty allocation", result.status)
        return alloc
    unfixed = set(range(G * M))
    while unfixed:
        x = result.x
        # most nearly integral variable first, lowest index on ties
        j = min(unfixed, key=lambda v: (min(x[v] - math.floor(x[v]), math.ceil(x[v]) - x[v]), v))
        down, up = float(math.floor(x[j] + 1e-9)), float(math.ceil(x[j] - 1e-9))
        nearer = down if x[j] - down <= up - x[j] else up
        tried = []
        for value in (nearer, up if nearer == down else down, 0.0):
            if value in tried or value > bounds[j][1]:
                continue
            tried.append(value)
            trial = list(bounds)
            trial[j] = (value, value)
            attempt = solve_lp(lp.with_bounds(trial))
            if attempt.optimal:
                bounds, result = trial, attempt
                break
        else:
            bounds[j] = (0.0, 0.0)
            result = solve_lp(lp.with_bounds(bounds))
        unfixed.discard(j)
        if not result.optimal:
            # lowering tile counts never breaks a row, so this only guards numerics
            for v in unfixed:
                bounds[v] = (0.0, 0.0)
            break
    for j in range(G * M):
        alloc.tiles[j // M, j % M] = int(round(bounds[j][0]))
    return alloc


def plan_allocation(groups: Sequence[MulticastGroup], t_e: float, scheme: str, n_tangents: int = 8) -> Tuple[TileAllocation, Set[int]]:
    if scheme == "greedy":
        return _grd1(groups, t_e)
    if scheme == "equal":
        return equal_allocation(groups, t_e), set()
    if scheme == "sf":
        return sequential_fixing(groups, t_e, n_tangents), set()
    raise SchemeError(f"unknown infrastructure scheme {scheme!r}; expected one of {', '.join(SCHEMES)}")


def grd2_adjust(
    state: PlannerState,
    groups: Sequence[MulticastGroup],
    t_e_now: float,
    t_e_prev: float,
    ack_now: int,
    ack_prev: int,
) -> PlannerState:
    """Shrink or grow the allocation by the change in budget plus ACKs since the last slot.

    Gains are normalized against the current budget ``t_e_now``. Removal never
    touches ACKed tiles, and both directions only consider a group's MC
    schemes at or above the highest one already granted to it.
    """
    change = (t_e_now + ack_now) - (t_e_prev + ack_prev) + state.carry
    moves = int(math.trunc(change))
    carry = change - moves
    if moves == 0:
        return replace(state, t_e=max(t_e_now, 0.0), carry=carry)
    alloc = state.alloc.copy()
    active = set(state.active)
    table = _GainTable(groups, alloc, t_e_now)
    if moves < 0:
        for _ in range(-moves):
            pick = table.cheapest_removal(state.acked, state.frontier)
            if pick is None:
                break
            g, m = pick
            alloc.tiles[g, m] -= 1
            table.touch(g)
            active.add(g)
    else:
        for _ in range(moves):
            if not _add_one(table, active, state.frontier):
                break
    return replace(state, alloc=alloc, active=frozenset(active), t_e=max(t_e_now, 0.0), carry=carry)


def tsa_schedule(
    beliefs: BeliefState,
    policy: AccessPolicy,
    pending: Sequence[Sequence[PendingTile]],
    channels: Sequence[ChannelKey],
) -> List[TileGrant]:
    """Give the most reliable channel the most valuable head-of-queue tile, and so on down.

    ``pending`` holds one queue per group in layer order; only queue heads are
    eligible, which keeps lower layers ahead of higher ones.
    """
    scored = []
    for key in channels:
        a = beliefs.a[key]
        c = tx_probability(a, policy.gamma[key]) * a
        if c > 0.0:
            scored.append((-c, key, c))
    scored.sort()
    heads = [0] * len(pending)
    grants: List[TileGrant] = []
    for _, key, c in scored:
        best: Optional[Tuple[int, PendingTile]] = None
        for q, queue in enumerate(pending):
            if heads[q] >= len(queue):
                continue
            tile = queue[heads[q]]
            if best is None or tile.inc > best[1].inc:
                best = (q, tile)
        if best is None:
            break
        q, tile = best
        heads[q] += 1
        grants.append(TileGrant(key, tile.group, tile.layer, tile.ordinal, min(1.0, c)))
    return grants


def _pending_queues(
    groups: Sequence[MulticastGroup],
    targets: TileAllocation,
    acked: np.ndarray,
    base_acked: Sequence[int],
    base_needed: Sequence[int],
    limit: int,
) -> List[List[PendingTile]]:
    # no slot can grant more tiles than it has channels
    queues: List[List[PendingTile]] = []
    for g, group in enumerate(groups):
        queue: List[PendingTile] = []
        if base_acked[g] < base_needed[g]:
            for ordinal in range(base_acked[g] + 1, min(base_needed[g], base_acked[g] + limit) + 1):
                queue.append(PendingTile(g, BASE_LAYER, ordinal, math.inf))
        else:
            row = acked[g]
            for m in range(group.layers):
                if row[m] < targets.tiles[g, m]:
                    last = min(int(targets.tiles[g, m]), int(row[m]) + limit)
                    for ordinal in range(int(row[m]) + 1, last + 1):
                        queue.append(PendingTile(g, m, ordinal, inc(group, row, m, ordinal)))
                    break
        queues.append(queue)
    return queues


@dataclass
class GopConfig:
    gop_slots: int = 150
    est_slots: int = 10
    scheme: str = "greedy"
    n_tangents: int = 8

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise SchemeError(f"unknown infrastructure scheme {self.scheme!r}; expected one of {', '.join(SCHEMES)}")
        if not 1 <= self.est_slots <= self.gop_slots:
            raise VideoModelError("estimation horizon must lie between 1 and the GoP length")


@dataclass
class GopOutcome:
    gop_index: int
    end_slot: int
    delivered_kb: Tuple[float, ...]
    psnr_db: Tuple[Optional[float], ...]
    utility: float
    collisions: int
    transmissions: int
    states: np.ndarray
    allocation: TileAllocation
    bank: ChannelBank
    beliefs: BeliefState
    grant_log: List[Tuple[int, TileGrant, bool]] = field(default_factory=list)

    @property
    def collision_rate(self) -> float:
        slots = self.states.size
        return self.collisions / slots if slots else 0.0


def _mean_psnr(group: MulticastGroup, acked_row: np.ndarray) -> float:
    q = group.source.q_base + group.source.beta * np.cumsum(np.asarray(group.payload) * acked_row)
    users = group.audience[0]
    if users <= 0:
        return float(q[-1])
    return float(np.dot(group.weights, q) / users)


def run_gop(
    world: ChannelBank,
    beliefs: BeliefState,
    groups: Sequence[MulticastGroup],
    policy: AccessPolicy,
    profiles: Mapping[ChannelKey, SensorProfile],
    streams: RandomStreams,
    config: GopConfig,
    gop_index: int = 0,
) -> GopOutcome:
    """Simulate one GoP window of base-station multicast.

    Every slot: sense, update beliefs, access each channel with the
    collision-bounded probability, schedule tiles onto accessed channels, and ACK the grants
    whose channel was truly idle. Under the greedy scheme the allocation then
    follows the ACKed tiles plus the idle tiles predicted for the rest of the GoP.
    """
    keys = world.keys()
    G, M = len(groups), _layer_count(groups)
    T = config.gop_slots
    base_needed = [base_tiles(group) for group in groups]
    mean_eta = float(np.mean([utilization(world.channels[key]) for key in keys])) if keys else 1.0
    t_e_gop = max(0.0, len(keys) * T * (1.0 - mean_eta) - sum(base_needed))
    alloc, active = plan_allocation(groups, t_e_gop, config.scheme, config.n_tangents)
    state = PlannerState(
        alloc=alloc,
        active=frozenset(active),
        t_e=t_e_gop,
        gop_len=T,
        est_horizon=config.est_slots,
    )

    observers = {key: 1 for key in keys}
    acked = np.zeros((G, M), dtype=np.int64)
    base_acked = [0] * G
    states = np.zeros((T, len(keys)), dtype=np.int8)
    ack_history = [0, 0]
    # budget signal (T_e, ACKed enhancement tiles) the allocation currently reflects
    signal = (t_e_gop, 0)
    frontier = [0] * G
    collisions = transmissions = 0
    grant_log: List[Tuple[int, TileGrant, bool]] = []
    bank = world

    for s in range(T):
        t = gop_index * T + s
        bank = step(bank)
        states[s] = bank.states()
        report = sense(bank, observers, profiles, streams.sensing)
        beliefs = update_belief(beliefs, report, profiles, bank.channels)

        if config.scheme == "greedy" and all(b >= n for b, n in zip(base_acked, base_needed)):
            t_e_now = remaining_budget(beliefs, bank.channels, t, state)
            sent = int(acked.sum())
            state = grd2_adjust(state, groups, t_e_now, signal[0], sent, signal[1])
            signal = (t_e_now, sent)

        draws = streams.access.random(len(keys))
        accessed = [
            key for key, x in zip(keys, draws) if x <= tx_probability(beliefs.a[key], policy.gamma[key])
        ]
        pending = _pending_queues(groups, state.alloc, acked, base_acked, base_needed, len(accessed))
        grants = tsa_schedule(beliefs, policy, pending, accessed)

        acks = 0
        observed: Dict[ChannelKey, int] = {}
        for grant in grants:
            channel_state = bank.channels[grant.channel].state
            observed[grant.channel] = channel_state
            transmissions += 1
            ok = channel_state == IDLE
            if ok:
                acks += 1
                if grant.layer == BASE_LAYER:
                    base_acked[grant.group] += 1
                else:
                    acked[grant.group, grant.layer] += 1
            else:
                collisions += 1
            grant_log.append((t, grant, ok))
        for grant in grants:
            frontier[grant.group] = max(frontier[grant.group], grant.layer)
        beliefs = apply_feedback(beliefs, observed)
        ack_history.append(acks)
        state = replace(state, acked=acked.copy(), frontier=tuple(frontier), n_ack=tuple(ack_history[-2:]))

    delivered: List[float] = []
    quality: List[Optional[float]] = []
    utility = 0.0
    for g, group in enumerate(groups):
        delivered.append(float(np.dot(group.payload, acked[g])))
        if base_acked[g] < base_needed[g]:
            quality.append(None)
            continue
        quality.append(_mean_psnr(group, acked[g]))
        utility += group_utility(group, acked[g])

    logger.debug(
        "gop %d (%s): delivered %s kb, %d/%d collisions",
        gop_index,
        config.scheme,
        [round(d, 3) for d in delivered],
        collisions,
        transmissions,
    )
    return GopOutcome(
        gop_index=gop_index,
        end_slot=(gop_index + 1) * T,
        delivered_kb=tuple(delivered),
        psnr_db=tuple(quality),
        utility=utility,
        collisions=collisions,
        transmissions=transmissions,
        states=states,
        allocation=state.alloc,
        bank=bank,
        beliefs=beliefs,
        grant_log=grant_log,
    )
