from __future__ import annotations

import itertools
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from .channel_model import BUSY, ChannelBank, ChannelKey, RandomStreams, step
from .errors import InstanceTooLargeError, PathSelectionError, SchemeError
from .lp_core import LinearProgram, LPResult, solve_lp
from .sensing import (
    AccessPolicy,
    BeliefState,
    SensorProfile,
    available_channels,
    sense,
    solve_threshold,
    update_belief,
)
from .video_model import VideoSource, psnr

logger = logging.getLogger(__name__)

Path = Tuple[int, ...]
LinkKey = Tuple[int, int]
# loss rate per available channel on one link
LinkAvailability = Mapping[int, float]

SCHEMES = ("dual", "sf", "heuristic", "brute")


def link_key(i: int, j: int) -> LinkKey:
    return (i, j) if i < j else (j, i)


def path_links(path: Sequence[int]) -> List[LinkKey]:
    return [link_key(a, b) for a, b in zip(path, path[1:])]


@dataclass(frozen=True)
class Link:
    a: int
    b: int
    delay: float
    losses: Tuple[float, ...]

    def __post_init__(self) -> None:
        if self.a == self.b:
            raise PathSelectionError(f"link endpoints must differ, got {self.a}")
        if self.delay < 0:
            raise PathSelectionError(f"link {self.a}-{self.b} has negative delay {self.delay}")
        if any(not 0.0 <= p <= 1.0 for p in self.losses):
            raise PathSelectionError(f"link {self.a}-{self.b} has a loss rate outside [0, 1]")

    @property
    def key(self) -> LinkKey:
        return link_key(self.a, self.b)


@dataclass
class Topology:
    membership: Dict[int, int]  # node -> primary network
    links: Dict[LinkKey, Link]
    channels: Tuple[int, ...]
    graph: nx.Graph = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.graph = nx.Graph()
        self.graph.add_nodes_from(sorted(self.membership))
        for key, link in sorted(self.links.items()):
            if key != link.key:
                raise PathSelectionError(f"link {link.a}-{link.b} stored under {key}")
            for node in key:
                if node not in self.membership:
                    raise PathSelectionError(f"link {link.a}-{link.b} references unknown node {node}")
            if len(link.losses) != len(self.channels):
                raise PathSelectionError(f"link {link.a}-{link.b} needs one loss rate per channel")
            self.graph.add_edge(*key, delay=link.delay)

    @classmethod
    def build(cls, membership: Mapping[int, int], links: Sequence[Link], channels: Sequence[int]) -> "Topology":
        return cls(dict(membership), {link.key: link for link in links}, tuple(channels))

    def link(self, i: int, j: int) -> Link:
        return self.links[link_key(i, j)]

    def loss(self, link: LinkKey, channel: int) -> float:
        return self.links[link].losses[self.channels.index(channel)]


@dataclass(frozen=True)
class Session:
    name: str
    source: int
    dest: int
    video: VideoSource
    packet_kb: float
    slot_s: float
    gop_slots: int
    feasible_paths: Tuple[Path, ...] = ()

    def __post_init__(self) -> None:
        if self.source == self.dest:
            raise PathSelectionError(f"session {self.name}: source and destination must differ")
        if self.packet_kb <= 0 or self.slot_s <= 0 or self.gop_slots < 1:
            raise PathSelectionError(f"session {self.name}: packet size, slot length and GoP slots must be positive")

    def with_paths(self, paths: Sequence[Path]) -> "Session":
        return replace(self, feasible_paths=tuple(tuple(p) for p in paths))

    def rho(self, q_prev: float) -> float:
        return self.video.beta * self.packet_kb / (self.gop_slots * self.slot_s * q_prev)


def path_delay(topo: Topology, path: Sequence[int]) -> float:
    return float(sum(topo.links[key].delay for key in path_links(path)))


def enumerate_paths(topo: Topology, session: Session, t_th: float, max_paths: Optional[int] = None) -> List[Path]:
    """Simple paths within the delay bound, in lexicographic node order."""
    if session.source not in topo.graph or session.dest not in topo.graph:
        return []
    # zero-delay links put no bound on the hop count
    min_delay = min((link.delay for link in topo.links.values()), default=0.0)
    cutoff = int(t_th // min_delay) if min_delay > 0 else None
    try:
        found = nx.all_simple_paths(topo.graph, session.source, session.dest, cutoff=cutoff)
        paths = sorted(tuple(p) for p in found if path_delay(topo, p) <= t_th + 1e-12)
    except nx.NodeNotFound:
        return []
    if max_paths is not None:
        paths = paths[:max_paths]
    return paths


def tunnel_loss(losses: Sequence[float]) -> float:
    if not losses:
        raise PathSelectionError("a tunnel spans at least one link")
    return 1.0 - float(np.prod([1.0 - p for p in losses]))


@dataclass(frozen=True)
class ChannelSchedule:
    tunnels: Tuple[Tuple[int, ...], ...]  # per tunnel, one channel per link
    losses: Tuple[float, ...]  # per tunnel, end to end

    @property
    def n_tunnels(self) -> int:
        return len(self.tunnels)

    @property
    def expected_success(self) -> float:
        return float(sum(1.0 - p for p in self.losses))


def _build_tunnel(avail: List[Dict[int, float]]) -> Optional[Tuple[int, ...]]:
    """One channel per link, consuming channels from ``avail`` in place."""
    n = len(avail)
    chosen: List[Optional[int]] = [None] * n
    unassigned = set(range(n))

    def assign(j: int, m: int) -> bool:
        chosen[j] = m
        unassigned.discard(j)
        avail[j].pop(m, None)
        # half duplex: a relay cannot receive and send on the same channel
        for k in (j - 1, j + 1):
            if 0 <= k < n:
                avail[k].pop(m, None)
        return all(avail[k] for k in unassigned)

    forced = True
    while forced:
        forced = False
        for j in sorted(unassigned):
            if len(avail[j]) == 1:
                if not assign(j, next(iter(avail[j]))):
                    return None
                forced = True
                break
    while unassigned:
        _, j, m = min((p, j, m) for j in unassigned for m, p in avail[j].items())
        if not assign(j, m):
            return None
    return tuple(int(m) for m in chosen)  # type: ignore[arg-type]


def schedule_channels(path: Sequence[int], avail: Sequence[LinkAvailability]) -> ChannelSchedule:
    """Greedy channel-to-tunnel assignment: each tunnel takes the most reliable remaining channels."""
    if len(path) < 2:
        raise PathSelectionError("a path needs at least two nodes")
    if len(avail) != len(path) - 1:
        raise PathSelectionError(f"expected {len(path) - 1} link channel sets, got {len(avail)}")
    remaining = [dict(a) for a in avail]
    tunnels: List[Tuple[int, ...]] = []
    losses: List[float] = []
    while all(remaining):
        trial = [dict(a) for a in remaining]
        tunnel = _build_tunnel(trial)
        if tunnel is None:
            break
        losses.append(tunnel_loss([remaining[j][m] for j, m in enumerate(tunnel)]))
        tunnels.append(tunnel)
        remaining = trial
    return ChannelSchedule(tuple(tunnels), tuple(losses))


def path_gain(session: Session, expected_success: float, q_prev: float) -> float:
    if q_prev <= 0:
        raise PathSelectionError(f"current PSNR must be positive, got {q_prev}")
    if expected_success < 0:
        raise PathSelectionError("expected success must be nonnegative")
    return math.log1p(session.rho(q_prev) * expected_success)


def _endpoints(options: Sequence[Path]) -> Tuple[int, ...]:
    return (options[0][0], options[0][-1]) if options else ()


def build_constraints(paths: Sequence[Sequence[Path]], xi: int = 1) -> Tuple[np.ndarray, List[str]]:
    """Rows of W: at most xi paths per session, at most one per endpoint channel class, relays exclusive.

    A session's own source and destination carry weight 1/xi, so up to xi of
    its paths may meet there; any other chosen path through a node uses it up.
    """
    if xi < 1:
        raise PathSelectionError(f"paths per session must be at least 1, got {xi}")
    columns = [(l, h) for l, options in enumerate(paths) for h in range(len(options))]
    ends = [_endpoints(options) for options in paths]
    rows: List[np.ndarray] = []
    labels: List[str] = []
    for l, options in enumerate(paths):
        if options:
            row = np.array([1.0 / xi if c[0] == l else 0.0 for c in columns])
            rows.append(row)
            labels.append(f"session:{l}")
        if xi > 1:
            for r in range(min(xi, len(options))):
                rows.append(np.array([1.0 if c[0] == l and c[1] % xi == r else 0.0 for c in columns]))
                labels.append(f"class:{l}:{r}")
    nodes = sorted({node for options in paths for p in options for node in p})
    for node in nodes:
        row = np.array(
            [
                (1.0 / xi if node in ends[l] else 1.0) if node in paths[l][h] else 0.0
                for l, h in columns
            ]
        )
        rows.append(row)
        labels.append(f"node:{node}")
    unique: List[np.ndarray] = []
    unique_labels: List[str] = []
    for row, label in zip(rows, labels):
        if not any(np.array_equal(row, seen) for seen in unique):
            unique.append(row)
            unique_labels.append(label)
    if not unique:
        return np.zeros((0, len(columns))), []
    return np.vstack(unique), unique_labels


def dual_function(F: np.ndarray, W: np.ndarray, e: np.ndarray) -> float:
    reduced = F - W.T @ e
    return float(np.maximum(reduced, 0.0).sum() + e.sum())


def multiplier_update(e: np.ndarray, alpha: float, G: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, e - alpha * G)


def relaxed_selection(F: np.ndarray, W: np.ndarray, bounds: Optional[Sequence[Tuple[float, float]]] = None) -> LPResult:
    n = F.size
    lp = LinearProgram(F, [], list(bounds) if bounds is not None else [(0.0, 1.0)] * n)
    for row in W:
        lp.add_constraint(row, "<=", 1.0)
    return solve_lp(lp)


def lp_dual_multipliers(F: Sequence[float], W: np.ndarray) -> Tuple[np.ndarray, float]:
    """Optimal multipliers of the relaxed selection LP and its value."""
    F = np.asarray(F, dtype=float)
    W = np.asarray(W, dtype=float)
    rows, n = W.shape
    # minimize sum(e) + sum(u) s.t. W^T e + u >= F, e, u >= 0
    lp = LinearProgram(-np.ones(rows + n), [], [(0.0, math.inf)] * (rows + n))
    for p in range(n):
        coeffs = np.zeros(rows + n)
        coeffs[:rows] = W[:, p]
        coeffs[rows + p] = 1.0
        lp.add_constraint(coeffs, ">=", float(F[p]))
    result = solve_lp(lp)
    if not result.optimal:
        raise PathSelectionError(f"multiplier LP is {result.status}")
    return result.x[:rows], -float(result.objective)


def _feasible(W: np.ndarray, y: np.ndarray) -> bool:
    return bool(np.all(W @ y <= 1.0 + 1e-9))


def best_binary_selection(F: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Exhaustive search over the paths with positive gain."""
    positive = [p for p in range(F.size) if F[p] > 0]
    best = np.zeros(F.size)
    best_value = 0.0
    for bits in itertools.product((0, 1), repeat=len(positive)):
        y = np.zeros(F.size)
        y[positive] = bits
        value = float(F @ y)
        if value > best_value + 1e-12 and _feasible(W, y):
            best, best_value = y, value
    return best


def _gauss_jordan(A: np.ndarray, b: np.ndarray, tol: float = 1e-9) -> Optional[Tuple[np.ndarray, np.ndarray, List[int]]]:
    M = np.hstack([A.astype(float), b.reshape(-1, 1).astype(float)])
    rows, cols = A.shape
    pivots: List[int] = []
    r = 0
    for c in range(cols):
        if r >= rows:
            break
        candidates = np.flatnonzero(np.abs(M[r:, c]) > tol)
        if candidates.size == 0:
            continue
        p = r + int(candidates[0])
        M[[r, p]] = M[[p, r]]
        M[r] /= M[r, c]
        for k in range(rows):
            if k != r and abs(M[k, c]) > tol:
                M[k] -= M[k, c] * M[r]
        pivots.append(c)
        r += 1
    if np.any(np.abs(M[r:, -1]) > tol):
        return None
    return M[:r, :cols], M[:r, -1], pivots


def tight_row_rounding(F: np.ndarray, W: np.ndarray, e: np.ndarray, tol: float = 1e-6) -> Optional[np.ndarray]:
    """Binary y from the tight rows: solve them for dependent paths, set free paths by reduced gain."""
    n = F.size
    active = np.flatnonzero(e > tol)
    y = np.zeros(n)
    if active.size == 0:
        y[F > 0] = 1.0
        return y if _feasible(W, y) else None
    reduced = _gauss_jordan(W[active], np.ones(active.size))
    if reduced is None:
        return None
    R, rhs, pivots = reduced
    free = [j for j in range(n) if j not in pivots]
    for j in free:
        coefficient = F[j] - sum(F[p] * R[i, j] for i, p in enumerate(pivots))
        y[j] = 1.0 if coefficient > tol else 0.0
    for i, p in enumerate(pivots):
        y[p] = rhs[i] - sum(R[i, j] * y[j] for j in free)
    rounded = np.round(y)
    if np.any(np.abs(y - rounded) > 1e-6) or np.any((rounded < 0) | (rounded > 1)):
        return None
    rounded[F <= 0] = 0.0
    return rounded if _feasible(W, rounded) else None


def greedy_rounding(F: np.ndarray, W: np.ndarray, score: np.ndarray) -> np.ndarray:
    """Take positive-gain paths by descending score, then gain, keeping every row within capacity."""
    chosen = np.zeros(F.size)
    load = np.zeros(W.shape[0])
    for p in np.lexsort((np.arange(F.size), -F, -np.asarray(score, dtype=float))):
        if F[p] <= 0:
            continue
        if np.all(load + W[:, p] <= 1.0 + 1e-9):
            chosen[p] = 1.0
            load += W[:, p]
    return chosen


@dataclass
class DualState:
    e: np.ndarray
    tau: int = 0
    step: float = 0.0
    q_hat: float = 0.0

    def __post_init__(self) -> None:
        if np.any(self.e < 0):
            raise PathSelectionError("multipliers must be nonnegative")


@dataclass
class PathSelection:
    y: np.ndarray
    objective: float
    converged: bool
    iterations: int
    duality_gap: float
    rounding: str
    broadcasts: int
    multipliers: np.ndarray
    trace: List[np.ndarray] = field(default_factory=list, repr=False)


def dual_path_select(
    F: Sequence[float],
    W: np.ndarray,
    step: float = 0.05,
    e0: float = 0.1,
    tol: float = 1e-6,
    max_iter: int = 10_000,
    step_rule: str = "estimate",
    q_star: Optional[float] = None,
    patience: int = 50,
) -> PathSelection:
    """Subgradient descent on the multipliers of the relaxed path-selection problem.

    Every iteration prices the paths with the current multipliers. The smallest
    dual value seen is an upper bound; binary selections recovered from the
    iterate (the per-path best response, a greedy pass in reduced-gain order
    and the tight-row rounding) give a lower bound. The loop stops once the
    bounds meet within ``tol``.

    The ``estimate`` rule steps toward the level ``max(upper - offset, lower)``.
    The offset starts at half the gap and halves whenever the upper bound
    stalls for ``patience`` iterations. The ``polyak`` rule steps toward the
    known optimum ``q_star`` and also stops once the multipliers settle.
    """
    F = np.asarray(F, dtype=float)
    W = np.asarray(W, dtype=float)
    if F.ndim != 1 or not np.isfinite(F).all():
        raise PathSelectionError("gains must be a finite vector")
    if W.ndim != 2 or W.shape[1] != F.size:
        raise PathSelectionError(f"constraint matrix must have {F.size} columns")
    if step_rule not in ("estimate", "polyak"):
        raise PathSelectionError(f"unknown step rule {step_rule!r}")
    if step_rule == "polyak" and q_star is None:
        raise PathSelectionError("the polyak step rule needs the optimal dual value")
    state = DualState(e=np.full(W.shape[0], float(e0)))
    y = np.zeros(F.size)
    best_y = greedy_rounding(F, W, F)
    lower, source = float(F @ best_y), "greedy"
    upper, best_e = dual_function(F, W, state.e), state.e.copy()
    offset = 0.5 * max(upper - lower, 0.0)
    anchor, stalled = upper, 0
    last_order: Optional[Tuple[int, ...]] = None
    last_active: Optional[Tuple[int, ...]] = None
    trace = [state.e.copy()]
    converged = False
    broadcasts = 0
    while True:
        e = state.e
        reduced = F - W.T @ e
        y = np.clip(y + step * np.sign(reduced), 0.0, 1.0)
        response = (reduced > 0).astype(float)
        q = float(np.maximum(reduced, 0.0).sum() + e.sum())
        if q < upper:
            upper, best_e = q, e.copy()

        found: List[Tuple[str, np.ndarray]] = []
        if _feasible(W, response):
            found.append(("response", response))
        order = tuple(int(p) for p in np.lexsort((np.arange(F.size), -F, -reduced)))
        if order != last_order:
            found.append(("greedy", greedy_rounding(F, W, reduced)))
            last_order = order
        active = tuple(int(r) for r in np.flatnonzero(e > tol))
        if active != last_active:
            tight = tight_row_rounding(F, W, e, tol)
            if tight is not None:
                found.append(("tight", tight))
            last_active = active
        for label, candidate in found:
            value = float(F @ candidate)
            if value > lower + 1e-12:
                lower, best_y, source = value, candidate, label
                offset = min(offset, 0.5 * (upper - lower))

        if upper - lower <= tol * (1.0 + abs(upper)):
            converged = True
            break
        if state.tau >= max_iter:
            break

        if upper <= anchor - 0.5 * offset:
            anchor, stalled = upper, 0
        else:
            stalled += 1
            if stalled >= patience:
                offset *= 0.5
                anchor, stalled = upper, 0
        level = float(q_star) if step_rule == "polyak" else max(upper - offset, lower)
        G = 1.0 - W @ response
        norm2 = float(G @ G)
        alpha = max(q - level, 0.0) / norm2 if norm2 > 0.0 else 0.0
        e_next = multiplier_update(e, alpha, G)
        change = float(np.max(np.abs(e_next - e))) if e_next.size else 0.0
        if change > tol:
            broadcasts += 1
        state = DualState(e=e_next, tau=state.tau + 1, step=alpha, q_hat=level)
        trace.append(e_next.copy())
        if step_rule == "polyak" and change < tol:
            converged = True
            break
        if step_rule == "estimate" and offset <= tol * (1.0 + abs(upper)):
            # the dual bound has settled short of every recovered selection
            break

    candidates: List[Tuple[str, np.ndarray]] = [(source, best_y)]
    for threshold in (tol, 1e-5, 1e-4, 1e-3):
        tight = tight_row_rounding(F, W, best_e, max(threshold, tol))
        if tight is not None:
            candidates.append(("tight", tight))
    candidates.append(("greedy", greedy_rounding(F, W, y)))
    top = max(float(F @ c) for _, c in candidates)
    # the tight-row rounding is reported whenever it reaches the best value
    rounding, chosen = next(
        (label, c) for label, c in sorted(candidates, key=lambda c: c[0] != "tight") if float(F @ c) >= top - 1e-12
    )
    objective = float(F @ chosen)
    if not converged and upper - objective <= tol * (1.0 + abs(upper)):
        converged = True
    logger.debug(
        "dual path selection: %d iterations, bounds %.6g/%.6g, %s rounding",
        state.tau,
        objective,
        upper,
        rounding,
    )
    return PathSelection(
        y=chosen,
        objective=objective,
        converged=converged,
        iterations=state.tau,
        duality_gap=max(upper - objective, 0.0),
        rounding=rounding,
        broadcasts=broadcasts,
        multipliers=best_e,
        trace=trace,
    )


@dataclass(frozen=True)
class PathPlan:
    session: int
    index: int
    path: Path
    schedule: ChannelSchedule
    gain: float

    @property
    def n_tunnels(self) -> int:
        return self.schedule.n_tunnels


@dataclass
class SessionPlan:
    chosen: Dict[Tuple[int, int], PathPlan]  # keyed by (session, path index)
    objective: float
    iterations: int = 0
    converged: bool = True
    duality_gap: float = 0.0
    broadcasts: int = 0

    @property
    def y(self) -> Dict[Tuple[int, int], int]:
        return {key: 1 for key in self.chosen}

    def assignments(self) -> Iterator[Tuple[LinkKey, int, int, int, int]]:
        """(link, channel, session, path index, tunnel) for every x = 1."""
        for (l, h), plan in sorted(self.chosen.items()):
            for r, tunnel in enumerate(plan.schedule.tunnels):
                for link, m in zip(path_links(plan.path), tunnel):
                    yield link, m, l, h, r


@dataclass(frozen=True)
class Candidate:
    session: int
    index: int
    path: Path
    schedule: ChannelSchedule
    gain: float


def link_availability(topo: Topology, beliefs: BeliefState, policy: AccessPolicy) -> Dict[LinkKey, Dict[int, float]]:
    avail: Dict[LinkKey, Dict[int, float]] = {}
    for key in sorted(topo.links):
        channels = available_channels(beliefs, policy, key, topo.membership, topo.channels)
        avail[key] = {m: topo.loss(key, m) for m in channels}
    return avail


def _path_availability(
    path: Path, h: int, avail: Mapping[LinkKey, LinkAvailability], xi: int
) -> List[Dict[int, float]]:
    links = path_links(path)
    out = [dict(avail.get(key, {})) for key in links]
    if xi > 1:
        # a session's paths meet at its endpoints, so each path keeps to its own channel class there
        for j in {0, len(links) - 1}:
            out[j] = {m: p for m, p in out[j].items() if m % xi == h % xi}
    return out


def path_candidates(
    sessions: Sequence[Session],
    avail: Mapping[LinkKey, LinkAvailability],
    q_prev: Sequence[float],
    xi: int = 1,
) -> List[List[Candidate]]:
    out: List[List[Candidate]] = []
    for l, session in enumerate(sessions):
        options = []
        for h, path in enumerate(session.feasible_paths):
            schedule = schedule_channels(path, _path_availability(path, h, avail, xi))
            gain = path_gain(session, schedule.expected_success, q_prev[l])
            options.append(Candidate(l, h, path, schedule, gain))
        out.append(options)
    return out


def _flatten(candidates: Sequence[Sequence[Candidate]]) -> Tuple[List[Candidate], np.ndarray]:
    flat = [c for options in candidates for c in options]
    return flat, np.array([c.gain for c in flat], dtype=float)


def _plan_from(flat: Sequence[Candidate], y: np.ndarray, **extra) -> SessionPlan:
    chosen: Dict[Tuple[int, int], PathPlan] = {}
    for c, bit in zip(flat, y):
        if bit > 0.5 and c.gain > 0:
            chosen[(c.session, c.index)] = PathPlan(c.session, c.index, c.path, c.schedule, c.gain)
    objective = float(sum(p.gain for p in chosen.values()))
    return SessionPlan(chosen=chosen, objective=objective, **extra)


@dataclass
class DualSettings:
    step: float = 0.05
    e0: float = 0.1
    tol: float = 1e-6
    max_iter: int = 10_000
    iterations_per_ms: Optional[float] = None

    def iteration_cap(self, slot_s: float) -> Tuple[int, bool]:
        """Iterations allowed in one slot and whether a real-time budget applies."""
        if self.iterations_per_ms is None:
            return self.max_iter, False
        budget = max(1, math.floor(0.05 * slot_s * 1000.0 * self.iterations_per_ms))
        return min(budget, self.max_iter), True


def dual_plan(
    sessions: Sequence[Session],
    avail: Mapping[LinkKey, LinkAvailability],
    q_prev: Sequence[float],
    settings: Optional[DualSettings] = None,
    xi: int = 1,
) -> SessionPlan:
    settings = settings or DualSettings()
    flat, F = _flatten(path_candidates(sessions, avail, q_prev, xi))
    if not flat:
        return SessionPlan(chosen={}, objective=0.0)
    W, _ = build_constraints([list(s.feasible_paths) for s in sessions], xi)
    cap, budgeted = settings.iteration_cap(min(s.slot_s for s in sessions))
    selection = dual_path_select(
        F,
        W,
        step=settings.step,
        e0=settings.e0,
        tol=settings.tol,
        max_iter=cap,
    )
    if not selection.converged and not budgeted:
        logger.warning(
            "dual path selection stopped after %d iterations with gap %.3g", selection.iterations, selection.duality_gap
        )
    return _plan_from(
        flat,
        selection.y,
        iterations=selection.iterations,
        converged=selection.converged,
        duality_gap=selection.duality_gap,
        broadcasts=selection.broadcasts,
    )


def sequential_fix_selection(F: Sequence[float], W: np.ndarray) -> Tuple[np.ndarray, int]:
    """Fix the largest relaxed path variable to 1 until none is positive; returns y and the LP rounds."""
    F = np.asarray(F, dtype=float)
    W = np.asarray(W, dtype=float)
    n = F.size
    bounds = [(0.0, 1.0)] * n
    fixed: Dict[int, float] = {p: 0.0 for p in range(n) if F[p] <= 0}
    for p in fixed:
        bounds[p] = (0.0, 0.0)
    rounds = 0
    while len(fixed) < n:
        rounds += 1
        result = relaxed_selection(F, W, bounds)
        if not result.optimal:
            break
        open_vars = [p for p in range(n) if p not in fixed]
        p = max(open_vars, key=lambda v: (result.x[v], -v))
        if result.x[p] <= 1e-9:
            break
        trial = list(bounds)
        trial[p] = (1.0, 1.0)
        ones = np.array([lo for lo, _ in trial])
        if _feasible(W, ones):
            bounds, fixed[p] = trial, 1.0
        else:
            bounds[p] = (0.0, 0.0)
            fixed[p] = 0.0
    return np.array([lo for lo, _ in bounds]), rounds


def centralized_sf(
    sessions: Sequence[Session],
    avail: Mapping[LinkKey, LinkAvailability],
    q_prev: Sequence[float],
    xi: int = 1,
) -> SessionPlan:
    flat, F = _flatten(path_candidates(sessions, avail, q_prev, xi))
    if not flat:
        return SessionPlan(chosen={}, objective=0.0)
    W, _ = build_constraints([list(s.feasible_paths) for s in sessions], xi)
    y, rounds = sequential_fix_selection(F, W)
    return _plan_from(flat, y, iterations=rounds)


@dataclass(frozen=True)
class BruteForceCaps:
    sessions: int = 3
    paths: int = 3
    channels: int = 4
    hops: int = 4


def brute_force_crv(
    sessions: Sequence[Session],
    avail: Mapping[LinkKey, LinkAvailability],
    q_prev: Sequence[float],
    caps: BruteForceCaps = BruteForceCaps(),
    xi: int = 1,
) -> SessionPlan:
    if len(sessions) > caps.sessions:
        raise InstanceTooLargeError(f"{len(sessions)} sessions exceed the cap of {caps.sessions}")
    for session in sessions:
        if len(session.feasible_paths) > caps.paths:
            raise InstanceTooLargeError(f"session {session.name} has more than {caps.paths} feasible paths")
        for path in session.feasible_paths:
            if len(path) - 1 > caps.hops:
                raise InstanceTooLargeError(f"path {path} has more than {caps.hops} hops")
            for key in path_links(path):
                if len(avail.get(key, {})) > caps.channels:
                    raise InstanceTooLargeError(f"link {key} offers more than {caps.channels} channels")
    flat, F = _flatten(path_candidates(sessions, avail, q_prev, xi))
    if not flat:
        return SessionPlan(chosen={}, objective=0.0)
    W, _ = build_constraints([list(s.feasible_paths) for s in sessions], xi)
    return _plan_from(flat, best_binary_selection(F, W))


def heuristic_plan(
    topo: Topology,
    sessions: Sequence[Session],
    avail: Mapping[LinkKey, LinkAvailability],
    q_prev: Sequence[float],
) -> SessionPlan:
    """Per hop, follow the link with the most available channels; sessions keep node-disjoint."""
    used: set = set()
    chosen: Dict[Tuple[int, int], PathPlan] = {}
    for l, session in enumerate(sessions):
        options = [p for p in session.feasible_paths if not used.intersection(p)]
        if not options:
            continue
        prefix: Path = (session.source,)
        while prefix[-1] != session.dest:
            depth = len(prefix)
            nexts = sorted({p[depth] for p in options if p[:depth] == prefix})
            prefix = prefix + (max(nexts, key=lambda v: (len(avail.get(link_key(prefix[-1], v), {})), -v)),)
        schedule = schedule_channels(prefix, [avail.get(key, {}) for key in path_links(prefix)])
        gain = path_gain(session, schedule.expected_success, q_prev[l])
        if gain <= 0:
            continue
        h = session.feasible_paths.index(prefix)
        chosen[(l, h)] = PathPlan(l, h, prefix, schedule, gain)
        used.update(prefix)
    return SessionPlan(chosen=chosen, objective=float(sum(p.gain for p in chosen.values())))


def validate_plan(
    plan: SessionPlan,
    topo: Topology,
    sessions: Sequence[Session],
    avail: Mapping[LinkKey, LinkAvailability],
    xi: int = 1,
) -> List[str]:
    """Return every way ``plan`` breaks the routing and channel rules; empty means valid."""
    problems: List[str] = []
    owner: Dict[int, int] = {}
    per_session: Counter = Counter()
    first_hop: Dict[int, Counter] = {}
    last_hop: Dict[int, Counter] = {}
    for (l, _), chosen in sorted(plan.chosen.items()):
        session = sessions[l]
        path = chosen.path
        per_session[l] += 1
        if path[0] != session.source or path[-1] != session.dest:
            problems.append(f"session {l}: path {path} does not join {session.source} to {session.dest}")
        if len(set(path)) != len(path):
            problems.append(f"session {l}: path {path} revisits a node")
        if path not in session.feasible_paths:
            problems.append(f"session {l}: path {path} is not among the feasible paths")
        for node in path:
            if node in owner and (owner[node] != l or node not in (session.source, session.dest)):
                problems.append(f"node {node} carries sessions {owner[node]} and {l}")
            owner[node] = l

        links = path_links(path)
        for key in links:
            if key not in topo.links:
                problems.append(f"session {l}: link {key} does not exist")
        usage: Counter = Counter()
        for r, tunnel in enumerate(chosen.schedule.tunnels):
            # one channel per link per tunnel, so every tunnel spans the whole path
            if len(tunnel) != len(links):
                problems.append(f"session {l} tunnel {r}: {len(tunnel)} channels for {len(links)} links")
                continue
            first_hop.setdefault(l, Counter())[tunnel[0]] += 1
            last_hop.setdefault(l, Counter())[tunnel[-1]] += 1
            for hop, (key, m) in enumerate(zip(links, tunnel)):
                usage[(key, m)] += 1
                if m not in avail.get(key, {}):
                    problems.append(f"session {l} tunnel {r}: channel {m} is not available on link {key}")
                if hop and tunnel[hop - 1] == m:
                    problems.append(f"session {l} tunnel {r}: channel {m} on consecutive links at node {path[hop]}")
        for (key, m), count in sorted(usage.items()):
            if count > 1:
                problems.append(f"session {l}: channel {m} used by {count} tunnels on link {key}")
        # half duplex across tunnels: a channel on one link is unusable on the next
        for hop in range(1, len(links)):
            before = {t[hop - 1] for t in chosen.schedule.tunnels if len(t) == len(links)}
            after = {t[hop] for t in chosen.schedule.tunnels if len(t) == len(links)}
            shared = sorted(before & after)
            if shared:
                problems.append(f"session {l}: channels {shared} on both sides of node {path[hop]}")
    for l, count in sorted(per_session.items()):
        if count > xi:
            problems.append(f"session {l}: {count} paths exceed the limit of {xi}")
        for m, uses in sorted(first_hop.get(l, Counter()).items()):
            if uses > 1:
                problems.append(f"session {l}: channel {m} leaves node {sessions[l].source} on {uses} tunnels")
        for m, uses in sorted(last_hop.get(l, Counter()).items()):
            if uses > 1:
                problems.append(f"session {l}: channel {m} reaches node {sessions[l].dest} on {uses} tunnels")
    return problems


@dataclass
class EpochConfig:
    scheme: str = "dual"
    dual: DualSettings = field(default_factory=DualSettings)
    caps: BruteForceCaps = field(default_factory=BruteForceCaps)
    xi: int = 1
    validate: bool = False

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise SchemeError(f"unknown multihop scheme {self.scheme!r}; expected one of {', '.join(SCHEMES)}")
        if self.xi < 1:
            raise SchemeError(f"paths per session must be at least 1, got {self.xi}")


def plan_slot(
    config: EpochConfig,
    topo: Topology,
    sessions: Sequence[Session],
    avail: Mapping[LinkKey, LinkAvailability],
    q_prev: Sequence[float],
) -> SessionPlan:
    if config.scheme == "dual":
        return dual_plan(sessions, avail, q_prev, config.dual, config.xi)
    if config.scheme == "sf":
        return centralized_sf(sessions, avail, q_prev, config.xi)
    if config.scheme == "brute":
        return brute_force_crv(sessions, avail, q_prev, config.caps, config.xi)
    return heuristic_plan(topo, sessions, avail, q_prev)


@dataclass
class EpochOutcome:
    gop_index: int
    end_slot: int
    delivered_kb: Tuple[float, ...]
    psnr_db: Tuple[float, ...]
    utility: float
    collisions: Dict[int, int]
    transmissions: int
    iterations: int
    duality_gap: float
    objective: float
    states: np.ndarray
    bank: ChannelBank
    beliefs: BeliefState
    plans: List[SessionPlan] = field(default_factory=list, repr=False)

    @property
    def collision_rate(self) -> float:
        # collision events per channel-slot
        slots = self.states.size
        return sum(self.collisions.values()) / slots if slots else 0.0


def _session_psnr(session: Session, delivered_kb: float) -> float:
    enhancement = min(delivered_kb / (session.gop_slots * session.slot_s), session.video.r_enh_max)
    return psnr(session.video, session.video.r_base + enhancement)


def run_epoch(
    world: ChannelBank,
    beliefs: BeliefState,
    topo: Topology,
    sessions: Sequence[Session],
    gamma: Mapping[ChannelKey, float],
    profiles: Mapping[ChannelKey, SensorProfile],
    observers: Mapping[ChannelKey, int],
    streams: RandomStreams,
    config: EpochConfig,
    gop_index: int = 0,
) -> EpochOutcome:
    """Simulate one GoP of multi-session streaming, replanning paths and tunnels every slot."""
    n_slots = sessions[0].gop_slots if sessions else 0
    keys = world.keys()
    delivered = [0.0] * len(sessions)
    collisions: Dict[int, int] = {k: 0 for k, _ in keys}
    states = np.zeros((n_slots, len(keys)), dtype=np.int8)
    transmissions = 0
    iterations = 0
    gap = 0.0
    objective = 0.0
    plans: List[SessionPlan] = []
    bank = world

    for s in range(n_slots):
        bank = step(bank)
        states[s] = bank.states()
        report = sense(bank, observers, profiles, streams.sensing)
        beliefs = update_belief(beliefs, report, profiles, bank.channels)
        kappa = {
            key: solve_threshold(gamma[key], observers.get(key, 0), profiles[key], beliefs.prior[key])
            for key in keys
        }
        policy = AccessPolicy(dict(gamma), kappa)
        avail = link_availability(topo, beliefs, policy)
        q_prev = [_session_psnr(session, delivered[l]) for l, session in enumerate(sessions)]
        plan = plan_slot(config, topo, sessions, avail, q_prev)
        plans.append(plan)
        if config.validate:
            problems = validate_plan(plan, topo, sessions, avail, config.xi)
            if problems:
                raise PathSelectionError(f"slot {s} ({config.scheme}): " + "; ".join(problems))
        iterations = max(iterations, plan.iterations)
        gap = max(gap, plan.duality_gap)
        objective += plan.objective

        for (l, _), chosen in sorted(plan.chosen.items()):
            links = path_links(chosen.path)
            for tunnel, loss in zip(chosen.schedule.tunnels, chosen.schedule.losses):
                transmissions += 1
                hit = sorted(
                    {
                        topo.membership[node]
                        for key, m in zip(links, tunnel)
                        for node in key
                        if bank.channels[(topo.membership[node], m)].state == BUSY
                    }
                )
                if hit:
                    for k in hit:
                        collisions[k] += 1
                    continue
                if streams.access.random() >= loss:
                    delivered[l] += sessions[l].packet_kb

    quality = [_session_psnr(session, delivered[l]) for l, session in enumerate(sessions)]
    utility = float(sum(math.log(q) for q in quality))
    logger.debug("epoch %d (%s): delivered %s kb", gop_index, config.scheme, [round(d, 3) for d in delivered])
    return EpochOutcome(
        gop_index=gop_index,
        end_slot=(gop_index + 1) * n_slots,
        delivered_kb=tuple(delivered),
        psnr_db=tuple(quality),
        utility=utility,
        collisions=collisions,
        transmissions=transmissions,
        iterations=iterations,
        duality_gap=gap,
        objective=objective,
        states=states,
        bank=bank,
        beliefs=beliefs,
        plans=plans,
    )
