from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple

import numpy as np
from scipy import stats

from .channel_model import ChannelBank, ChannelKey, RandomStreams
from .errors import SimulationError
from .multicast_planner import GopConfig, run_gop
from .multihop_planner import EpochConfig, Link, Session, Topology, enumerate_paths, run_epoch
from .scenario import INFRASTRUCTURE, Scenario, SweepValue
from .scenario_loader import check_schemes
from .sensing import AccessPolicy, initial_beliefs

logger = logging.getLogger(__name__)

COLUMNS = (
    "sweep_key",
    "sweep_value",
    "scheme",
    "seed",
    "row_type",
    "mean_psnr_db",
    "utility",
    "collision_rate",
    "iterations",
    "ci_half_width",
    "entity_psnr",
    "trajectory_hash",
    "detail",
)
INFRASTRUCTURE_TRACE_COLUMNS = (
    "sweep_value",
    "scheme",
    "seed",
    "slot",
    "group",
    "delivered_rate_kb",
    "psnr_db",
    "collisions",
)
MULTIHOP_TRACE_COLUMNS = (
    "sweep_value",
    "scheme",
    "seed",
    "slot",
    "session",
    "delivered_kb",
    "psnr_db",
    "iterations_to_converge",
    "duality_gap",
)

REPLICA = "replica"
AGGREGATE = "aggregate"
ERROR = "error"
UNDELIVERED = "undelivered"
CONFIDENCE = 0.95


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    if isinstance(value, (tuple, list)):
        return ":".join(fmt(v) for v in value)
    return str(value)


@dataclass
class MetricRow:
    sweep_key: str
    sweep_value: Optional[SweepValue]
    scheme: str
    seed: Optional[int]
    row_type: str
    mean_psnr_db: Optional[float] = None
    utility: Optional[float] = None
    collision_rate: Optional[float] = None
    iterations: Optional[float] = None
    ci_half_width: Optional[float] = None
    entity_psnr: Tuple[Optional[float], ...] = ()
    trajectory_hash: str = ""
    detail: str = ""

    def as_record(self) -> Dict[str, str]:
        record = {name: fmt(getattr(self, name)) for name in COLUMNS}
        record["entity_psnr"] = ";".join(UNDELIVERED if q is None else fmt(q) for q in self.entity_psnr)
        return record


@dataclass(frozen=True)
class ReplicaTask:
    point: int
    sweep_key: str
    sweep_value: Optional[SweepValue]
    scenario: Scenario
    scheme: str
    seed: int
    collect_trace: bool = False


@dataclass
class ReplicaResult:
    row: MetricRow
    trace: List[Dict[str, str]] = field(default_factory=list)


@dataclass
class ExperimentResult:
    mode: str
    rows: List[MetricRow]
    trace: List[Dict[str, str]] = field(default_factory=list)

    @property
    def trace_columns(self) -> Tuple[str, ...]:
        return INFRASTRUCTURE_TRACE_COLUMNS if self.mode == INFRASTRUCTURE else MULTIHOP_TRACE_COLUMNS

    def records(self) -> List[Dict[str, str]]:
        return [row.as_record() for row in self.rows]

    def to_csv(self) -> str:
        out = io.StringIO()
        write_csv(self.rows, out)
        return out.getvalue()


def _channel_setup(scenario: Scenario, seed: int):
    keys = scenario.channel_keys()
    specs = {key: scenario.channel_spec(key) for key in keys}
    bank = ChannelBank.create({key: spec.markov() for key, spec in specs.items()}, seed)
    profiles = {key: spec.profile() for key, spec in specs.items()}
    gamma = {key: spec.gamma for key, spec in specs.items()}
    return bank, profiles, gamma


def _mean(values: Iterable[Optional[float]]) -> Optional[float]:
    kept = [v for v in values if v is not None]
    return float(np.mean(kept)) if kept else None


def _run_infrastructure(task: ReplicaTask) -> ReplicaResult:
    scenario, seed = task.scenario, task.seed
    infra = scenario.infrastructure
    bank, profiles, gamma = _channel_setup(scenario, seed)
    policy = AccessPolicy(gamma=gamma)
    beliefs = initial_beliefs(bank.channels)
    streams = RandomStreams.from_seed(seed)
    config = GopConfig(
        gop_slots=infra.gop_slots,
        est_slots=infra.est_slots,
        scheme=task.scheme,
        n_tangents=infra.n_tangents,
    )
    digest = hashlib.sha256()
    per_group: List[List[Optional[float]]] = [[] for _ in infra.groups]
    utilities: List[float] = []
    collisions = 0
    channel_slots = 0
    trace: List[Dict[str, str]] = []

    for gop in range(scenario.horizon_gops):
        groups = [spec.group_at(gop) for spec in infra.groups]
        outcome = run_gop(bank, beliefs, groups, policy, profiles, streams, config, gop)
        bank, beliefs = outcome.bank, outcome.beliefs
        digest.update(outcome.states.tobytes())
        collisions += outcome.collisions
        channel_slots += outcome.states.size
        utilities.append(outcome.utility)
        for g, quality in enumerate(outcome.psnr_db):
            per_group[g].append(quality)
            if task.collect_trace:
                trace.append(
                    {
                        "sweep_value": fmt(task.sweep_value),
                        "scheme": task.scheme,
                        "seed": fmt(seed),
                        "slot": fmt(outcome.end_slot),
                        "group": groups[g].name or str(g),
                        "delivered_rate_kb": fmt(outcome.delivered_kb[g]),
                        "psnr_db": UNDELIVERED if quality is None else fmt(quality),
                        "collisions": fmt(outcome.collisions),
                    }
                )

    row = MetricRow(
        sweep_key=task.sweep_key,
        sweep_value=task.sweep_value,
        scheme=task.scheme,
        seed=seed,
        row_type=REPLICA,
        mean_psnr_db=_mean(q for qualities in per_group for q in qualities),
        utility=float(np.mean(utilities)) if utilities else None,
        collision_rate=collisions / channel_slots if channel_slots else 0.0,
        entity_psnr=tuple(_mean(qualities) for qualities in per_group),
        trajectory_hash=digest.hexdigest()[:16],
    )
    return ReplicaResult(row, trace)


def _link_losses(losses: Sequence[float], count: int) -> Tuple[float, ...]:
    # a channel-count sweep past the configured rates repeats the last one
    if len(losses) >= count:
        return tuple(losses[:count])
    return tuple(losses) + (losses[-1],) * (count - len(losses))


def build_topology(scenario: Scenario) -> Tuple[Topology, List[Session]]:
    hop = scenario.multihop
    links = [Link(l.a, l.b, l.delay, _link_losses(l.losses, scenario.channel_count)) for l in hop.links]
    topo = Topology.build(hop.nodes, links, range(scenario.channel_count))
    sessions = []
    for spec in hop.sessions:
        session = Session(spec.name, spec.source, spec.dest, spec.video, hop.packet_kb, hop.slot_s, hop.gop_slots)
        sessions.append(session.with_paths(enumerate_paths(topo, session, hop.delay_bound, hop.max_paths)))
    return topo, sessions


def _run_multihop(task: ReplicaTask) -> ReplicaResult:
    scenario, seed = task.scenario, task.seed
    hop = scenario.multihop
    topo, sessions = build_topology(scenario)
    bank, profiles, gamma = _channel_setup(scenario, seed)
    observers: Dict[ChannelKey, int] = {key: hop.observer_count(*key) for key in bank.keys()}
    beliefs = initial_beliefs(bank.channels)
    streams = RandomStreams.from_seed(seed)
    config = EpochConfig(scheme=task.scheme, dual=hop.dual, caps=hop.caps, xi=hop.xi, validate=hop.validate_plans)
    digest = hashlib.sha256()
    per_session: List[List[float]] = [[] for _ in sessions]
    utilities: List[float] = []
    iterations = 0
    collisions = 0
    channel_slots = 0
    trace: List[Dict[str, str]] = []

    for gop in range(scenario.horizon_gops):
        outcome = run_epoch(bank, beliefs, topo, sessions, gamma, profiles, observers, streams, config, gop)
        bank, beliefs = outcome.bank, outcome.beliefs
        digest.update(outcome.states.tobytes())
        collisions += sum(outcome.collisions.values())
        channel_slots += outcome.states.size
        utilities.append(outcome.utility)
        iterations = max(iterations, outcome.iterations)
        for l, quality in enumerate(outcome.psnr_db):
            per_session[l].append(quality)
            if task.collect_trace:
                trace.append(
                    {
                        "sweep_value": fmt(task.sweep_value),
                        "scheme": task.scheme,
                        "seed": fmt(seed),
                        "slot": fmt(outcome.end_slot),
                        "session": sessions[l].name,
                        "delivered_kb": fmt(outcome.delivered_kb[l]),
                        "psnr_db": fmt(quality),
                        "iterations_to_converge": fmt(outcome.iterations),
                        "duality_gap": fmt(outcome.duality_gap),
                    }
                )

    row = MetricRow(
        sweep_key=task.sweep_key,
        sweep_value=task.sweep_value,
        scheme=task.scheme,
        seed=seed,
        row_type=REPLICA,
        mean_psnr_db=_mean(q for qualities in per_session for q in qualities),
        utility=float(np.mean(utilities)) if utilities else None,
        collision_rate=collisions / channel_slots if channel_slots else 0.0,
        iterations=iterations if config.scheme == "dual" else None,
        entity_psnr=tuple(_mean(qualities) for qualities in per_session),
        trajectory_hash=digest.hexdigest()[:16],
    )
    return ReplicaResult(row, trace)


def run_replica(task: ReplicaTask) -> ReplicaResult:
    """One seed of one scheme at one sweep point; failures come back as an error row."""
    try:
        if task.scenario.mode == INFRASTRUCTURE:
            return _run_infrastructure(task)
        return _run_multihop(task)
    except Exception as exc:
        logger.exception("replica %s seed %d at %s=%s failed", task.scheme, task.seed, task.sweep_key, fmt(task.sweep_value))
        return ReplicaResult(
            MetricRow(
                sweep_key=task.sweep_key,
                sweep_value=task.sweep_value,
                scheme=task.scheme,
                seed=task.seed,
                row_type=ERROR,
                detail=f"{type(exc).__name__}: {exc}",
            )
        )


def confidence_half_width(values: Sequence[float], confidence: float = CONFIDENCE) -> Optional[float]:
    """Student-t half-width of the mean; undefined below two samples."""
    n = len(values)
    if n < 2:
        return None
    spread = float(np.std(values, ddof=1))
    return float(stats.t.ppf(0.5 + confidence / 2.0, n - 1) * spread / math.sqrt(n))


def aggregate(rows: Sequence[MetricRow]) -> MetricRow:
    first = rows[0]
    done = [row for row in rows if row.row_type == REPLICA]
    psnrs = [row.mean_psnr_db for row in done if row.mean_psnr_db is not None]
    entities = len(done[0].entity_psnr) if done else 0
    failed = len(rows) - len(done)
    return MetricRow(
        sweep_key=first.sweep_key,
        sweep_value=first.sweep_value,
        scheme=first.scheme,
        seed=None,
        row_type=AGGREGATE,
        mean_psnr_db=_mean(psnrs),
        utility=_mean(row.utility for row in done),
        collision_rate=_mean(row.collision_rate for row in done),
        iterations=_mean(row.iterations for row in done),
        ci_half_width=confidence_half_width(psnrs),
        entity_psnr=tuple(_mean(row.entity_psnr[e] for row in done) for e in range(entities)),
        detail=f"{failed} failed replicas" if failed else "",
    )


def replica_tasks(scenario: Scenario, collect_trace: bool = False) -> List[ReplicaTask]:
    tasks = []
    for point, (key, value, point_scenario) in enumerate(scenario.sweep_points()):
        for scheme in scenario.schemes:
            for seed in scenario.seeds:
                tasks.append(ReplicaTask(point, key, value, point_scenario, scheme, seed, collect_trace))
    return tasks


def resolve_workers(workers: Optional[int] = None) -> int:
    if workers is None:
        raw = os.getenv("CRVIDEO_WORKERS")
        if raw:
            try:
                workers = int(raw)
            except ValueError:
                raise SimulationError(f"CRVIDEO_WORKERS must be an integer, got {raw!r}")
        else:
            workers = os.cpu_count() or 1
    return max(1, workers)


def _execute(tasks: List[ReplicaTask], workers: int) -> List[ReplicaResult]:
    if workers <= 1 or len(tasks) <= 1:
        return [run_replica(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        # map keeps task order whatever the completion order
        return list(pool.map(run_replica, tasks))


def run_experiment(scenario: Scenario, workers: Optional[int] = None, collect_trace: bool = False) -> ExperimentResult:
    """Every sweep point x scheme x seed, each (point, scheme) block closed by an aggregate row."""
    tasks = replica_tasks(scenario, collect_trace)
    workers = resolve_workers(workers)
    logger.info(
        "running %s: %d points, %d schemes, %d seeds on %d workers",
        scenario.name,
        len(scenario.sweep_points()),
        len(scenario.schemes),
        len(scenario.seeds),
        workers,
    )
    results = _execute(tasks, workers)

    rows: List[MetricRow] = []
    trace: List[Dict[str, str]] = []
    block: List[MetricRow] = []
    for index, (task, result) in enumerate(zip(tasks, results)):
        rows.append(result.row)
        trace.extend(result.trace)
        block.append(result.row)
        following = tasks[index + 1] if index + 1 < len(tasks) else None
        if following is None or (following.point, following.scheme) != (task.point, task.scheme):
            rows.append(aggregate(block))
            block = []
    errors = sum(1 for row in rows if row.row_type == ERROR)
    logger.info("finished %s: %d rows, %d failed replicas", scenario.name, len(rows), errors)
    return ExperimentResult(scenario.mode, rows, trace)


def compare_schemes(
    scenario: Scenario,
    schemes: Sequence[str],
    workers: Optional[int] = None,
    collect_trace: bool = False,
) -> ExperimentResult:
    """Paired comparison: every scheme replays the same seeds, hence the same channel trajectories."""
    paired = replace(scenario, schemes=check_schemes(scenario.mode, schemes))
    return run_experiment(paired, workers, collect_trace)


def write_csv(rows: Iterable[MetricRow], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in rows:
        record = row.as_record()
        writer.writerow([record[name] for name in COLUMNS])


def write_trace(result: ExperimentResult, stream: TextIO) -> None:
    writer = csv.DictWriter(stream, fieldnames=result.trace_columns, lineterminator="\n")
    writer.writeheader()
    writer.writerows(result.trace)
