import itertools
import math
from unittest.mock import patch

import numpy as np
import pytest

from crvideo.services.channel_model import ChannelBank, MarkovChannel, RandomStreams
from crvideo.services.errors import InstanceTooLargeError, PathSelectionError, SchemeError
from crvideo.services.multihop_planner import (
    BruteForceCaps,
    ChannelSchedule,
    DualSettings,
    EpochConfig,
    Link,
    PathPlan,
    Session,
    SessionPlan,
    Topology,
    best_binary_selection,
    brute_force_crv,
    build_constraints,
    centralized_sf,
    dual_path_select,
    dual_plan,
    enumerate_paths,
    heuristic_plan,
    lp_dual_multipliers,
    multiplier_update,
    path_gain,
    run_epoch,
    schedule_channels,
    sequential_fix_selection,
    tunnel_loss,
    validate_plan,
)
from crvideo.services.sensing import SensorProfile, initial_beliefs
from crvideo.services.video_model import VideoSource
from crvideo.tests.oracles import best_tunnel_success, simple_paths

VIDEO = VideoSource(q_base=30.0, beta=0.005, r_base=100.0, r_enh_max=2000.0)


def _session(source, dest, name="s", gop_slots=5, packet_kb=100.0, slot_s=0.02):
    return Session(name, source, dest, VIDEO, packet_kb, slot_s, gop_slots)


def _topology(edges, membership, channels=4, loss=0.1, delay=1.0):
    links = [Link(a, b, delay, (loss,) * channels) for a, b in edges]
    return Topology.build(membership, links, range(channels))


GRID_EDGES = [(0, 1), (1, 2), (0, 3), (3, 4), (4, 2), (1, 4)]


def test_direct_link_is_a_path():
    topo = _topology([(0, 1)], {0: 0, 1: 0})
    assert enumerate_paths(topo, _session(0, 1), 1.0) == [(0, 1)]


def test_zero_delay_bound_gives_no_paths():
    topo = _topology([(0, 1)], {0: 0, 1: 0})
    assert enumerate_paths(topo, _session(0, 1), 0.0) == []


def test_paths_match_depth_first_search():
    topo = _topology(GRID_EDGES, {n: 0 for n in range(5)})
    for source, dest in itertools.permutations(range(5), 2):
        expected = simple_paths(GRID_EDGES, source, dest, 3)
        assert enumerate_paths(topo, _session(source, dest), 3.0) == expected


def test_path_cap_keeps_the_first_paths():
    topo = _topology(GRID_EDGES, {n: 0 for n in range(5)})
    every = enumerate_paths(topo, _session(0, 2), 3.0)
    assert enumerate_paths(topo, _session(0, 2), 3.0, max_paths=2) == every[:2]


def test_zero_delay_links_do_not_limit_the_hop_count():
    links = [Link(0, 1, 1.0, (0.1,)), Link(0, 2, 0.0, (0.1,)), Link(2, 3, 0.0, (0.1,)), Link(3, 1, 0.0, (0.1,))]
    topo = Topology.build({n: 0 for n in range(4)}, links, range(1))
    assert enumerate_paths(topo, _session(0, 1), 1.0) == [(0, 1), (0, 2, 3, 1)]


def test_topology_rejects_unknown_nodes_and_short_loss_vectors():
    with pytest.raises(PathSelectionError):
        _topology([(0, 5)], {0: 0, 1: 0})
    with pytest.raises(PathSelectionError):
        Topology.build({0: 0, 1: 0}, [Link(0, 1, 1.0, (0.1,))], range(2))


def test_tunnel_loss():
    assert tunnel_loss([0.1, 0.2]) == pytest.approx(0.28)
    assert tunnel_loss([0.3, 1.0]) == pytest.approx(1.0)
    with pytest.raises(PathSelectionError):
        tunnel_loss([])


def test_session_requires_distinct_endpoints():
    with pytest.raises(PathSelectionError):
        _session(1, 1)


def test_single_channel_links_make_one_tunnel():
    schedule = schedule_channels((0, 1, 2), [{0: 0.1}, {1: 0.2}])
    assert schedule.tunnels == ((0, 1),)
    assert schedule.losses == (pytest.approx(0.28),)


def test_best_channels_pair_up():
    schedule = schedule_channels((0, 1, 2), [{0: 0.2, 1: 0.1}, {2: 0.3, 3: 0.2}])
    assert schedule.tunnels == ((1, 3), (0, 2))
    assert schedule.expected_success == pytest.approx(0.8 * 0.7 + 0.9 * 0.8)


def test_relay_never_reuses_a_channel_on_both_sides():
    schedule = schedule_channels((0, 1, 2), [{0: 0.0, 1: 0.0}, {0: 0.0, 1: 0.0}])
    for tunnel in schedule.tunnels:
        assert tunnel[0] != tunnel[1]
    assert schedule.n_tunnels == 1


def test_schedule_matches_exhaustive_assignment():
    rng = np.random.default_rng(44)
    for _ in range(100):
        avail = []
        for hop in range(3):
            count = int(rng.integers(1, 5))
            avail.append({4 * hop + m: float(rng.uniform(0.0, 0.5)) for m in range(count)})
        schedule = schedule_channels((0, 1, 2, 3), avail)
        assert schedule.expected_success == pytest.approx(best_tunnel_success(avail))


def test_schedule_rejects_mismatched_inputs():
    with pytest.raises(PathSelectionError):
        schedule_channels((0,), [])
    with pytest.raises(PathSelectionError):
        schedule_channels((0, 1, 2), [{0: 0.1}])


def test_path_gain():
    session = Session("s", 0, 1, VideoSource(30.0, 0.05, 0.0, 100.0), 0.1, 0.02, 10)
    assert path_gain(session, 0.0, 30.0) == 0.0
    assert session.rho(30.0) == pytest.approx(0.005 / 6)
    assert path_gain(session, 2.0, 30.0) == pytest.approx(1.6653e-3, rel=1e-4)
    with pytest.raises(PathSelectionError):
        path_gain(session, 1.0, 0.0)


def test_multiplier_update():
    assert multiplier_update(np.array([0.5]), 0.1, np.array([1.0 - 2.0])).tolist() == pytest.approx([0.6])
    assert multiplier_update(np.array([0.05]), 0.1, np.array([1.0])).tolist() == [0.0]


# two sessions with two paths each; the first path of each shares relay 5
SHARED_PATHS = [[(0, 5, 2), (0, 6, 2)], [(10, 5, 12), (10, 7, 12)]]
SHARED_GAINS = np.array([1.0, 0.4, 0.9, 0.5])


def test_constraints_have_session_and_node_rows():
    W, labels = build_constraints(SHARED_PATHS)
    assert W.shape[1] == 4
    assert "session:0" in labels and "node:5" in labels
    both_first = np.array([1.0, 0.0, 1.0, 0.0])
    assert np.any(W @ both_first > 1.0)


def test_dual_selection_single_path():
    W, _ = build_constraints([[(0, 1)]])
    selection = dual_path_select([0.3], W)
    assert selection.y.tolist() == [1.0]
    assert selection.objective == pytest.approx(0.3)


def test_dual_selection_shared_relay():
    W, _ = build_constraints(SHARED_PATHS)
    selection = dual_path_select(SHARED_GAINS, W)
    assert selection.y.tolist() == [1.0, 0.0, 0.0, 1.0]
    assert selection.objective == pytest.approx(1.5)
    assert selection.iterations >= 1
    assert len(selection.trace) == selection.iterations + 1


def _relay_instance(rng):
    """Sessions 10l -> 10l+1 through distinct relays drawn from a shared pool."""
    paths = []
    for l in range(int(rng.integers(2, 4))):
        relays = rng.choice(np.arange(50, 55), size=int(rng.integers(1, 4)), replace=False)
        paths.append([(10 * l, int(r), 10 * l + 1) for r in sorted(relays)])
    W, _ = build_constraints(paths)
    F = rng.uniform(0.05, 1.0, size=W.shape[1])
    return F, W


def test_dual_selection_converges_on_random_relay_instances():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        F, W = _relay_instance(rng)
        best = float(F @ best_binary_selection(F, W))
        _, relaxed = lp_dual_multipliers(F, W)
        assert relaxed == pytest.approx(best, abs=1e-7)
        selection = dual_path_select(F, W)
        assert selection.converged
        assert selection.iterations < 10_000
        assert 0.0 <= selection.duality_gap <= 1e-6 * (1.0 + abs(best))
        assert selection.objective == pytest.approx(best, abs=1e-9)
        assert selection.rounding in ("tight", "response", "greedy")


# session 0 picks between relays 5 and 6; session 1 only has relay 5
RELAY_PATHS = [[(0, 5, 2), (0, 6, 2)], [(10, 5, 12)]]
RELAY_GAINS = np.array([1.0, 0.4, 0.9])


def test_lp_multipliers_price_the_relaxed_optimum():
    W, labels = build_constraints(RELAY_PATHS)
    assert len(labels) == 4
    e_star, value = lp_dual_multipliers(RELAY_GAINS, W)
    assert value == pytest.approx(1.3)
    assert np.all(e_star >= -1e-12)
    dual_value = np.maximum(RELAY_GAINS - W.T @ e_star, 0.0).sum() + e_star.sum()
    assert float(dual_value) == pytest.approx(1.3)


def test_polyak_steps_never_move_away_from_the_optimal_multipliers():
    W, _ = build_constraints(RELAY_PATHS)
    e_star, value = lp_dual_multipliers(RELAY_GAINS, W)
    selection = dual_path_select(RELAY_GAINS, W, step_rule="polyak", q_star=value)
    distances = [float(np.linalg.norm(e - e_star)) for e in selection.trace]
    assert all(later <= earlier + 1e-9 for earlier, later in zip(distances, distances[1:]))
    assert selection.converged
    assert selection.y.tolist() == [0.0, 1.0, 1.0]
    assert 0 < selection.broadcasts <= selection.iterations


def test_estimated_level_closes_the_duality_gap():
    W, _ = build_constraints(RELAY_PATHS)
    selection = dual_path_select(RELAY_GAINS, W)
    assert selection.converged
    assert selection.rounding == "tight"
    assert selection.y.tolist() == [0.0, 1.0, 1.0]
    assert selection.objective == pytest.approx(1.3)
    assert 0.0 <= selection.duality_gap <= 1e-6 * 2.3
    assert selection.broadcasts <= selection.iterations
    assert len(selection.trace) == selection.iterations + 1


def test_iteration_cap_leaves_the_selection_feasible():
    rng = np.random.default_rng(7)
    F, W = _relay_instance(rng)
    selection = dual_path_select(F, W, max_iter=1)
    assert selection.iterations <= 1
    assert np.all(W @ selection.y <= 1.0 + 1e-9)
    assert selection.duality_gap >= 0.0


def test_constraints_admit_several_paths_per_session():
    W, labels = build_constraints(SHARED_PATHS, xi=2)
    assert "class:0:0" in labels and "class:0:1" in labels
    assert np.all(W @ np.array([1.0, 1.0, 0.0, 0.0]) <= 1.0)
    assert np.any(W @ np.array([1.0, 1.0, 1.0, 1.0]) > 1.0)
    assert np.any(W @ np.array([1.0, 0.0, 1.0, 0.0]) > 1.0)


def test_paths_of_one_channel_class_exclude_each_other():
    W, _ = build_constraints([[(0, 5, 2), (0, 6, 2), (0, 7, 2)]], xi=2)
    assert np.any(W @ np.array([1.0, 0.0, 1.0]) > 1.0)
    assert np.all(W @ np.array([1.0, 1.0, 0.0]) <= 1.0)
    assert np.all(W @ np.array([0.0, 1.0, 1.0]) <= 1.0)
    with pytest.raises(PathSelectionError):
        build_constraints(SHARED_PATHS, xi=0)


def test_sequential_fixing_and_enumeration_agree_on_shared_relay():
    W, _ = build_constraints(SHARED_PATHS)
    y, rounds = sequential_fix_selection(SHARED_GAINS, W)
    assert float(SHARED_GAINS @ y) == pytest.approx(1.5)
    assert rounds >= 1
    assert float(SHARED_GAINS @ best_binary_selection(SHARED_GAINS, W)) == pytest.approx(1.5)


def test_dual_selection_rejects_bad_input():
    W, _ = build_constraints([[(0, 1)]])
    with pytest.raises(PathSelectionError):
        dual_path_select([0.3, 0.1], W)
    with pytest.raises(PathSelectionError):
        dual_path_select([0.3], W, step_rule="polyak")


def test_dual_settings_cap_iterations_by_slot_time():
    assert DualSettings().iteration_cap(0.02) == (10_000, False)
    assert DualSettings(iterations_per_ms=10.5).iteration_cap(0.02) == (10, True)


SMALL_EDGES = [(0, 1), (1, 2), (0, 4), (4, 2), (3, 4), (4, 5), (3, 1), (1, 5)]
SMALL_MEMBERSHIP = {0: 0, 1: 0, 2: 0, 3: 1, 4: 1, 5: 1}


def _small_instance():
    topo = _topology(SMALL_EDGES, SMALL_MEMBERSHIP)
    sessions = []
    for name, (source, dest) in (("first", (0, 2)), ("second", (3, 5))):
        session = _session(source, dest, name)
        sessions.append(session.with_paths(enumerate_paths(topo, session, 2.0)))
    avail = {key: {m: 0.1 + 0.05 * m for m in range(4)} for key in topo.links}
    return topo, sessions, avail


def test_dual_and_brute_force_reach_the_same_objective():
    topo, sessions, avail = _small_instance()
    q_prev = [30.0, 32.0]
    brute = brute_force_crv(sessions, avail, q_prev)
    assert brute.objective > 0
    assert dual_plan(sessions, avail, q_prev).objective == pytest.approx(brute.objective)
    assert centralized_sf(sessions, avail, q_prev).objective <= brute.objective + 1e-12


def test_plans_keep_sessions_node_disjoint():
    topo, sessions, avail = _small_instance()
    for plan in (
        dual_plan(sessions, avail, [30.0, 32.0]),
        centralized_sf(sessions, avail, [30.0, 32.0]),
        heuristic_plan(topo, sessions, avail, [30.0, 32.0]),
    ):
        nodes = [node for chosen in plan.chosen.values() for node in chosen.path]
        assert len(nodes) == len(set(nodes))


def test_brute_force_refuses_large_instances():
    _, sessions, avail = _small_instance()
    with pytest.raises(InstanceTooLargeError):
        brute_force_crv(sessions, avail, [30.0, 32.0], BruteForceCaps(sessions=1))
    with pytest.raises(InstanceTooLargeError):
        brute_force_crv(sessions, avail, [30.0, 32.0], BruteForceCaps(channels=3))


def test_epoch_config_rejects_unknown_scheme():
    with pytest.raises(SchemeError):
        EpochConfig(scheme="optimal")


def _epoch(ch, loss, gop_slots=5, scheme="dual", slot_s=0.02, **config):
    topo = _topology([(0, 1), (1, 2)], {0: 0, 1: 0, 2: 0}, channels=4, loss=loss)
    session = _session(0, 2, gop_slots=gop_slots, slot_s=slot_s)
    session = session.with_paths(enumerate_paths(topo, session, 2.0))
    keys = [(0, m) for m in range(4)]
    bank = ChannelBank.create({key: ch for key in keys}, seed=9)
    sharp = {key: SensorProfile(1e-6, 1e-6) for key in keys}
    return run_epoch(
        bank,
        initial_beliefs(bank.channels),
        topo,
        [session],
        {key: 0.2 for key in keys},
        sharp,
        {key: 1 for key in keys},
        RandomStreams.from_seed(9),
        EpochConfig(scheme=scheme, **config),
    ), session


@pytest.mark.parametrize("scheme", ["dual", "sf", "heuristic", "brute"])
def test_lossless_idle_relay_delivers_every_tunnel(scheme):
    outcome, session = _epoch(MarkovChannel(lam=1.0, mu=0.5), 0.0, scheme=scheme)
    # four channels over two hops leave two relay-safe tunnels
    assert outcome.delivered_kb == (5 * 2 * 100.0,)
    assert outcome.transmissions == 10
    assert outcome.collision_rate == 0.0
    rate = min(1000.0 / (5 * 0.02), VIDEO.r_enh_max)
    assert outcome.psnr_db[0] == pytest.approx(VIDEO.q_base + VIDEO.beta * rate)


def test_fully_occupied_channels_deliver_nothing():
    outcome, _ = _epoch(MarkovChannel(lam=0.0, mu=0.0), 0.0)
    assert outcome.delivered_kb == (0.0,)
    assert outcome.transmissions == 0
    assert outcome.psnr_db[0] == pytest.approx(VIDEO.q_base)


def test_epoch_is_deterministic():
    ch = MarkovChannel.from_utilization(0.4, 0.5)
    first, _ = _epoch(ch, 0.2, gop_slots=8)
    second, _ = _epoch(ch, 0.2, gop_slots=8)
    assert first.delivered_kb == second.delivered_kb
    assert np.array_equal(first.states, second.states)
    assert first.utility == pytest.approx(math.log(first.psnr_db[0]))


@pytest.mark.parametrize("slot_s, cap", [(0.02, 1), (0.2, 10)])
def test_slot_length_sets_the_dual_iteration_budget(slot_s, cap):
    idle = MarkovChannel(lam=1.0, mu=0.5)
    with patch("crvideo.services.multihop_planner.dual_path_select", wraps=dual_path_select) as spy:
        outcome, _ = _epoch(idle, 0.1, slot_s=slot_s, dual=DualSettings(iterations_per_ms=1.0))
    assert spy.call_count == 5
    assert {call.kwargs["max_iter"] for call in spy.call_args_list} == {cap}
    assert outcome.iterations <= cap


@pytest.mark.parametrize("scheme", ["dual", "sf", "heuristic", "brute"])
def test_epoch_validation_accepts_generated_plans(scheme):
    outcome, _ = _epoch(MarkovChannel(lam=1.0, mu=0.5), 0.0, scheme=scheme, validate=True)
    assert outcome.delivered_kb == (5 * 2 * 100.0,)


def test_epoch_validation_rejects_a_broken_plan():
    broken = SessionPlan(
        chosen={(0, 0): PathPlan(0, 0, (0, 2), ChannelSchedule(((0,),), (0.0,)), 0.1)},
        objective=0.1,
    )
    with patch("crvideo.services.multihop_planner.plan_slot", return_value=broken):
        with pytest.raises(PathSelectionError, match="does not exist"):
            _epoch(MarkovChannel(lam=1.0, mu=0.5), 0.0, validate=True)


def test_epoch_config_rejects_a_zero_path_limit():
    with pytest.raises(SchemeError):
        EpochConfig(xi=0)


def _diamond():
    topo = _topology([(0, 1), (1, 2), (0, 4), (4, 2)], {0: 0, 1: 0, 2: 0, 4: 0}, loss=0.1)
    session = _session(0, 2)
    sessions = [session.with_paths(enumerate_paths(topo, session, 2.0))]
    avail = {key: {m: 0.1 for m in range(4)} for key in topo.links}
    return topo, sessions, avail


@pytest.mark.parametrize("planner", [dual_plan, centralized_sf, brute_force_crv])
def test_a_session_uses_several_paths_when_allowed(planner):
    topo, sessions, avail = _diamond()
    plan = planner(sessions, avail, [30.0], xi=2)
    assert sorted(plan.chosen) == [(0, 0), (0, 1)]
    for (_, h), chosen in plan.chosen.items():
        # each path keeps to its own channel class at the shared endpoints
        assert all(tunnel[0] % 2 == h % 2 and tunnel[-1] % 2 == h % 2 for tunnel in chosen.schedule.tunnels)
    assert validate_plan(plan, topo, sessions, avail, xi=2) == []
    assert any("exceed the limit of 1" in p for p in validate_plan(plan, topo, sessions, avail))


def test_single_path_limit_still_picks_one_path():
    _, sessions, avail = _diamond()
    assert len(dual_plan(sessions, avail, [30.0]).chosen) == 1
