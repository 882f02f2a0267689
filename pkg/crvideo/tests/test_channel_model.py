import numpy as np
import pytest

from crvideo.services.channel_model import (
    BUSY,
    IDLE,
    ChannelBank,
    MarkovChannel,
    derive_stream,
    step,
    trajectory,
    utilization,
)
from crvideo.services.errors import ChannelModelError


@pytest.mark.parametrize(
    "lam, mu, eta",
    [(0.8, 0.2, 0.5), (1.0, 0.5, 0.0), (0.6, 0.2, 0.4 / 0.6)],
)
def test_utilization_from_transition_probabilities(lam, mu, eta):
    assert utilization(MarkovChannel(lam=lam, mu=mu)) == pytest.approx(eta)


def test_utilization_of_a_frozen_idle_chain_is_zero():
    assert utilization(MarkovChannel(lam=1.0, mu=0.0)) == 0.0


def test_from_utilization_round_trips_eta_and_correlation():
    ch = MarkovChannel.from_utilization(0.6, 0.5)
    assert ch.lam == pytest.approx(0.7)
    assert ch.mu == pytest.approx(0.2)
    assert ch.correlation == pytest.approx(0.5)
    assert utilization(ch) == pytest.approx(0.6)


def test_rejects_probabilities_outside_unit_interval():
    with pytest.raises(ChannelModelError):
        MarkovChannel(lam=1.2, mu=0.1)
    with pytest.raises(ChannelModelError):
        MarkovChannel(lam=0.5, mu=0.5, state=2)
    with pytest.raises(ChannelModelError):
        MarkovChannel.from_utilization(0.5, 1.0)


def test_negative_seed_is_rejected():
    with pytest.raises(ChannelModelError):
        derive_stream(-1, 0)


def _single(ch):
    key = (0, 0)
    return ChannelBank(channels={key: ch}, streams={key: np.random.default_rng(0)})


def test_idle_channel_with_lambda_one_stays_idle():
    bank = _single(MarkovChannel(lam=1.0, mu=0.3, state=IDLE))
    for _ in range(50):
        bank = step(bank)
        assert bank.is_idle((0, 0))


def test_busy_channel_with_mu_one_turns_idle():
    bank = step(_single(MarkovChannel(lam=0.5, mu=1.0, state=BUSY)))
    assert bank.channels[(0, 0)].state == IDLE


def test_step_leaves_input_bank_untouched():
    bank = ChannelBank.create({(0, 0): MarkovChannel(0.5, 0.5), (0, 1): MarkovChannel(0.5, 0.5)}, seed=4)
    before = bank.states().copy()
    after = step(bank)
    assert np.array_equal(bank.states(), before)
    assert bank.slot == 0
    assert after.slot == 1


def test_same_seed_gives_same_occupancy():
    params = {(0, m): MarkovChannel.from_utilization(0.5, 0.5) for m in range(4)}
    first, second = ChannelBank.create(params, seed=7), ChannelBank.create(params, seed=7)
    for _ in range(100):
        first, second = step(first), step(second)
        assert np.array_equal(first.states(), second.states())


def test_adding_a_channel_keeps_existing_trajectories():
    ch = MarkovChannel.from_utilization(0.5, 0.5)
    small = ChannelBank.create({(0, 0): ch, (0, 1): ch}, seed=11)
    large = ChannelBank.create({(0, 0): ch, (0, 1): ch, (0, 2): ch}, seed=11)
    for _ in range(100):
        small, large = step(small), step(large)
        assert np.array_equal(small.states(), large.states()[:2])


def test_trajectory_long_run_busy_fraction():
    ch = MarkovChannel(lam=0.8, mu=0.2)
    states = trajectory(ch, 1_000_000, np.random.default_rng(5))
    assert abs(states.mean() - 0.5) < 0.01


def test_trajectory_matches_utilization_for_random_chains():
    rng = np.random.default_rng(2024)
    for _ in range(20):
        lam, mu = rng.uniform(0.05, 0.95, size=2)
        ch = MarkovChannel(lam=float(lam), mu=float(mu))
        states = trajectory(ch, 1_000_000, rng)
        assert abs(states.mean() - utilization(ch)) < 0.01


def test_trajectory_of_absorbing_idle_chain():
    states = trajectory(MarkovChannel(lam=1.0, mu=0.0), 1000, np.random.default_rng(1))
    assert states.shape == (1000,)
    assert not states.any()


def test_stepped_bank_is_stationary():
    ch = MarkovChannel.from_utilization(0.6, 0.5)
    bank = ChannelBank.create({(0, m): ch for m in range(10)}, seed=3)
    busy = 0
    slots = 5000
    for _ in range(slots):
        bank = step(bank)
        busy += int(bank.states().sum())
    assert busy / (slots * 10) == pytest.approx(0.6, abs=0.02)
