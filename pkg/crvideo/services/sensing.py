from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np
from scipy.stats import binom

from .channel_model import BUSY, IDLE, ChannelBank, ChannelKey, MarkovChannel, step, utilization
from .errors import SensingError

logger = logging.getLogger(__name__)

# kappa may sit one ulp above a posterior of 1.0 to deny access outright
_KAPPA_CEILING = float(np.nextafter(1.0, 2.0))


@dataclass(frozen=True)
class SensorProfile:
    epsilon: float  # false alarm
    delta: float  # miss detection

    def __post_init__(self) -> None:
        for name in ("epsilon", "delta"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise SensingError(f"{name} must lie strictly between 0 and 1, got {value}")

    @property
    def idle_ratio(self) -> float:
        """Likelihood ratio busy/idle of one idle vote."""
        return self.delta / (1.0 - self.epsilon)

    @property
    def busy_ratio(self) -> float:
        """Likelihood ratio busy/idle of one busy vote."""
        return (1.0 - self.delta) / self.epsilon


@dataclass(frozen=True)
class BeliefState:
    a: Dict[ChannelKey, float]
    prior: Dict[ChannelKey, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for key, value in list(self.a.items()) + list(self.prior.items()):
            if not 0.0 <= value <= 1.0:
                raise SensingError(f"belief for channel {key} must lie in [0, 1], got {value}")

    def __getitem__(self, key: ChannelKey) -> float:
        return self.a[key]


def initial_beliefs(channels: Mapping[ChannelKey, MarkovChannel]) -> BeliefState:
    """Stationary idle probability 1 - eta for every channel."""
    a = {key: 1.0 - utilization(ch) for key, ch in sorted(channels.items())}
    return BeliefState(a=a, prior=dict(a))


@dataclass(frozen=True)
class SensingReport:
    observers: Dict[ChannelKey, int]
    idle_votes: Dict[ChannelKey, int]
    # per-user observation, 0 = idle, 1 = busy
    raw: Dict[ChannelKey, Tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for key, votes in self.idle_votes.items():
            count = self.observers.get(key, 0)
            if not 0 <= votes <= count:
                raise SensingError(f"channel {key}: {votes} idle votes from {count} observers")


@dataclass(frozen=True)
class AccessPolicy:
    gamma: Dict[ChannelKey, float]
    kappa: Dict[ChannelKey, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for key, value in self.gamma.items():
            if not 0.0 < value < 1.0:
                raise SensingError(f"gamma for channel {key} must lie strictly between 0 and 1, got {value}")
        for key, value in self.kappa.items():
            if not 0.0 <= value <= _KAPPA_CEILING:
                raise SensingError(f"kappa for channel {key} must lie in [0, 1], got {value}")

    def with_kappa(self, kappa: Mapping[ChannelKey, float]) -> "AccessPolicy":
        return replace(self, kappa=dict(kappa))


def history_prior(a_prev: float, ch: MarkovChannel) -> float:
    return ch.lam * a_prev + ch.mu * (1.0 - a_prev)


def posterior(prior: float, observers: int, idle_votes: int, profile: SensorProfile) -> float:
    """Idle probability after ``observers`` votes, ``idle_votes`` of them idle."""
    if not 0 <= idle_votes <= observers:
        raise SensingError(f"{idle_votes} idle votes from {observers} observers")
    if prior <= 0.0:
        return 0.0
    ratio = profile.idle_ratio ** idle_votes * profile.busy_ratio ** (observers - idle_votes)
    return prior / (prior + ratio * (1.0 - prior))


def _posteriors(prior: float, observers: int, profile: SensorProfile) -> np.ndarray:
    # same scalar path as update_belief so threshold ties compare exactly
    return np.array([posterior(prior, observers, i, profile) for i in range(observers + 1)])


def update_belief(
    prior: BeliefState,
    report: SensingReport,
    profiles: Mapping[ChannelKey, SensorProfile],
    channels: Mapping[ChannelKey, MarkovChannel],
) -> BeliefState:
    a: Dict[ChannelKey, float] = {}
    priors: Dict[ChannelKey, float] = {}
    for key, a_prev in prior.a.items():
        p0 = history_prior(a_prev, channels[key])
        priors[key] = p0
        a[key] = posterior(p0, report.observers.get(key, 0), report.idle_votes.get(key, 0), profiles[key])
    return BeliefState(a=a, prior=priors)


def sense(
    bank: ChannelBank,
    observers: Mapping[ChannelKey, int],
    profiles: Mapping[ChannelKey, SensorProfile],
    rng: np.random.Generator,
) -> SensingReport:
    """Draw one vote per observer; votes are independent given the true state."""
    counts: Dict[ChannelKey, int] = {}
    idle: Dict[ChannelKey, int] = {}
    raw: Dict[ChannelKey, Tuple[int, ...]] = {}
    for key in sorted(observers):
        n = int(observers[key])
        profile = profiles[key]
        p_idle_vote = 1.0 - profile.epsilon if bank.channels[key].state == IDLE else profile.delta
        votes_idle = rng.random(n) < p_idle_vote
        counts[key] = n
        idle[key] = int(votes_idle.sum())
        raw[key] = tuple(int(not v) for v in votes_idle)
    return SensingReport(observers=counts, idle_votes=idle, raw=raw)


def predict_belief(a: float, ch: MarkovChannel, tau: int) -> float:
    if tau < 0:
        raise SensingError(f"prediction horizon must be nonnegative, got {tau}")
    if tau == 0:
        return a
    d = ch.lam - ch.mu
    if d == 1.0:
        return a
    d_tau = d ** tau
    return d_tau * a + ch.mu * (1.0 - d_tau) / (1.0 - d)


def predicted_sum(a: float, ch: MarkovChannel, t_min: int) -> float:
    """Sum of predictions for tau = 0..t_min."""
    return float(sum(predict_belief(a, ch, tau) for tau in range(t_min + 1)))


def tx_probability(a: float, gamma: float) -> float:
    if a >= 1.0:
        return 1.0
    return min(1.0, gamma / (1.0 - a))


@lru_cache(maxsize=256)
def _miss_weights(observers: int, delta: float) -> np.ndarray:
    # P(i idle votes | busy) for i = 0..observers
    return binom.pmf(np.arange(observers + 1), observers, delta)


def collision_probability(kappa: float, observers: int, profile: SensorProfile, prior: float) -> float:
    if observers < 1:
        raise SensingError("collision probability needs at least one observer")
    accessed = _posteriors(prior, observers, profile) >= kappa
    return float(_miss_weights(observers, profile.delta)[accessed].sum())


def solve_threshold(gamma: float, observers: int, profile: SensorProfile, prior: float) -> float:
    """Smallest achievable posterior whose access set keeps collisions within gamma."""
    if gamma >= 1.0 or prior >= 1.0:
        return 0.0
    if observers < 1:
        # no evidence: the posterior never clears a positive threshold
        return _KAPPA_CEILING
    posts = _posteriors(prior, observers, profile)
    weights = _miss_weights(observers, profile.delta)
    candidates = sorted(set(posts.tolist()))
    for kappa in candidates:
        if float(weights[posts >= kappa].sum()) <= gamma:
            return float(kappa)
    return float(np.nextafter(candidates[-1], 2.0))


def available_channels(
    beliefs: BeliefState,
    policy: AccessPolicy,
    link: Tuple[int, int],
    membership: Mapping[int, int],
    channels: Iterable[int],
) -> List[int]:
    networks = {membership[link[0]], membership[link[1]]}
    return [
        m
        for m in sorted(channels)
        if all(beliefs.a[(k, m)] >= policy.kappa.get((k, m), 0.0) for k in networks)
    ]


def apply_feedback(beliefs: BeliefState, observed: Mapping[ChannelKey, int]) -> BeliefState:
    """Replace beliefs with certainty for channels whose state a transmission revealed."""
    if not observed:
        return beliefs
    a = dict(beliefs.a)
    for key, state in observed.items():
        a[key] = 1.0 if state == IDLE else 0.0
    return replace(beliefs, a=a)


def collision_audit(
    bank: ChannelBank,
    profiles: Mapping[ChannelKey, SensorProfile],
    policy: AccessPolicy,
    n_slots: int,
    rng: np.random.Generator,
    beliefs: Optional[BeliefState] = None,
) -> Dict[ChannelKey, float]:
    """Per-channel fraction of slots in which probabilistic access hit a busy channel.

    One sensing entity per channel, as at a base station. Accessed channels
    reveal their state to the next slot's belief.
    """
    keys = bank.keys()
    observers = {key: 1 for key in keys}
    beliefs = beliefs or initial_beliefs(bank.channels)
    collisions = dict.fromkeys(keys, 0)
    for _ in range(n_slots):
        bank = step(bank)
        report = sense(bank, observers, profiles, rng)
        beliefs = update_belief(beliefs, report, profiles, bank.channels)
        draws = rng.random(len(keys))
        observed: Dict[ChannelKey, int] = {}
        for key, draw in zip(keys, draws):
            if draw <= tx_probability(beliefs.a[key], policy.gamma[key]):
                state = bank.channels[key].state
                observed[key] = state
                if state == BUSY:
                    collisions[key] += 1
        beliefs = apply_feedback(beliefs, observed)
    rates = {key: collisions[key] / n_slots for key in keys} if n_slots else dict.fromkeys(keys, 0.0)
    logger.debug("collision audit over %d slots: max rate %.4f", n_slots, max(rates.values(), default=0.0))
    return rates
