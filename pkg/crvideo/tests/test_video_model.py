import math

import numpy as np
import pytest

from crvideo.services.errors import BaseLayerMissingError, VideoModelError
from crvideo.services.video_model import (
    MulticastGroup,
    TileAllocation,
    VideoSource,
    group_utility,
    inc,
    marginal_gains,
    marginal_losses,
    psnr,
    session_utility,
    system_utility,
)


def _group(audience=(2, 1), payload=(1.0, 2.0), q_base=30.0, beta=1.0, r_enh_max=10.0):
    return MulticastGroup(VideoSource(q_base, beta, 0.0, r_enh_max), tuple(audience), tuple(payload))


def test_psnr_is_linear_in_rate():
    source = VideoSource(q_base=30.0, beta=0.05, r_base=100.0, r_enh_max=500.0)
    assert psnr(source, 300.0) == pytest.approx(40.0)
    assert psnr(source, 100.0) == pytest.approx(30.0)
    assert psnr(VideoSource(30.0, 1.0, 0.0, 5.0), 2.0) == pytest.approx(32.0)


def test_psnr_below_base_layer_is_undefined():
    source = VideoSource(q_base=30.0, beta=0.05, r_base=100.0, r_enh_max=500.0)
    with pytest.raises(BaseLayerMissingError):
        psnr(source, 99.0)


def test_session_utility_is_log_psnr():
    source = VideoSource(q_base=30.0, beta=0.05, r_base=100.0, r_enh_max=500.0)
    assert session_utility(source, 300.0) == pytest.approx(3.6889, abs=1e-4)
    assert session_utility(VideoSource(math.e, 1.0, 0.0, 1.0), 0.0) == pytest.approx(1.0)


def test_video_source_rejects_nonpositive_slope():
    with pytest.raises(VideoModelError):
        VideoSource(q_base=30.0, beta=0.0, r_base=0.0, r_enh_max=1.0)


def test_group_validates_audience_and_payload():
    with pytest.raises(VideoModelError):
        _group(audience=(1, 2))
    with pytest.raises(VideoModelError):
        _group(payload=(2.0, 1.0))
    with pytest.raises(VideoModelError):
        _group(audience=(3, 2, 1))


def test_weights_count_users_per_best_scheme():
    assert _group(audience=(10, 6, 3), payload=(1.0, 2.0, 3.0)).weights.tolist() == [4.0, 3.0, 3.0]


def test_group_utility_without_tiles_telescopes():
    group = _group(audience=(10, 6, 3), payload=(1.0, 2.0, 3.0))
    assert group_utility(group, [0, 0, 0]) == pytest.approx(10 * math.log(30.0))


@pytest.mark.parametrize("tiles, expected", [([2, 0], 6.9315), ([1, 1], 6.9305)])
def test_group_utility_hand_values(tiles, expected):
    assert group_utility(_group(), tiles) == pytest.approx(expected, abs=1e-4)


def test_inc_first_tile():
    assert inc(_group(), [0, 0], 0, 1) == pytest.approx(2 * math.log(31 / 30), abs=1e-5)
    single = _group(audience=(1, 0), payload=(1.0, 2.0))
    assert inc(single, [0, 0], 0, 1) == pytest.approx(math.log(1 + 1 / 30))


def test_inc_is_the_exact_difference_on_layered_states():
    group = _group(audience=(5, 3, 2), payload=(1.0, 1.5, 3.0), beta=0.4)
    tiles = [3, 0, 0]
    for i in (1, 2, 3):
        before = tiles[:1] + [i - 1, 0]
        after = tiles[:1] + [i, 0]
        exact = group_utility(group, after) - group_utility(group, before)
        assert inc(group, before, 1, i) == pytest.approx(exact)
        assert inc(group, before, 1, i) >= 0


def _random_group(rng, layers):
    audience = tuple(int(v) for v in sorted(rng.integers(1, 30, size=layers), reverse=True))
    payload = tuple(float(v) for v in np.cumsum(rng.uniform(0.5, 3.0, size=layers)))
    return _group(audience=audience, payload=payload, q_base=float(rng.uniform(20.0, 40.0)), beta=float(rng.uniform(0.01, 2.0)))


def test_inc_matches_utility_difference_on_random_layered_states():
    rng = np.random.default_rng(17)
    for _ in range(100):
        layers = int(rng.integers(1, 5))
        group = _random_group(rng, layers)
        m = int(rng.integers(0, layers))
        i = int(rng.integers(1, 8))
        below = [int(v) for v in rng.integers(0, 6, size=m)]
        before = below + [i - 1] + [0] * (layers - m - 1)
        after = below + [i] + [0] * (layers - m - 1)
        exact = group_utility(group, after) - group_utility(group, before)
        assert inc(group, before, m, i) == pytest.approx(exact)


def test_inc_strictly_decreases_with_the_ordinal():
    rng = np.random.default_rng(18)
    for _ in range(50):
        layers = int(rng.integers(1, 5))
        group = _random_group(rng, layers)
        m = int(rng.integers(0, layers))
        tiles = [int(v) for v in rng.integers(0, 6, size=layers)]
        values = [inc(group, tiles, m, i) for i in range(1, 12)]
        assert all(later < earlier for earlier, later in zip(values, values[1:]))


def test_inc_rejects_zero_ordinal():
    with pytest.raises(VideoModelError):
        inc(_group(), [0, 0], 0, 0)


def test_marginal_gains_and_losses_match_utility_differences():
    group = _group(audience=(5, 3, 2), payload=(1.0, 1.5, 3.0), beta=0.4)
    tiles = np.array([2, 1, 0])
    gains = marginal_gains(group, tiles)
    losses = marginal_losses(group, tiles)
    base = group_utility(group, tiles)
    for m in range(3):
        up = tiles.copy()
        up[m] += 1
        assert gains[m] == pytest.approx(group_utility(group, up) - base)
        if tiles[m]:
            down = tiles.copy()
            down[m] -= 1
            assert losses[m] == pytest.approx(base - group_utility(group, down))
        else:
            assert losses[m] == math.inf


def test_tile_allocation_feasibility():
    groups = [_group(r_enh_max=4.0), _group(r_enh_max=10.0)]
    alloc = TileAllocation(np.array([[2, 1], [1, 0]]))
    assert alloc.total() == 4
    assert alloc.rate(0, groups[0]) == pytest.approx(4.0)
    assert alloc.feasible(groups, 4)
    assert not alloc.feasible(groups, 3)
    alloc.tiles[0, 1] += 1
    assert not alloc.feasible(groups, 10)


def test_tile_allocation_rejects_negative_counts():
    with pytest.raises(VideoModelError):
        TileAllocation(np.array([[1, -1]]))


def test_system_utility_sums_groups():
    groups = [_group(), _group(q_base=40.0)]
    alloc = TileAllocation(np.array([[2, 0], [0, 1]]))
    assert system_utility(groups, alloc) == pytest.approx(group_utility(groups[0], [2, 0]) + group_utility(groups[1], [0, 1]))
