import math

import numpy as np
import pytest

from crvideo.services.errors import LinearProgramError
from crvideo.services.lp_core import INFEASIBLE, OPTIMAL, UNBOUNDED, LinearProgram, log_envelope, solve_lp
from crvideo.tests.oracles import lp_vertex_optimum


def test_single_variable_with_bound_and_row():
    lp = LinearProgram(np.array([1.0]), [], [(0.0, 10.0)])
    lp.add_constraint([1.0], "<=", 3.0)
    result = solve_lp(lp)
    assert result.status == OPTIMAL
    assert result.x[0] == pytest.approx(3.0)
    assert result.objective == pytest.approx(3.0)


def test_degenerate_tie_reaches_the_optimal_value():
    lp = LinearProgram(np.array([1.0, 1.0]))
    lp.add_constraint([1.0, 1.0], "<=", 1.0)
    assert solve_lp(lp).objective == pytest.approx(1.0)


def test_two_variable_textbook_problem():
    lp = LinearProgram(np.array([3.0, 2.0]))
    lp.add_constraint([1.0, 1.0], "<=", 4.0)
    lp.add_constraint([1.0, 3.0], "<=", 6.0)
    lp.add_constraint([1.0, 0.0], "<=", 3.0)
    result = solve_lp(lp)
    assert result.x.tolist() == pytest.approx([3.0, 1.0])
    assert result.objective == pytest.approx(11.0)


def test_equality_and_greater_equal_rows():
    lp = LinearProgram(np.array([1.0, 1.0]))
    lp.add_constraint([1.0, 1.0], "=", 2.0)
    lp.add_constraint([1.0, -1.0], "=", 0.0)
    lp.add_constraint([1.0, 0.0], ">=", 0.5)
    result = solve_lp(lp)
    assert result.x.tolist() == pytest.approx([1.0, 1.0])


def test_lower_bounds_are_respected():
    result = solve_lp(LinearProgram(np.array([-1.0]), [], [(1.0, 5.0)]))
    assert result.x[0] == pytest.approx(1.0)


def test_infeasible_problem():
    lp = LinearProgram(np.array([1.0]))
    lp.add_constraint([1.0], ">=", 2.0)
    lp.add_constraint([1.0], "<=", 1.0)
    assert solve_lp(lp).status == INFEASIBLE


def test_unbounded_problem():
    lp = LinearProgram(np.array([1.0, 1.0]))
    lp.add_constraint([1.0, -1.0], "<=", 1.0)
    assert solve_lp(lp).status == UNBOUNDED
    assert solve_lp(LinearProgram(np.array([1.0]))).status == UNBOUNDED


def test_rejects_malformed_problems():
    with pytest.raises(LinearProgramError):
        LinearProgram(np.array([1.0]), [], [(2.0, 1.0)])
    with pytest.raises(LinearProgramError):
        LinearProgram(np.array([1.0]), [], [(-math.inf, 1.0)])
    lp = LinearProgram(np.array([1.0, 1.0]))
    with pytest.raises(LinearProgramError):
        lp.add_constraint([1.0], "<=", 1.0)
    with pytest.raises(LinearProgramError):
        lp.add_constraint([1.0, 1.0], "<", 1.0)


def test_random_problems_match_vertex_enumeration():
    rng = np.random.default_rng(17)
    for _ in range(20):
        n, m = rng.integers(2, 7, size=2)
        c = rng.uniform(-1.0, 3.0, size=n)
        A = rng.uniform(0.1, 2.0, size=(m, n))
        b = rng.uniform(1.0, 5.0, size=m)
        lp = LinearProgram(c)
        for row, rhs in zip(A, b):
            lp.add_constraint(row, "<=", rhs)
        result = solve_lp(lp)
        assert result.status == OPTIMAL
        assert result.objective == pytest.approx(lp_vertex_optimum(c, A, b), abs=1e-6)


def test_solve_is_deterministic():
    lp = LinearProgram(np.array([1.0, 1.0, 1.0]))
    lp.add_constraint([1.0, 1.0, 1.0], "<=", 1.0)
    first, second = solve_lp(lp), solve_lp(lp)
    assert first.x.tolist() == second.x.tolist()


def test_envelope_touches_log_at_the_upper_end():
    envelope = log_envelope(1.0, math.e, 4)
    assert envelope.evaluate(math.e) == pytest.approx(1.0)


def test_envelope_gap_shrinks_with_more_tangents():
    grid = np.linspace(1.0, math.e, 2001)
    gaps = []
    for n in (2, 4, 8, 16):
        gap = log_envelope(1.0, math.e, n).evaluate(grid) - np.log(grid)
        assert gap.min() >= -1e-12
        gaps.append(gap.max())
    assert all(later < earlier for earlier, later in zip(gaps, gaps[1:]))


def test_envelope_rejects_bad_intervals():
    with pytest.raises(LinearProgramError):
        log_envelope(0.0, 1.0)
    with pytest.raises(LinearProgramError):
        log_envelope(1.0, 2.0, 1)
