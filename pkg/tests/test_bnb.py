import math

import numpy as np
import pytest

from uvplan.bnb import Cut, Limits, MipProblem, branch_select, mip_gap, solve_mip
from uvplan.lp import GE, INFEASIBLE, LE, OPTIMAL, UNBOUNDED, LinearProgram

from oracles import binary_enumeration


def binary_problem(c, A, senses, b, maximize=True):
    n = len(c)
    lp = LinearProgram(c=c, A=np.asarray(A, float).reshape(len(b), n), senses=senses, b=b,
                       lb=np.zeros(n), ub=np.ones(n), maximize=maximize)
    return MipProblem(lp, np.ones(n, dtype=bool))


@pytest.mark.parametrize("engine", ["simplex", "highs"])
def test_knapsack(engine):
    p = binary_problem([8, 11], [[5, 7]], [LE], [9])
    res = solve_mip(p, engine=engine)
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(11)
    np.testing.assert_allclose(res.x, [0, 1])


@pytest.mark.parametrize("values,expected", [((0.5, 0.9), 0), ((0.3, 0.7), 0), ((1.0, 0.2), 1)])
def test_branch_select(values, expected):
    assert branch_select(values) == expected


def test_branch_select_respects_mask_and_requires_fraction():
    assert branch_select([0.5, 0.5], mask=[False, True]) == 1
    with pytest.raises(ValueError):
        branch_select([1.0, 0.0])


def _random_binary(rng):
    n = int(rng.integers(4, 15))
    m = int(rng.integers(1, 5))
    A = rng.integers(-3, 10, size=(m, n)).astype(float)
    b = rng.uniform(0.3, 0.6) * np.abs(A).sum(axis=1)
    senses = [LE] * m
    if rng.random() < 0.3:
        A = np.vstack([A, np.ones(n)])
        b = np.append(b, rng.integers(1, 4))
        senses.append(GE)
    c = rng.integers(-5, 20, size=n).astype(float)
    return c, A, senses, b, bool(rng.random() < 0.7)


@pytest.mark.parametrize("seed", range(30))
def test_random_binary_programs_match_enumeration(seed):
    rng = np.random.default_rng(seed)
    c, A, senses, b, maximize = _random_binary(rng)
    expected = binary_enumeration(c, A, senses, b, maximize)
    res = solve_mip(binary_problem(c, A, senses, b, maximize))
    if expected is None:
        assert res.status == INFEASIBLE
    else:
        assert res.status == OPTIMAL
        assert res.objective == pytest.approx(expected, abs=1e-6)
        stats = res.stats
        inc = [h[1] for h in stats.history if not math.isnan(h[1])]
        bounds = [h[2] for h in stats.history]
        sgn = 1 if maximize else -1
        assert all(sgn * (b2 - b1) <= 1e-7 for b1, b2 in zip(bounds, bounds[1:]))
        assert all(sgn * (i2 - i1) >= -1e-7 for i1, i2 in zip(inc, inc[1:]))


@pytest.mark.parametrize("seed", range(5))
def test_bundled_simplex_engine_matches_enumeration(seed):
    rng = np.random.default_rng(100 + seed)
    c, A, senses, b, maximize = _random_binary(rng)
    expected = binary_enumeration(c, A, senses, b, maximize)
    res = solve_mip(binary_problem(c, A, senses, b, maximize), engine="simplex")
    if expected is None:
        assert res.status == INFEASIBLE
    else:
        assert res.objective == pytest.approx(expected, abs=1e-6)


def test_callback_cuts_are_respected():
    # max sum x over 6 binaries; callback forbids more than 2 ones, one cut at a time
    n = 6
    p = binary_problem(np.arange(1, n + 1, dtype=float), np.zeros((1, n)), [LE], [0.0])
    seen = []

    def cb(x):
        seen.append(x.copy())
        ones = np.nonzero(x > 0.5)[0]
        if len(ones) > 2:
            return [Cut.from_dict({int(j): 1.0 for j in ones}, LE, 2.0, kind="pairs")]
        return []

    res = solve_mip(p, cb)
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(11)  # items 5 and 6
    for cut in res.cuts:
        assert cut.violation(res.x) <= 1e-9
    assert res.stats.cuts["pairs"] >= 1
    assert all(np.all(np.abs(s - np.round(s)) < 1e-9) for s in seen)


def test_non_violated_callback_cuts_are_ignored():
    p = binary_problem([1.0, 1.0], [[1, 1]], [LE], [2])

    def cb(x):
        return [Cut.from_dict({0: 1.0}, LE, 5.0)]

    res = solve_mip(p, cb)
    assert res.objective == pytest.approx(2)
    assert not res.cuts


def test_infeasible_and_unbounded():
    p = binary_problem([1, 1], [[1, 1]], [GE], [3])
    assert solve_mip(p).status == INFEASIBLE
    lp = LinearProgram(c=[1, 1], A=[[1, 0]], senses=[LE], b=[1], lb=[0, 0], ub=[1, np.inf], maximize=True)
    res = solve_mip(MipProblem(lp, [True, False]))
    assert res.status == UNBOUNDED


def test_node_limit_reports_honest_gap():
    rng = np.random.default_rng(0)
    n = 25
    w = rng.integers(10, 40, size=n)
    v = w + rng.integers(0, 5, size=n)
    p = binary_problem(v.astype(float), [w], [LE], [w.sum() / 2 + 0.5])
    res = solve_mip(p, limits=Limits(nodes=3))
    assert res.status == "node_limit"
    st = res.stats
    if res.has_incumbent:
        assert st.best_bound >= st.incumbent - 1e-9
        assert st.gap == pytest.approx(mip_gap(st.incumbent, st.best_bound))


def test_mip_gap_formula():
    assert mip_gap(90, 100) == pytest.approx(0.1)
    assert mip_gap(0, 0) == 0
    assert mip_gap(-math.inf, 1) == math.inf


def test_progress_lines():
    lines = []
    p = binary_problem([8, 11, 6, 4], [[5, 7, 4, 3]], [LE], [14])
    solve_mip(p, progress=lines.append, progress_every=1)
    assert lines and {"nodes", "incumbent", "bound", "gap"} <= set(lines[-1])
