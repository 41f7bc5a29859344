import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from misobb import bb, instance_io, model, oracle, pricing
from misobb.model import UtilitySpec
from misobb.oracle import GridSpec, OracleError

from conftest import complex_gaussian

COARSE = GridSpec(16, 16, refine_levels=6)


def test_unit_vectors_are_unit_and_real_first(rng):
    theta = rng.uniform(0, np.pi / 2, (50, 2))
    psi = rng.uniform(0, 2 * np.pi, (50, 2))
    v = oracle.unit_vectors(theta, psi)
    assert v.shape == (50, 3)
    np.testing.assert_allclose(np.linalg.norm(v, axis=1), 1.0, rtol=1e-14)
    assert np.all(v[:, 0].imag == 0) and np.all(v[:, 0].real >= 0)


@pytest.mark.parametrize("N", [1, 2, 3, 4])
def test_grid_single_user(rng, N):
    h = complex_gaussian(rng, 1, 1, N)
    inst, cons = model.make_bc(1, N, 1, h, 1.0, 2.0)
    spec = GridSpec(8 if N == 4 else 16, 16, refine_levels=10, refine_points=3 if N == 4 else 5)
    g = oracle.grid_search(inst, UtilitySpec(), cons, spec)
    exact = -np.log1p(2.0 * np.linalg.norm(h) ** 2)
    assert exact - 1e-12 <= g.cost <= exact + g.resolution_bound + 1e-9
    assert g.cost == pytest.approx(exact, abs=1e-4)


def test_grid_without_cross_channels_matches_closed_form(rng):
    chans = [np.zeros((2, 1, 2), complex) for _ in range(2)]
    for k in range(2):
        chans[k][k] = complex_gaussian(rng, 1, 2)
    inst, cons = model.make_ic(chans, np.ones((2, 1)), 1.5)
    util = UtilitySpec()
    g = oracle.grid_search(inst, util, cons, COARSE)
    _, ref = oracle.waterfilling_decoupled(inst, util, cons)
    assert ref - 1e-12 <= g.cost <= ref + g.resolution_bound + 1e-9


def test_grid_point_is_rank_one_and_feasible(ic2):
    inst, cons, util = ic2
    g = oracle.grid_search(inst, util, cons, COARSE)
    assert cons.is_feasible(g.Q)
    assert bb.rank_one_findings(g.Q) == []
    assert g.cost == pytest.approx(model.objective(inst, util, g.Q), abs=1e-12)
    assert g.n_evaluated >= COARSE.n_points(inst.N)


def test_exhaustive_grid_is_monotone_in_resolution(ic2):
    inst, cons, util = ic2
    costs = [oracle.grid_search(inst, util, cons, GridSpec(n, n, refine_levels=0)).cost
             for n in (8, 16, 32)]
    # each grid contains the previous one
    assert costs[0] >= costs[1] - 1e-12 >= costs[2] - 2e-12


def test_grid_sandwiches_bb(ic2):
    inst, cons, util = ic2
    res = bb.run_bb(inst, util, cons, eps=1e-4)
    g = oracle.grid_search(inst, util, cons, COARSE)
    assert res.L_final <= g.cost + 1e-6
    assert g.cost - g.resolution_bound <= res.U_final + 1e-6


def test_grid_scope_and_size_limits(rng):
    inst, cons = instance_io.generate(0, 3, 1, 1, "IC")
    with pytest.raises(OracleError, match="K <= 2"):
        oracle.grid_search(inst, UtilitySpec(), cons)
    inst, cons = instance_io.generate(0, 2, 3, 1, "IC")
    with pytest.raises(OracleError):
        oracle.grid_search(inst, UtilitySpec(), cons)
    inst, cons = instance_io.generate(0, 2, 2, 1, "IC")
    with pytest.raises(OracleError, match="cap"):
        oracle.grid_search(inst, UtilitySpec(), cons, GridSpec(64, 64))
    with pytest.raises(ValueError):
        GridSpec(10, 16)
    with pytest.raises(ValueError):
        GridSpec(4, 16)
    with pytest.raises(ValueError):
        GridSpec(starts=0)


@pytest.mark.parametrize("w2", [1.0, 2.0])
def test_grid_pairs_backends_agree_with_brute_force(rng, w2):
    from misobb import _core
    A, B, C, R = 5, 4, 2, 8
    g = [rng.uniform(0.1, 2.0, n) for n in (A, A, B, B)]
    p1max, p2cap = rng.uniform(0.5, 2, A), rng.uniform(0.5, 2, (C, B))
    p2coef = rng.uniform(0, 1, (C, A, B))
    args = (*g, p1max, p2cap, p2coef, 1.0, 0.7, 1.0, w2, 0.0, R, 1e-12)
    rho = np.arange(R + 1) / R
    ref = np.full((A, B), np.inf)
    for a in range(A):
        for b in range(B):
            for r1 in rho:
                p1 = r1 * p1max[a]
                cap = max(min(p2cap[c, b] - p2coef[c, a, b] * p1 for c in range(C)), 0.0)
                for r2 in rho:
                    p2 = r2 * cap
                    f = -(np.log1p(p1 * g[0][a] / (1.0 + p2 * g[2][b]))
                          + w2 * np.log1p(p2 * g[3][b] / (0.7 + p1 * g[1][a])))
                    ref[a, b] = min(ref[a, b], f)
    backends = ["python"] + (["cython"] if _core._ext is not None else [])
    start = _core.BACKEND
    try:
        outs = []
        for name in backends:
            _core.use_backend(name)
            outs.append(_core.grid_pairs(*args))
    finally:
        _core.use_backend(start)
    for cost, i1, i2 in outs:
        np.testing.assert_allclose(cost, ref, rtol=1e-13, atol=1e-15)
        np.testing.assert_array_equal(i1, outs[0][1])
        np.testing.assert_array_equal(i2, outs[0][2])


def test_grid_restarts_escape_a_near_tied_basin():
    # the single best coarse point sits in a basin about 6e-3 nats worse
    inst, cons = instance_io.generate(216, 2, 2, 1, "IC")
    util = UtilitySpec()
    one = oracle.grid_search(inst, util, cons, GridSpec(starts=1))
    many = oracle.grid_search(inst, util, cons, GridSpec())
    assert many.cost < one.cost - 1e-3
    # a converged pricing run from zero prices reaches the same point
    pr = pricing.run_pricing(inst, util, cons, lam0=0.0)
    assert many.cost <= pr.cost + many.resolution_bound + 1e-9


# -- waterfilling -------------------------------------------------------------------


def test_waterfilling_two_channels():
    p = oracle.waterfilling([1.0, 4.0], [1.0, 1.0], 1.0)
    np.testing.assert_allclose(p, [0.125, 0.875], rtol=1e-12)
    # a budget below the threshold goes entirely to the strong channel
    np.testing.assert_allclose(oracle.waterfilling([1.0, 4.0], [1.0, 1.0], 0.5), [0.0, 0.5],
                               atol=1e-14)


def test_waterfilling_matches_one_dimensional_search():
    for budget in (0.3, 1.0, 7.0):
        f = lambda a: -(np.log1p(a) + np.log1p(4.0 * (budget - a)))
        a = minimize_scalar(f, bounds=(0, budget), method="bounded",
                            options={"xatol": 1e-12}).x
        p = oracle.waterfilling([1.0, 4.0], [1.0, 1.0], budget)
        assert p.sum() == pytest.approx(budget, rel=1e-12)
        assert -f(p[0]) >= -f(a) - 1e-12


@settings(max_examples=60, deadline=None)
@given(g=st.lists(st.floats(0.01, 100), min_size=1, max_size=6),
       w=st.floats(0.1, 5), budget=st.floats(0.0, 50))
def test_waterfilling_kkt(g, w, budget):
    g = np.array(g)
    wt = np.full(g.size, w)
    p = oracle.waterfilling(g, wt, budget)
    assert np.all(p >= 0)
    assert p.sum() == pytest.approx(budget, rel=1e-9, abs=1e-12)
    if budget > 0:
        # active channels share a common marginal utility, inactive ones lie below it
        marg = wt * g / (1 + g * p)
        on = p > 1e-9 * budget
        mu = marg[on].mean()
        np.testing.assert_allclose(marg[on], mu, rtol=1e-6)
        assert np.all(marg[~on] <= mu * (1 + 1e-6))


def test_waterfilling_decoupled_requirements(ic2, rng):
    inst, cons, util = ic2
    with pytest.raises(OracleError, match="cross"):
        oracle.waterfilling_decoupled(inst, util, cons)
    chans = [np.zeros((2, 1, 2), complex) for _ in range(2)]
    inst, cons = model.make_ic(chans, np.ones((2, 1)), 1.0)
    with pytest.raises(OracleError, match="alpha"):
        oracle.waterfilling_decoupled(inst, UtilitySpec(1.0), cons)


def test_waterfilling_decoupled_weighted_sum_power(rng):
    chans = [np.zeros((2, 2, 2), complex) for _ in range(2)]
    for k in range(2):
        chans[k][k] = complex_gaussian(rng, 2, 2)
    inst, _ = model.make_ic(chans, np.ones((2, 2)), 1.0)
    cons = model.sum_power(inst, 4.0)
    util = UtilitySpec(0.0, (1.0, 3.0))
    Q, cost = oracle.waterfilling_decoupled(inst, util, cons)
    assert cons.constraints[0].load(Q) == pytest.approx(4.0, rel=1e-12)
    assert cost == pytest.approx(bb.run_bb(inst, util, cons, eps=1e-7).cost, abs=1e-6)


# -- dirty paper coding -------------------------------------------------------------


def test_dpc_single_user(rng):
    h = complex_gaussian(rng, 1, 1, 4)
    inst, _ = model.make_bc(1, 4, 1, h, 0.5, 1.0)
    assert oracle.dpc_sum_capacity(inst, 3.0) == pytest.approx(
        np.log1p(3.0 * np.linalg.norm(h) ** 2 / 0.5), abs=1e-7)
    assert oracle.dpc_sum_capacity(inst, 0.0) == 0.0


def test_dpc_two_users_matches_line_search(rng):
    h = complex_gaussian(rng, 2, 1, 2)
    inst, _ = model.make_bc(2, 2, 1, h, 1.0, 1.0)
    H = [np.outer(h[k, 0].conj(), h[k, 0]) for k in range(2)]
    P = 5.0

    def neg(q1):
        return -np.linalg.slogdet(np.eye(2) + q1 * H[0] + (P - q1) * H[1])[1]

    ref = -minimize_scalar(neg, bounds=(0, P), method="bounded", options={"xatol": 1e-12}).fun
    val = oracle.dpc_sum_capacity(inst, P)
    assert val == pytest.approx(ref, abs=1e-7)
    assert val <= ref + 1e-9


def test_dpc_dominates_linear_precoding():
    inst, cons = instance_io.generate(5, 2, 2, 1, "BC", P=4.0)
    res = bb.run_bb(inst, UtilitySpec(), cons, eps=1e-3)
    assert oracle.dpc_sum_capacity(inst, 4.0) >= -res.L_final - 1e-7


def test_dpc_scope():
    inst, _ = instance_io.generate(0, 2, 2, 1, "IC")
    with pytest.raises(OracleError):
        oracle.dpc_sum_capacity(inst, 1.0)
