import numpy as np
import pytest

from misobb import _core
from misobb import convexcore as cc
from misobb import model
from misobb.model import UtilitySpec

from conftest import complex_gaussian, random_point


# -- independent first-order solver -------------------------------------------


def _project_budget(blocks, P):
    """Frobenius projection of a user's blocks onto {PSD, sum of traces <= P}."""
    ws, vs = zip(*(np.linalg.eigh(0.5 * (b + b.conj().T)) for b in blocks))
    lam = np.concatenate(ws)
    x = np.maximum(lam, 0.0)
    if x.sum() > P:
        # shift so the clipped eigenvalues sum to P
        lo, hi = 0.0, lam.max()
        for _ in range(200):
            mu = 0.5 * (lo + hi)
            if np.maximum(lam - mu, 0).sum() > P:
                lo = mu
            else:
                hi = mu
        x = np.maximum(lam - hi, 0.0)
    out, o = [], 0
    for w, v in zip(ws, vs):
        out.append((v * x[o:o + len(w)]) @ v.conj().T)
        o += len(w)
    return out


def projected_gradient(inst, util, P, i_fix, lam=None, iters=20000):
    """Accelerated projected gradient on per-user budgets ``P``."""
    K, L_C = inst.K, inst.L_C
    lam = np.zeros(inst.L) if lam is None else lam
    M = {(j, k, l): np.outer(inst.channels[j][k, l].conj(), inst.channels[j][k, l])
         for j in range(K) for k in range(K) for l in range(L_C)}

    def f(Q):
        return cc.subproblem_objective(
            cc.ConvexSubproblem(inst, util, model.per_user_power(inst, P), i_fix, lam), Q)

    def grad(Q):
        S = model.signal_powers(inst, Q)
        c = inst.noise + i_fix.reshape(K, L_C)
        r = np.log1p(S / c).sum(axis=1)
        d = util.w(K) * util.df(r)
        G = []
        for j in range(K):
            b = np.zeros((L_C, inst.N[j], inst.N[j]), complex)
            for l in range(L_C):
                b[l] = -d[j] * M[j, j, l] / (c[j, l] + S[j, l])
                for k in range(K):
                    if k != j:
                        b[l] += lam[inst.component(k, l)] * M[j, k, l]
            G.append(b)
        return G

    def proj(blocks):
        return model.CovariancePoint(tuple(np.stack(_project_budget(list(b), P)) for b in blocks))

    step = 1.0 / max(np.abs(m).max() for m in M.values()) ** 2
    x = proj([np.stack([np.eye(n) * P / (n * L_C)] * L_C).astype(complex) for n in inst.N])
    y, t = x, 1.0
    fx = f(x)
    for _ in range(iters):
        g = grad(y)
        while True:
            z = proj([yb - step * gb for yb, gb in zip(y.blocks, g)])
            d = [zb - yb for zb, yb in zip(z.blocks, y.blocks)]
            lin = sum(np.vdot(gb, db).real for gb, db in zip(g, d))
            quad = sum(np.vdot(db, db).real for db in d)
            if f(z) <= f(y) + lin + quad / (2 * step) + 1e-15:
                break
            step *= 0.5
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        fz = f(z)
        if fz > fx:  # restart
            y, t = x, 1.0
            continue
        y = model.CovariancePoint(tuple(zb + (t - 1) / t_new * (zb - xb)
                                        for zb, xb in zip(z.blocks, x.blocks)))
        if abs(fx - fz) < 1e-15:
            x, fx = z, fz
            break
        x, fx, t = z, fz, t_new
    return x, fx


# -- solve ---------------------------------------------------------------------


@pytest.mark.parametrize("N", [1, 2, 4])
def test_single_user_mrt(rng, N):
    h = complex_gaussian(rng, 1, 1, N)
    inst, cons = model.make_bc(1, N, 1, h, 0.7, 3.0)
    res = cc.solve(cc.ConvexSubproblem(inst, UtilitySpec(), cons, i_fix=[0.0]))
    assert res.status == cc.Status.OPTIMAL
    assert res.objective == pytest.approx(-np.log1p(3.0 * np.linalg.norm(h) ** 2 / 0.7), abs=1e-7)
    ev = np.linalg.eigvalsh(res.Q.blocks[0][0])
    assert ev[-1] == pytest.approx(3.0, rel=1e-6)
    assert res.lower_bound <= res.objective


def test_box_above_i_max_is_infeasible(ic2):
    inst, cons, util = ic2
    box = model.interference_box(inst, cons)
    lo = np.zeros(inst.L)
    lo[0] = box.i_max[0] * 1.01
    sub = cc.ConvexSubproblem(inst, util, cons, i_fix=lo, box_lo=lo, box_hi=lo + box.i_max)
    res = cc.solve(sub)
    assert res.status == cc.Status.INFEASIBLE and res.Q is None
    assert res.infeasibility > 0


@pytest.mark.parametrize("with_price", [False, True])
def test_matches_projected_gradient(ic2, with_price):
    inst, cons, util = ic2
    box = model.interference_box(inst, cons)
    lam = np.array([0.3, 0.8]) if with_price else None
    sub = cc.ConvexSubproblem(inst, util, cons, i_fix=np.zeros(inst.L), lam=lam,
                              box_lo=box.i_min, box_hi=box.i_max)
    res = cc.solve(sub)
    _, ref = projected_gradient(inst, util, 1.0, np.zeros(inst.L), lam)
    assert res.status == cc.Status.OPTIMAL
    assert res.objective == pytest.approx(ref, abs=1e-6)
    assert res.lower_bound <= ref + 1e-9  # the certificate is a valid lower bound


def test_alpha_fair_matches_projected_gradient(rng):
    inst, cons = model.make_ic([complex_gaussian(rng, 2, 2, 2) for _ in range(2)],
                               np.ones((2, 2)), 2.0)
    util = UtilitySpec(1.0, (1.0, 2.0))
    i_fix = np.array([0.2, 0.1, 0.4, 0.0])
    res = cc.solve(cc.ConvexSubproblem(inst, util, cons, i_fix=i_fix, lam=np.full(4, 0.1)))
    _, ref = projected_gradient(inst, util, 2.0, i_fix, np.full(4, 0.1))
    assert res.objective == pytest.approx(ref, abs=1e-6)


def test_optimality_certificates(ic2):
    inst, cons, util = ic2
    box = model.interference_box(inst, cons)
    sub = cc.ConvexSubproblem(inst, util, cons, i_fix=0.3 * box.i_max,
                              box_lo=0.3 * box.i_max, box_hi=0.6 * box.i_max)
    res = cc.solve(sub)
    assert res.status == cc.Status.OPTIMAL
    assert res.kkt_residual <= cc.TOL_KKT
    # complementary slackness products of the barrier multipliers equal 1/t <= gap
    assert res.gap <= cc.TOL_KKT
    i = model.interference_map(inst, res.Q)
    assert np.all(i >= sub.box_lo - cc.TOL_FEAS) and np.all(i <= sub.box_hi + cc.TOL_FEAS)
    assert cons.is_feasible(res.Q)
    res.Q.validate()


def test_nested_boxes_are_monotone(ic2, rng):
    inst, cons, util = ic2
    box = model.interference_box(inst, cons)
    lo, hi = box.i_min.copy(), box.i_max.copy()
    prev = cc.solve(cc.ConvexSubproblem(inst, util, cons, i_fix=lo, box_lo=lo, box_hi=hi))
    for _ in range(6):
        a, b = np.sort(rng.uniform(lo, hi, (2, inst.L)), axis=0)
        lo = np.where(rng.uniform(size=inst.L) < 0.5, a, lo)
        hi = np.where(rng.uniform(size=inst.L) < 0.5, b, hi)
        lo = np.minimum(lo, hi)
        res = cc.solve(cc.ConvexSubproblem(inst, util, cons, i_fix=lo, box_lo=lo, box_hi=hi))
        if res.status == cc.Status.INFEASIBLE:
            break
        assert res.objective >= prev.objective - 2 * cc.TOL_KKT
        assert res.lower_bound >= prev.lower_bound - 2 * cc.TOL_KKT
        prev = res


def test_convexity_of_returned_points(ic2, rng):
    inst, cons, util = ic2
    box = model.interference_box(inst, cons)
    i_fix = 0.2 * box.i_max
    pts = []
    for lam in ([0.1, 0.5], [1.0, 0.0], [0.0, 2.0]):
        pts.append(cc.solve(cc.ConvexSubproblem(inst, util, cons, i_fix=i_fix, lam=lam)).Q)
    for A in pts:
        for B in pts:
            mid = model.cost(inst, util, A.combine(B, 0.5), i_fix)
            avg = 0.5 * (model.cost(inst, util, A, i_fix) + model.cost(inst, util, B, i_fix))
            assert mid <= avg + 1e-9


# -- phase 1 --------------------------------------------------------------------


def test_phase1_root_box_is_feasible(ic2):
    inst, cons, util = ic2
    box = model.interference_box(inst, cons)
    Q, val = cc.phase1(cc.ConvexSubproblem(inst, util, cons, i_fix=box.i_min,
                                           box_lo=box.i_min, box_hi=box.i_max))
    assert Q is not None and val < 0
    i = model.interference_map(inst, Q)
    assert np.all(i < box.i_max)
    assert all(c.load(Q) < c.P for c in cons)


def test_phase1_zero_cross_channel_lower_bound(rng):
    chans = [complex_gaussian(rng, 2, 1, 2) for _ in range(2)]
    chans[0][1] = 0.0  # receiver 1 hears nothing from transmitter 0
    inst, cons = model.make_ic(chans, np.ones((2, 1)), 1.0)
    lo = np.array([0.0, 0.1])
    sub = cc.ConvexSubproblem(inst, UtilitySpec(), cons, i_fix=lo, box_lo=lo, box_hi=lo + 1)
    Q, val = cc.phase1(sub)
    assert Q is None and val > 0


def test_phase1_nested_box_inside_image(ic2, rng):
    inst, cons, util = ic2
    for _ in range(5):
        target = model.interference_map(inst, random_point(rng, inst, cons, fill=rng.uniform(0.2, 1)))
        lo, hi = 0.9 * target, 1.05 * target
        Q, val = cc.phase1(cc.ConvexSubproblem(inst, util, cons, i_fix=lo, box_lo=lo, box_hi=hi))
        assert Q is not None
        i = model.interference_map(inst, Q)
        assert np.all(i > lo) and np.all(i < hi)
        assert all(c.load(Q) <= c.P for c in cons)


def test_degenerate_box_uses_equalities(ic2, rng):
    inst, cons, util = ic2
    target = model.interference_map(inst, random_point(rng, inst, cons))
    res = cc.solve(cc.ConvexSubproblem(inst, util, cons, i_fix=target, box_lo=target, box_hi=target))
    assert res.status == cc.Status.OPTIMAL
    np.testing.assert_allclose(model.interference_map(inst, res.Q), target, rtol=1e-9, atol=1e-12)


# -- linear maximization ----------------------------------------------------------


def test_maximize_linear_matches_alignment(rng):
    inst, cons = model.make_ic([complex_gaussian(rng, 2, 1, 3) for _ in range(2)],
                               np.ones((2, 1)), 2.5)
    for k in range(2):
        exact = 2.5 * np.linalg.norm(inst.channels[1 - k][k, 0]) ** 2
        val = cc.maximize_linear(inst, cons, k)
        assert exact * (1 - 1e-8) <= val <= exact * (1 + 1e-7)


# -- kernels -----------------------------------------------------------------------


def _problems(rng):
    inst, cons = model.make_ic([complex_gaussian(rng, 2, 2, n) for n in (2, 3)],
                               np.ones((2, 2)), 2.0)
    out = []
    for alpha in (0.0, 1.0, 2.0):
        sub = cc.ConvexSubproblem(inst, UtilitySpec(alpha), cons, i_fix=np.full(4, 0.1),
                                  lam=np.full(4, 0.2), box_lo=np.full(4, 0.01),
                                  box_hi=np.full(4, 3.0))
        asm = cc.assemble(sub)
        y, _ = cc._find_start(sub, asm)
        out.append((asm.prob, y))
    return out


def test_barrier_gradient_and_hessian_match_differences(rng):
    for prob, y0 in _problems(rng):
        for _ in range(34):
            d = rng.standard_normal(prob.n)
            y = y0 + 0.2 * d * np.abs(y0).max()
            if not np.isfinite(_core.evaluate(prob, y, 1.0)):
                y = y0
            t = 10.0 ** rng.uniform(0, 3)
            g, H = _core.derivatives(prob, y, t)
            u = rng.standard_normal(prob.n)
            u /= np.linalg.norm(u)
            h = 1e-6 * max(1.0, np.linalg.norm(y))
            fd = (_core.evaluate(prob, y + h * u, t) - _core.evaluate(prob, y - h * u, t)) / (2 * h)
            assert g @ u == pytest.approx(fd, rel=1e-5, abs=1e-7 * np.abs(g).max())
            gp, _ = _core.derivatives(prob, y + h * u, t)
            gm, _ = _core.derivatives(prob, y - h * u, t)
            np.testing.assert_allclose(H @ u, (gp - gm) / (2 * h), rtol=1e-4,
                                       atol=1e-5 * np.abs(H).max())


@pytest.mark.skipif(_core._ext is None, reason="compiled extension not built")
def test_backends_agree(rng):
    from misobb._core import _ext, _fallback
    for prob, y in _problems(rng):
        for t in (1.0, 1e5):
            assert _ext.evaluate(prob, y, t) == pytest.approx(_fallback.evaluate(prob, y, t), rel=1e-12)
            g1, H1 = _ext.derivatives(prob, y, t)
            g2, H2 = _fallback.derivatives(prob, y, t)
            np.testing.assert_allclose(g1, g2, rtol=1e-10, atol=1e-12 * np.abs(g2).max())
            np.testing.assert_allclose(H1, H2, rtol=1e-10, atol=1e-12 * np.abs(H2).max())
        y1, it1, _, s1 = _ext.center(prob, y, 10.0)
        y2, it2, _, s2 = _fallback.center(prob, y, 10.0)
        assert s1 == s2 == _core.OK
        np.testing.assert_allclose(y1, y2, rtol=1e-7, atol=1e-9)


def test_backend_switch_round_trip():
    start = _core.BACKEND
    _core.use_backend("python")
    assert _core.center is _core._fallback.center
    if _core._ext is not None:
        _core.use_backend("cython")
        assert _core.center is _core._ext.center
    else:
        with pytest.raises(RuntimeError):
            _core.use_backend("cython")
    _core.use_backend(start)
    with pytest.raises(ValueError):
        _core.use_backend("fortran")


def test_singular_direction_is_pseudo_inverse_step(rng):
    from misobb._core._fallback import singular_direction
    V = rng.standard_normal((5, 3))
    H = V @ V.T  # rank 3
    g = rng.standard_normal(5)
    np.testing.assert_allclose(singular_direction(g, H), -np.linalg.pinv(H) @ g, atol=1e-10)
    assert np.all(singular_direction(g, np.full((5, 5), np.nan)) == 0)


@pytest.mark.parametrize("backend", ["python", "cython"])
def test_box_of_high_power_broadcast(backend):
    """Late central-path Hessians here are numerically singular."""
    from misobb import instance_io
    if backend == "cython" and _core._ext is None:
        pytest.skip("compiled extension not built")
    start = _core.BACKEND
    try:
        _core.use_backend(backend)
        inst, cons = instance_io.generate(1014, 4, 4, 1, "BC")
        box = model.interference_box(inst, cons.rescaled(10 ** 3.5))
    finally:
        _core.use_backend(start)
    # all power on one other user's beam aligned with h_k
    exact = 10 ** 3.5 * np.linalg.norm(inst.channels[0][:, 0], axis=1) ** 2
    assert np.all(box.i_max >= exact)
    np.testing.assert_allclose(box.i_max, exact * (1 + model.IMAX_INFLATION), rtol=1e-7)
