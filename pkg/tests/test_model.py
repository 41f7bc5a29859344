import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from misobb import model
from misobb.model import CovariancePoint, InstanceError, UtilitySpec

from conftest import complex_gaussian, random_point, random_psd


def scalar_instance(h12=1 + 0j):
    """K=2, N=1, L_C=1 with unit direct gains."""
    chans = [np.array([[[1.0]], [[h12]]]), np.array([[[0.5]], [[1.0]]])]
    return model.make_ic(chans, np.ones((2, 1)), 1.0)


def sinr_rates(inst, Q):
    """Independent loop implementation of the per-user rates."""
    r = np.zeros(inst.K)
    for k in range(inst.K):
        for l in range(inst.L_C):
            h = inst.channels[k][k, l]
            s = np.vdot(h.conj(), Q.blocks[k][l] @ h.conj()).real
            i = 0.0
            for j in range(inst.K):
                if j != k:
                    g = inst.channels[j][k, l]
                    i += np.vdot(g.conj(), Q.blocks[j][l] @ g.conj()).real
            r[k] += np.log(1.0 + s / (inst.noise[k, l] + i))
    return r


def test_interference_zero_point(ic2):
    inst, _, _ = ic2
    assert np.all(model.interference_map(inst, CovariancePoint.zeros(inst)) == 0)


def test_interference_single_user_is_empty_sum(rng):
    inst, cons = model.make_bc(1, 3, 2, complex_gaussian(rng, 1, 2, 3), 1.0, 1.0)
    i = model.interference_map(inst, random_point(rng, inst))
    assert i.shape == (2,) and np.all(i == 0)


def test_interference_scalar_quadratic_form():
    inst, _ = scalar_instance()
    Q = CovariancePoint((np.array([[[2.0]]]), np.array([[[0.0]]])))
    i = model.interference_map(inst, Q)
    assert i[inst.component(1, 0)] == pytest.approx(2.0)
    assert i[inst.component(0, 0)] == 0.0


def test_interference_is_affine(rng, ic2):
    inst, cons, _ = ic2
    for _ in range(20):
        A, B = random_point(rng, inst), random_point(rng, inst)
        t = rng.uniform()
        lhs = model.interference_map(inst, A.combine(B, t))
        rhs = t * model.interference_map(inst, A) + (1 - t) * model.interference_map(inst, B)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-15)


def test_rates_zero_and_unit():
    inst, _ = model.make_bc(1, 1, 1, np.ones((1, 1, 1)), 1.0, 1.0)
    assert model.rates(inst, CovariancePoint.zeros(inst))[0] == 0.0
    Q = CovariancePoint((np.ones((1, 1, 1)),))
    assert model.rates(inst, Q)[0] == pytest.approx(np.log(2.0), abs=1e-15)


def test_rates_match_independent_sinr(rng):
    chans = [complex_gaussian(rng, 3, 2, n) for n in (1, 2, 3)]
    inst, _ = model.make_ic(chans, rng.uniform(0.5, 2.0, (3, 2)), 1.0)
    for _ in range(10):
        Q = random_point(rng, inst)
        np.testing.assert_allclose(model.rates(inst, Q), sinr_rates(inst, Q), rtol=1e-12)


@pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0, 2.0])
def test_cost_substitution_identity(rng, ic2, alpha):
    inst, cons, _ = ic2
    util = UtilitySpec(alpha, (1.0, 2.0))
    Q = random_point(rng, inst, cons)
    direct = -(util.w(2) * util.f(model.rates(inst, Q))).sum()
    assert model.cost(inst, util, Q, model.interference_map(inst, Q)) == pytest.approx(direct, rel=1e-12)
    assert model.objective(inst, util, Q) == pytest.approx(direct, rel=1e-12)


def test_cost_single_user_ln2():
    inst, _ = model.make_bc(1, 1, 1, np.ones((1, 1, 1)), 1.0, 1.0)
    Q = CovariancePoint((np.ones((1, 1, 1)),))
    assert model.cost(inst, UtilitySpec(), Q, [0.0]) == pytest.approx(-np.log(2.0))


def test_rate_floor_for_zero_rate():
    inst, _ = model.make_bc(1, 1, 1, np.ones((1, 1, 1)), 1.0, 1.0)
    val = model.cost(inst, UtilitySpec(alpha=1.0), CovariancePoint.zeros(inst), [0.0])
    assert val == pytest.approx(-np.log(model.RATE_FLOOR))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), alpha=st.sampled_from([0.0, 0.5, 1.0, 3.0]))
def test_cost_monotone_in_interference(seed, alpha):
    rng = np.random.default_rng(seed)
    inst, cons = model.make_ic([complex_gaussian(rng, 2, 2, 2) for _ in range(2)],
                               np.ones((2, 2)), 1.0)
    util = UtilitySpec(alpha)
    Q = random_point(rng, inst, cons)
    i = rng.uniform(0, 2, inst.L)
    j = i + rng.uniform(0, 1, inst.L)
    assert model.cost(inst, util, Q, i) <= model.cost(inst, util, Q, j) + 1e-12
    # strict once one component with signal grows
    S = model.signal_powers(inst, Q).reshape(-1)
    k = int(np.argmax(S))
    bump = i.copy()
    bump[k] += 0.5
    assert model.cost(inst, util, Q, i) < model.cost(inst, util, Q, bump)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), alpha=st.sampled_from([0.0, 0.5, 1.0, 2.0]))
def test_cost_convex_in_covariance(seed, alpha):
    rng = np.random.default_rng(seed)
    inst, cons = model.make_ic([complex_gaussian(rng, 2, 1, 2) for _ in range(2)],
                               np.ones((2, 1)), 1.0)
    util = UtilitySpec(alpha)
    i = rng.uniform(0, 1, inst.L)
    A, B = random_point(rng, inst, cons), random_point(rng, inst, cons)
    mid = model.cost(inst, util, A.combine(B, 0.5), i)
    avg = 0.5 * (model.cost(inst, util, A, i) + model.cost(inst, util, B, i))
    assert mid <= avg + 1e-9


@pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0, 2.5])
def test_gradient_matches_central_differences(rng, alpha):
    inst, cons = model.make_ic([complex_gaussian(rng, 2, 2, 2) for _ in range(2)],
                               rng.uniform(0.5, 1.5, (2, 2)), 1.0)
    util = UtilitySpec(alpha, (1.0, 1.7))
    for _ in range(10):
        Q = random_point(rng, inst, cons)
        i = rng.uniform(0, 2, inst.L)
        g = model.cost_gradient_i(inst, util, Q, i)
        for c in range(inst.L):
            h = 1e-6 * (1 + abs(i[c]))
            e = np.zeros(inst.L)
            e[c] = h
            fd = (model.cost(inst, util, Q, i + e) - model.cost(inst, util, Q, i - e)) / (2 * h)
            assert g[c] == pytest.approx(fd, rel=1e-6, abs=1e-9)
        assert np.all(g >= 0)


def test_gradient_zero_without_signal(ic2):
    inst, _, _ = ic2
    g = model.cost_gradient_i(inst, UtilitySpec(), CovariancePoint.zeros(inst), np.ones(inst.L))
    assert np.all(g == 0)


def test_interference_box_scalar():
    inst, cons = scalar_instance()
    box = model.interference_box(inst, cons)
    assert box.i_max[inst.component(1, 0)] == pytest.approx(1.0 + 1e-6, rel=1e-7)
    assert box.i_max[inst.component(0, 0)] == pytest.approx(0.25 * (1 + 1e-6), rel=1e-7)
    assert np.all(box.i_min == 0)


def test_interference_box_zero_cross_channels(rng):
    chans = [np.zeros((2, 1, 2), complex) for _ in range(2)]
    chans[0][0, 0] = complex_gaussian(rng, 2)
    chans[1][1, 0] = complex_gaussian(rng, 2)
    inst, cons = model.make_ic(chans, np.ones((2, 1)), 1.0)
    assert np.all(model.interference_box(inst, cons).i_max == 0)


def test_interference_box_sum_power_rank_one(rng):
    chans = [complex_gaussian(rng, 2, 1, 2) for _ in range(2)]
    inst, _ = model.make_ic(chans, np.ones((2, 1)), 1.0)
    cons = model.sum_power(inst, 3.0)
    box = model.interference_box(inst, cons)
    for k in range(2):
        h = inst.channels[1 - k][k, 0]
        bound = 3.0 * np.linalg.norm(h) ** 2
        assert box.i_max[k] <= bound * (1 + 1e-6) * (1 + 1e-7)
        # rank-one alignment attains it
        v = np.sqrt(3.0) * h.conj() / np.linalg.norm(h)
        beams = [np.zeros((1, 2), complex), np.zeros((1, 2), complex)]
        beams[1 - k][0] = v
        attained = model.interference_map(inst, CovariancePoint.from_beams(beams))[k]
        assert attained == pytest.approx(bound, rel=1e-12)
        assert box.i_max[k] >= attained


def test_make_bc_replicates_channels(rng):
    inst, cons = model.make_bc(4, 4, 1, complex_gaussian(rng, 4, 1, 4), 1.0, 10.0)
    assert inst.topology == "BC" and len(cons) == 1
    for j in range(4):
        np.testing.assert_array_equal(inst.channels[j], inst.channels[0])
    one, _ = model.make_bc(1, 4, 1, complex_gaussian(rng, 1, 1, 4), 1.0, 1.0)
    assert one.K == 1 and one.L == 1


def test_instance_validation_errors(rng):
    h = complex_gaussian(rng, 2, 1, 2)
    with pytest.raises(InstanceError):
        model.NetworkInstance(2, (2, 2), 1, (h, h), np.array([[1.0], [0.0]]))
    with pytest.raises(InstanceError):
        model.NetworkInstance(2, (2, 3), 1, (h, h), np.ones((2, 1)))
    with pytest.raises(InstanceError):
        model.NetworkInstance(2, (2, 2), 1, (h, h * 2), np.ones((2, 1)), "BC")


def test_unbounded_constraints_rejected(rng):
    inst, _ = model.make_ic([complex_gaussian(rng, 2, 1, 2) for _ in range(2)], np.ones((2, 1)), 1.0)
    A = (np.eye(2)[None].astype(complex), np.diag([1.0, 0.0])[None].astype(complex))
    cons = model.ConstraintSet((model.PowerConstraint(A, 1.0),))
    with pytest.raises(InstanceError, match="unbounded"):
        cons.validate(inst)


def test_covariance_validation(rng):
    q = random_psd(rng, 3)
    CovariancePoint((q[None],)).validate()
    bad = q.copy()
    bad[0, 1] += 0.1
    with pytest.raises(ValueError, match="Hermitian"):
        CovariancePoint((bad[None],)).validate()
    with pytest.raises(ValueError, match="PSD"):
        CovariancePoint((-q[None],)).validate()


def test_utility_rejects_bad_parameters():
    with pytest.raises(InstanceError):
        UtilitySpec(alpha=-1)
    with pytest.raises(InstanceError):
        UtilitySpec(weights=(1.0, 0.0))
