import numpy as np
import pytest

from misobb import instance_io, model

# criterion id -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def complex_gaussian(rng, *shape):
    return instance_io.complex_gaussian(rng, shape)


def random_psd(rng, n, scale=1.0, rank=None):
    rank = n if rank is None else rank
    V = complex_gaussian(rng, n, rank)
    Q = V @ V.conj().T
    return scale * Q / np.trace(Q).real


def random_point(rng, inst, cons=None, fill=0.5):
    """Random feasible covariance point using ``fill`` of every budget."""
    blocks = [np.stack([random_psd(rng, n) for _ in range(inst.L_C)]) for n in inst.N]
    Q = model.CovariancePoint(tuple(blocks))
    if cons is None:
        return Q
    load = max(c.load(Q) / c.P for c in cons if c.P > 0)
    return Q.scaled(fill / load)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def ic2():
    """Seeded two-user, two-antenna interference channel."""
    inst, cons = instance_io.generate(0, 2, 2, 1, "IC")
    return inst, cons, model.UtilitySpec()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"criterion {cid:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
