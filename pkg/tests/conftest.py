import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bulkedge.model import BlochSymbol, HoppingFamily, hofstadter, qwz
from bulkedge.spectral import default_gamma, gap_certificate

settings.register_profile(
    "numeric",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("numeric")

HOF13_GAP1_MU = -1.366
HOF13_GAP2_MU = 1.366


@pytest.fixture(scope="session")
def hof13():
    return BlochSymbol(hofstadter(1, 3))


@pytest.fixture(scope="session")
def hof13_cert(hof13):
    return gap_certificate(hof13, HOF13_GAP1_MU)


@pytest.fixture(scope="session")
def hof13_gamma(hof13, hof13_cert):
    return default_gamma(hof13, hof13_cert)


@pytest.fixture(scope="session")
def hof13_plan(hof13, hof13_gamma):
    from bulkedge.grafporta import select_k

    return select_k(hof13, hof13_gamma)


@pytest.fixture(scope="session")
def qwz1():
    return BlochSymbol(qwz(1.0))


@pytest.fixture(scope="session")
def scalar_chain():
    """1D scalar symbol eta + 1/eta."""
    return BlochSymbol(HoppingFamily(1, 1, 0, {(1, 0): [[1.0]], (-1, 0): [[1.0]]}))


@pytest.fixture(scope="session")
def constant_pm1():
    from bulkedge.model import constant_symbol

    return BlochSymbol(constant_symbol([-1.0, 1.0]))


def random_family(seed, n_max=3, r_max=2, m_max=2):
    """Random self-adjoint hopping family; the adjoint pairing is enforced at
    construction, so every draw satisfies the symbol invariants."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, n_max + 1))
    r = int(rng.integers(0, r_max + 1))
    m = int(rng.integers(0, m_max + 1))
    coeffs = {}
    for j in range(0, r + 1):
        for mm in range(-m, m + 1):
            if j == 0 and mm < 0:
                continue
            b = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
            if j == 0 and mm == 0:
                b = (b + b.conj().T) / 2
            coeffs[(j, mm)] = b
            if (j, mm) != (0, 0):
                coeffs[(-j, -mm)] = b.conj().T
    return HoppingFamily(n, r, m, coeffs)
