import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bulkedge.errors import ConfigError, DomainError, ParseError
from bulkedge.model import (
    SX,
    SZ,
    BlochSymbol,
    HoppingFamily,
    constant_symbol,
    direct_sum,
    evaluate_symbol,
    free_lattice,
    grid_angles,
    hofstadter,
    parse_model,
    qwz,
)

from conftest import random_family


def test_constant_symbol_evaluates_to_diagonal():
    sym = BlochSymbol(constant_symbol([-1.0, 1.0]))
    for eta, t in [(1.0, 1.0), (1j, -1.0), (np.exp(0.3j), np.exp(-2.1j))]:
        assert np.allclose(sym.evaluate(eta, t), np.diag([-1.0, 1.0]))


def test_scalar_hopping_at_eta_one():
    sym = BlochSymbol(HoppingFamily(1, 1, 0, {(1, 0): [[1.0]], (-1, 0): [[1.0]]}))
    assert np.isclose(sym.evaluate(1.0, np.exp(0.7j))[0, 0], 2.0)


def test_hofstadter_13_hand_assembled_matrix():
    # Harper magnetic cell for flux 1/3 at eta = t = 1: cosine diagonal plus
    # ones on the cyclic off-diagonals.
    expect = np.diag(2 * np.cos(2 * np.pi * np.arange(3) / 3)).astype(complex)
    for r in range(3):
        expect[(r + 1) % 3, r] += 1
        expect[r, (r + 1) % 3] += 1
    sym = BlochSymbol(hofstadter(1, 3))
    assert np.allclose(evaluate_symbol(sym, 1.0, 1.0), expect, atol=1e-12)


def test_unit_modulus_enforced():
    sym = BlochSymbol(hofstadter(1, 3))
    with pytest.raises(DomainError):
        sym.evaluate(1.1, 1.0)
    with pytest.raises(DomainError):
        sym.evaluate(1.0, 0.99)


def test_hofstadter_zero_flux_is_free_lattice():
    sym = BlochSymbol(hofstadter(0, 1))
    for eta, t in [(1.0, 1.0), (np.exp(0.4j), np.exp(-1.2j))]:
        assert np.isclose(sym.evaluate(eta, t)[0, 0], eta + 1 / eta + t + 1 / t)
    assert free_lattice().n == 1


def test_hofstadter_13_structure():
    fam = hofstadter(1, 3)
    assert fam.n == 3 and fam.r == 1 and fam.m == 1
    assert abs(np.linalg.det(fam.coefficient(1, 0))) > 0.5
    assert abs(np.linalg.det(fam.coefficient(-1, 0))) > 0.5


def test_hofstadter_13_gershgorin_bound():
    # every row has diagonal phases of modulus 1 twice and two unit cyclic
    # hops: |lambda| <= 4
    sym = BlochSymbol(hofstadter(1, 3))
    evs = np.linalg.eigvalsh(sym.evaluate_grid(16, 16))
    assert np.abs(evs).max() <= 4.0 + 1e-12


def test_hofstadter_rejects_non_coprime():
    with pytest.raises(ConfigError):
        hofstadter(2, 4)
    with pytest.raises(ConfigError):
        hofstadter(1, 0)


def test_qwz_extreme_hopping_is_singular():
    fam = qwz(1.0)
    assert abs(np.linalg.det(fam.coefficient(1, 0))) < 1e-14
    assert np.allclose(fam.coefficient(1, 0), (SZ - 1j * SX) / 2)


def test_qwz_gap_closes_at_origin_for_m_zero():
    sym = BlochSymbol(qwz(0.0))
    assert np.allclose(sym.evaluate(1.0, 1.0), 0.0)


def test_qwz_large_mass_is_certified():
    from bulkedge.spectral import gap_certificate

    cert = gap_certificate(BlochSymbol(qwz(10.0)), 0.0)
    assert cert.certified
    assert cert.delta_grid > 7.0


@given(st.integers(0, 10**6))
def test_symbol_hermitian_on_grid(seed):
    sym = BlochSymbol(random_family(seed))
    h = sym.evaluate_grid(32, 32)
    assert np.abs(h - h.conj().transpose(0, 1, 3, 2)).max() < 1e-12


@given(st.integers(0, 10**6))
def test_fourier_coefficients_recovered(seed):
    # trapezoid quadrature on a uniform grid is exact for trigonometric
    # polynomials once the grid resolves the degree
    fam = random_family(seed)
    sym = BlochSymbol(fam)
    g_eta = max(4 * fam.r, 1)
    g_t = max(4 * fam.m, 1)
    h = sym.evaluate_grid(g_eta, g_t)
    etas = np.exp(1j * grid_angles(g_eta))
    ts = np.exp(1j * grid_angles(g_t))
    for (j, mm), b in fam.coeffs.items():
        phase = np.multiply.outer(etas ** (-j), ts ** (-mm))
        rec = (phase[:, :, None, None] * h).sum(axis=(0, 1)) / (g_eta * g_t)
        assert np.abs(rec - b).max() < 1e-10


def test_rejects_non_selfadjoint_family():
    with pytest.raises(ConfigError):
        HoppingFamily(1, 1, 0, {(1, 0): [[1.0]], (-1, 0): [[2.0]]})
    with pytest.raises(ConfigError):
        HoppingFamily(1, 1, 0, {(1, 0): [[1.0]]})


def test_direct_sum_and_conjugate():
    fam = direct_sum(hofstadter(1, 3), qwz(1.0))
    assert fam.n == 5
    sym = BlochSymbol(fam)
    h = sym.evaluate(np.exp(0.3j), np.exp(0.9j))
    assert np.allclose(h[:3, 3:], 0.0)
    conj = hofstadter(1, 3).conjugate()
    hc = BlochSymbol(conj).evaluate(np.exp(0.3j), np.exp(0.9j))
    ho = BlochSymbol(hofstadter(1, 3)).evaluate(np.exp(0.3j), np.exp(0.9j))
    assert np.allclose(hc, ho.conj())


def test_parse_hofstadter_dispatch():
    spec = parse_model('model = "hofstadter"\np = 1\nq = 3\n')
    assert spec.name == "hofstadter"
    assert spec.family.n == 3


def test_parse_ignores_run_keys():
    spec = parse_model('model = "qwz"\nm = 1.0\nmu = 0.0\ng_t = 96\n')
    assert spec.family.n == 2


def test_parse_unknown_model_rejected():
    with pytest.raises(ParseError):
        parse_model('model = "kitaev"\n')


def test_parse_custom_scalar_chain():
    text = (
        'model = "custom"\nn = 1\nr = 1\nm = 0\n'
        "coefficients = [[1, 0, 0, 0, 1.0, 0.0], [-1, 0, 0, 0, 1.0, 0.0]]\n"
    )
    spec = parse_model(text)
    sym = BlochSymbol(spec.family)
    assert np.isclose(sym.evaluate(1.0, 1.0)[0, 0], 2.0)


def test_parse_custom_strict_rejects_missing_partner():
    text = (
        'model = "custom"\nn = 1\nr = 1\nm = 0\n'
        "coefficients = [[1, 0, 0, 0, 1.0, 0.0]]\n"
    )
    with pytest.raises(ParseError):
        parse_model(text)


def test_parse_custom_lenient_symmetrizes():
    text = (
        'model = "custom"\nn = 1\nr = 1\nm = 0\nsymmetrize = true\n'
        "coefficients = [[1, 0, 0, 0, 1.0, 0.0]]\n"
    )
    spec = parse_model(text)
    assert np.isclose(spec.family.coefficient(1, 0)[0, 0], 0.5)
    assert np.isclose(spec.family.coefficient(-1, 0)[0, 0], 0.5)


def test_parse_error_carries_diagnostics():
    with pytest.raises(ParseError, match="coefficient entry 0"):
        parse_model('model = "custom"\nn = 1\nr = 1\nm = 0\ncoefficients = [[1, 0]]\n')


def test_lipschitz_constants_match_hand_count():
    fam = hofstadter(1, 3)
    # eta direction: |j| = 1 twice, each unitary diag (norm 1)
    assert np.isclose(fam.lipschitz_eta(), 2.0)
    # t direction: the two corner hops, norm 1 each
    assert np.isclose(fam.lipschitz_t(), 2.0)
