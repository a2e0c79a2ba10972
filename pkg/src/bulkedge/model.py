"""Bulk Hamiltonians as finite-range block Laurent symbols.

A model is a finite family of matrix coefficients B[j, m] (|j| <= R in the
lattice direction, |m| <= M in the transverse momentum) defining

    H(eta, t) = sum_{j,m} B[j,m] * t^m * eta^j ,   |eta| = |t| = 1,

which is Hermitian on the unit bitorus whenever B[-j,-m] = B[j,m]^dagger.
The lattice direction (eta) is the one later truncated to a half space.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

from .errors import ConfigError, DomainError, ParseError

HERMITICITY_TOL = 1e-12
UNIT_MODULUS_TOL = 1e-12

SX = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SY = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SZ = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)


def grid_angles(g):
    """Uniform partition of [-pi, pi) with exact periodic wrap-around."""
    return -np.pi + 2.0 * np.pi * np.arange(g) / g


def _frozen(a):
    a = np.ascontiguousarray(a, dtype=complex)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class HoppingFamily:
    """Finite collection of matrix coefficients of a self-adjoint block
    Laurent symbol.

    n: fiber dimension; r: lattice hopping range; m: transverse range;
    coeffs: map (j, m) -> complex n x n matrix, nonzero only for
    |j| <= r, |m| <= m.
    """

    n: int
    r: int
    m: int
    coeffs: Mapping[tuple, np.ndarray] = field(repr=False)

    def __post_init__(self):
        if self.n < 1 or self.r < 0 or self.m < 0:
            raise ConfigError(f"invalid family shape n={self.n} r={self.r} m={self.m}")
        clean = {}
        for (j, mm), b in self.coeffs.items():
            b = np.asarray(b, dtype=complex)
            if b.shape != (self.n, self.n):
                raise ConfigError(f"coefficient ({j},{mm}) has shape {b.shape}, want ({self.n},{self.n})")
            if abs(j) > self.r or abs(mm) > self.m:
                if np.any(b != 0):
                    raise ConfigError(f"nonzero coefficient ({j},{mm}) outside range ({self.r},{self.m})")
                continue
            clean[(j, mm)] = _frozen(b)
        for (j, mm), b in clean.items():
            partner = clean.get((-j, -mm))
            if partner is None or not np.allclose(partner, b.conj().T, atol=HERMITICITY_TOL, rtol=0.0):
                raise ConfigError(f"coefficient ({-j},{-mm}) is not the adjoint of ({j},{mm})")
        object.__setattr__(self, "coeffs", clean)

    def coefficient(self, j, m):
        return self.coeffs.get((j, m), np.zeros((self.n, self.n), dtype=complex))

    def a_matrix(self, j, t):
        """A_j(t) = sum_m B[j,m] t^m."""
        a = np.zeros((self.n, self.n), dtype=complex)
        for (jj, mm), b in self.coeffs.items():
            if jj == j:
                a = a + b * t**mm
        return a

    def lipschitz_eta(self):
        """Bound on ||dH/d(theta_eta)||: sum_j |j| sum_m ||B[j,m]||."""
        return float(sum(abs(j) * np.linalg.norm(b, 2) for (j, _), b in self.coeffs.items()))

    def lipschitz_t(self):
        """Bound on ||dH/d(theta_t)||: sum_{j,m} |m| ||B[j,m]||."""
        return float(sum(abs(mm) * np.linalg.norm(b, 2) for (_, mm), b in self.coeffs.items()))

    def norm_bound(self):
        """Upper bound on sup ||H(eta,t)||."""
        return float(sum(np.linalg.norm(b, 2) for b in self.coeffs.values()))

    def conjugate(self):
        """Family of the entrywise-conjugate symbol: B'[j,m] = conj(B[-j,-m]).

        Flips the orientation-sensitive indices (Chern number, spectral flow)
        while preserving spectra and self-adjointness.
        """
        coeffs = {(-j, -mm): b.conj() for (j, mm), b in self.coeffs.items()}
        return HoppingFamily(self.n, self.r, self.m, coeffs)


def direct_sum(fam1, fam2):
    """Block-diagonal direct sum of two hopping families."""
    n1, n2 = fam1.n, fam2.n
    coeffs = {}
    for key in set(fam1.coeffs) | set(fam2.coeffs):
        b = np.zeros((n1 + n2, n1 + n2), dtype=complex)
        b[:n1, :n1] = fam1.coefficient(*key)
        b[n1:, n1:] = fam2.coefficient(*key)
        coeffs[key] = b
    return HoppingFamily(n1 + n2, max(fam1.r, fam2.r), max(fam1.m, fam2.m), coeffs)


class BlochSymbol:
    """Evaluates H(eta, t) on the unit bitorus, optionally memoizing full
    grids. The memo is a dict keyed by grid shape, written once per shape;
    concurrent readers are safe.
    """

    def __init__(self, hoppings, cache="grid"):
        if cache not in (None, "none", "grid"):
            raise ConfigError(f"unknown cache policy {cache!r}")
        self.hoppings = hoppings
        self._cache_policy = cache if cache != "none" else None
        self._grids = {}

    @property
    def n(self):
        return self.hoppings.n

    @property
    def r(self):
        return self.hoppings.r

    def evaluate(self, eta, t):
        """H(eta, t) = sum_{j,m} B[j,m] t^m eta^j for unit-modulus eta, t."""
        eta = complex(eta)
        t = complex(t)
        if abs(abs(eta) - 1.0) > UNIT_MODULUS_TOL or abs(abs(t) - 1.0) > UNIT_MODULUS_TOL:
            raise DomainError(f"(eta, t) = ({eta}, {t}) not on the unit bitorus")
        h = np.zeros((self.n, self.n), dtype=complex)
        for (j, mm), b in self.hoppings.coeffs.items():
            h = h + b * (t**mm * eta**j)
        return h

    def evaluate_grid(self, g_eta, g_t):
        """All symbol values on the uniform (g_eta x g_t) bitorus grid,
        shape (g_eta, g_t, n, n)."""
        key = (int(g_eta), int(g_t))
        if self._cache_policy and key in self._grids:
            return self._grids[key]
        etas = np.exp(1j * grid_angles(g_eta))
        ts = np.exp(1j * grid_angles(g_t))
        out = np.zeros((g_eta, g_t, self.n, self.n), dtype=complex)
        for (j, mm), b in self.hoppings.coeffs.items():
            phase = np.multiply.outer(etas**j, ts**mm)
            out += phase[:, :, None, None] * b
        out.flags.writeable = False
        if self._cache_policy:
            self._grids[key] = out
        return out


def evaluate_symbol(symbol, eta, t):
    """Module-level alias for BlochSymbol.evaluate."""
    return symbol.evaluate(eta, t)


def hofstadter(p, q):
    """Harper model at rational flux p/q, magnetic unit cell of q sites in
    the periodic direction.

    The truncated-direction hops carry the magnetic phases,
    A_{+1} = diag(e^{2 pi i p r / q}) (invertible); A_0(t) holds the cyclic
    intra-cell hops with the Bloch phase t on the wrap-around link.
    At eta = t = 1 the symbol is diag(2 cos(2 pi p r / q)) plus ones on the
    cyclic off-diagonals.
    """
    p, q = int(p), int(q)
    if q < 1:
        raise ConfigError(f"q must be positive, got {q}")
    if np.gcd(p, q) != 1:
        raise ConfigError(f"flux p/q = {p}/{q} not in lowest terms")
    d = np.diag(np.exp(2j * np.pi * p * np.arange(q) / q))
    intra = np.zeros((q, q), dtype=complex)
    for r in range(q - 1):
        intra[r + 1, r] = 1.0
    corner = np.zeros((q, q), dtype=complex)
    corner[0, q - 1] = 1.0
    coeffs = {
        (1, 0): d,
        (-1, 0): d.conj().T,
        (0, 0): intra + intra.conj().T,
        (0, 1): corner,
        (0, -1): corner.conj().T,
    }
    return HoppingFamily(q, 1, 1, coeffs)


def qwz(m):
    """Two-band Chern insulator with rank-one extreme hopping matrices.

    H(eta, t) = sin(a) sx + sin(b) sy + (m + cos(a) - cos(b)) sz for
    eta = e^{ia}, t = e^{ib}. Gap at 0 closes at m in {-2, 0, 2}; the
    m = 0 closing is at eta = t = 1 where all terms cancel.
    det A_{+1} = det((sz - i sx)/2) = 0.
    """
    m = float(m)
    coeffs = {
        (0, 0): m * SZ,
        (1, 0): (SZ - 1j * SX) / 2.0,
        (-1, 0): (SZ + 1j * SX) / 2.0,
        (0, 1): -(SZ - 1j * SY) / 2.0,
        (0, -1): -(SZ + 1j * SY) / 2.0,
    }
    return HoppingFamily(2, 1, 1, coeffs)


def constant_symbol(diagonal):
    """t- and eta-independent symbol with the given real diagonal."""
    diagonal = np.asarray(diagonal, dtype=float)
    return HoppingFamily(diagonal.size, 0, 0, {(0, 0): np.diag(diagonal).astype(complex)})


def free_lattice():
    """Scalar free 2D lattice, eta + 1/eta + t + 1/t (zero-flux Hofstadter)."""
    return hofstadter(0, 1)


@dataclass(frozen=True)
class ModelSpec:
    """A named, parsed model resolving to a validated HoppingFamily."""

    name: str
    parameters: dict
    family: HoppingFamily

    def symbol(self, cache="grid"):
        return BlochSymbol(self.family, cache=cache)


_MODEL_KEYS = {
    "hofstadter": {"p", "q"},
    "qwz": {"m"},
    "free": set(),
    "constant": {"diagonal"},
    "custom": {"n", "r", "m", "coefficients", "symmetrize"},
}

# Keys owned by the run-configuration layer; the model parser skips them.
RUN_KEYS = frozenset({
    "mu", "gap", "g_eta", "g_t", "g_z", "edge_l", "theta",
    "gp_k", "gp_l", "sigma_tol", "tau_surj", "seed",
})


def _build_custom(params, strict):
    for key in ("n", "r", "m", "coefficients"):
        if key not in params:
            raise ParseError(f"custom model: missing field {key!r}")
    n, r, m = int(params["n"]), int(params["r"]), int(params["m"])
    entries = params["coefficients"]
    if not isinstance(entries, list):
        raise ParseError("custom model: 'coefficients' must be a list of entries")
    raw = {}
    for idx, entry in enumerate(entries):
        if not isinstance(entry, list) or len(entry) != 6:
            raise ParseError(f"coefficient entry {idx}: want [j, m, row, col, re, im], got {entry!r}")
        j, mm, row, col, re, im = entry
        j, mm, row, col = int(j), int(mm), int(row), int(col)
        if abs(j) > r or abs(mm) > m:
            raise ParseError(f"coefficient entry {idx}: index ({j},{mm}) outside range ({r},{m})")
        if not (0 <= row < n and 0 <= col < n):
            raise ParseError(f"coefficient entry {idx}: matrix position ({row},{col}) outside {n}x{n}")
        b = raw.setdefault((j, mm), np.zeros((n, n), dtype=complex))
        b[row, col] += float(re) + 1j * float(im)
    if not strict:
        sym = {}
        for key in set(raw) | {(-j, -mm) for (j, mm) in raw}:
            j, mm = key
            b = raw.get(key, np.zeros((n, n), dtype=complex))
            partner = raw.get((-j, -mm), np.zeros((n, n), dtype=complex))
            sym[key] = (b + partner.conj().T) / 2.0
        raw = sym
    try:
        return HoppingFamily(n, r, m, raw)
    except ConfigError as exc:
        raise ParseError(f"custom model: {exc}") from exc


def parse_model(text):
    """Parse a model definition from flat TOML text into a ModelSpec.

    Unknown model names and malformed fields are rejected with diagnostics.
    Custom symbols are checked for self-adjointness; `symmetrize = true`
    switches from reject (strict, default) to symmetrize.
    """
    return model_spec_from_dict(parse_config_text(text))


def parse_config_text(text):
    """Flat TOML text to a plain dict (model fields plus run fields)."""
    try:
        return _toml.loads(text)
    except _toml.TOMLDecodeError as exc:
        raise ParseError(f"config parse error: {exc}") from exc


def model_spec_from_dict(data):
    """Build a ModelSpec from an already-parsed config dict, ignoring the
    run-configuration keys."""
    if "model" not in data:
        raise ParseError("missing required field 'model'")
    name = data["model"]
    if not isinstance(name, str) or name not in _MODEL_KEYS:
        raise ParseError(f"unknown model {name!r}; known: {sorted(_MODEL_KEYS)}")
    params = {k: v for k, v in data.items() if k != "model" and k not in RUN_KEYS}
    unknown = set(params) - _MODEL_KEYS[name]
    if unknown:
        raise ParseError(f"model {name!r}: unknown fields {sorted(unknown)}")
    if name == "hofstadter":
        if "p" not in params or "q" not in params:
            raise ParseError("hofstadter model requires fields 'p' and 'q'")
        try:
            family = hofstadter(params["p"], params["q"])
        except ConfigError as exc:
            raise ParseError(str(exc)) from exc
    elif name == "qwz":
        if "m" not in params:
            raise ParseError("qwz model requires field 'm'")
        family = qwz(params["m"])
    elif name == "free":
        family = free_lattice()
    elif name == "constant":
        if "diagonal" not in params:
            raise ParseError("constant model requires field 'diagonal'")
        family = constant_symbol(params["diagonal"])
    else:
        strict = not bool(params.get("symmetrize", False))
        family = _build_custom(params, strict)
    return ModelSpec(name=name, parameters=params, family=family)
