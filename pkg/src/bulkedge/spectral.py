"""Shared numerical kernels: gap certification with exact Lipschitz margins,
gap-loop construction and validation, Riesz projections by contour
quadrature, and numerical kernel extraction."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConditioningError, ContourError, GapError
from .model import grid_angles

# Global tolerance defaults; all overridable via keyword or RunConfig.
SIGMA_TOL = 1e-7           # relative threshold separating kernel singular values
SV_RATIO_MIN = 1e2         # minimum gap ratio across the kernel threshold
PROJ_IDEM_TOL = 1e-8
PROJ_HERM_TOL = 1e-10
PROJ_TRACE_TOL = 1e-6
QUAD_REFINE_TOL = 1e-9
RESOLVENT_SMIN_TOL = 1e-10


@dataclass(frozen=True)
class GapCertificate:
    """Certified statement that mu avoids the bulk spectrum everywhere.

    delta_grid is the minimum over the sample grid of dist(mu, spec H);
    margin = (L_eta * h_eta + L_t * h_t) / 2 bounds how far eigenvalues can
    drift between grid points, so certified implies a true global gap.
    """

    mu: float
    g_eta: int
    g_t: int
    delta_grid: float
    lipschitz_eta: float
    lipschitz_t: float
    margin: float
    certified: bool
    e_min: float              # grid minimum of the spectrum
    e_max: float
    e_below: float            # largest grid eigenvalue below mu (-inf if none)
    e_above: float            # smallest grid eigenvalue above mu (+inf if none)
    worst_point: tuple = (0.0, 0.0)

    @property
    def gap_width(self):
        """Certified width of the spectral gap containing mu."""
        if not np.isfinite(self.e_below) or not np.isfinite(self.e_above):
            return float("inf")
        return (self.e_above - self.margin) - (self.e_below + self.margin)

    def window(self):
        """Energy window around mu guaranteed free of bulk spectrum."""
        g = self.gap_width
        lo = self.mu - g / 2.0
        hi = self.mu + g / 2.0
        if np.isfinite(self.e_below):
            lo = max(lo, self.e_below + self.margin)
        if np.isfinite(self.e_above):
            hi = min(hi, self.e_above - self.margin)
        return lo, hi


def gap_certificate(symbol, mu, grid=(64, 64)):
    """Sweep eigenvalues on a bitorus grid and certify dist(mu, spec) > 0
    globally using the family's exact Lipschitz constants. Failure is a
    value (certified=False), not an exception."""
    g_eta, g_t = grid
    if g_eta < 8 or g_t < 8:
        raise ValueError("certification grid must be at least 8x8")
    evs = np.linalg.eigvalsh(symbol.evaluate_grid(g_eta, g_t))
    dist = np.abs(evs - mu).min(axis=2)
    idx = np.unravel_index(np.argmin(dist), dist.shape)
    delta_grid = float(dist[idx])
    l_eta = symbol.hoppings.lipschitz_eta()
    l_t = symbol.hoppings.lipschitz_t()
    margin = 0.5 * (l_eta * 2.0 * np.pi / g_eta + l_t * 2.0 * np.pi / g_t)
    below = evs[evs < mu]
    above = evs[evs > mu]
    th_eta = grid_angles(g_eta)
    th_t = grid_angles(g_t)
    return GapCertificate(
        mu=float(mu),
        g_eta=g_eta,
        g_t=g_t,
        delta_grid=delta_grid,
        lipschitz_eta=l_eta,
        lipschitz_t=l_t,
        margin=float(margin),
        certified=bool(delta_grid - margin > 0.0),
        e_min=float(evs.min()),
        e_max=float(evs.max()),
        e_below=float(below.max()) if below.size else float("-inf"),
        e_above=float(above.min()) if above.size else float("inf"),
        worst_point=(float(th_eta[idx[0]]), float(th_t[idx[1]])),
    )


def certify_gap(symbol, mu, grid=(64, 64), max_grid=512):
    """gap_certificate with grid doubling: the Lipschitz margin shrinks
    linearly in the grid step, so a true but narrow gap certifies once the
    grid resolves it. Returns the last attempt (certified or not)."""
    g_eta, g_t = grid
    while True:
        cert = gap_certificate(symbol, mu, (g_eta, g_t))
        if cert.certified or cert.delta_grid <= 0.0:
            return cert
        if max(g_eta, g_t) >= max_grid:
            return cert
        g_eta, g_t = 2 * g_eta, 2 * g_t


@dataclass(frozen=True)
class Contour:
    """Closed, simple, positively oriented integration loop.

    kind is "circle" (center/radius set, nodes derived) or "polyline"
    (nodes are the data). Validation clearance is the certified lower bound
    on sigma_min(H - z) over the loop and the bitorus.
    """

    nodes: np.ndarray
    kind: str = "polyline"
    center: complex = 0.0
    radius: float = 0.0
    closed: bool = True
    validated: bool = False
    clearance: float = 0.0

    def with_nodes(self, q):
        """Same geometric circle resampled at q nodes."""
        if self.kind != "circle":
            raise ContourError("resampling is only defined for circle contours")
        nodes = self.center + self.radius * np.exp(2j * np.pi * (np.arange(q) + 0.5) / q)
        return replace(self, nodes=nodes)

    def quadrature(self):
        """Nodes z_s and complex weights dz_s of the trapezoid rule."""
        if self.kind == "circle":
            q = self.nodes.size
            w = 1j * (self.nodes - self.center) * (2.0 * np.pi / q)
            return self.nodes, w
        w = (np.roll(self.nodes, -1) - np.roll(self.nodes, 1)) / 2.0
        return self.nodes, w


def circle_contour(center, radius, q=64):
    """Uniform nodes offset by half a step, so none sits exactly on the real
    axis; real-axis samples are where finite-window truncations can go
    exactly rank-deficient."""
    th = 2.0 * np.pi * (np.arange(q) + 0.5) / q
    nodes = complex(center) + float(radius) * np.exp(1j * th)
    return Contour(nodes=nodes, kind="circle", center=complex(center), radius=float(radius))


def validate_contour(symbol, contour, cert, grid=None):
    """Check the resolvent-invertibility condition along the loop: every node
    keeps sigma_min(H(eta,t) - z) positive for all (eta, t), with Lipschitz
    margins both along the arcs and between torus grid points."""
    if grid is None:
        grid = (cert.g_eta, cert.g_t)
    g_eta, g_t = grid
    evs = np.linalg.eigvalsh(symbol.evaluate_grid(g_eta, g_t))
    angle_margin = 0.5 * (
        symbol.hoppings.lipschitz_eta() * 2.0 * np.pi / g_eta
        + symbol.hoppings.lipschitz_t() * 2.0 * np.pi / g_t
    )
    nodes = contour.nodes
    if contour.kind == "circle":
        arc_half = contour.radius * np.pi / nodes.size
    else:
        arc_half = 0.5 * np.abs(np.roll(nodes, -1) - nodes).max()
    # sigma_min(H - z) = dist(z, spec H) for Hermitian H
    dist = np.abs(evs[None, ...] - nodes[:, None, None, None]).min(axis=3)
    clearance = float(dist.min() - angle_margin - arc_half)
    if clearance <= 0.0:
        s, i, j = np.unravel_index(np.argmin(dist), dist.shape)
        th_eta = grid_angles(g_eta)
        th_t = grid_angles(g_t)
        raise ContourError(
            f"contour clearance {clearance:.3e} <= 0 at node z={nodes[s]:.6g}, "
            f"(theta_eta, theta_t)=({th_eta[i]:.4f}, {th_t[j]:.4f})",
            z=nodes[s], eta=np.exp(1j * th_eta[i]), t=np.exp(1j * th_t[j]),
        )
    return replace(contour, validated=True, clearance=clearance)


def default_gamma(symbol, cert, q=64, grid=None, max_grid=512):
    """Circle through mu and E_min - rho (rho = one certified gap width),
    enclosing exactly the spectrum below mu. Validated before return; the
    validation grid refines until its Lipschitz margin stops masking the
    true clearance."""
    if not cert.certified:
        raise GapError("cannot build a gap loop without a certified gap")
    rho = cert.gap_width
    if not np.isfinite(rho):
        rho = max(cert.margin, 1.0)
    left = (cert.e_min - cert.margin) - rho
    contour = circle_contour((cert.mu + left) / 2.0, (cert.mu - left) / 2.0, q)
    if grid is not None:
        return validate_contour(symbol, contour, cert, grid=grid)
    g = max(cert.g_eta, cert.g_t, 64)
    while True:
        try:
            return validate_contour(symbol, contour, cert, grid=(g, g))
        except ContourError:
            if g >= max_grid:
                raise
            g *= 2


def _resolvent_sum(h, contour):
    z, w = contour.quadrature()
    n = h.shape[0]
    shifted = z[:, None, None] * np.eye(n) - h[None, :, :]
    smin = np.linalg.svd(shifted, compute_uv=False)[:, -1]
    smax = np.abs(z).max() + np.linalg.norm(h, 2)
    bad = smin < RESOLVENT_SMIN_TOL * smax
    if np.any(bad):
        s = int(np.argmax(bad))
        raise ContourError(
            f"near-singular resolvent at contour node z={z[s]:.6g} (sigma_min={smin[s]:.3e})",
            z=z[s],
        )
    inv = np.linalg.inv(shifted)
    return np.tensordot(w, inv, axes=(0, 0)) / (2j * np.pi)


def riesz_projection(symbol, eta, t, gamma, refine=True):
    """(1/2 pi i) * contour integral of the resolvent by the trapezoid rule.

    On circle contours the rule converges geometrically; with refine=True the
    node count doubles until two successive results differ by < 1e-9."""
    if not gamma.validated:
        raise ContourError("contour must be validated for this symbol")
    h = symbol.evaluate(eta, t)
    p = _resolvent_sum(h, gamma)
    if not refine or gamma.kind != "circle":
        return p
    q = gamma.nodes.size
    for _ in range(5):
        finer = gamma.with_nodes(2 * q)
        p2 = _resolvent_sum(h, finer)
        if np.linalg.norm(p2 - p, 2) < QUAD_REFINE_TOL:
            return p2
        p, q = p2, 2 * q
    raise ContourError(f"contour quadrature did not converge below {QUAD_REFINE_TOL}")


def fermi_projection(symbol, eta, t, mu):
    """Sum of eigenprojectors below mu; the eigendecomposition cross-check
    for riesz_projection."""
    w, v = np.linalg.eigh(symbol.evaluate(eta, t))
    if np.abs(w - mu).min() < 1e-10:
        raise GapError(f"eigenvalue within 1e-10 of mu={mu} at (eta,t)=({eta},{t})")
    sel = w < mu
    return v[:, sel] @ v[:, sel].conj().T


def _kernel_cut(svals, q, dim_hint, sigma_tol, ratio_min):
    """Kernel dimension from a descending singular-value profile, validating
    that the profile actually separates at the cut."""
    smax = svals[0] if svals.size else 0.0
    if smax == 0.0:
        return q
    if dim_hint is None:
        r = int((svals < sigma_tol * smax).sum())
    else:
        r = int(dim_hint)
        if r > q:
            raise ConditioningError(f"dim_hint {r} exceeds column count {q}", svals)
    if r > 0:
        s_keep = svals[q - r - 1] if r < q else np.inf
        s_drop = svals[q - r]
        if s_drop >= sigma_tol * smax or (
            np.isfinite(s_keep) and s_keep / max(s_drop, 1e-300) < ratio_min
        ):
            raise ConditioningError(
                f"ambiguous kernel dimension {r}: singular values around the cut "
                f"are {s_keep:.3e} / {s_drop:.3e} (smax={smax:.3e})",
                singular_values=svals,
            )
    elif dim_hint is not None and svals[-1] < sigma_tol * smax:
        raise ConditioningError("dim_hint 0 but kernel-scale singular values present", svals)
    return r


def kernel_frame(a, dim_hint=None, sigma_tol=SIGMA_TOL, ratio_min=SV_RATIO_MIN,
                 with_svals=False, gram=False):
    """Orthonormal basis of the numerical kernel of a p x q matrix.

    Kernel vectors are the right singular vectors with singular value below
    sigma_tol * sigma_max. With dim_hint, the dimension is pinned and an
    ambiguous singular-value profile (gap ratio below ratio_min across the
    cut) raises ConditioningError. gram=True computes the right singular
    pairs from the q x q Gram matrix, cheaper for large nearly-square
    inputs; small singular values then bottom out near
    sqrt(eps) * sigma_max, which does not affect the kernel subspace.
    """
    a = np.asarray(a, dtype=complex)
    q = a.shape[1]
    if gram:
        w, v = np.linalg.eigh(a.conj().T @ a)
        svals = np.sqrt(np.clip(w[::-1], 0.0, None))   # descending
        vecs = v[:, ::-1]
    else:
        _, svals, vh = np.linalg.svd(a)
        if svals.size < q:
            svals = np.concatenate([svals, np.zeros(q - svals.size)])
        vecs = vh.conj().T
    r = _kernel_cut(svals, q, dim_hint, sigma_tol, ratio_min)
    frame = vecs[:, q - r:][:, ::-1] if r else np.zeros((q, 0), dtype=complex)
    if with_svals:
        return frame, svals
    return frame


def subspace_angle(f1, f2):
    """sin of the largest principal angle between the column spans of two
    orthonormal frames of equal rank; accurate for small angles."""
    r1 = np.linalg.norm(f2 - f1 @ (f1.conj().T @ f2), 2)
    r2 = np.linalg.norm(f1 - f2 @ (f2.conj().T @ f1), 2)
    return max(float(r1), float(r2))


@dataclass(frozen=True)
class ProjectorField:
    """Doubly periodic grid of rank-r orthogonal projectors of size d x d.

    Stored either as explicit projector matrices (data, shape (g1,g2,d,d))
    or as orthonormal frames (frames, shape (g1,g2,d,r)); exactly one is set.
    """

    g1: int
    g2: int
    dim: int
    rank: int
    data: np.ndarray = field(default=None, repr=False)
    frames: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if (self.data is None) == (self.frames is None):
            raise ValueError("exactly one of data/frames must be given")

    def frame_field(self):
        """Orthonormal frame at every grid point, (g1, g2, d, r). For
        matrix-backed fields, the top-r eigenvectors of each projector."""
        if self.frames is not None:
            return self.frames
        _, v = np.linalg.eigh(self.data)
        return np.ascontiguousarray(v[..., self.dim - self.rank:])

    def projector(self, i, j):
        if self.data is not None:
            return self.data[i, j]
        f = self.frames[i, j]
        return f @ f.conj().T

    def validate(self, idem_tol=PROJ_IDEM_TOL, herm_tol=PROJ_HERM_TOL, trace_tol=PROJ_TRACE_TOL):
        """Check P^2 = P, P = P^dagger, tr P = rank at every grid point."""
        if self.data is not None:
            p = self.data
            idem = np.abs(np.einsum("ijab,ijbc->ijac", p, p) - p).max()
            herm = np.abs(p - p.conj().transpose(0, 1, 3, 2)).max()
            traces = np.einsum("ijaa->ij", p).real
        else:
            f = self.frames
            gram = np.einsum("ijab,ijac->ijbc", f.conj(), f)
            eye = np.eye(self.rank)
            idem = np.abs(gram - eye).max()
            herm = 0.0
            traces = np.einsum("ijbb->ij", gram).real
        if idem > idem_tol:
            raise ConditioningError(f"projector idempotency defect {idem:.3e} > {idem_tol}")
        if herm > herm_tol:
            raise ConditioningError(f"projector hermiticity defect {herm:.3e} > {herm_tol}")
        tdef = np.abs(traces - self.rank).max()
        if tdef > trace_tol:
            raise ConditioningError(f"projector trace defect {tdef:.3e} > {trace_tol}")
        return True


def band_envelope(symbol, g_eta, g_t):
    """Per-band extrema over eta for each t: (t_angles, mins, maxs) with
    mins/maxs of shape (g_t, n). The data behind spectrum plots."""
    evs = np.linalg.eigvalsh(symbol.evaluate_grid(g_eta, g_t))
    return grid_angles(g_t), evs.min(axis=0), evs.max(axis=0)


def band_edges(symbol, grid=(64, 64)):
    """Global per-band (min, max) over the bitorus grid."""
    evs = np.linalg.eigvalsh(symbol.evaluate_grid(*grid))
    return evs.min(axis=(0, 1)), evs.max(axis=(0, 1))


def gap_midpoints(symbol, grid=(64, 64), min_width=1e-8):
    """Midpoints of the open spectral gaps, keyed by the number of bands
    below (1-based gap index r means r bands below mu). Band touchings are
    not gaps."""
    lo, hi = band_edges(symbol, grid)
    out = {}
    for b in range(symbol.n - 1):
        if lo[b + 1] - hi[b] > min_width:
            out[b + 1] = float((hi[b] + lo[b + 1]) / 2.0)
    return out
