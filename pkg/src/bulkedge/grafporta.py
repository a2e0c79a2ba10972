"""Kernel bundle of the truncated flat operators, its Chern number over the
gap loop times the t-circle, the transfer-matrix oracle, and the edge-state
detector g with its local winding.

The flat operator keeps block rows n = k..L-1 of H(t) - z against block
columns n = 0..L-1 (Dirichlet at the right wall). When it has full row rank
its kernel has dimension exactly kN, and the kernel converges to the space of
right-decaying solutions exponentially in L; the certified smallest-singular-
value margin plus an L-doubling stability check replace any ad-hoc filtering.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .bulk import ORIENTATION, chern_number
from .edge import edge_matrix, plan_for
from .errors import (
    ConditioningError,
    InconsistentFiberError,
    ModelError,
    RefineGridError,
    SpectralLocalizationError,
    UnsupportedModelError,
)
from .model import grid_angles
from .spectral import (
    SIGMA_TOL,
    SV_RATIO_MIN,
    ProjectorField,
    _kernel_cut,
    certify_gap,
    default_gamma,
    kernel_frame,
    subspace_angle,
)

TAU_SURJ = 1e-6
FRAME_STABILITY_TOL = 1e-7
FIBER_RESIDUAL_TOL = 1e-6
GRAM_KERNEL_CUTOFF = 96     # above this column count the Gram route is cheaper
WINDING_STEP_LIMIT = np.pi / 2
HOLONOMY_INT_TOL = 0.1


@dataclass(frozen=True)
class FlatOperatorPlan:
    """Truncation parameters of the flat operator: k deleted block rows and
    an L-block window, giving shape (L-k)N x LN."""

    k: int
    l: int
    n: int
    r: int
    surj_margin: float = 0.0      # min over the certification grid of smin/smax
    cert_grid: tuple = (0, 0)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be a positive integer")
        if self.l < 4 * self.k or self.l < 4 * self.r:
            raise ValueError(f"window l={self.l} too short (need l >= 4k and l >= 4r)")

    @property
    def rows(self):
        return (self.l - self.k) * self.n

    @property
    def cols(self):
        return self.l * self.n

    @property
    def kernel_dim(self):
        return self.k * self.n


def _flat_base(symbol, t, plan):
    """Block rows k..L-1 of H(t) against block columns 0..L-1."""
    n, l, k, r = plan.n, plan.l, plan.k, plan.r
    h = np.zeros((plan.rows, plan.cols), dtype=complex)
    for j in range(-r, r + 1):
        aj = symbol.hoppings.a_matrix(j, t)
        if not np.any(aj):
            continue
        for row in range(k, l):
            col = row - j
            if 0 <= col < l:
                h[(row - k) * n:(row - k + 1) * n, col * n:(col + 1) * n] = aj
    return h


def _shift_z(base, z, plan):
    h = base.copy()
    h[np.arange(plan.rows), np.arange(plan.kernel_dim, plan.cols)] -= z
    return h


def flat_matrix(symbol, z, t, plan):
    """Block rows k..L-1 of H(t) - z against block columns 0..L-1."""
    return _shift_z(_flat_base(symbol, t, plan), z, plan)


def _fiber_frame(symbol, z, t, plan, sigma_tol=None, with_svals=False):
    kwargs = {} if sigma_tol is None else {"sigma_tol": sigma_tol}
    return kernel_frame(
        flat_matrix(symbol, z, t, plan),
        dim_hint=plan.kernel_dim,
        gram=plan.cols > GRAM_KERNEL_CUTOFF,
        with_svals=with_svals,
        **kwargs,
    )


def _surjectivity_margin(symbol, nodes, t_count, plan):
    """Worst smin/smax of the flat operator over the (z, t) certification
    grid, via the row Gram matrix (smin is a relative margin; squaring does
    not hurt at the 1e-6 threshold scale)."""
    worst = np.inf
    worst_at = None
    ts = np.exp(1j * grid_angles(t_count))
    for t in ts:
        base = _flat_base(symbol, t, plan)
        stack = np.broadcast_to(base, (len(nodes),) + base.shape).copy()
        rows = np.arange(plan.rows)
        cols = np.arange(plan.kernel_dim, plan.cols)
        stack[:, rows, cols] -= np.asarray(nodes)[:, None]
        gram = stack @ stack.conj().transpose(0, 2, 1)
        w = np.linalg.eigvalsh(gram)
        ratios = np.sqrt(np.clip(w[:, 0], 0.0, None) / w[:, -1])
        i = int(np.argmin(ratios))
        if ratios[i] < worst:
            worst, worst_at = float(ratios[i]), (nodes[i], t)
    return worst, worst_at


def select_k(symbol, gamma, k=None, l=None, k_max=None, tau_surj=TAU_SURJ,
             cert_t=32, cert_z_stride=2, l_cap=512):
    """Smallest k with a certified full-row-rank flat operator, and an L
    large enough that doubling it moves no kernel fiber by more than the
    frame-stability tolerance in subspace angle."""
    n, r = symbol.n, symbol.hoppings.r
    if k_max is None:
        k_max = max(8 * max(r, 1), 4)
    nodes = gamma.nodes[::cert_z_stride]
    candidates = [k] if k is not None else list(range(max(r, 1), k_max + 1))
    margins = {}
    for kk in candidates:
        ll = l if l is not None else max(4 * kk, 4 * r, 32)
        plan = FlatOperatorPlan(k=kk, l=ll, n=n, r=r)
        margin, worst_at = _surjectivity_margin(symbol, nodes, cert_t, plan)
        margins[kk] = (margin, worst_at)
        if margin <= tau_surj:
            continue
        try:
            if l is None:
                while True:
                    plan2 = FlatOperatorPlan(k=kk, l=2 * plan.l, n=n, r=r)
                    worst_angle = 0.0
                    for z in gamma.nodes[::8]:
                        for tt in grid_angles(4):
                            f1 = _fiber_frame(symbol, z, np.exp(1j * tt), plan)
                            f2 = _fiber_frame(symbol, z, np.exp(1j * tt), plan2)
                            f2r = np.linalg.qr(f2[: plan.l * n])[0]
                            worst_angle = max(worst_angle, subspace_angle(f1, f2r))
                    if worst_angle <= FRAME_STABILITY_TOL:
                        break
                    if 2 * plan.l > l_cap:
                        raise ConditioningError(
                            f"k={kk}: kernel frames not stable below l={l_cap} "
                            f"(angle {worst_angle:.2e})"
                        )
                    plan = plan2
                margin, _ = _surjectivity_margin(symbol, nodes, cert_t, plan)
        except ConditioningError:
            if k is not None:
                raise
            continue
        return FlatOperatorPlan(k=kk, l=plan.l, n=n, r=r,
                                surj_margin=margin,
                                cert_grid=(len(nodes), cert_t))
    detail = ", ".join(f"k={kk}: {m:.2e} at z={at[0]:.4g}" for kk, (m, at) in margins.items())
    raise ModelError(f"no k <= {k_max} certifies surjectivity above {tau_surj} ({detail})")


@dataclass(frozen=True)
class GPField:
    """Kernel-bundle frames over the (z along gamma) x (t-circle) grid."""

    field: ProjectorField
    plan: FlatOperatorPlan
    gamma: object
    min_sv_ratio: float       # smallest gap ratio across the kernel cut seen
    max_residual: float       # largest kernel singular value seen

    @property
    def frames(self):
        return self.field.frames


def gp_field(symbol, gamma, g_t, plan, sigma_tol=None):
    """Kernel fiber frame at every (gamma node, t) grid point, with the rank
    law and the eigenvalue-equation residual enforced."""
    kn = plan.kernel_dim
    q = plan.cols
    nodes = gamma.nodes
    ts = np.exp(1j * grid_angles(g_t))
    frames = np.zeros((nodes.size, g_t, q, kn), dtype=complex)
    min_ratio = np.inf
    max_resid = 0.0
    stol = SIGMA_TOL if sigma_tol is None else sigma_tol
    rows = np.arange(plan.rows)
    cols = np.arange(kn, q)
    for j, t in enumerate(ts):
        base = _flat_base(symbol, t, plan)
        stack = np.broadcast_to(base, (nodes.size,) + base.shape).copy()
        stack[:, rows, cols] -= nodes[:, None]
        gram = stack.conj().transpose(0, 2, 1) @ stack
        w, v = np.linalg.eigh(gram)
        svals = np.sqrt(np.clip(w[:, ::-1], 0.0, None))
        for i, z in enumerate(nodes):
            try:
                r = _kernel_cut(svals[i], q, kn, stol, SV_RATIO_MIN)
            except ConditioningError as exc:
                raise ConditioningError(
                    f"kernel dimension defect at (z={z:.5g}, t-index {j}): {exc}; "
                    f"increase l or reconsider k",
                    singular_values=exc.singular_values,
                ) from exc
            frames[i, j] = v[i, :, :r]
            min_ratio = min(min_ratio, float(svals[i, q - kn - 1] / max(svals[i, q - kn], 1e-300)))
            max_resid = max(max_resid, float(svals[i, -1]))
    if max_resid > FIBER_RESIDUAL_TOL:
        raise InconsistentFiberError(
            f"fiber residual {max_resid:.3e} exceeds {FIBER_RESIDUAL_TOL}; increase l"
        )
    pf = ProjectorField(g1=nodes.size, g2=g_t, dim=plan.cols, rank=kn, frames=frames)
    pf.validate()
    return GPField(field=pf, plan=plan, gamma=gamma,
                   min_sv_ratio=float(min_ratio), max_residual=max_resid)


def gp_index(symbol, mu, g_t=24, cert_grid=(64, 64), gamma_nodes=64, k=None,
             l=None, max_refinements=2, return_result=False, cert=None,
             gamma=None, tau_surj=TAU_SURJ, sigma_tol=None, trail=None):
    """Chern number of the kernel bundle over the gap-loop torus under the
    frozen orientation (the trivial cokernel summand contributes nothing),
    refined in the t-direction until two successive grids agree."""
    if cert is None:
        cert = certify_gap(symbol, mu, cert_grid)
    if gamma is None:
        gamma = default_gamma(symbol, cert, q=gamma_nodes)
    plan = select_k(symbol, gamma, k=k, l=l, tau_surj=tau_surj)
    prev = None
    # climb from one rung below the configured grid: agreement of the coarse
    # and configured rungs already makes two consecutive equal integers
    g = g_t // 2 if g_t // 2 >= 8 else g_t
    for _ in range(max_refinements + 1):
        fld = gp_field(symbol, gamma, g, plan, sigma_tol=sigma_tol)
        res = chern_number(fld.field, ORIENTATION)
        if trail is not None:
            trail.append({"g_z": gamma.nodes.size, "g_t": g, "value": res.chern,
                          "admissible": res.admissible})
        if res.admissible and prev is not None and prev.chern == res.chern:
            return (res.chern, res, fld, cert) if return_result else res.chern
        prev = res if res.admissible else None
        g *= 2
    raise RefineGridError(f"kernel-bundle Chern number did not stabilize (last g_t {g//2})")


def transfer_matrix_fiber(symbol, z, t, l, cond_tol=1e-10, unit_circle_tol=1e-8):
    """Decaying-solution oracle for the fiber: companion matrix of the
    difference equation sum_j A_j(t) phi_{n-j} = z phi_n, restricted to its
    contracting invariant subspace and written out on the window.

    Requires invertible extreme hoppings A_{+-R}; valid for z off the bulk
    spectrum at this t, where no transfer eigenvalue lies on the unit circle
    and exactly RN lie inside.
    """
    n, r = symbol.n, symbol.hoppings.r
    if r < 1:
        raise UnsupportedModelError("transfer matrix needs lattice hopping range >= 1")
    am = {j: symbol.hoppings.a_matrix(j, t) for j in range(-r, r + 1)}
    for jj in (-r, r):
        sv = np.linalg.svd(am[jj], compute_uv=False)
        if sv[-1] <= cond_tol * max(sv[0], 1.0):
            raise UnsupportedModelError(
                f"extreme hopping A_{jj:+d}(t) is singular (smin={sv[-1]:.2e}); "
                "the difference equation is not solvable by an initial condition"
            )
    inv = np.linalg.inv(am[-r])
    dim = 2 * r * n
    trans = np.zeros((dim, dim), dtype=complex)
    for i in range(2 * r - 1):
        trans[i * n:(i + 1) * n, (i + 1) * n:(i + 2) * n] = np.eye(n)
    for i in range(2 * r):
        j = r - i
        block = am[j] - z * np.eye(n) if j == 0 else am[j]
        trans[(2 * r - 1) * n:, i * n:(i + 1) * n] = -inv @ block
    eigs = np.linalg.eigvals(trans)
    if np.any(np.abs(np.abs(eigs) - 1.0) < unit_circle_tol):
        raise SpectralLocalizationError(
            f"transfer eigenvalue on the unit circle at z={z:.6g}; "
            "z is too close to the bulk spectrum"
        )
    tt, zz, sdim = scipy.linalg.schur(trans, output="complex",
                                      sort=lambda lam: abs(lam) < 1.0)
    if sdim != r * n:
        raise SpectralLocalizationError(
            f"contracting subspace has dimension {sdim}, expected {r * n}"
        )
    # Iterate inside the invariant subspace (the full companion map would
    # amplify rounding error along the growing modes).
    zc = zz[:, :sdim]
    t11 = tt[:sdim, :sdim]
    window = np.zeros((l * n, sdim), dtype=complex)
    power = np.eye(sdim, dtype=complex)
    for row in range(l):
        window[row * n:(row + 1) * n] = (zc @ power)[:n]
        power = t11 @ power
    return np.linalg.qr(window)[0]


def g_matrix(symbol, z, t, plan, fiber):
    """Matrix of the edge-state detector: (H#(t) - z) applied to the fiber
    lands in the first k blocks; rows >= k must vanish."""
    eplan = plan_for(symbol, plan.l)
    image = (edge_matrix(symbol, t, eplan) - z * np.eye(plan.cols)) @ fiber
    kn = plan.kernel_dim
    tail = np.abs(image[kn:, :]).max() if image[kn:, :].size else 0.0
    if tail > FIBER_RESIDUAL_TOL:
        raise InconsistentFiberError(
            f"detector image leaks below the first k blocks ({tail:.3e})"
        )
    return image[:kn, :]


def det_g_winding(symbol, t_star, z0, rho, plan, q=64, q_cap=512):
    """Order of the zero of det g at an isolated edge eigenvalue: sample a
    circle of radius rho in the z-plane at fixed t, parallel-transport the
    fiber gauge between nodes, accumulate the argument of det g, and remove
    the transport holonomy so the winding is gauge-independent."""
    t = np.exp(1j * t_star)
    eplan = plan_for(symbol, plan.l)
    h_edge = edge_matrix(symbol, t, eplan)
    kn = plan.kernel_dim
    eye = np.eye(plan.cols)
    while True:
        zs = z0 + rho * np.exp(2j * np.pi * np.arange(q) / q)
        first = None
        prev = None
        dets = []
        for step in range(q + 1):
            z = zs[step % q]
            f = _fiber_frame(symbol, z, t, plan)
            if prev is not None:
                u, _, vh = np.linalg.svd(prev.conj().T @ f)
                f = f @ (u @ vh).conj().T
            else:
                first = f
            image = (h_edge - z * eye) @ f
            tail = np.abs(image[kn:, :]).max()
            if tail > FIBER_RESIDUAL_TOL:
                raise InconsistentFiberError(f"detector leak {tail:.3e} on winding circle")
            dets.append(np.linalg.det(image[:kn, :]))
            prev = f
        dets = np.asarray(dets)
        steps = np.angle(dets[1:] / dets[:-1])
        if np.abs(steps).max() < WINDING_STEP_LIMIT:
            break
        if 2 * q > q_cap:
            raise RefineGridError(
                f"det g argument step {np.abs(steps).max():.3f} >= pi/2 at q={q}"
            )
        q *= 2
    naive = steps.sum() / (2.0 * np.pi)
    u, _, vh = np.linalg.svd(first.conj().T @ prev)
    holonomy = np.angle(np.linalg.det(u @ vh))
    corrected = naive - holonomy / (2.0 * np.pi)
    winding = int(round(corrected))
    if abs(corrected - winding) > HOLONOMY_INT_TOL:
        raise ConditioningError(
            f"holonomy-corrected winding {corrected:.4f} is not close to an integer"
        )
    if winding < 0:
        raise ConditioningError(f"negative det g winding {winding} (zeros have positive order)")
    return winding


@dataclass(frozen=True)
class CrossingIndex:
    t_star: float
    eigenvalue: float
    direction: int
    mult: int
    winding: int
    ker_dim: int


def crossing_windings(symbol, sweep, plan, flow, rho_cap=0.2, ker_tol=1e-5):
    """Local index data at every counted edge crossing point: re-diagonalize
    at the interpolated crossing angle, isolate the eigenvalue, and compare
    the det-g winding and kernel dimension of g with the crossing
    multiplicity. Crossing records of parallel degenerate branches at the
    same point are folded into one multiplicity-r_a crossing.

    The signed sum of windings reproduces the spectral flow: this is the
    crossing-by-crossing decomposition of the edge index.
    """
    eplan = sweep.plan
    lo, hi = sweep.window
    step = 2.0 * np.pi / sweep.t_angles.size
    groups = []
    for cr in sorted(flow.crossings, key=lambda c: (c.t_star, c.direction)):
        for grp in groups:
            if abs(grp[0].t_star - cr.t_star) < 0.5 * step \
                    and grp[0].direction == cr.direction:
                grp.append(cr)
                break
        else:
            groups.append([cr])
    out = []
    for grp in groups:
        t_star = float(np.mean([cr.t_star for cr in grp]))
        t = np.exp(1j * t_star)
        w = np.linalg.eigvalsh(edge_matrix(symbol, t, eplan))
        in_win = w[(w > lo) & (w < hi)]
        lam = in_win[np.argmin(np.abs(in_win - sweep.mu))]
        cluster = in_win[np.abs(in_win - lam) < 1e-9]
        others = in_win[np.abs(in_win - lam) >= 1e-9]
        iso = np.abs(others - lam).min() if others.size else min(hi - lam, lam - lo)
        rho = 0.5 * min(iso, rho_cap, hi - lam, lam - lo)
        winding = det_g_winding(symbol, t_star, float(lam), float(rho), plan)
        fiber = _fiber_frame(symbol, float(lam), t, plan)
        g = g_matrix(symbol, float(lam), t, plan, fiber)
        sv = np.linalg.svd(g, compute_uv=False)
        ker = int((sv < ker_tol * sv[0]).sum())
        out.append(CrossingIndex(t_star=t_star, eigenvalue=float(lam),
                                 direction=grp[0].direction, mult=len(cluster),
                                 winding=winding, ker_dim=ker))
    return out
