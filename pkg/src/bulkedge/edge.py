"""Half-space (block Toeplitz) compressions, edge spectra, and the edge index
as Phillips' spectral flow of the family over the t-circle.

The semi-infinite compression is represented by a finite window of L blocks
with sharp (Dirichlet) truncation. The window has two edges; in the certified
bulk gap every in-gap eigenvector is exponentially localized at one of them,
so a left-mass filter selects the physical (left) edge before flow counting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .bulk import ORIENTATION
from .errors import FlowError, GapError, RefineGridError
from .model import grid_angles
from .spectral import certify_gap

DEGENERACY_TOL = 1e-9
MATCH_DEGEN_REL = 1e-6     # of the window width; avoided-crossing hybridization scale
OVERLAP_FLOOR = 0.25
AMBIGUITY_RATIO = 0.95
CUT_VALUE_TOL = 1e-11
MASS_JUMP = 0.4            # left-mass step marking a passage through an exact crossing


@dataclass(frozen=True)
class EdgeOperatorPlan:
    """Finite window of the half-space compression: blocks n = 0..l-1,
    Dirichlet beyond. Sweeps and indices require l to dominate the hopping
    range (l >= 4r); bare matrix assembly works for any l >= 1."""

    l: int
    n: int
    r: int
    boundary: str = "dirichlet"

    def __post_init__(self):
        if self.boundary != "dirichlet":
            raise ValueError(f"unsupported boundary {self.boundary!r}")
        if self.l < 1:
            raise ValueError(f"window l={self.l} must be positive")

    def require_sweepable(self):
        if self.l < max(4 * self.r, 2):
            raise ValueError(f"window l={self.l} too short for hopping range r={self.r}")

    def require_k(self, k):
        if self.l < 4 * k:
            raise ValueError(f"window l={self.l} too short for k={k} (need l >= 4k)")


def plan_for(symbol, l):
    return EdgeOperatorPlan(l=int(l), n=symbol.n, r=symbol.hoppings.r)


def edge_matrix(symbol, t, plan):
    """Block-banded L N x L N matrix with block (n, n') = A_{n-n'}(t)."""
    n, l, r = plan.n, plan.l, plan.r
    h = np.zeros((l * n, l * n), dtype=complex)
    for j in range(-r, r + 1):
        aj = symbol.hoppings.a_matrix(j, t)
        if not np.any(aj):
            continue
        for row in range(l):
            col = row - j
            if 0 <= col < l:
                h[row * n:(row + 1) * n, col * n:(col + 1) * n] = aj
    return h


@dataclass
class Branch:
    """A matched chain of in-window eigenvalues over consecutive t-grid
    indices (wrapping). Exactly degenerate families appear as parallel
    branches with equal values; mult is retained for synthetic sweeps."""

    bid: int
    start: int
    values: np.ndarray
    masses: np.ndarray
    mult: int
    g_t: int
    closed: bool = False

    def indices(self):
        return (self.start + np.arange(len(self.values))) % self.g_t

    def steps(self):
        """(grid step s, y-index pairs) for consecutive points; a closed
        branch also yields the wrap step from its last point to its first."""
        m = len(self.values)
        last = m if self.closed else m - 1
        for a in range(last):
            yield (self.start + a) % self.g_t, a, (a + 1) % m


@dataclass(frozen=True)
class Crossing:
    branch: int
    step: int                 # grid step index s: crossing in (th[s], th[s+1])
    t_lo: float
    t_hi: float
    t_star: float
    direction: int            # +1 increasing through mu, -1 decreasing
    left_mass: float
    mult: int


@dataclass
class EdgeSweep:
    """Per-t in-gap spectra with localization weights, branch-matched."""

    t_angles: np.ndarray
    branches: list
    window: tuple
    mu: float
    plan: EdgeOperatorPlan
    cert: object = field(repr=False, default=None)

    def rows(self):
        """(t, eigenvalue, left_mass, branch_id) rows, one per branch point
        per degenerate member, ordered by (t index, eigenvalue)."""
        out = []
        for b in self.branches:
            for idx, lam, w in zip(b.indices(), b.values, b.masses):
                out.extend([(float(self.t_angles[idx]), float(lam), float(w), b.bid)] * b.mult)
        out.sort(key=lambda row: (row[0], row[1], row[3]))
        return out


def edge_sweep(symbol, mu, plan, g_t, cert=None, cert_grid=(64, 64)):
    """Diagonalize the window at every t, keep the certified-gap window
    around mu, and connect branches by maximal eigenvector overlap.

    Matching is per eigenvector; within an exactly degenerate pair (values
    within DEGENERACY_TOL) any unitary mixing is accepted, so degenerate
    families come out as parallel branches with equal values.
    """
    plan.require_sweepable()
    if cert is None:
        cert = certify_gap(symbol, mu, cert_grid)
    if not cert.certified:
        raise GapError(f"edge sweep requires a certified bulk gap at mu={mu}")
    lo, hi = cert.window()
    th = grid_angles(g_t)
    n = plan.n
    half = (plan.l // 2) * n
    per_index = []
    for angle in th:
        w, v = np.linalg.eigh(edge_matrix(symbol, np.exp(1j * angle), plan))
        sel = (w > lo) & (w < hi)
        vals = w[sel]
        vecs = v[:, sel]
        lm = (np.abs(vecs[:half, :]) ** 2).sum(axis=0)
        per_index.append((vals, vecs, lm))
    max_jump = 0.5 * (hi - lo)
    # A wrong assignment between candidates this close in energy cannot move
    # any mu-crossing; exempting them accepts arbitrary gauge mixing inside
    # (near-)degenerate blocks, e.g. at avoided left-right crossings.
    degen_tol = max(DEGENERACY_TOL, MATCH_DEGEN_REL * (hi - lo))
    succ = {}
    for s in range(g_t):
        vals_a, vecs_a, _ = per_index[s]
        vals_b, vecs_b, _ = per_index[(s + 1) % g_t]
        if vals_a.size == 0 or vals_b.size == 0:
            continue
        ov = np.abs(vecs_a.conj().T @ vecs_b)
        rows, cols = linear_sum_assignment(-ov)
        assigned_to = {b: a for a, b in zip(rows, cols)}
        for a, b in zip(rows, cols):
            if ov[a, b] < OVERLAP_FLOOR:
                continue
            for b2 in range(vals_b.size):
                if b2 == b or ov[a, b2] < AMBIGUITY_RATIO * ov[a, b] \
                        or abs(vals_b[b2] - vals_b[b]) <= degen_tol:
                    continue
                # distinct targets, but if the competing source is degenerate
                # with this one, either assignment gives the same value chains
                a2 = assigned_to.get(b2)
                if a2 is not None and abs(vals_a[a2] - vals_a[a]) <= degen_tol:
                    continue
                raise FlowError(
                    f"ambiguous branch match at t-step {s} "
                    f"(overlaps {ov[a, b]:.3f} vs {ov[a, b2]:.3f}); refine g_t"
                )
            if abs(vals_b[b] - vals_a[a]) > max_jump:
                raise FlowError(
                    f"eigenvalue moved {abs(vals_b[b] - vals_a[a]):.3e} in one "
                    f"t-step (window half-width {max_jump:.3e}); refine g_t"
                )
            succ[(s, a)] = ((s + 1) % g_t, b)
    branches = _split_on_mass_jumps(_assemble_branches(per_index, succ, g_t), g_t)
    return EdgeSweep(t_angles=th, branches=branches, window=(lo, hi), mu=mu,
                     plan=plan, cert=cert)


def _split_on_mass_jumps(branches, g_t):
    """Cut chains where the left-mass jumps by more than MASS_JUMP in one
    step: there the matching passed through an exactly (or nearly) degenerate
    left-right crossing, where chain identity is not physical. Each piece is
    cleanly localized on one side."""
    out = []
    for b in branches:
        m = len(b.values)
        steps = m if b.closed else m - 1
        cuts = [i for i in range(steps)
                if abs(b.masses[(i + 1) % m] - b.masses[i]) > MASS_JUMP]
        if not cuts:
            out.append(b)
            continue
        if b.closed:
            pieces = []
            for ci, cstart in enumerate(cuts):
                cend = cuts[(ci + 1) % len(cuts)]
                length = (cend - cstart) % m or m
                pieces.append([(cstart + 1 + off) % m for off in range(length)])
        else:
            bounds = [0] + [c + 1 for c in cuts] + [m]
            pieces = [list(range(bounds[i], bounds[i + 1]))
                      for i in range(len(bounds) - 1) if bounds[i] < bounds[i + 1]]
        for piece in pieces:
            out.append(Branch(
                bid=-1, start=(b.start + piece[0]) % g_t,
                values=b.values[piece], masses=b.masses[piece],
                mult=b.mult, g_t=g_t, closed=False,
            ))
    out.sort(key=lambda br: (br.start, br.values[0]))
    for bid, br in enumerate(out):
        br.bid = bid
    return out


def _assemble_branches(per_index, succ, g_t):
    pred = {v: k for k, v in succ.items()}
    nodes = [(s, a) for s in range(g_t) for a in range(per_index[s][0].size)]
    seen = set()
    chains = []
    for node in nodes:
        if node in seen or node in pred:
            continue
        chain = [node]
        seen.add(node)
        while chain[-1] in succ:
            nxt = succ[chain[-1]]
            if nxt in seen:
                break
            chain.append(nxt)
            seen.add(nxt)
        chains.append((chain, False))
    for node in nodes:
        if node in seen:
            continue
        chain = [node]
        seen.add(node)
        while True:
            nxt = succ.get(chain[-1])
            if nxt is None or nxt == chain[0]:
                break
            chain.append(nxt)
            seen.add(nxt)
        chains.append((chain, True))
    chains.sort(key=lambda c: (c[0][0][0], per_index[c[0][0][0]][0][c[0][0][1]]))
    branches = []
    for bid, (chain, closed) in enumerate(chains):
        vals = np.array([per_index[s][0][a] for s, a in chain])
        masses = np.array([per_index[s][2][a] for s, a in chain])
        branches.append(Branch(bid=bid, start=chain[0][0], values=vals,
                               masses=masses, mult=1, g_t=g_t, closed=closed))
    return branches


@dataclass
class FlowAccount:
    crossings: list
    total: int
    rank_total: int            # literal Phillips rank-difference accumulation
    crossing_total: int        # signed transversal crossing count
    partition: list            # (cut index lo, cut index hi, cutoff c) used
    theta: float


def _detect_crossings(sweep, theta):
    mu = sweep.mu
    th = np.append(sweep.t_angles, np.pi)
    crossings = []
    mixed = []
    participating = {}
    for b in sweep.branches:
        branch_cross = []
        for s, a, a2 in b.steps():
            y1, y2 = b.values[a] - mu, b.values[a2] - mu
            c = (1 if y2 >= 0 else 0) - (1 if y1 >= 0 else 0)
            if c == 0:
                continue
            frac = y1 / (y1 - y2)
            wstar = b.masses[a] + (b.masses[a2] - b.masses[a]) * frac
            tstar = th[s] + frac * (th[s + 1] - th[s])
            branch_cross.append(Crossing(
                branch=b.bid, step=s, t_lo=float(th[s]), t_hi=float(th[s + 1]),
                t_star=float(tstar), direction=int(c), left_mass=float(wstar),
                mult=b.mult,
            ))
        passing = [cr.left_mass >= theta for cr in branch_cross]
        if branch_cross and any(passing) != all(passing):
            mixed.append(b.bid)
        if branch_cross:
            participating[b.bid] = all(passing)
        else:
            participating[b.bid] = bool(b.masses.mean() >= theta)
        crossings.extend(branch_cross)
    if mixed:
        raise FlowError(f"branches {mixed} have crossings on both sides of the "
                        f"localization threshold {theta}; refine g_t")
    return crossings, participating


def _phillips_partition(sweep, participating, theta, rng):
    """Literal Phillips bookkeeping: choose cut points t_i and cutoffs c_i so
    that no participating branch meets +-c_i inside an interval, then
    accumulate rank differences of the spectral window [0, c_i].

    Branches entering or leaving the tracked energy window mid-interval get a
    virtual segment out to the window boundary, so a cutoff can never be
    placed across an unobserved excursion.
    """
    g = sweep.t_angles.size
    mu = sweep.mu
    win_lo = sweep.window[0] - mu
    win_hi = sweep.window[1] - mu
    c_max = 0.95 * win_hi
    seg = {s: [] for s in range(g)}          # per grid step: (ylo, yhi)
    at_index = {s: [] for s in range(g)}     # per grid index: (y, mult)
    for b in sweep.branches:
        if not participating.get(b.bid, False):
            continue
        for idx, lam in zip(b.indices(), b.values):
            at_index[idx].append((lam - mu, b.mult))
        for s, a, a2 in b.steps():
            y1, y2 = b.values[a] - mu, b.values[a2] - mu
            seg[s].append((min(y1, y2), max(y1, y2)))
        if not b.closed:
            y_first = b.values[0] - mu
            y_last = b.values[-1] - mu
            for y, step in ((y_first, (b.start - 1) % g),
                            (y_last, (b.start + len(b.values) - 1) % g)):
                boundary = win_hi if y > 0 else win_lo
                seg[step].append((min(y, boundary), max(y, boundary)))

    def allowed_c(lo, hi):
        forbidden = []
        for s in range(lo, hi):
            for ylo, yhi in seg[s % g]:
                forbidden.append((ylo - CUT_VALUE_TOL, yhi + CUT_VALUE_TOL))
                forbidden.append((-yhi - CUT_VALUE_TOL, -ylo + CUT_VALUE_TOL))
        gaps = []
        events = sorted((max(a, 0.0), min(b, c_max)) for a, b in forbidden
                        if b > 0.0 and a < c_max)
        posn = 10 * CUT_VALUE_TOL
        for a, b in events:
            if a > posn:
                gaps.append((posn, a))
            posn = max(posn, b)
        if posn < c_max:
            gaps.append((posn, c_max))
        return [(a, b) for a, b in gaps if b - a > 10 * CUT_VALUE_TOL]

    def clean_cut(i):
        return all(abs(y) > CUT_VALUE_TOL for y, _ in at_index[i % g])

    base = next((s for s in range(g) if clean_cut(s)), None)
    if base is None:
        raise FlowError("every t-grid index carries an exact mu-crossing; refine g_t")
    intervals = []
    pos = base
    while pos < base + g:
        best = None
        end = pos + 1
        while end <= base + g:
            if clean_cut(end):
                gaps = allowed_c(pos, end)
                if gaps:
                    best = (end, gaps)
                else:
                    break
            end += 1
        if best is None:
            raise FlowError(f"no Phillips cutoff exists on step {pos % g}; refine g_t")
        end, gaps = best
        if rng is not None and end - pos > 1:
            choice = pos + 1 + int(rng.integers(0, end - pos))
            while choice < end and not (clean_cut(choice) and allowed_c(pos, choice)):
                choice += 1
            if choice < end:
                end = choice
                gaps = allowed_c(pos, end)
        if rng is None:
            a, b = max(gaps, key=lambda gpair: gpair[1] - gpair[0])
            c = (a + b) / 2
        else:
            weights = np.array([b - a for a, b in gaps])
            pick = int(rng.choice(len(gaps), p=weights / weights.sum()))
            a, b = gaps[pick]
            c = float(rng.uniform(a + (b - a) / 4, b - (b - a) / 4))
        intervals.append((pos, end, c))
        pos = end

    def rank_at(i, c):
        return sum(m for y, m in at_index[i % g] if 0.0 <= y <= c)

    total = sum(rank_at(hi, c) - rank_at(lo, c) for lo, hi, c in intervals)
    return total, intervals


def spectral_flow_phillips(sweep, theta=0.9, seed=0):
    """Spectral flow of the left-filtered edge family, computed twice: by the
    literal Phillips partition and by signed transversal crossing counting.
    The two totals must agree (and do, by construction of the partition)."""
    if not (theta == 0.0 or 0.5 < theta < 1.0):
        raise ValueError("theta must be 0 (unfiltered) or in (0.5, 1)")
    crossings, participating = _detect_crossings(sweep, theta)
    counted = [cr for cr in crossings if participating[cr.branch]]
    crossing_total = sum(cr.direction * cr.mult for cr in counted)
    rng = np.random.default_rng(seed) if seed is not None else None
    rank_total, partition = _phillips_partition(sweep, participating, theta, rng)
    if rank_total != crossing_total:
        raise FlowError(
            f"Phillips rank accumulation ({rank_total}) disagrees with crossing "
            f"count ({crossing_total}); refine g_t"
        )
    return FlowAccount(crossings=counted, total=rank_total,
                       rank_total=rank_total, crossing_total=crossing_total,
                       partition=partition, theta=theta)


def edge_index(symbol, mu, plan=None, g_t=96, theta=0.9, cert_grid=(64, 64),
               max_refinements=2, return_account=False, cert=None, trail=None,
               seed=0):
    """Oriented spectral flow of the half-space family, validated by doubling
    the window length and the t-grid until the integer is stable."""
    if plan is None:
        plan = plan_for(symbol, 64)
    if cert is None:
        cert = certify_gap(symbol, mu, cert_grid)
    if not cert.certified:
        raise GapError(f"edge index requires a certified gap at mu={mu}")
    l, g = plan.l, g_t
    for _ in range(max_refinements + 1):
        accounts = []
        sweeps = []
        for ll, gg in ((l, g), (2 * l, g), (l, 2 * g)):
            swp = edge_sweep(symbol, mu, plan_for(symbol, ll), gg, cert=cert)
            acc = spectral_flow_phillips(swp, theta=theta, seed=seed)
            sweeps.append(swp)
            accounts.append(acc)
            if trail is not None:
                trail.append({"l": ll, "g_t": gg, "value": ORIENTATION * acc.total})
        totals = {acc.total for acc in accounts}
        if len(totals) == 1:
            value = ORIENTATION * accounts[0].total
            return (value, accounts[0], sweeps[0], cert) if return_account else value
        l, g = 2 * l, 2 * g
    raise RefineGridError(f"edge index did not stabilize (last window l={l//2}, g_t={g//2})")
