"""Sparse walk evolution, spectra and geometry on finite community graphs.

Everything operates on a :class:`~commwalk.graphgen.CommunityGraph`.  The
module covers exact distribution evolution and total-variation mixing curves
for the simple, lazy and non-backtracking walks; relaxation times via
deflated power iteration; Dirichlet eigenvalues of vertex sets (eigen and
hitting-tail routes); spectral-profile and bottleneck-ratio estimates from
candidate-set sweeps; K-root detection and hitting; community occupation
statistics; and the exhaustive/sampled expansion and non-bipartiteness
checks used by the experiment layer.

Conventions
-----------
* The simple walk picks a uniform half-edge of the current vertex, so a
  self-loop at ``v`` is stepped onto with probability 2/d(v).  Its
  stationary law is pi(v) = d(v)/sum(d).
* The lazy walk holds with probability 1/2.
* The non-backtracking walk lives on directed edges (one state per
  half-edge: the edge just traversed, walker at its head).  Starting it
  from a vertex lifts the mass uniformly onto that vertex's outgoing
  edges, which consumes one graph step; helpers that report graph-time
  mixing account for the offset.
* Monte Carlo helpers draw from per-replicate (or per-step) keyed streams,
  so results are independent of scheduling and thread count.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy.sparse as sp

from ._rng import keyed_uniform, phase_rng, spawn_seeds
from .graphgen import CommunityGraph

WALK_KINDS = ("simple", "lazy", "nbrw")
POWER_TOL = 1e-8
POWER_MAX_ITER = 10**6
TV_SLACK = 1e-12


class WalkError(ValueError):
    """A graph or argument violates a precondition of the requested operation."""


# ---------------------------------------------------------------------------
# connectivity and transition kernels
# ---------------------------------------------------------------------------


def components(g: CommunityGraph) -> list[np.ndarray]:
    """Connected components as sorted vertex arrays, largest-first."""
    nbr = g.neighbor_indices()
    seen = np.zeros(g.n, dtype=bool)
    comps = []
    for s in range(g.n):
        if seen[s]:
            continue
        seen[s] = True
        frontier = np.array([s], dtype=np.int64)
        members = [frontier]
        while frontier.size:
            slots = np.concatenate([nbr[g.offsets[v]:g.offsets[v + 1]] for v in frontier])
            nxt = np.unique(slots)
            nxt = nxt[~seen[nxt]]
            seen[nxt] = True
            members.append(nxt)
            frontier = nxt
        comps.append(np.unique(np.concatenate(members)))
    comps.sort(key=len, reverse=True)
    return comps


def _require_connected(g: CommunityGraph, who: str) -> None:
    comps = components(g)
    if len(comps) > 1:
        sizes = [len(c) for c in comps]
        heads = [int(c[0]) for c in comps[:4]]
        raise WalkError(
            f"{who} needs a connected graph: found {len(comps)} components "
            f"with sizes {sizes[:6]}{'...' if len(sizes) > 6 else ''} "
            f"(first vertices {heads})"
        )


def transition_matrix(g: CommunityGraph, kind: str) -> sp.csr_matrix:
    """The walk's transition kernel as a CSR matrix.

    ``simple``/``lazy`` act on vertices; ``nbrw`` acts on the directed-edge
    space with exactly ``sum(d)`` states (see :func:`nbrw_matrix`).
    """
    if kind not in WALK_KINDS:
        raise WalkError(f"unknown walk kind {kind!r}; use one of {WALK_KINDS}")
    if kind == "nbrw":
        return nbrw_matrix(g)
    data = np.repeat(1.0 / g.degrees, g.degrees)
    P = sp.csr_matrix((data, g.neighbor_indices(), g.offsets), shape=(g.n, g.n))
    if kind == "lazy":
        P = (0.5 * P + 0.5 * sp.identity(g.n, format="csr")).tocsr()
    return P


def nbrw_matrix(g: CommunityGraph) -> sp.csr_matrix:
    """Non-backtracking kernel on directed edges.

    State ``h`` is the half-edge just traversed; the walker sits at its head
    ``half_vertex[match[h]]`` and moves along a uniform outgoing half-edge of
    the head other than the reversal ``match[h]``.
    """
    if int(g.degrees.min()) < 2:
        raise WalkError("non-backtracking walk needs minimum degree 2 "
                        f"(found a vertex of degree {int(g.degrees.min())})")
    H = g.half_edge_count
    head = g.half_vertex[g.match]
    d_head = g.degrees[head]
    counts = d_head - 1
    indptr = np.zeros(H + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    # candidate targets: every slot of the head, then drop the reversal
    group_start = np.repeat(g.offsets[head], d_head)
    within = np.arange(d_head.sum(), dtype=np.int64) - np.repeat(
        np.concatenate(([0], np.cumsum(d_head)[:-1])), d_head)
    cand = group_start + within
    keep = cand != np.repeat(g.match, d_head)
    indices = cand[keep]
    data = np.repeat(1.0 / counts, d_head)[keep]
    return sp.csr_matrix((data, indices, indptr), shape=(H, H))


def stationary_law(g: CommunityGraph, kind: str) -> np.ndarray:
    """Stationary distribution on the walk's own state space."""
    if kind == "nbrw":
        H = g.half_edge_count
        return np.full(H, 1.0 / H)
    return g.stationary()


# ---------------------------------------------------------------------------
# mixing curves
# ---------------------------------------------------------------------------


@dataclass
class MixingCurve:
    """Per-time total-variation distance of an evolving law to stationarity.

    ``tv[t]`` is the TV distance after ``t`` applications of the kernel on
    its own state space (``space`` records which).  For the directed-edge
    walk, ``tv_vertex`` additionally carries the head-projected vertex-level
    distance; the primary ``tv`` stays on the edge space, where monotonicity
    is guaranteed.
    """

    kind: str
    start: str
    start_id: int
    tv: np.ndarray
    space: str
    tv_vertex: np.ndarray | None = None

    def __post_init__(self):
        self.tv = np.asarray(self.tv, dtype=float)
        if self.tv.ndim != 1 or self.tv.size == 0:
            raise WalkError("a mixing curve needs at least the t=0 entry")
        if np.any(self.tv < -TV_SLACK) or np.any(self.tv > 1 + TV_SLACK):
            raise WalkError("TV distances must lie in [0, 1]")
        rise = np.diff(self.tv)
        if rise.size and float(rise.max()) > TV_SLACK:
            t = int(np.argmax(rise > TV_SLACK))
            raise WalkError(f"TV increased by {float(rise.max()):.3e} at t = {t + 1}; "
                            "evolution is inconsistent")

    @property
    def horizon(self) -> int:
        return len(self.tv) - 1

    def tmix(self, eps: float) -> int:
        return tmix_from_curve(self, eps)

    def to_csv(self) -> str:
        """Plain CSV with columns ``t, tv, start_id, walk_kind``."""
        rows = ["t,tv,start_id,walk_kind"]
        rows += [f"{t},{v:.12g},{self.start_id},{self.kind}"
                 for t, v in enumerate(self.tv.tolist())]
        return "\n".join(rows) + "\n"


def _as_distribution(mu0, size: int, what: str) -> np.ndarray:
    mu = np.asarray(mu0, dtype=float)
    if mu.shape != (size,):
        raise WalkError(f"{what} must have length {size}, got shape {mu.shape}")
    if np.any(mu < 0) or abs(float(mu.sum()) - 1.0) > 1e-9:
        raise WalkError(f"{what} must be a probability distribution")
    return mu.copy()


def evolve_distribution(g: CommunityGraph, kind: str, mu0, T: int) -> MixingCurve:
    """Exact evolution of ``mu0`` for ``T`` steps of the chosen walk.

    ``mu0`` is a vertex index, a length-``n`` vertex distribution, or (for
    ``nbrw``) a length-``sum(d)`` directed-edge distribution.  Vertex input
    to ``nbrw`` is lifted uniformly onto the start's outgoing edges, which
    consumes one graph step.
    """
    if kind not in WALK_KINDS:
        raise WalkError(f"unknown walk kind {kind!r}; use one of {WALK_KINDS}")
    if T < 0:
        raise WalkError(f"horizon must be nonnegative, got {T}")
    _require_connected(g, "evolve_distribution")
    P = transition_matrix(g, kind)
    pi = stationary_law(g, kind)
    head = g.half_vertex[g.match] if kind == "nbrw" else None

    start, start_id = "distribution", -1
    if isinstance(mu0, (int, np.integer)):
        x = int(mu0)
        if not 0 <= x < g.n:
            raise WalkError(f"start vertex {x} out of range [0, {g.n})")
        start, start_id = f"vertex {x}", x
        if kind == "nbrw":
            mu = np.zeros(g.half_edge_count)
            mu[g.offsets[x]:g.offsets[x + 1]] = 1.0 / g.degrees[x]
        else:
            mu = np.zeros(g.n)
            mu[x] = 1.0
    elif kind == "nbrw" and np.asarray(mu0).shape == (g.half_edge_count,):
        mu = _as_distribution(mu0, g.half_edge_count, "directed-edge distribution")
    else:
        mu = _as_distribution(mu0, g.n, "vertex distribution")
        if kind == "nbrw":
            mu = np.repeat(mu / g.degrees, g.degrees)

    PT = P.T.tocsr()
    tv = np.empty(T + 1)
    tv_vertex = np.empty(T + 1) if kind == "nbrw" else None
    pi_vertex = g.stationary()
    for t in range(T + 1):
        tv[t] = 0.5 * float(np.abs(mu - pi).sum())
        if kind == "nbrw":
            proj = np.bincount(head, weights=mu, minlength=g.n)
            tv_vertex[t] = 0.5 * float(np.abs(proj - pi_vertex).sum())
        if t < T:
            mu = PT @ mu
    space = "directed-edge" if kind == "nbrw" else "vertex"
    return MixingCurve(kind, start, start_id, tv, space, tv_vertex)


def tmix_from_curve(curve: MixingCurve, eps: float) -> int:
    """Smallest t on the curve with TV <= eps."""
    hit = np.flatnonzero(curve.tv <= eps + 1e-15)
    if hit.size == 0:
        err = WalkError(f"not yet mixed at horizon {curve.horizon}: "
                        f"TV = {float(curve.tv[-1]):.6f} > {eps}")
        err.last_tv = float(curve.tv[-1])
        raise err
    return int(hit[0])


# ---------------------------------------------------------------------------
# power iteration and relaxation times
# ---------------------------------------------------------------------------


def _symmetrized_simple(g: CommunityGraph) -> sp.csr_matrix:
    """D^{-1/2} A D^{-1/2}: the pi-symmetrized simple kernel (exactly symmetric)."""
    inv_sqrt = 1.0 / np.sqrt(g.degrees.astype(float))
    data = np.repeat(inv_sqrt, g.degrees) * inv_sqrt[g.neighbor_indices()]
    return sp.csr_matrix((data, g.neighbor_indices(), g.offsets), shape=(g.n, g.n))


def _power_top(matvec, dim: int, tag: str, deflate: np.ndarray | None = None,
               tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER):
    """Dominant eigenpair of a symmetric PSD operator by power iteration.

    Converges when the eigenpair residual ||Mv - theta v|| drops below
    ``tol``, or when the Rayleigh quotient has stopped moving (increment
    below 1e-12 across a 500-iteration window — the nearly-degenerate case,
    where any vector of the merged eigenspace is equally valid).  Restarts
    from a fresh random vector when the residual stalls.
    """
    rng = phase_rng(0, f"walklab-power-{tag}")
    v = rng.standard_normal(dim)
    if deflate is not None:
        v -= (v @ deflate) * deflate
    v /= np.linalg.norm(v)
    theta_mark, mark_at = -np.inf, 0
    resid_mark = np.inf
    restarts = 0
    theta = 0.0
    for it in range(1, max_iter + 1):
        w = matvec(v)
        if deflate is not None:
            w -= (w @ deflate) * deflate
        theta = float(v @ w)
        resid = float(np.linalg.norm(w - theta * v))
        if resid <= tol:
            return theta, v, it, resid
        if it - mark_at >= 500:
            if theta - theta_mark <= 1e-12 * max(1.0, abs(theta)):
                return theta, v, it, resid
            if resid > 0.9 * resid_mark and restarts < 3:
                restarts += 1
                v = rng.standard_normal(dim)
                if deflate is not None:
                    v -= (v @ deflate) * deflate
                v /= np.linalg.norm(v)
                theta_mark, mark_at, resid_mark = -np.inf, it, np.inf
                continue
            theta_mark, mark_at, resid_mark = theta, it, resid
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            v = rng.standard_normal(dim)
            if deflate is not None:
                v -= (v @ deflate) * deflate
            nw = np.linalg.norm(v)
            v = v / nw
            continue
        v = w / nw
    raise WalkError(f"power iteration ({tag}) did not converge in {max_iter} "
                    f"iterations (residual {resid:.3e})")


@dataclass
class RelaxationResult:
    """Spectral gaps of a reversible walk and the derived relaxation times."""

    gamma: float
    gamma_star: float
    t_rel: float
    t_rel_star: float
    lambda2: float
    lambda_min: float
    iterations: int
    residual: float


def relaxation(g: CommunityGraph, kind: str) -> RelaxationResult:
    """Spectral gap, absolute gap and relaxation times of the chosen walk.

    lambda_2 comes from power iteration on the pi-symmetrized kernel shifted
    to a nonnegative spectrum, with the known top eigenvector sqrt(pi)
    deflated; lambda_min from power iteration on the complementary shift.
    Tolerance 1e-8 on the eigenpair residual.  The lazy walk has a
    nonnegative spectrum, so its absolute gap equals its gap.
    """
    if kind not in ("simple", "lazy"):
        raise WalkError("relaxation is defined for the reversible vertex walks "
                        f"('simple'/'lazy'); got {kind!r}")
    _require_connected(g, "relaxation")
    S = _symmetrized_simple(g)
    if kind == "lazy":
        S = (0.5 * S + 0.5 * sp.identity(g.n, format="csr")).tocsr()
    u = np.sqrt(g.stationary())
    u /= np.linalg.norm(u)

    # eigenvalues of (S+I)/2 are (1+lambda)/2 >= 0, order preserved
    th2, _, it2, r2 = _power_top(lambda x: 0.5 * (S @ x) + 0.5 * x, g.n,
                                 f"lam2-{kind}-{g.n}", deflate=u)
    lam2 = min(2.0 * th2 - 1.0, 1.0)
    # eigenvalues of (I-S)/2 are (1-lambda)/2 >= 0, top is lambda_min's
    thn, _, itn, rn = _power_top(lambda x: 0.5 * x - 0.5 * (S @ x), g.n,
                                 f"lamin-{kind}-{g.n}")
    lam_min = max(1.0 - 2.0 * thn, -1.0)

    gamma = 1.0 - lam2
    gamma_star = gamma if kind == "lazy" else 1.0 - max(lam2, abs(lam_min))
    t_rel = 1.0 / gamma if gamma > 0 else math.inf
    t_rel_star = 1.0 / gamma_star if gamma_star > 0 else math.inf
    return RelaxationResult(gamma, gamma_star, t_rel, t_rel_star, lam2, lam_min,
                            it2 + itn, max(r2, rn))


# ---------------------------------------------------------------------------
# Dirichlet eigenvalues of vertex sets
# ---------------------------------------------------------------------------


def _vertex_set(g: CommunityGraph, A) -> np.ndarray:
    A = np.unique(np.asarray(list(A), dtype=np.int64))
    if A.size == 0:
        raise WalkError("A must be a nonempty vertex set")
    if A.size >= g.n:
        raise WalkError("A must be a proper subset of the vertices")
    if A.min() < 0 or A.max() >= g.n:
        raise WalkError(f"vertex ids in A must lie in [0, {g.n})")
    return A


def _cross_count(g: CommunityGraph, mask: np.ndarray) -> int:
    """Edges with exactly one endpoint in the masked set (self-loops never cross)."""
    own = mask[g.half_vertex]
    other = mask[g.half_vertex[g.match]]
    return int(np.count_nonzero(own & ~other))


def dirichlet_eigenvalue(g: CommunityGraph, A, method: str = "eigen") -> float:
    """1 minus the top eigenvalue of the lazy walk restricted to A.

    ``eigen`` runs power iteration on the symmetrized restriction; ``hitting``
    evolves the exact survival P_{pi_A}(T_{A^c} > t) with per-step
    renormalization (so arbitrarily deep tails stay representable) and reads
    the decay rate off a least-squares slope over a geometric time grid,
    discarding the first fifth as transient.
    """
    if method not in ("eigen", "hitting"):
        raise WalkError(f"unknown method {method!r}; use 'eigen' or 'hitting'")
    A = _vertex_set(g, A)
    mask = np.zeros(g.n, dtype=bool)
    mask[A] = True
    if _cross_count(g, mask) == 0:
        raise WalkError("no edges leave A: the restriction is stochastic and "
                        "lambda(A) = 0 (A is disconnected from its complement)")
    S_A = _symmetrized_simple(g)[A][:, A].tocsr()

    if method == "eigen":
        # restricted lazy kernel symmetrized: (I + S_A)/2, PSD
        theta, _, _, _ = _power_top(lambda x: 0.5 * x + 0.5 * (S_A @ x), A.size,
                                    f"dirichlet-{g.n}-{A.size}")
        return float(np.clip(1.0 - theta, 0.0, 1.0))

    # hitting route: exact normalized survival under the restricted lazy kernel
    d_A = g.degrees[A].astype(float)
    P_A = transition_matrix(g, "lazy")[A][:, A].tocsr().T.tocsr()
    v = d_A / d_A.sum()
    logs = [0.0]
    ratios = []
    warm = 512
    for _ in range(warm):
        v = P_A @ v
        m = float(v.sum())
        if m <= 0.0:
            raise WalkError("survival mass vanished: A empties in finitely many steps")
        ratios.append(m)
        logs.append(logs[-1] + math.log(m))
        v /= m
    lam0 = 1.0 - ratios[-1]
    if lam0 < 1e-9:
        raise WalkError(f"A is nearly closed (per-step escape {lam0:.2e}); "
                        "the hitting tail cannot be resolved")
    T = max(warm + 64, int(math.ceil(60.0 / lam0)))
    for _ in range(warm, T):
        v = P_A @ v
        m = float(v.sum())
        ratios.append(m)
        logs.append(logs[-1] + math.log(m))
        v /= m
    ts = np.unique(np.geomspace(1, T, 160).astype(np.int64))
    ts = ts[ts >= max(1, int(0.2 * T))]
    y = np.asarray([logs[t] for t in ts])
    tt = ts.astype(float)
    slope = float(np.polyfit(tt, y, 1)[0])
    return float(np.clip(1.0 - math.exp(slope), 0.0, 1.0))


# ---------------------------------------------------------------------------
# candidate machinery: sweep orders, prefix cuts, balls
# ---------------------------------------------------------------------------


def _second_vector(g: CommunityGraph) -> np.ndarray:
    """Second eigenvector of the walk (P-eigenvector scaling), no connectivity check."""
    S = _symmetrized_simple(g)
    u = np.sqrt(g.stationary())
    u /= np.linalg.norm(u)
    _, v, _, _ = _power_top(lambda x: 0.5 * (S @ x) + 0.5 * x, g.n,
                            f"sweep-v2-{g.n}", deflate=u)
    return v / np.sqrt(g.stationary())


def _prefix_cuts(g: CommunityGraph, order: np.ndarray):
    """For k = 1..n-1: edges leaving the first-k prefix and its half-edge mass."""
    rank = np.empty(g.n, dtype=np.int64)
    rank[order] = np.arange(g.n)
    firsts = np.flatnonzero(np.arange(len(g.match)) < g.match)
    r1 = rank[g.half_vertex[firsts]]
    r2 = rank[g.half_vertex[g.match[firsts]]]
    lo = np.minimum(r1, r2)
    hi = np.maximum(r1, r2)
    diff = np.zeros(g.n + 1, dtype=np.int64)
    np.add.at(diff, lo + 1, 1)
    np.add.at(diff, hi + 1, -1)
    cross = np.cumsum(diff)[1:g.n]
    deg = np.cumsum(g.degrees[order])[:g.n - 1]
    return cross, deg


def _ball(g: CommunityGraph, x: int, radius: int) -> np.ndarray:
    nbr = g.neighbor_indices()
    seen = np.zeros(g.n, dtype=bool)
    seen[x] = True
    frontier = np.array([x], dtype=np.int64)
    for _ in range(radius):
        if not frontier.size:
            break
        slots = np.concatenate([nbr[g.offsets[v]:g.offsets[v + 1]] for v in frontier])
        nxt = np.unique(slots)
        nxt = nxt[~seen[nxt]]
        seen[nxt] = True
        frontier = nxt
    return np.flatnonzero(seen)


def cheeger_sweep(g: CommunityGraph):
    """Candidate-set upper bound on the simple walk's bottleneck ratio.

    Candidates are the communities and every prefix cut of the second
    eigenvector's sweep order; the ratio of a cut is (edges across) divided
    by the half-edge mass of its smaller side.  Returns ``(value, about)``
    where ``about`` describes the achieving set.
    """
    H = g.half_edge_count
    best, about = math.inf, None

    for i in range(g.m):
        verts = g.community_vertices(i)
        if verts.size in (0, g.n):
            continue
        mask = np.zeros(g.n, dtype=bool)
        mask[verts] = True
        cross = _cross_count(g, mask)
        side = min(int(g.degrees[mask].sum()), H - int(g.degrees[mask].sum()))
        if side == 0:
            continue
        ratio = cross / side
        if ratio < best:
            best = ratio
            about = {"kind": "community", "index": i, "size": int(verts.size),
                     "pi": float(g.degrees[verts].sum() / H)}

    order = np.argsort(-_second_vector(g), kind="stable")
    cross, deg = _prefix_cuts(g, order)
    side = np.minimum(deg, H - deg)
    ratios = cross / side
    k = int(np.argmin(ratios))
    if float(ratios[k]) < best:
        best = float(ratios[k])
        verts = order[:k + 1] if deg[k] <= H - deg[k] else order[k + 1:]
        about = {"kind": "sweep-prefix", "size": int(len(verts)),
                 "pi": float(min(deg[k], H - deg[k]) / H),
                 "vertices": tuple(int(v) for v in sorted(verts)) if len(verts) <= 64 else None}
    return float(best), about


def spectral_profile(g: CommunityGraph, r_grid, method: str = "sweep",
                     seed: int = 0, threads: int = 1) -> list[dict]:
    """Lazy-walk spectral profile estimates over a grid of mass caps.

    ``exhaustive`` (n <= 20) evaluates lambda(A) for every proper nonempty
    subset with pi(A) <= max(r) and reports per-r minima — the true infimum.
    ``sweep`` evaluates candidates (communities and their unions, balls
    around seeded vertices, prefix cuts of the second eigenvector) for an
    upper bound, and pairs it with the conductance lower bound
    Phi_hat(r)^2/2 computed from the same candidate family (reported for
    r <= 1/2 where the bound applies).  Rows carry a ``method`` flag.
    """
    rs = sorted(float(r) for r in r_grid)
    if not rs or rs[0] <= 0 or rs[-1] > 1:
        raise WalkError("r grid must contain values in (0, 1]")
    pi = g.stationary()
    rmax = rs[-1]

    if method == "exhaustive":
        if g.n > 20:
            raise WalkError(f"exhaustive spectral profile is capped at n = 20, got n = {g.n}")
        _require_connected(g, "spectral_profile")
        S = _symmetrized_simple(g).toarray()
        masks = np.arange(1, 2 ** g.n - 1, dtype=np.int64)
        bits = ((masks[:, None] >> np.arange(g.n)) & 1).astype(bool)
        piA = bits @ pi
        keep = piA <= rmax + 1e-12
        bits, piA = bits[keep], piA[keep]
        sizes = bits.sum(axis=1)
        lam = np.full(len(bits), np.nan)
        for k in np.unique(sizes):
            rows = np.flatnonzero(sizes == k)
            for lo in range(0, len(rows), 8192):
                chunk = rows[lo:lo + 8192]
                members = np.argsort(~bits[chunk], axis=1, kind="stable")[:, :k]
                sub = S[members[:, :, None], members[:, None, :]]
                theta = np.linalg.eigvalsh(sub)[:, -1]
                lam[chunk] = 0.5 * (1.0 - theta)
        rows_out = []
        for r in rs:
            ok = piA <= r + 1e-12
            if not ok.any():
                rows_out.append({"r": r, "lam": math.nan, "lower": None,
                                 "method": "exhaustive", "sets": 0})
                continue
            i = int(np.flatnonzero(ok)[np.argmin(lam[ok])])
            rows_out.append({"r": r, "lam": float(lam[ok].min()), "lower": None,
                             "method": "exhaustive", "sets": int(ok.sum()),
                             "achiever": tuple(int(v) for v in np.flatnonzero(bits[i]))})
        return rows_out

    if method != "sweep":
        raise WalkError(f"unknown method {method!r}; use 'exhaustive' or 'sweep'")
    _require_connected(g, "spectral_profile")
    H = g.half_edge_count

    # candidate pool: vertex sets for lambda evaluation, plus a wider family
    # of (cross, mass) pairs for the conductance bound
    pool: dict[tuple, np.ndarray] = {}

    def add(verts: np.ndarray):
        verts = np.asarray(verts, dtype=np.int64)
        if 0 < verts.size < g.n and float(pi[verts].sum()) <= rmax + 1e-12:
            pool[tuple(sorted(int(v) for v in verts))] = verts

    for i in range(g.m):
        add(g.community_vertices(i))
    if 2 < g.m <= 6:
        for mask in range(1, 2 ** g.m - 1):
            sel = [i for i in range(g.m) if mask >> i & 1]
            if 1 < len(sel) < g.m:
                add(np.concatenate([g.community_vertices(i) for i in sel]))

    rng = phase_rng(seed, "profile-balls")
    centers = rng.choice(g.n, size=min(8, g.n), replace=False)
    for x in centers:
        for r in rs:
            radius, verts = 0, np.array([x])
            while True:
                bigger = _ball(g, int(x), radius + 1)
                if float(pi[bigger].sum()) > r or bigger.size == verts.size:
                    break
                radius += 1
                verts = bigger
            add(verts)

    order = np.argsort(-_second_vector(g), kind="stable")
    cross, deg = _prefix_cuts(g, order)
    pref_pi = deg / H
    cond_pairs = [(cross, deg)]  # prefix family feeds the lower bound densely
    for r in rs:
        under = np.flatnonzero(pref_pi <= r + 1e-12)
        if under.size:
            add(order[:int(under[-1]) + 1])  # largest prefix under the cap
            phis = cross[under] / (2.0 * deg[under])
            add(order[:int(under[np.argmin(phis)]) + 1])  # best-conductance prefix

    cands = list(pool.values())

    def lam_of(verts):
        return dirichlet_eigenvalue(g, verts, "eigen")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            lams = list(ex.map(lam_of, cands))
    else:
        lams = [lam_of(v) for v in cands]

    def mask_of(verts):
        m = np.zeros(g.n, dtype=bool)
        m[verts] = True
        return m

    cand_pi = np.asarray([float(pi[v].sum()) for v in cands])
    cand_phi = np.asarray([
        _cross_count(g, mask_of(v)) / (2.0 * float(g.degrees[v].sum()))
        for v in cands])

    rows_out = []
    for r in rs:
        ok = cand_pi <= r + 1e-12
        lam_up = float(np.min(np.asarray(lams)[ok])) if ok.any() else math.nan
        lower = None
        if r <= 0.5 + 1e-12:
            phis = [cand_phi[ok]] if ok.any() else []
            for cr, dg in cond_pairs:
                under = dg / H <= r + 1e-12
                if under.any():
                    phis.append(cr[under] / (2.0 * dg[under]))
            if phis:
                phi_hat = float(np.min(np.concatenate(phis)))
                lower = 0.5 * phi_hat ** 2
        rows_out.append({"r": r, "lam": lam_up, "lower": lower,
                         "method": "sweep", "sets": int(ok.sum())})
    return rows_out


# ---------------------------------------------------------------------------
# K-roots
# ---------------------------------------------------------------------------


def is_K_root(g: CommunityGraph, x: int, K: int) -> bool:
    """True iff the radius-K ball around x induces a cycle-free multigraph.

    Multi-edges and self-loops inside the ball count as cycles; the test is
    |induced edges| == |ball| - 1.  Degrees inside the ball are the graph's
    own, so any acyclic ball is a realizable tree neighborhood.
    """
    if K < 1:
        raise WalkError(f"K must be >= 1, got {K}")
    if not 0 <= x < g.n:
        raise WalkError(f"vertex {x} out of range [0, {g.n})")
    verts = _ball(g, x, K)
    mask = np.zeros(g.n, dtype=bool)
    mask[verts] = True
    own = mask[g.half_vertex]
    inner = int(np.count_nonzero(own & mask[g.half_vertex[g.match]]))
    return inner // 2 == verts.size - 1


def kroot_flags(g: CommunityGraph, K: int) -> np.ndarray:
    """Boolean K-root flag for every vertex."""
    return np.fromiter((is_K_root(g, x, K) for x in range(g.n)), dtype=bool, count=g.n)


def hit_kroot_time(g: CommunityGraph, K: int, starts, seed: int,
                   replicates: int = 32, horizon: int | None = None,
                   quantiles=(0.5, 0.9, 0.99), threads: int = 1) -> dict:
    """Monte Carlo law of the first time a simple walk reaches a K-root.

    One independent keyed stream per (start, replicate) task, so the result
    does not depend on scheduling.  Censored walks (no hit by the horizon)
    enter the pooled sample as +inf, which shows up honestly in high
    quantiles.
    """
    flags = kroot_flags(g, K)
    if not flags.any():
        raise WalkError(f"no {K}-root exists in this graph")
    starts = [int(s) for s in starts]
    if not starts:
        raise WalkError("need at least one start vertex")
    cap = horizon if horizon is not None else max(10_000, 1000 * K)
    nbr = g.neighbor_indices()
    seeds = spawn_seeds(seed, f"kroot-hit-{K}", len(starts) * replicates)

    def one(task: int) -> float:
        x = starts[task // replicates]
        rng = np.random.default_rng(int(seeds[task]))
        t = 0
        while not flags[x]:
            if t >= cap:
                return math.inf
            x = int(nbr[g.offsets[x] + rng.integers(g.degrees[x])])
            t += 1
        return float(t)

    tasks = range(len(starts) * replicates)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            times = np.asarray(list(ex.map(one, tasks)))
    else:
        times = np.asarray([one(t) for t in tasks])
    table = {float(q): float(np.quantile(times, q)) for q in quantiles}
    return {"quantiles": table, "samples": int(times.size),
            "censored": int(np.isinf(times).sum()), "horizon": int(cap),
            "kroot_fraction": float(flags.mean())}


# ---------------------------------------------------------------------------
# community occupation
# ---------------------------------------------------------------------------


def community_occupation(g: CommunityGraph, start: int, t: int, delta: float,
                         replicates: int, seed: int, kind: str = "lazy") -> dict:
    """Monte Carlo estimate of P(T_2(t) < delta*t) with a Wilson interval.

    T_2(t) counts the steps 1..t the walk spends in community 1 (the second
    community, zero-indexed).  Streams are keyed per step and replicate.
    """
    if g.m != 2:
        raise WalkError(f"community_occupation needs a 2-community graph, got m = {g.m}")
    if kind not in ("simple", "lazy"):
        raise WalkError(f"occupation walk must be 'simple' or 'lazy', got {kind!r}")
    if not 0 <= start < g.n:
        raise WalkError(f"start vertex {start} out of range [0, {g.n})")
    nbr = g.neighbor_indices()
    idx = np.arange(replicates, dtype=np.int64)
    X = np.full(replicates, start, dtype=np.int64)
    occ = np.zeros(replicates, dtype=np.int64)
    for s in range(1, t + 1):
        if kind == "lazy":
            hold = keyed_uniform(seed, 2 * s, idx) < 0.5
            u = keyed_uniform(seed, 2 * s + 1, idx)
            slot = (u * g.degrees[X]).astype(np.int64)
            stepped = nbr[g.offsets[X] + slot]
            X = np.where(hold, X, stepped)
        else:
            u = keyed_uniform(seed, s, idx)
            slot = (u * g.degrees[X]).astype(np.int64)
            X = nbr[g.offsets[X] + slot]
        occ += (g.labels[X] == 1)
    hits = int(np.count_nonzero(occ < delta * t))
    p = hits / replicates
    z = 1.959963984540054
    denom = 1.0 + z * z / replicates
    center = (p + z * z / (2 * replicates)) / denom
    half = z * math.sqrt(p * (1 - p) / replicates + z * z / (4 * replicates ** 2)) / denom
    lo = 0.0 if p == 0.0 else max(0.0, center - half)  # Wilson lo is exactly 0 at p = 0
    hi = 1.0 if p == 1.0 else min(1.0, center + half)
    return {"estimate": p, "lo": lo, "hi": hi,
            "replicates": replicates, "t": t, "delta": delta, "kind": kind}


# ---------------------------------------------------------------------------
# expansion and bipartiteness checks
# ---------------------------------------------------------------------------


def small_set_expansion(g: CommunityGraph, mode: str = "exhaustive",
                        seed: int = 0, c_hat: float | None = None,
                        samples: int = 100_000) -> dict:
    """Minimum edge-boundary-to-size ratio |dD|/|D| over small vertex sets.

    ``exhaustive`` (n <= 18) scans every nonempty set with pi(D) <= c_hat.
    ``sampled`` grows random connected vertex orders and scores every prefix
    under the cap, pooling at least ``samples`` sets — an upper bound on the
    true minimum.  Default cap: 0.3 * min_i pi(V_i).
    """
    pi = g.stationary()
    if c_hat is None:
        c_hat = 0.3 * min(float(pi[g.community_vertices(i)].sum()) for i in range(g.m))
    if mode == "exhaustive":
        if g.n > 18:
            raise WalkError(f"exhaustive small-set scan is capped at n = 18, got n = {g.n}")
        masks = np.arange(1, 2 ** g.n, dtype=np.int64)
        bits = ((masks[:, None] >> np.arange(g.n)) & 1).astype(bool)
        keep = bits @ pi <= c_hat + 1e-12
        bits = bits[keep]
        if not len(bits):
            return {"ratio": math.inf, "mode": mode, "c_hat": c_hat, "tested": 0, "set": ()}
        own = bits[:, g.half_vertex]
        other = bits[:, g.half_vertex[g.match]]
        cross = (own & ~other).sum(axis=1)
        ratio = cross / bits.sum(axis=1)
        i = int(np.argmin(ratio))
        return {"ratio": float(ratio[i]), "mode": mode, "c_hat": float(c_hat),
                "tested": int(len(bits)),
                "set": tuple(int(v) for v in np.flatnonzero(bits[i]))}
    if mode != "sampled":
        raise WalkError(f"unknown mode {mode!r}; use 'exhaustive' or 'sampled'")

    nbr = g.neighbor_indices()
    rng = phase_rng(seed, "small-set-growth")
    best, best_about, tested = math.inf, (), 0
    stuck = 0
    while tested < samples:
        x = int(rng.integers(g.n))
        if float(pi[x]) > c_hat:
            stuck += 1
            if stuck > 1000:
                raise WalkError(f"no single vertex fits under the mass cap {c_hat:.4g}")
            continue
        order = [x]
        in_set = np.zeros(g.n, dtype=bool)
        in_set[x] = True
        frontier = list(nbr[g.offsets[x]:g.offsets[x + 1]])
        mass = float(pi[x])
        while frontier:
            v = int(frontier.pop(int(rng.integers(len(frontier)))))
            if in_set[v]:
                continue
            if mass + float(pi[v]) > c_hat:
                break
            in_set[v] = True
            order.append(v)
            mass += float(pi[v])
            frontier.extend(nbr[g.offsets[v]:g.offsets[v + 1]].tolist())
        # every prefix of the grown order is a connected set under the cap
        rank_of = {v: i for i, v in enumerate(order)}
        boundary = np.zeros(len(order), dtype=np.int64)
        run = 0
        for i, v in enumerate(order):
            targets = nbr[g.offsets[v]:g.offsets[v + 1]]
            inside = sum(1 for u in targets if int(u) in rank_of and rank_of[int(u)] < i)
            run += int(g.degrees[v]) - 2 * inside
            boundary[i] = run
        ratios = boundary / (np.arange(len(order)) + 1.0)
        k = int(np.argmin(ratios))
        if float(ratios[k]) < best:
            best = float(ratios[k])
            best_about = tuple(int(v) for v in sorted(order[:k + 1])) if k < 64 else ()
        tested += len(order)
    return {"ratio": best, "mode": mode, "c_hat": float(c_hat),
            "tested": tested, "set": best_about}


def bipartite_defect(g: CommunityGraph, mode: str = "exhaustive") -> dict:
    """How far the graph is from bipartite.

    ``exhaustive`` (n <= 18) minimizes over all bipartitions the fraction of
    half-edges whose matched partner stays on the same side — zero exactly
    for a bipartite graph.  ``spectral`` reports (1 + lambda_min)/2 of the
    simple walk, again zero iff bipartite (connected graphs).
    """
    if mode == "spectral":
        rel = relaxation(g, "simple")
        return {"defect": float(0.5 * (1.0 + rel.lambda_min)), "mode": mode,
                "lambda_min": rel.lambda_min, "bipartition": None}
    if mode != "exhaustive":
        raise WalkError(f"unknown mode {mode!r}; use 'exhaustive' or 'spectral'")
    if g.n > 18:
        raise WalkError(f"exhaustive bipartiteness scan is capped at n = 18, got n = {g.n}")
    H = g.half_edge_count
    # fix the last vertex outside A: bipartitions are unordered pairs
    masks = np.arange(0, 2 ** (g.n - 1), dtype=np.int64)
    bits = ((masks[:, None] >> np.arange(g.n)) & 1).astype(bool)
    own = bits[:, g.half_vertex]
    other = bits[:, g.half_vertex[g.match]]
    within = (own == other).sum(axis=1)
    i = int(np.argmin(within))
    return {"defect": float(within[i] / H), "mode": mode,
            "bipartition": tuple(int(v) for v in np.flatnonzero(bits[i])),
            "lambda_min": None}


# ---------------------------------------------------------------------------
# worst-case-start mixing protocol
# ---------------------------------------------------------------------------


def start_family(g: CommunityGraph, seed: int = 0, K: int | None = None,
                 uniform_count: int = 16, non_kroot_count: int = 4):
    """Start vertices for mixing measurements, with a descriptor.

    n <= 512 uses every vertex (exact worst case).  Larger graphs use the
    sampled protocol: max-degree vertex, min-degree vertex, ``uniform_count``
    uniformly seeded vertices, and up to ``non_kroot_count`` non-K-root
    vertices when any exist (K defaults to ceil(log log n)).
    """
    if g.n <= 512:
        return list(range(g.n)), {"protocol": "exact", "starts": g.n}
    if K is None:
        K = max(1, math.ceil(math.log(max(math.log(g.n), 2.0))))
    rng = phase_rng(seed, "start-family")
    picks = [int(np.argmax(g.degrees)), int(np.argmin(g.degrees))]
    picks += [int(v) for v in rng.choice(g.n, size=uniform_count, replace=False)]
    non_roots = []
    scan = rng.permutation(g.n)
    for x in scan:
        if len(non_roots) >= non_kroot_count:
            break
        if not is_K_root(g, int(x), K):
            non_roots.append(int(x))
    picks += non_roots
    family = list(dict.fromkeys(picks))
    return family, {"protocol": "sampled", "starts": len(family), "K": K,
                    "uniform": uniform_count, "non_kroot_found": len(non_roots)}


def mixing_profile(g: CommunityGraph, kind: str, eps=(0.25, 0.75), seed: int = 0,
                   horizon_cap: int = 200_000, threads: int = 1,
                   starts=None) -> dict:
    """Worst-of-family mixing times for the chosen walk.

    Evolves each start in the family (see :func:`start_family`) with a
    doubling horizon until the smallest requested epsilon is reached, and
    reports per-epsilon worst-case times.  For ``nbrw`` the reported times
    are in graph steps (vertex starts consume one step in the edge-space
    lift).
    """
    eps = sorted(float(e) for e in eps)
    if not eps or eps[0] <= 0:
        raise WalkError("need at least one positive epsilon")
    _require_connected(g, "mixing_profile")
    if starts is None:
        starts, how = start_family(g, seed)
    else:
        starts, how = [int(s) for s in starts], {"protocol": "given", "starts": len(starts)}
    offset = 1 if kind == "nbrw" else 0

    if how.get("protocol") == "exact" and kind != "nbrw":
        # evolve every row of P^t at once
        P = transition_matrix(g, kind).toarray()
        pi = g.stationary()
        M = np.eye(g.n)
        worst = np.empty(0)
        curve = []
        t = 0
        while True:
            tv = 0.5 * np.abs(M - pi).sum(axis=1)
            curve.append(float(tv.max()))
            if curve[-1] <= eps[0] + 1e-15:
                break
            if t >= horizon_cap:
                raise WalkError(f"not yet mixed at horizon {horizon_cap}: "
                                f"worst TV = {curve[-1]:.6f} > {eps[0]}")
            M = M @ P
            t += 1
        worst = np.asarray(curve)
        tmix = {e: int(np.flatnonzero(worst <= e + 1e-15)[0]) for e in eps}
        return {"tmix": tmix, "family": how, "kind": kind,
                "per_start": None, "worst_curve": worst}

    def one(x: int) -> dict:
        T = 64
        while True:
            curve = evolve_distribution(g, kind, x, T)
            if curve.tv[-1] <= eps[0] + 1e-15:
                break
            if T >= horizon_cap:
                raise WalkError(f"start {x} not yet mixed at horizon {T}: "
                                f"TV = {float(curve.tv[-1]):.6f} > {eps[0]}")
            T *= 2
        return {"start": x,
                **{f"tmix@{e}": tmix_from_curve(curve, e) + offset for e in eps}}

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(one, starts))
    else:
        rows = [one(x) for x in starts]
    tmix = {e: max(r[f"tmix@{e}"] for r in rows) for e in eps}
    return {"tmix": tmix, "family": how, "kind": kind, "per_start": rows,
            "worst_curve": None}


# ---------------------------------------------------------------------------
# spectral report
# ---------------------------------------------------------------------------


@dataclass
class SpectralReport:
    """Bundle of spectral diagnostics for one graph.

    JSON keys (see :meth:`to_json`): ``n``, ``half_edges``, ``gamma`` (lazy
    gap), ``gamma_star`` (absolute gap of the simple walk), ``t_rel``,
    ``t_rel_star``, ``lambda2_lazy``, ``lambda_min_simple``, ``dirichlet``
    (per-set eigen values), ``profile`` (rows r/lam/lower/method),
    ``cheeger`` (value + achieving-set descriptor), ``tolerances``.
    """

    n: int
    half_edges: int
    gamma: float
    gamma_star: float
    t_rel: float
    t_rel_star: float
    lambda2_lazy: float
    lambda_min_simple: float
    dirichlet: dict
    profile: list
    cheeger_value: float
    cheeger_about: dict | None
    tolerances: dict = field(default_factory=lambda: {
        "power_tol": POWER_TOL, "power_max_iter": POWER_MAX_ITER})

    def to_json(self) -> str:
        def clean(x):
            if isinstance(x, dict):
                return {str(k): clean(v) for k, v in x.items()}
            if isinstance(x, (list, tuple)):
                return [clean(v) for v in x]
            if isinstance(x, (np.floating, float)):
                v = float(x)
                return v if math.isfinite(v) else repr(v)
            if isinstance(x, (np.integer, int)):
                return int(x)
            return x
        body = {
            "n": self.n, "half_edges": self.half_edges,
            "gamma": self.gamma, "gamma_star": self.gamma_star,
            "t_rel": self.t_rel, "t_rel_star": self.t_rel_star,
            "lambda2_lazy": self.lambda2_lazy,
            "lambda_min_simple": self.lambda_min_simple,
            "dirichlet": self.dirichlet, "profile": self.profile,
            "cheeger": {"value": self.cheeger_value, "about": self.cheeger_about},
            "tolerances": self.tolerances,
        }
        return json.dumps(clean(body), indent=2, sort_keys=True)


def spectral_report(g: CommunityGraph, dirichlet_sets: dict | None = None,
                    r_grid=None, seed: int = 0, threads: int = 1) -> SpectralReport:
    """Assemble the standard spectral diagnostics for a graph.

    ``dirichlet_sets`` maps names to vertex sets (default: each community);
    ``r_grid`` feeds the sweep spectral profile (default 0.1/0.25/0.5).
    """
    lazy = relaxation(g, "lazy")
    simple = relaxation(g, "simple")
    if dirichlet_sets is None:
        dirichlet_sets = {f"community {i}": g.community_vertices(i)
                          for i in range(g.m) if 0 < len(g.community_vertices(i)) < g.n}
    dirichlet = {name: dirichlet_eigenvalue(g, A, "eigen")
                 for name, A in dirichlet_sets.items()}
    grid = [0.1, 0.25, 0.5] if r_grid is None else list(r_grid)
    profile = spectral_profile(g, grid, "sweep", seed=seed, threads=threads)
    phi, about = cheeger_sweep(g)
    return SpectralReport(
        n=g.n, half_edges=g.half_edge_count,
        gamma=lazy.gamma, gamma_star=simple.gamma_star,
        t_rel=lazy.t_rel, t_rel_star=simple.t_rel_star,
        lambda2_lazy=lazy.lambda2, lambda_min_simple=simple.lambda_min,
        dirichlet=dirichlet, profile=profile,
        cheeger_value=phi, cheeger_about=about,
    )
