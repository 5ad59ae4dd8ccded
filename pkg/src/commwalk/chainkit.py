"""Exact analysis of small finite Markov chains (dense, k up to a few dozen).

Everything here is deterministic linear algebra on row-stochastic matrices:
stationary laws, bottleneck ratios, spectral gaps, exact total-variation
mixing times, induced chains, hitting times, and the standard inequalities
between them.  Spectra are computed by an in-module Householder
tridiagonalization followed by implicitly shifted QL iteration; no library
eigensolver is called anywhere in this module.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

ROW_SUM_TOL = 1e-12
STATIONARY_TOL = 1e-10
DETAILED_BALANCE_TOL = 1e-10


class ChainError(ValueError):
    """A chain violates a precondition of the requested operation."""


# ---------------------------------------------------------------------------
# the chain object
# ---------------------------------------------------------------------------


class FiniteChain:
    """A dense row-stochastic transition matrix with cached derived data.

    ``labels`` optionally names the states (used by lifted chains, induced
    chains and empirical chains); analysis is index-based throughout, with
    states numbered from 0.
    """

    def __init__(self, P, labels=None, pi=None):
        P = np.array(P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ChainError(f"transition matrix must be square, got shape {P.shape}")
        if np.any(P < -1e-15):
            raise ChainError("transition matrix has a negative entry")
        rows = P.sum(axis=1)
        bad = np.flatnonzero(np.abs(rows - 1.0) > ROW_SUM_TOL)
        if len(bad):
            raise ChainError(
                f"row {int(bad[0])} sums to {rows[bad[0]]!r}, off by more than {ROW_SUM_TOL}"
            )
        self.P = P
        self.labels = list(labels) if labels is not None else None
        self._pi = None
        if pi is not None:
            pi = np.asarray(pi, dtype=float)
            res = np.max(np.abs(pi @ P - pi))
            if res > STATIONARY_TOL:
                raise ChainError(f"supplied stationary law has residual {res:.3e}")
            self._pi = pi / pi.sum()

    @property
    def k(self) -> int:
        return self.P.shape[0]

    @property
    def pi(self) -> np.ndarray:
        if self._pi is None:
            self._pi = stationary(self)
        return self._pi

    def is_irreducible(self) -> bool:
        try:
            _reachability_witness(self.P)
        except ChainError:
            return False
        return True

    def is_reversible(self) -> bool:
        F = self.pi[:, None] * self.P
        return bool(np.max(np.abs(F - F.T)) <= DETAILED_BALANCE_TOL)

    def is_lazy(self) -> bool:
        return bool(np.min(np.diag(self.P)) >= 0.5 - 1e-12)


def _reachability_witness(P: np.ndarray) -> None:
    """Raise with an explicit witness when the chain is not irreducible."""
    k = P.shape[0]
    adj = P > 0

    def bfs(adjacency):
        seen = np.zeros(k, dtype=bool)
        seen[0] = True
        frontier = [0]
        while frontier:
            nxt = np.flatnonzero(adjacency[frontier].any(axis=0) & ~seen)
            seen[nxt] = True
            frontier = list(nxt)
        return seen

    fwd = bfs(adj)
    if not fwd.all():
        missing = np.flatnonzero(~fwd).tolist()
        raise ChainError(f"not irreducible: states {missing} are unreachable from state 0")
    bwd = bfs(adj.T)
    if not bwd.all():
        missing = np.flatnonzero(~bwd).tolist()
        raise ChainError(f"not irreducible: states {missing} cannot reach state 0")


def stationary(chain: FiniteChain) -> np.ndarray:
    """The unique stationary law of an irreducible chain.

    Solved as the null vector of (P^T - I) with the normalization row
    appended; reducible chains raise with a reachability witness.
    """
    _reachability_witness(chain.P)
    k = chain.k
    A = chain.P.T - np.eye(k)
    A[-1, :] = 1.0
    b = np.zeros(k)
    b[-1] = 1.0
    pi = np.linalg.solve(A, b)
    pi = np.abs(pi)
    pi /= pi.sum()
    res = np.max(np.abs(pi @ chain.P - pi))
    if res > STATIONARY_TOL:
        raise ChainError(f"stationary solve residual {res:.3e} exceeds {STATIONARY_TOL}")
    return pi


# ---------------------------------------------------------------------------
# in-module symmetric eigensolver (tridiagonalize + shifted QL)
# ---------------------------------------------------------------------------


def symmetric_eigenvalues(A: np.ndarray, tol: float = 1e-10, max_iter: int = 10**4) -> np.ndarray:
    """All eigenvalues of a symmetric matrix, ascending.

    Householder reduction to tridiagonal form followed by QL iteration with
    implicit Wilkinson shifts.  ``tol`` is the off-diagonal deflation
    threshold (relative to neighboring diagonal mass); the iteration budget
    is shared across all eigenvalues.
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    if n == 1:
        return A[0, :1].copy()
    if np.max(np.abs(A - A.T)) > 1e-8:
        raise ChainError("eigensolver input is not symmetric")
    A = (A + A.T) / 2.0

    # --- Householder tridiagonalization ---
    d = np.zeros(n)
    e = np.zeros(n)  # e[1..n-1] are subdiagonals
    for i in range(n - 1, 0, -1):
        v = A[i, :i].copy()
        if i == 1:
            e[1] = v[0]
            continue
        sigma = math.sqrt(float(v @ v))
        if sigma == 0.0:
            e[i] = 0.0
            continue
        alpha = -math.copysign(sigma, v[-1]) if v[-1] != 0 else -sigma
        u = v.copy()
        u[-1] -= alpha
        un = math.sqrt(float(u @ u))
        if un == 0.0:
            e[i] = alpha
            continue
        u /= un
        B = A[:i, :i]
        w = B @ u
        tau = float(u @ w)
        B -= 2.0 * np.outer(u, w) + 2.0 * np.outer(w, u) - 4.0 * tau * np.outer(u, u)
        A[:i, :i] = B
        e[i] = alpha
    d[:] = np.diag(A)

    # --- implicit QL with Wilkinson-style shifts on (d, e) ---
    e = np.roll(e, -1)  # e[l] couples d[l] and d[l+1]; e[n-1] unused
    e[n - 1] = 0.0
    iterations = 0
    for l in range(n):
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= tol * dd + 1e-300:
                    break
                m += 1
            if m == l:
                break
            iterations += 1
            if iterations > max_iter:
                raise ChainError(f"eigenvalue iteration budget {max_iter} exhausted")
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + math.copysign(r, g))
            s = c = 1.0
            p = 0.0
            for i in range(m - 1, l - 1, -1):
                f = s * e[i]
                b = c * e[i]
                r = math.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
            else:
                d[l] -= p
                e[l] = g
                e[m] = 0.0
    return np.sort(d)


def _sqrt_pi_conjugate(chain: FiniteChain, M: np.ndarray) -> np.ndarray:
    """D^{1/2} M D^{-1/2} with D = diag(pi); symmetric when M is pi-reversible."""
    s = np.sqrt(chain.pi)
    return (s[:, None] * M) / s[None, :]


def poincare(chain: FiniteChain) -> float:
    """Spectral gap of the additive symmetrization: 1 - lambda_2((P + P*)/2).

    The symmetrization is reversible for any irreducible chain, so its
    Dirichlet form (and hence this gap) is well defined without assuming
    reversibility of P itself.
    """
    if chain.k == 1:
        return 1.0
    M = (chain.P + time_reverse(chain).P) / 2.0
    S = _sqrt_pi_conjugate(chain, M)
    evs = symmetric_eigenvalues((S + S.T) / 2.0)
    return float(1.0 - evs[-2])


def absolute_gap(chain: FiniteChain) -> float:
    """1 - max(|lambda| : lambda != top eigenvalue); reversible chains only."""
    if not chain.is_reversible():
        raise ChainError("absolute gap needs a reversible chain (real spectrum)")
    if chain.k == 1:
        return 1.0
    S = _sqrt_pi_conjugate(chain, chain.P)
    evs = symmetric_eigenvalues((S + S.T) / 2.0)
    rest = np.abs(evs[:-1])  # drop the top eigenvalue (= 1)
    return float(1.0 - rest.max())


# ---------------------------------------------------------------------------
# bottleneck ratio
# ---------------------------------------------------------------------------


def _subset_bits(masks: np.ndarray, k: int) -> np.ndarray:
    return ((masks[:, None] >> np.arange(k)) & 1).astype(bool)


def cheeger(chain: FiniteChain, batch: int = 1 << 16):
    """Exhaustive bottleneck ratio over all sets with pi(A) <= 1/2.

    Returns ``(phi_star, A)`` where ``A`` is the lexicographically smallest
    achieving set (as a sorted tuple of state indices).  Exhaustive search is
    capped at k = 25 states; larger state spaces should use the candidate
    sweep in walklab instead.
    """
    k = chain.k
    if k > 25:
        raise ChainError(
            "exhaustive bottleneck search is capped at 25 states; "
            "use the walklab candidate sweep for larger graphs"
        )
    pi = chain.pi
    Q = pi[:, None] * chain.P
    best = math.inf
    cands: list[tuple] = []
    for lo in range(1, 2**k - 1, batch):
        masks = np.arange(lo, min(lo + batch, 2**k - 1), dtype=np.int64)
        bits = _subset_bits(masks, k)
        piA = bits @ pi
        ok = piA <= 0.5 + 1e-15
        if not ok.any():
            continue
        bits_f = bits.astype(float)
        inflow = bits_f @ Q  # [b, y] = sum_{x in A} Q[x, y]
        flow = (inflow * ~bits).sum(axis=1)
        ratio = np.where(ok, flow / np.where(ok, piA, 1.0), math.inf)
        mn = float(ratio.min())
        if mn < best - 1e-12:
            best = mn
            cands = []
        if mn <= best + 1e-12:
            hit = np.flatnonzero(np.abs(ratio - best) <= 1e-12 + 1e-12 * abs(best))
            cands.extend(tuple(np.flatnonzero(bits[i]).tolist()) for i in hit)
    if not cands:
        raise ChainError("no admissible set found (is pi degenerate?)")
    return best, min(cands)


# ---------------------------------------------------------------------------
# mixing and hitting
# ---------------------------------------------------------------------------


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def tmix(chain: FiniteChain, eps: float = 0.25, plateau_drop: float = 1e-12):
    """Exact worst-start total-variation mixing time.

    Evolves all rows of P^t simultaneously and returns the first t with
    max-row TV <= eps.  Returns None ("diverged") when the worst-row TV fails
    to improve by ``plateau_drop`` over 4k consecutive steps (periodic or
    reducible chains plateau this way).
    """
    k = chain.k
    pi = chain.pi
    M = np.eye(k)
    worst = 0.5 * np.abs(M - pi).sum(axis=1).max()
    t = 0
    best = worst
    since_improve = 0
    while worst > eps:
        M = M @ chain.P
        t += 1
        worst = 0.5 * np.abs(M - pi).sum(axis=1).max()
        if worst < best - plateau_drop:
            best = worst
            since_improve = 0
        else:
            since_improve += 1
            if since_improve >= 4 * k:
                return None
    return t


def lazify(chain: FiniteChain) -> FiniteChain:
    """(I + P) / 2 — same stationary law, nonnegative spectrum."""
    k = chain.k
    return FiniteChain((np.eye(k) + chain.P) / 2.0, labels=chain.labels, pi=chain._pi)


def time_reverse(chain: FiniteChain) -> FiniteChain:
    """P*(x, y) = pi(y) P(y, x) / pi(x)."""
    pi = chain.pi
    P = (chain.P.T * pi[None, :]) / pi[:, None]
    return FiniteChain(P, labels=chain.labels, pi=pi)


def q2_lift(chain: FiniteChain) -> FiniteChain:
    """The pair-chain on ordered transitions of a base chain.

    States are the pairs (i, j) with P(i, j) > 0; the lifted kernel moves
    (i, j) -> (j, l) with probability P(j, l), and its stationary law is
    pi(i) P(i, j) exactly (attached, not re-solved).
    """
    P = chain.P
    pi = chain.pi
    pairs = [(i, j) for i in range(chain.k) for j in range(chain.k) if P[i, j] > 0]
    idx = {pair: a for a, pair in enumerate(pairs)}
    K = np.zeros((len(pairs), len(pairs)))
    for (i, j), a in idx.items():
        for l in range(chain.k):
            if P[j, l] > 0:
                K[a, idx[(j, l)]] = P[j, l]
    pi2 = np.array([pi[i] * P[i, j] for (i, j) in pairs])
    lifted = FiniteChain(K, labels=pairs)
    res = np.max(np.abs(pi2 @ K - pi2))
    if res > 1e-12:
        raise ChainError(f"pair-chain stationarity residual {res:.3e} exceeds 1e-12")
    lifted._pi = pi2
    return lifted


def induced_chain(chain: FiniteChain, A) -> FiniteChain:
    """The watched chain on A: transitions between consecutive visits to A.

    P_A(x, y) = P(x, y) + sum over excursions through the complement,
    computed with an absorbing-chain linear solve.  The stationary law is the
    restriction pi|_A renormalized (no reversibility needed).
    """
    A = sorted(set(int(a) for a in A))
    if not A:
        raise ChainError("induced chain needs a nonempty target set")
    k = chain.k
    B = [x for x in range(k) if x not in set(A)]
    P = chain.P
    PAA = P[np.ix_(A, A)]
    if not B:
        return FiniteChain(PAA, labels=list(A), pi=chain.pi)
    PAB = P[np.ix_(A, B)]
    PBB = P[np.ix_(B, B)]
    PBA = P[np.ix_(B, A)]
    try:
        F = np.linalg.solve(np.eye(len(B)) - PBB, PBA)
    except np.linalg.LinAlgError:
        raise ChainError("complement excursions do not terminate (singular solve)") from None
    PA = PAA + PAB @ F
    piA = chain.pi[A]
    piA = piA / piA.sum()
    out = FiniteChain(PA, labels=list(A))
    res = np.max(np.abs(piA @ PA - piA))
    if res > STATIONARY_TOL:
        raise ChainError(f"induced stationary residual {res:.3e}")
    out._pi = piA
    return out


def expected_hitting(chain: FiniteChain, A) -> np.ndarray:
    """E_x[T_A] for every start x (zero on A), by linear solve."""
    A = sorted(set(int(a) for a in A))
    if not A:
        raise ChainError("hitting a nonempty set only")
    k = chain.k
    B = [x for x in range(k) if x not in set(A)]
    h = np.zeros(k)
    if B:
        PBB = chain.P[np.ix_(B, B)]
        hB = np.linalg.solve(np.eye(len(B)) - PBB, np.ones(len(B)))
        h[B] = hB
    return h


def hitting_profile(chain: FiniteChain, alpha: float, t: int):
    """Worst tail sup_x sup_{A: pi(A) > alpha} P_x(T_A > t), exhaustively.

    Exhaustive over target sets, so capped at 15 states.  Returns
    ``(value, A, x)`` for the achieving pair.
    """
    k = chain.k
    if k > 15:
        raise ChainError("hitting profile enumeration is capped at 15 states")
    pi = chain.pi
    best = (-1.0, None, None)
    for mask in range(1, 2**k - 1):
        A = [x for x in range(k) if (mask >> x) & 1]
        if pi[A].sum() <= alpha:
            continue
        B = [x for x in range(k) if not ((mask >> x) & 1)]
        if not B:
            continue
        PBB = chain.P[np.ix_(B, B)]
        v = np.ones(len(B))
        for _ in range(t):
            v = PBB @ v
        worst = float(v.max())
        if worst > best[0]:
            best = (worst, tuple(A), B[int(np.argmax(v))])
    if best[1] is None:
        raise ChainError(f"no target set has pi(A) > {alpha}")
    return best


def decorrelation_gap(chain: FiniteChain, f, g, i: int, j: int):
    """Exact worst-start covariance-style term and its mixing-based bound.

    Requires |f| <= 1, |g| <= 1 and E_pi[g] = 0 (within 1e-10).  Returns
    ``(value, bound)`` with value = max_theta E_theta[f(X_i) g(X_j)] computed
    by matrix powers, and bound = 2 * 2^{-(j-i)/(2 t_mix(1/4))}.  The constant
    2 is exposed here, not asserted as universal beyond this bound.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if j < i:
        raise ChainError("need i <= j")
    if np.max(np.abs(f)) > 1 + 1e-12 or np.max(np.abs(g)) > 1 + 1e-12:
        raise ChainError("observables must be bounded by 1 in absolute value")
    mean_g = float(chain.pi @ g)
    if abs(mean_g) > 1e-10:
        raise ChainError(f"g must be centered: E_pi[g] = {mean_g:.3e}")
    w = g.copy()
    for _ in range(j - i):
        w = chain.P @ w
    u = f * w
    for _ in range(i):
        u = chain.P @ u
    value = float(u.max())
    t_quarter = tmix(chain, 0.25)
    if t_quarter is None:
        raise ChainError("chain does not mix; no decorrelation bound")
    bound = 2.0 * 2.0 ** (-(j - i) / (2.0 * max(t_quarter, 1)))
    return value, bound


@dataclass
class DecompositionBound:
    gamma: float
    gamma_projected: float
    gamma_min_restriction: float
    bound: float
    restrictions: list
    projected: FiniteChain


def decomposition_bound(chain: FiniteChain, partition) -> DecompositionBound:
    """Block decomposition lower bound gamma >= gamma_projected * min_i gamma_i.

    Restriction kernels keep off-diagonal entries inside each block and fold
    all escaping mass onto the diagonal; the projected kernel averages block
    transition mass under pi.  One-state chains (and the one-block projected
    chain) take gap 1 by convention.  Reversible chains only.
    """
    if not chain.is_reversible():
        raise ChainError("decomposition bound needs a reversible chain")
    k = chain.k
    blocks = [sorted(set(int(x) for x in blk)) for blk in partition]
    flat = sorted(x for blk in blocks for x in blk)
    if flat != list(range(k)):
        raise ChainError("partition must cover every state exactly once")
    pi = chain.pi
    P = chain.P
    restrictions = []
    for blk in blocks:
        sub = P[np.ix_(blk, blk)].copy()
        off = sub.sum(axis=1) - np.diag(sub)
        np.fill_diagonal(sub, 1.0 - off)
        restrictions.append(FiniteChain(sub, labels=blk))
    nb = len(blocks)
    Phat = np.zeros((nb, nb))
    for a, blk_a in enumerate(blocks):
        wa = pi[blk_a] / pi[blk_a].sum()
        for b, blk_b in enumerate(blocks):
            Phat[a, b] = float(wa @ P[np.ix_(blk_a, blk_b)].sum(axis=1))
    projected = FiniteChain(Phat)
    gamma_hat = 1.0 if nb == 1 else poincare(projected)
    gamma_min = min(1.0 if r.k == 1 else poincare(r) for r in restrictions)
    gamma = poincare(chain)
    return DecompositionBound(
        gamma=gamma,
        gamma_projected=gamma_hat,
        gamma_min_restriction=gamma_min,
        bound=gamma_hat * gamma_min,
        restrictions=restrictions,
        projected=projected,
    )


def l2_survival_bound(chain: FiniteChain, eta, A, t: int):
    """Exact avoidance probability vs. the chi-square survival bound.

    For a reversible lazy chain and a start law eta:
    lhs = P_eta(T_A > t) exactly (restricted powers), and
    rhs = ||eta/pi||_{2,pi} * exp(-t * pi(A) / t_rel)  with t_rel = 1/gamma.
    """
    if not chain.is_reversible():
        raise ChainError("survival bound needs a reversible chain")
    if not chain.is_lazy():
        raise ChainError("survival bound needs a lazy chain (diagonal >= 1/2)")
    eta = np.asarray(eta, dtype=float)
    A = sorted(set(int(a) for a in A))
    B = [x for x in range(chain.k) if x not in set(A)]
    pi = chain.pi
    v = eta[B].copy()
    PBB = chain.P[np.ix_(B, B)]
    for _ in range(t):
        v = v @ PBB
    lhs = float(v.sum())
    norm = math.sqrt(float(np.sum(pi * (eta / pi) ** 2)))
    t_rel = 1.0 / poincare(chain)
    rhs = norm * math.exp(-t * float(pi[A].sum()) / t_rel)
    return lhs, rhs


# ---------------------------------------------------------------------------
# report and I/O
# ---------------------------------------------------------------------------


@dataclass
class ChainReport:
    phi_star: float
    cheeger_set: tuple
    gamma: float
    gamma_star: float | None
    t_rel: float
    t_rel_star: float | None
    t_mix: dict
    max_hitting: float | None
    reversible: bool
    lazy: bool
    extras: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "phi_star": self.phi_star,
            "gamma": self.gamma,
            "gamma_star": self.gamma_star,
            "t_rel": self.t_rel,
            "t_rel_star": self.t_rel_star,
            "t_mix_quarter": self.t_mix.get(0.25),
            "t_mix_three_quarters": self.t_mix.get(0.75),
            "max_hitting": self.max_hitting,
            "cheeger_set": list(self.cheeger_set),
            "reversible": self.reversible,
            "lazy": self.lazy,
        }
        for eps, t in sorted(self.t_mix.items()):
            doc[f"t_mix_at_{eps}"] = t
        doc.update(self.extras)
        return json.dumps(doc, indent=2, sort_keys=True)


def max_expected_hitting(chain: FiniteChain, alpha: float = 0.25):
    """max over targets A with pi(A) >= alpha and starts x of E_x[T_A]."""
    k = chain.k
    if k > 15:
        raise ChainError("exhaustive hitting maximum is capped at 15 states")
    pi = chain.pi
    best = 0.0
    for mask in range(1, 2**k):
        A = [x for x in range(k) if (mask >> x) & 1]
        if pi[A].sum() < alpha:
            continue
        h = expected_hitting(chain, A)
        best = max(best, float(h.max()))
    return best


def chain_report(chain: FiniteChain, eps=(0.25, 0.75)) -> ChainReport:
    """One-stop summary; asserts gamma_star <= gamma within float slack."""
    phi, A = cheeger(chain)
    gamma = poincare(chain)
    reversible = chain.is_reversible()
    gamma_star = absolute_gap(chain) if reversible else None
    if gamma_star is not None and gamma_star > gamma + 1e-9:
        raise ChainError(f"absolute gap {gamma_star} exceeds Poincare gap {gamma}")
    mix = {float(e): tmix(chain, float(e)) for e in eps}
    hit = max_expected_hitting(chain) if chain.k <= 15 else None
    return ChainReport(
        phi_star=phi,
        cheeger_set=A,
        gamma=gamma,
        gamma_star=gamma_star,
        t_rel=1.0 / gamma,
        t_rel_star=(1.0 / gamma_star if gamma_star not in (None, 0.0) else None),
        t_mix=mix,
        max_hitting=hit,
        reversible=reversible,
        lazy=chain.is_lazy(),
    )


def write_chain(chain: FiniteChain) -> str:
    lines = [str(chain.k)]
    for row in chain.P:
        lines.append(" ".join(repr(float(x)) for x in row))
    return "\n".join(lines) + "\n"


def read_chain(text: str) -> FiniteChain:
    rows = [ln for ln in text.strip().splitlines() if ln.strip()]
    k = int(rows[0])
    if len(rows) != k + 1:
        raise ChainError(f"expected {k} rows, found {len(rows) - 1}")
    P = np.array([[float(x) for x in ln.split()] for ln in rows[1:]])
    return FiniteChain(P)
