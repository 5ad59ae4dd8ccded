"""Lazy multi-type limit trees, walks on them, and tree-side estimators.

Locally, a large community random graph looks like an infinite random tree
whose vertices carry a community label ("type"): the root's degree profile is
degree-biased within its community, and every further vertex reproduces
according to the half-edge counts of the model — internal half-edges spawn
same-type children, outgoing half-edges spawn other-type children.  This
module grows that tree lazily, runs (lazy) simple random walks on it, detects
regeneration times of the walk, computes escape/harmonic quantities by
truncated interval recursions, and turns all of that into estimators for the
walk's speed, its entropy per unit depth, and the empirical chains of
regeneration edge types.

Trees are stored as flat node pools (one pool can hold many independent
replicates).  Child sampling is keyed by a per-node 64-bit key derived from
the node's position in the tree, so the sampled tree is a pure function of
the replicate seed: expanding nodes in a different order, or twice, can never
change any node's children.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._rng import keyed_bits, keyed_uniform, spawn_seeds
from .chainkit import FiniteChain
from .graphgen import CommunitySpec, derive_Q


class TreeError(ValueError):
    """Raised for invalid tree operations or unreliable estimator input."""


# Conductance from a vertex of an (unknown) min-degree-3 tree toward infinity,
# through the edge from its parent, lies in [1/2, 1]: the subtree conductance
# sum S is at least (d-1)/2 >= 1 at the self-consistent lower bound, and the
# edge itself has unit conductance.  Used as the truncation bracket for cut
# children in the harmonic recursion.
_CUT_CONDUCTANCE = (0.5, 1.0)

# Return probability to the parent on a min-degree-3 tree is at most 1/2
# (self-consistent: a <= 1/(d - (d-1)/2) = 2/(d+1) <= 1/2 for d >= 3), and
# the bracket [0, 1/2] is contracting, unlike [0, 1] whose upper endpoint is
# a parasitic fixed point of the recursion.
_CUT_RETURN = (0.0, 0.5)

_NODE_BUDGET = 12_000_000  # safety cap on truncation-frontier size (~0.5 GB of pool)


# ---------------------------------------------------------------------------
# sampling tables
# ---------------------------------------------------------------------------


class _Tables:
    """Per-community cumulative tables for degree-biased child sampling."""

    def __init__(self, spec: CommunitySpec):
        self.model = spec.model
        m = spec.m
        if spec.model == "two":
            self.alpha = np.asarray(spec.alphas, dtype=float)
            self.deg_vals, self.deg_cum = [], []
            for ds in spec.degrees:
                vals, cnt = np.unique(np.asarray(ds, dtype=np.int64), return_counts=True)
                w = (vals * cnt).astype(float)
                self.deg_vals.append(vals)
                self.deg_cum.append(_cumdist(w))
        else:
            E = spec.count_matrix().astype(float)
            self.int_tab, self.out_tab, self.root_tab = [], [], []
            self.cross_cum = []
            for i in range(m):
                di = np.asarray(spec.deg_int[i], dtype=np.int64)
                do = np.asarray(spec.deg_out[i], dtype=np.int64)
                pairs, cnt = np.unique(np.stack([di, do], axis=1), axis=0, return_counts=True)
                pdi, pdo = pairs[:, 0], pairs[:, 1]
                self.root_tab.append((pdi, pdo, _cumdist((pdi + pdo) * cnt)))
                self.int_tab.append((pdi, pdo, _cumdist(pdi * cnt)))
                self.out_tab.append((pdi, pdo, _cumdist(pdo * cnt)))
                row = E[i].copy()
                row[i] = 0.0
                self.cross_cum.append(_cumdist(row) if row.sum() > 0 else None)


def _cumdist(w) -> np.ndarray | None:
    w = np.asarray(w, dtype=float)
    s = w.sum()
    if s <= 0:
        return None
    c = np.cumsum(w) / s
    c[-1] = 1.0
    return c


def _draw(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Index into the distribution with cumulative vector ``cum``."""
    return np.minimum(np.searchsorted(cum, u, side="right"), len(cum) - 1)


def _ranges(starts: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Concatenate ``arange(s, s + c)`` for each (s, c) pair, in order."""
    total = int(counts.sum())
    offs = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
    return np.repeat(starts, counts) + (np.arange(total, dtype=np.int64) - np.repeat(offs, counts))


# ---------------------------------------------------------------------------
# the tree pool
# ---------------------------------------------------------------------------


class TreeBatch:
    """A pool of independently sampled limit trees, one per replicate.

    Node attributes live in flat arrays indexed by pool id: ``typ``
    (community), ``par`` (parent id, -1 at roots), ``depth``, ``dint``/``dout``
    (the node's internal/outgoing degree attributes; for the two-community
    model the total degree is stored in ``dint`` and ``dout`` is 0), ``nkids``
    (number of children), ``nint`` (how many of them attach through internal
    half-edges), ``kids_at`` (pool id of the first child, -1 while
    unexpanded; children are contiguous), ``key`` (the node's sampling key)
    and ``rep`` (owning replicate).  Pool ids are assigned in generation
    order; roots are ids ``0..R-1``.
    """

    def __init__(self, spec: CommunitySpec, nu, seeds):
        if not isinstance(spec, CommunitySpec):
            raise TreeError("spec must be a CommunitySpec")
        nu = np.asarray(nu, dtype=float)
        if nu.shape != (spec.m,) or np.any(nu < 0) or abs(nu.sum() - 1.0) > 1e-9:
            raise TreeError(f"root-type distribution must be a probability vector of length {spec.m}")
        self.spec = spec
        self.nu = nu
        self.seeds = np.asarray(seeds, dtype=np.int64).ravel()
        self.tables = _Tables(spec)
        self.n_replicates = self.seeds.size
        self._cap = 0
        self.n = 0
        self._grow(max(1024, 4 * self.n_replicates))
        self._make_roots()

    # -- storage ------------------------------------------------------------

    def _grow(self, cap: int) -> None:
        def ext(name, dtype, fill):
            new = np.full(cap, fill, dtype=dtype)
            if self._cap:
                new[: self.n] = getattr(self, name)[: self.n]
            setattr(self, name, new)

        ext("typ", np.int8, 0)
        ext("par", np.int64, -1)
        ext("depth", np.int32, 0)
        ext("dint", np.int16, 0)
        ext("dout", np.int16, 0)
        ext("nkids", np.int16, 0)
        ext("nint", np.int16, 0)
        ext("kids_at", np.int64, -1)
        ext("key", np.uint64, 0)
        ext("rep", np.int32, 0)
        self._cap = cap

    def _alloc(self, count: int) -> int:
        if self.n + count > self._cap:
            self._grow(max(2 * self._cap, self.n + count))
        start = self.n
        self.n += count
        return start

    # -- node creation ------------------------------------------------------

    def _make_roots(self) -> None:
        R = self.n_replicates
        start = self._alloc(R)
        ids = np.arange(start, start + R)
        rkey = keyed_bits(11, self.seeds, 0)
        kview = rkey.view(np.int64)
        typ = _draw(np.cumsum(self.nu), keyed_uniform(0, kview, 0)).astype(np.int8)
        u = keyed_uniform(0, kview, 1)
        dint = np.zeros(R, dtype=np.int16)
        dout = np.zeros(R, dtype=np.int16)
        for i in range(self.spec.m):
            sel = typ == i
            if not sel.any():
                continue
            if self.tables.model == "two":
                d = self.tables.deg_vals[i][_draw(self.tables.deg_cum[i], u[sel])]
                dint[sel] = d
            else:
                pdi, pdo, cum = self.tables.root_tab[i]
                j = _draw(cum, u[sel])
                dint[sel] = pdi[j]
                dout[sel] = pdo[j]
        self.typ[ids] = typ
        self.key[ids] = rkey
        self.rep[ids] = np.arange(R, dtype=np.int32)
        self.dint[ids] = dint
        self.dout[ids] = dout
        self.nkids[ids] = dint + dout
        self.nint[ids] = dint
        self.roots = ids

    def expand_nodes(self, ids) -> None:
        """Sample the children of every not-yet-expanded node in ``ids``."""
        ids = np.unique(np.asarray(ids, dtype=np.int64))
        ids = ids[self.kids_at[ids] < 0]
        if ids.size == 0:
            return
        cnt = self.nkids[ids].astype(np.int64)
        total = int(cnt.sum())
        start = self._alloc(total)
        offs = np.concatenate([[0], np.cumsum(cnt)[:-1]]).astype(np.int64)
        self.kids_at[ids] = start + offs
        parent = np.repeat(ids, cnt)
        slot = np.arange(total, dtype=np.int64) - np.repeat(offs, cnt)
        child = start + np.arange(total, dtype=np.int64)

        ckey = keyed_bits(0, self.key[parent].view(np.int64), slot)
        kview = ckey.view(np.int64)
        ptyp = self.typ[parent]
        u_typ = keyed_uniform(0, kview, 1)
        u_deg = keyed_uniform(0, kview, 2)

        ctyp = ptyp.copy()
        cdint = np.zeros(total, dtype=np.int16)
        cdout = np.zeros(total, dtype=np.int16)
        cnk = np.zeros(total, dtype=np.int16)
        cni = np.zeros(total, dtype=np.int16)

        if self.tables.model == "two":
            flip = u_typ < self.tables.alpha[ptyp]
            ctyp = np.where(flip, 1 - ptyp, ptyp).astype(np.int8)
            for i in range(2):
                sel = ctyp == i
                if not sel.any():
                    continue
                d = self.tables.deg_vals[i][_draw(self.tables.deg_cum[i], u_deg[sel])]
                cdint[sel] = d
            cnk = (cdint - 1).astype(np.int16)
            cni = cnk
        else:
            internal = slot < self.nint[parent]
            for i in range(self.spec.m):
                sel = (~internal) & (ptyp == i)
                if not sel.any():
                    continue
                cum = self.tables.cross_cum[i]
                if cum is None:
                    raise TreeError(f"community {i} has outgoing children but no cross half-edges")
                ctyp[sel] = _draw(cum, u_typ[sel]).astype(np.int8)
            for i in range(self.spec.m):
                for via_int in (True, False):
                    sel = (ctyp == i) & (internal == via_int)
                    if not sel.any():
                        continue
                    pdi, pdo, cum = (self.tables.int_tab if via_int else self.tables.out_tab)[i]
                    if cum is None:
                        kind = "internal" if via_int else "outgoing"
                        raise TreeError(f"community {i} has no {kind} half-edges to sample from")
                    j = _draw(cum, u_deg[sel])
                    di, do = pdi[j], pdo[j]
                    cdint[sel] = di
                    cdout[sel] = do
                    if via_int:
                        cnk[sel] = di - 1 + do
                        cni[sel] = di - 1
                    else:
                        cnk[sel] = di + do - 1
                        cni[sel] = di

        self.typ[child] = ctyp
        self.par[child] = parent
        self.depth[child] = self.depth[parent] + 1
        self.dint[child] = cdint
        self.dout[child] = cdout
        self.nkids[child] = cnk
        self.nint[child] = cni
        self.key[child] = ckey
        self.rep[child] = self.rep[parent]

    # -- node-level accessors -----------------------------------------------

    def children(self, v: int) -> np.ndarray:
        """Pool ids of v's children (expanding v on demand)."""
        if self.kids_at[v] < 0:
            self.expand_nodes([v])
        k = int(self.kids_at[v])
        return np.arange(k, k + int(self.nkids[v]), dtype=np.int64)

    def degree(self, v: int) -> int:
        """Number of tree neighbors of v (children plus parent if any)."""
        return int(self.nkids[v]) + (1 if self.par[v] >= 0 else 0)

    def type_of(self, v: int) -> int:
        return int(self.typ[v])

    def ancestors(self, v: int) -> np.ndarray:
        """Path of pool ids from the replicate root down to v (inclusive)."""
        path = [int(v)]
        while self.par[path[-1]] >= 0:
            path.append(int(self.par[path[-1]]))
        return np.asarray(path[::-1], dtype=np.int64)


class TypedTree(TreeBatch):
    """A single limit tree (one-replicate pool)."""

    def __init__(self, spec: CommunitySpec, nu, seed: int):
        super().__init__(spec, nu, [int(seed)])

    @property
    def root(self) -> int:
        return int(self.roots[0])


def grow_tree(spec: CommunitySpec, nu, seed: int) -> TypedTree:
    """Root-and-attributes-only tree; nodes are expanded lazily on access."""
    return TypedTree(spec, nu, seed)


def expand(tree: TreeBatch, node: int) -> TreeBatch:
    """Sample the children of ``node`` (idempotent); returns the tree."""
    tree.expand_nodes([node])
    return tree


# ---------------------------------------------------------------------------
# walks
# ---------------------------------------------------------------------------


@dataclass
class WalkTrace:
    """One walk path on a tree: pool ids ``nodes[0..T]`` plus the clock kind."""

    tree: TreeBatch
    rep: int
    nodes: np.ndarray
    lazy: bool

    @property
    def horizon(self) -> int:
        return len(self.nodes) - 1

    @property
    def depths(self) -> np.ndarray:
        return self.tree.depth[self.nodes].astype(np.int64)


def walk_batch(tree: TreeBatch, T: int, lazy: bool, seed: int, starts=None) -> list:
    """Run one walk per replicate, synchronously, expanding nodes on demand.

    Move targets are drawn from a per-replicate stream indexed by the move
    count (not the clock), so for a fixed seed the lazy and non-lazy walks
    traverse the same node sequence — laziness only stretches the clock.
    """
    R = tree.n_replicates
    cur = (tree.roots if starts is None else np.asarray(starts, dtype=np.int64)).copy()
    if cur.shape != (R,):
        raise TreeError(f"need one start per replicate ({R}), got shape {cur.shape}")
    hold_key = keyed_bits(int(seed), tree.seeds, 101).view(np.int64)
    move_key = keyed_bits(int(seed), tree.seeds, 202).view(np.int64)
    moves = np.zeros(R, dtype=np.int64)
    traces = np.empty((R, T + 1), dtype=np.int64)
    traces[:, 0] = cur
    lanes = np.arange(R)
    for t in range(1, T + 1):
        if lazy:
            movers = lanes[keyed_uniform(0, hold_key, t) >= 0.5]
        else:
            movers = lanes
        if movers.size:
            c = cur[movers]
            fresh = c[tree.kids_at[c] < 0]
            if fresh.size:
                tree.expand_nodes(fresh)
            nk = tree.nkids[c].astype(np.int64)
            deg = nk + (tree.par[c] >= 0)
            u = keyed_uniform(0, move_key[movers], moves[movers])
            idx = np.minimum((u * deg).astype(np.int64), deg - 1)
            cur[movers] = np.where(idx < nk, tree.kids_at[c] + idx, tree.par[c])
            moves[movers] += 1
        traces[:, t] = cur
    return [WalkTrace(tree, r, traces[r], lazy) for r in range(R)]


def walk_on_tree(tree: TreeBatch, start: int, T: int, lazy: bool, seed: int) -> WalkTrace:
    """A single walk started at ``start`` (which must belong to replicate 0)."""
    starts = tree.roots.copy()
    starts[0] = int(start)
    return walk_batch(tree, T, lazy, seed, starts=starts)[0]


def loop_erase(trace: WalkTrace) -> np.ndarray:
    """Chronologically loop-erased path of the trace.

    On a tree this is exactly the simple path from the start to the final
    position: every excursion off that path is a loop and gets erased.
    """
    tree = trace.tree
    a, b = int(trace.nodes[0]), int(trace.nodes[-1])
    pa, pb = list(tree.ancestors(a)), list(tree.ancestors(b))
    k = 0
    while k < min(len(pa), len(pb)) and pa[k] == pb[k]:
        k += 1
    return np.asarray(pa[:k - 1:-1] + pb[k - 1:], dtype=np.int64)


# ---------------------------------------------------------------------------
# regenerations
# ---------------------------------------------------------------------------


@dataclass
class RegenRecord:
    """Regeneration times of one trace: times, depths, and edge types.

    ``theta_from[k]``/``theta_to[k]`` are the communities of the regeneration
    edge's endpoints (equal for the strict variant); ``nodes[k]`` is the pool
    id of the lower endpoint.  The last ``guard`` steps of the horizon are
    censored: a crossing there may still be recrossed after the horizon, so
    it is never reported.
    """

    replicate: int
    variant: str
    guard: int
    horizon: int
    sigmas: np.ndarray
    phis: np.ndarray
    theta_from: np.ndarray
    theta_to: np.ndarray
    nodes: np.ndarray

    def __len__(self) -> int:
        return len(self.sigmas)


def detect_regenerations(trace: WalkTrace, variant: str = "strict", guard: int = 200) -> RegenRecord:
    """Times whose step edge is crossed exactly once, with the type condition.

    A step ``t`` qualifies when the tree edge between ``X_{t-1}`` and ``X_t``
    is crossed exactly once over the whole trace (on a tree this single
    crossing is necessarily downward for root starts, and the walk never
    returns above it), ``X_{t-1}`` has a parent, ``t <= T - guard``, and the
    variant's type condition holds: *strict* requires the parent of
    ``X_{t-1}``, ``X_{t-1}`` and ``X_t`` to share one community; *relaxed*
    only requires ``X_{t-1}`` to match its parent's community.
    """
    if variant not in ("strict", "relaxed"):
        raise TreeError(f"unknown variant {variant!r}; use 'strict' or 'relaxed'")
    tree, nodes = trace.tree, trace.nodes
    T = trace.horizon
    if guard >= T:
        raise TreeError(f"censoring guard G = {guard} must be smaller than the horizon T = {T}")
    prev, cur = nodes[:-1], nodes[1:]
    moved = prev != cur
    down = moved & (tree.depth[cur] > tree.depth[prev])
    edge_child = np.where(down, cur, prev)[moved]
    uniq, cnt = np.unique(edge_child, return_counts=True)
    once = uniq[cnt == 1]
    t = np.arange(1, T + 1)
    cand = down & np.isin(np.where(down, cur, prev), once, assume_unique=False)
    cand &= t <= T - guard
    cand &= tree.par[prev] >= 0
    pt = tree.typ[np.maximum(tree.par[prev], 0)]
    qt, rt = tree.typ[prev], tree.typ[cur]
    cand &= pt == qt
    if variant == "strict":
        cand &= qt == rt
    sig = t[cand]
    lower = cur[cand]
    phis = tree.depth[lower].astype(np.int64)
    if len(phis) > 1 and not np.all(np.diff(phis) > 0):
        raise TreeError("internal invariant violated: regeneration depths not increasing")
    return RegenRecord(
        replicate=trace.rep,
        variant=variant,
        guard=int(guard),
        horizon=T,
        sigmas=sig.astype(np.int64),
        phis=phis,
        theta_from=qt[cand].astype(np.int64),
        theta_to=rt[cand].astype(np.int64),
        nodes=lower.astype(np.int64),
    )


def regen_records_csv(records) -> str:
    """Serialize records as CSV with one row per regeneration."""
    lines = ["replicate,sigma,phi,theta_from,theta_to"]
    for rec in records:
        for s, p, a, b in zip(rec.sigmas, rec.phis, rec.theta_from, rec.theta_to):
            lines.append(f"{rec.replicate},{s},{p},{a},{b}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# interval recursions on the tree
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Interval:
    """A certified bracket [lo, hi] for a truncated tree quantity."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (self.lo <= self.hi + 1e-15):
            raise TreeError(f"malformed interval [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)


def return_probability(tree: TreeBatch, v: int, tol: float = 1e-6) -> Interval:
    """Bracket the probability that the non-lazy walk from v ever hits its parent.

    Uses the recursion a(v) = 1 / (d(v) - sum over children of a(child)),
    truncated at depth D with the bracket [0, 1/2] at cut nodes; D grows
    until the bracket at v is narrower than ``tol``.
    """
    if tol < 1e-12:
        raise TreeError(f"tol = {tol} below 1e-12: truncation depth has diminishing returns")
    if tree.par[v] < 0:
        raise TreeError("return probability to the parent needs a non-root node")
    branch = max(int(tree.spec.max_degree) - 1, 1)
    D = 6
    while True:
        levels = [np.asarray([v], dtype=np.int64)]
        total = 1
        for _ in range(D):
            cur = levels[-1]
            # budget-check the worst case BEFORE sampling the next level:
            # on high-degree trees a single level can be the whole budget
            if total + cur.size * branch > _NODE_BUDGET:
                raise TreeError("tol too small: truncation frontier exceeds the node budget")
            fresh = cur[tree.kids_at[cur] < 0]
            if fresh.size:
                tree.expand_nodes(fresh)
            nxt = _ranges(tree.kids_at[cur], tree.nkids[cur].astype(np.int64))
            total += nxt.size
            levels.append(nxt)
        lo = np.full(levels[-1].size, _CUT_RETURN[0])
        hi = np.full(levels[-1].size, _CUT_RETURN[1])
        for lev in range(D - 1, -1, -1):
            cur = levels[lev]
            cnt = tree.nkids[cur].astype(np.int64)
            offs = np.concatenate([[0], np.cumsum(cnt)[:-1]]).astype(np.int64)
            s_lo = np.add.reduceat(lo, offs) if lo.size else np.zeros(cur.size)
            s_hi = np.add.reduceat(hi, offs) if hi.size else np.zeros(cur.size)
            d = cnt + 1  # all nodes here are non-root
            lo = 1.0 / (d - s_lo)
            hi = 1.0 / (d - s_hi)
        if hi[0] - lo[0] < tol:
            return Interval(float(lo[0]), float(hi[0]))
        # brackets contract by at least 1/2 per level; jump most of the gap
        D += min(6, max(2, int(math.ceil(math.log2((hi[0] - lo[0]) / tol)))))


def _ray_log_measures(tree: TreeBatch, ray: np.ndarray, D: int):
    """Certified log-brackets for the escape-ray measure of every ray prefix.

    ``ray`` is a root-started path of pool ids.  Builds the truncation tube —
    every descendant within D levels of its nearest ray ancestor — computes
    conductance brackets bottom-up (cut children use the min-degree-3
    bracket), splits the unit escape flow at each ray node proportionally to
    child conductances, and returns per-prefix log-products
    ``(log_lo, log_hi)``, where entry i brackets log P(the escape ray passes
    the edge ray[i] -> ray[i+1]).
    """
    L = len(ray) - 1
    ray_pos = {0: 0}
    levels = [(np.asarray([ray[0]], dtype=np.int64), np.asarray([D], dtype=np.int64))]
    total = 1
    g = 0
    while True:
        nodes, bud = levels[g]
        exp_pos = np.nonzero(bud >= 1)[0]
        if exp_pos.size == 0:
            break
        enodes = nodes[exp_pos]
        if total + enodes.size * (tree.spec.max_degree - 1) > _NODE_BUDGET:
            raise TreeError("tol too small: truncation tube exceeds the node budget")
        fresh = enodes[tree.kids_at[enodes] < 0]
        if fresh.size:
            tree.expand_nodes(fresh)
        cnt = tree.nkids[enodes].astype(np.int64)
        child = _ranges(tree.kids_at[enodes], cnt)
        cbud = np.repeat(bud[exp_pos] - 1, cnt)
        if g + 1 <= L:
            # refresh the budget at the next ray node and record its position
            blk = np.concatenate([[0], np.cumsum(cnt)[:-1]]).astype(np.int64)
            rk = int(np.searchsorted(exp_pos, ray_pos[g]))
            pos = int(blk[rk] + (ray[g + 1] - tree.kids_at[ray[g]]))
            cbud[pos] = D
            ray_pos[g + 1] = pos
        total += child.size
        if total > _NODE_BUDGET:
            raise TreeError("tol too small: truncation tube exceeds the node budget")
        levels.append((child, cbud))
        g += 1
    # bottom-up conductance brackets c(parent -> node)
    c_lo = [None] * len(levels)
    c_hi = [None] * len(levels)
    last = levels[-1][0].size
    c_lo[-1] = np.full(last, _CUT_CONDUCTANCE[0])
    c_hi[-1] = np.full(last, _CUT_CONDUCTANCE[1])
    for g in range(len(levels) - 2, -1, -1):
        nodes, bud = levels[g]
        lo = np.full(nodes.size, _CUT_CONDUCTANCE[0])
        hi = np.full(nodes.size, _CUT_CONDUCTANCE[1])
        exp_pos = np.nonzero(bud >= 1)[0]
        if exp_pos.size:
            cnt = tree.nkids[nodes[exp_pos]].astype(np.int64)
            offs = np.concatenate([[0], np.cumsum(cnt)[:-1]]).astype(np.int64)
            s_lo = np.add.reduceat(c_lo[g + 1], offs)
            s_hi = np.add.reduceat(c_hi[g + 1], offs)
            lo[exp_pos] = s_lo / (1.0 + s_lo)
            hi[exp_pos] = s_hi / (1.0 + s_hi)
        c_lo[g], c_hi[g] = lo, hi
    # flow splits along the ray
    log_lo = np.zeros(L)
    log_hi = np.zeros(L)
    for i in range(L):
        nodes, bud = levels[i]
        p = ray_pos[i]
        exp_pos = np.nonzero(bud >= 1)[0]
        cnt = tree.nkids[nodes[exp_pos]].astype(np.int64)
        blk = np.concatenate([[0], np.cumsum(cnt)[:-1]]).astype(np.int64)
        rk = int(np.searchsorted(exp_pos, p))
        a, b = int(blk[rk]), int(blk[rk] + cnt[rk])
        cl, ch = c_lo[i + 1][a:b], c_hi[i + 1][a:b]
        j = int(ray[i + 1] - tree.kids_at[ray[i]])
        other_lo = cl.sum() - cl[j]
        other_hi = ch.sum() - ch[j]
        log_lo[i] = math.log(cl[j] / (cl[j] + other_hi))
        log_hi[i] = math.log(ch[j] / (ch[j] + other_lo))
    return np.cumsum(log_lo), np.cumsum(log_hi)


def harmonic_edge_measure(tree: TreeBatch, edge, tol: float = 1e-6) -> Interval:
    """Bracket the probability that the escape ray of the walk uses ``edge``.

    ``edge`` is a (parent, child) pair on the expanded tree.  The unit escape
    flow from the root splits at every vertex proportionally to the effective
    conductances toward infinity of the child branches, computed by the
    recursion c(u -> v) = 1/(1 + 1/sum over children w of v of c(v -> w)),
    truncated D levels below the path with the min-degree-3 bracket at cut
    children.  Lazy and non-lazy walks share this measure (laziness only
    changes the clock).
    """
    u, v = int(edge[0]), int(edge[1])
    if tree.par[v] != u:
        raise TreeError(f"edge ({u}, {v}) is not a (parent, child) pair of the tree")
    if tol < 1e-12:
        raise TreeError(f"tol = {tol} too small: truncation depth has diminishing returns")
    ray = tree.ancestors(v)
    D = 6
    while True:
        llo, lhi = _ray_log_measures(tree, ray, D)
        lo, hi = math.exp(llo[-1]), math.exp(lhi[-1])
        if hi - lo < tol:
            return Interval(lo, hi)
        # width halves per extra level; jump straight to the needed depth
        D += max(2, int(math.ceil(math.log2((hi - lo) / tol))) + 1)


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpeedEstimate:
    """Regeneration-based speed estimate with its standard error."""

    nu: float
    se: float
    nu_regression: float
    n_increments: int
    n_replicates: int


def estimate_speed(records, burn_in: int = 20) -> SpeedEstimate:
    """Ratio estimator: total depth gained over total time elapsed.

    Sums depth and time increments between consecutive regenerations after
    discarding the first ``burn_in`` regenerations of each record, then the
    ratio of pooled sums.  The standard error linearizes the ratio over
    replicate blocks (or sequential batches when replicates are scarce); a
    plain depth-vs-time regression slope is returned as a cross-check.
    """
    blocks = []
    points = []
    for rec in records:
        if len(rec) <= burn_in + 1:
            continue
        phi = rec.phis[burn_in:]
        sig = rec.sigmas[burn_in:]
        blocks.append((float(phi[-1] - phi[0]), float(sig[-1] - sig[0]), len(phi) - 1))
        points.append((sig - sig[0], phi - phi[0]))
    n_inc = sum(b[2] for b in blocks)
    if n_inc < 100:
        raise TreeError(f"too few regenerations after burn-in: {n_inc} < 100")
    A = np.array([b[0] for b in blocks])
    B = np.array([b[1] for b in blocks])
    nu = A.sum() / B.sum()
    if len(blocks) >= 8:
        ua, ub = A, B
    else:
        dphi = np.concatenate([np.diff(p[1]) for p in points]).astype(float)
        dsig = np.concatenate([np.diff(p[0]) for p in points]).astype(float)
        ua = np.array([c.sum() for c in np.array_split(dphi, 10)])
        ub = np.array([c.sum() for c in np.array_split(dsig, 10)])
    resid = ua - nu * ub
    k = len(ua)
    se = math.sqrt(float(resid @ resid) / max(k - 1, 1) / k) / (ub.mean())
    s = np.concatenate([p[0] for p in points]).astype(float)
    f = np.concatenate([p[1] for p in points]).astype(float)
    sc, fc = s - s.mean(), f - f.mean()
    nu_reg = float(sc @ fc) / float(sc @ sc)
    return SpeedEstimate(float(nu), float(se), nu_reg, int(n_inc), len(blocks))


@dataclass(frozen=True)
class EntropyEstimate:
    """Entropy estimate from one of the two routes.

    ``h`` is per unit depth; ``step_rate`` is per unit time of the walk the
    input came from (= h times the walk's speed ``nu``), so lazy and non-lazy
    runs stay comparable.  Both routes estimate ``h`` natively and need ``nu``
    to fill ``step_rate``; the meeting route additionally keeps its unfitted
    last-step quotient in ``naive_step_rate`` for transparency.
    """

    route: str
    h: float | None
    h_se: float | None
    step_rate: float | None
    step_rate_se: float | None
    naive_step_rate: float | None
    n_replicates: int
    n_points: int
    k_max: int | None = None
    window: tuple | None = None
    pruned_mass_max: float | None = None
    max_abs_width: float | None = None


def estimate_entropy(batch, route: str, *, nu: float | None = None, burn_in: int = 20,
                     depth_cap: int | None = None, interval_depth: int = 8, tol: float = 1e-6,
                     k_max: int = 40, eps_prune: float = 1e-12, window=None) -> EntropyEstimate:
    """Estimate the walk's entropy per unit depth (route-dependent input).

    route="regeneration": ``batch`` is a list of (tree, RegenRecord) pairs.
    For each record the escape-ray measure of every post-burn-in regeneration
    edge is bracketed by the truncated conductance recursion, and the slope
    of -log(measure) against the regeneration depth is the per-replicate
    entropy; replicate slopes are averaged.  Brackets must be narrower than
    ``tol`` in absolute terms (the truncation depth is raised until they
    are); ``depth_cap`` optionally drops regenerations deeper than the cap to
    bound the tube size.

    route="meeting": ``batch`` is an iterable of (tree, WalkTrace) pairs or
    (tree, [WalkTrace, ...]) items (a generator streams them without holding
    every tree in memory; walks grouped under one tree share its single exact
    forward evolution, so extra walks per tree are nearly free).  The start
    vertex's k-step position law is evolved with mass pruning below
    ``eps_prune`` (total pruned mass above 10*eps_prune*k_max is an error),
    giving y_j = -log mu_j(X_j) along each trace.  Entropy per unit depth is
    the depth coefficient of the pooled regression
    y ~ h*depth(X_j) + b*log(j) + q*(depth-mean)^2/j + c over ``window``
    (default: the top half of 1..k_max): the log and curvature terms absorb
    the local-CLT spreading that inflates the plain quotient y_k/k at any
    reachable k, and regressing on the walk's own depth removes the
    depth-path noise that dominates per-step fits.  The standard error is a
    leave-one-tree-out jackknife (leave-one-walk-out when a single tree is
    shared), recentered per subsample.  ``nu`` (the walk's speed, measured
    separately) converts the per-depth entropy to a per-step rate.
    """
    if route == "regeneration":
        return _entropy_regeneration(batch, nu, burn_in, depth_cap, interval_depth, tol)
    if route == "meeting":
        return _entropy_meeting(batch, nu, k_max, eps_prune, window)
    raise TreeError(f"unknown route {route!r}; use 'regeneration' or 'meeting'")


def _entropy_regeneration(batch, nu, burn_in, depth_cap, interval_depth, tol):
    slopes = []
    n_points = 0
    max_w = 0.0
    for tree, rec in batch:
        if not isinstance(rec, RegenRecord):
            raise TreeError("regeneration route expects (tree, RegenRecord) pairs")
        phi = rec.phis[burn_in:]
        nodes = rec.nodes[burn_in:]
        if depth_cap is not None:
            keep = phi <= depth_cap
            phi, nodes = phi[keep], nodes[keep]
        if len(phi) < 2:
            continue
        ray = tree.ancestors(int(nodes[-1]))
        D = interval_depth
        for bump in range(4):
            llo, lhi = _ray_log_measures(tree, ray, D)
            idx = phi - 1  # prefix i brackets the edge reaching depth i+1
            w_abs = np.exp(lhi[idx]) * (-np.expm1(llo[idx] - lhi[idx]))
            if np.all(w_abs < tol):
                break
            D += 4
        else:
            raise TreeError(f"interval width {w_abs.max():.2e} still above tol = {tol}")
        max_w = max(max_w, float(w_abs.max()))
        y = -0.5 * (llo[idx] + lhi[idx])
        x = phi.astype(float)
        xc, yc = x - x.mean(), y - y.mean()
        slopes.append(float(xc @ yc) / float(xc @ xc))
        n_points += len(phi)
    if not slopes:
        raise TreeError("no usable regenerations after burn-in")
    h = float(np.mean(slopes))
    se = float(np.std(slopes, ddof=1) / math.sqrt(len(slopes))) if len(slopes) > 1 else float("nan")
    rate = h * nu if nu is not None else None
    rse = se * nu if nu is not None else None
    return EntropyEstimate("regeneration", h, se, rate, rse, None,
                           len(slopes), n_points, max_abs_width=max_w)


def _position_mass_profile(tree, traces, k_max, eps_prune):
    """Evolve the start vertex's position law on the tree; -log mass along each trace.

    All traces must share the tree, the start vertex, and the laziness flag,
    so one exact forward evolution serves every walk.
    """
    lazy = traces[0].lazy
    start = int(traces[0].nodes[0])
    for tr in traces:
        if tr.horizon < k_max:
            raise TreeError(f"trace horizon {tr.horizon} shorter than k_max = {k_max}")
        if tr.lazy != lazy or int(tr.nodes[0]) != start:
            raise TreeError("traces sharing a tree must share the start vertex and laziness")
    steps = np.stack([tr.nodes[:k_max + 1] for tr in traces])
    mass = np.zeros(tree.n)
    mass[start] = 1.0
    y = np.zeros((len(traces), k_max + 1))
    pruned = 0.0
    for j in range(1, k_max + 1):
        ids = np.nonzero(mass > 0)[0]
        if tree.n + ids.size * (tree.spec.max_degree - 1) > _NODE_BUDGET:
            raise TreeError("k_max too large: the walk's support exceeds the node budget")
        fresh = ids[tree.kids_at[ids] < 0]
        if fresh.size:
            tree.expand_nodes(fresh)
        m = mass[ids]
        nk = tree.nkids[ids].astype(np.int64)
        hasp = tree.par[ids] >= 0
        deg = (nk + hasp).astype(float)
        share = (0.5 * m if lazy else m) / deg
        out = np.zeros(tree.n)
        if lazy:
            out[ids] += 0.5 * m
        out += np.bincount(tree.par[ids[hasp]], weights=share[hasp], minlength=tree.n)
        out[_ranges(tree.kids_at[ids], nk)] += np.repeat(share, nk)
        small = (out > 0) & (out <= eps_prune)
        if small.any():
            pruned += float(out[small].sum())
            out[small] = 0.0
        mass = out
        mj = mass[steps[:, j]]
        if np.any(mj <= 0.0):
            raise TreeError("meeting route unreliable: a walk's position was pruned")
        y[:, j] = -np.log(mj)
    if pruned > 10.0 * eps_prune * k_max:
        raise TreeError(
            f"meeting route unreliable: pruned mass {pruned:.3e} exceeds "
            f"10 * eps_prune * k = {10.0 * eps_prune * k_max:.3e}")
    return y, pruned


def _entropy_meeting(batch, nu, k_max, eps_prune, window):
    if window is None:
        window = (max(4, k_max // 2), k_max)
    w0, w1 = int(window[0]), int(window[1])
    if not (1 <= w0 < w1 <= k_max):
        raise TreeError(f"window {window} must satisfy 1 <= lo < hi <= k_max = {k_max}")
    grp_y, grp_d, naive = [], [], []
    pruned_max = 0.0
    for tree, traces in batch:
        if isinstance(traces, WalkTrace):
            traces = [traces]
        else:
            traces = list(traces)
            if not traces or not all(isinstance(t, WalkTrace) for t in traces):
                raise TreeError("meeting route expects (tree, trace) or (tree, traces) items")
        y, pruned = _position_mass_profile(tree, traces, k_max, eps_prune)
        pruned_max = max(pruned_max, pruned)
        grp_y.append(y[:, w0:w1 + 1])
        grp_d.append(tree.depth[np.stack([t.nodes[w0:w1 + 1] for t in traces])].astype(float))
        naive.extend(y[:, k_max] / k_max)
    if not grp_y:
        raise TreeError("meeting route needs at least one (tree, trace) item")
    if len(grp_y) == 1 and grp_y[0].shape[0] > 1:
        # a single shared tree: jackknife over its individual walks instead
        grp_y = [row[None, :] for row in grp_y[0]]
        grp_d = [row[None, :] for row in grp_d[0]]
    j = np.arange(w0, w1 + 1, dtype=float)
    logj = np.log(j)

    # -log mu_j(X_j) decomposes, by the local CLT for the walk's depth, into
    # h * depth + (1/2-ish) * log j + curvature around the mean depth + const;
    # regressing on the walk's own depth extracts h per unit depth directly
    # and absorbs the depth-path noise that dominates plain quotients.  The
    # cubic term soaks up the CLT's skewness layer, which would otherwise
    # leak into the depth coefficient at short horizons.
    def fit(ys, ds):
        Y = np.concatenate(ys, axis=0)
        D = np.concatenate(ds, axis=0)
        dev = D - D.mean(axis=0)
        X = np.stack([D, np.broadcast_to(logj, D.shape),
                      dev ** 2 / j, dev ** 3 / j ** 2, np.ones_like(D)], axis=2)
        A = np.einsum("rwi,rwj->ij", X, X)
        b = np.einsum("rwi,rw->i", X, Y)
        return float(np.linalg.solve(A, b)[0])

    h = fit(grp_y, grp_d)
    G = len(grp_y)
    if G > 1:
        # leave-one-group-out jackknife, recentering the curvature term each
        # time: the empirical centering contributes real estimator noise.
        drop = np.array([fit(grp_y[:g] + grp_y[g + 1:], grp_d[:g] + grp_d[g + 1:])
                         for g in range(G)])
        se = float(math.sqrt((G - 1) / G * ((drop - drop.mean()) ** 2).sum()))
    else:
        se = float("nan")
    se += pruned_max  # truncation contribution, normally negligible
    n_traces = len(naive)
    rate = h * nu if nu is not None else None
    rse = se * nu if nu is not None else None
    return EntropyEstimate("meeting", h, se, rate, rse, float(np.mean(naive)),
                           n_traces, n_traces * (w1 - w0 + 1),
                           k_max=k_max, window=(w0, w1), pruned_mass_max=pruned_max)


@dataclass
class TypesChainEstimate:
    """Empirical chain of regeneration edge types.

    ``states`` are the observed (from, to) community pairs; ``counts`` the
    transition counts between them; ``occupation`` the visit frequencies.
    Rows with fewer than the required transitions are listed in
    ``missing_rows`` and leave ``chain`` unset.
    """

    states: list
    counts: np.ndarray
    occupation: np.ndarray
    missing_rows: list
    chain: FiniteChain | None
    variant: str
    n_transitions: int


def estimate_types_chain(records, variant: str | None = None, *,
                         min_transitions: int = 50, burn_in: int = 20) -> TypesChainEstimate:
    """Row-normalized transition counts between regeneration edge types.

    ``variant`` ("strict" or "relaxed") names the chain being estimated and
    must match the one the records were detected with; by default it is taken
    from the records themselves.
    """
    if not records:
        raise TreeError("no records given")
    if variant is None:
        variant = records[0].variant
    if variant not in ("strict", "relaxed"):
        raise TreeError(f"unknown variant {variant!r}; use 'strict' or 'relaxed'")
    if any(rec.variant != variant for rec in records):
        raise TreeError(f"records were not detected with the {variant!r} variant")
    seqs = []
    for rec in records:
        if len(rec) > burn_in:
            seqs.append(np.stack([rec.theta_from[burn_in:], rec.theta_to[burn_in:]], axis=1))
    if not seqs:
        raise TreeError("no regenerations survive the burn-in")
    allth = np.concatenate(seqs)
    states = sorted({(int(a), int(b)) for a, b in allth})
    index = {s: i for i, s in enumerate(states)}
    k = len(states)
    counts = np.zeros((k, k), dtype=np.int64)
    occ = np.zeros(k, dtype=np.int64)
    for th in seqs:
        codes = np.array([index[(int(a), int(b))] for a, b in th])
        np.add.at(occ, codes, 1)
        if len(codes) > 1:
            np.add.at(counts, (codes[:-1], codes[1:]), 1)
    row = counts.sum(axis=1)
    missing = [states[i] for i in range(k) if row[i] < min_transitions]
    chain = None
    if not missing and k >= 1:
        chain = FiniteChain(counts / row[:, None], labels=[str(s) for s in states])
    return TypesChainEstimate(states, counts, occ / occ.sum(), missing, chain,
                              variant, int(counts.sum()))


def type_stationarity_test(spec: CommunitySpec, n_samples: int, times, seed: int = 0,
                           lazy: bool = False, chunk: int = 20000) -> dict:
    """TV distance of the walk's community at given times from the Q-stationary law.

    Roots are drawn from the stationary distribution of the community chain Q
    (with degree-biased attributes, as always), so the community process seen
    by the walk is stationary and each requested time should match pi_Q up to
    sampling error.
    """
    times = sorted(int(t) for t in times)
    pi = derive_Q(spec).pi
    T = times[-1] if times else 0
    counts = {t: np.zeros(spec.m, dtype=np.int64) for t in times}
    done = 0
    block = 0
    while done < n_samples:
        R = min(chunk, n_samples - done)
        tree = TreeBatch(spec, pi, spawn_seeds(seed, f"stationarity-{block}", R))
        traces = _raw_walk(tree, T, lazy, int(spawn_seeds(seed, f"stationarity-walk-{block}", 1)[0]))
        for t in times:
            counts[t] += np.bincount(tree.typ[traces[:, t]], minlength=spec.m)
        done += R
        block += 1
    return {t: float(0.5 * np.abs(counts[t] / n_samples - pi).sum()) for t in times}


def _raw_walk(tree: TreeBatch, T: int, lazy: bool, seed: int) -> np.ndarray:
    """walk_batch without the per-trace wrappers; returns the (R, T+1) id array."""
    traces = walk_batch(tree, T, lazy, seed)
    return np.stack([tr.nodes for tr in traces])


def regeneration_variance_scan(specs, k: int, n_replicates: int = 100, horizon: int | None = None,
                               seed: int = 0, lazy: bool = False, guard: int = 200,
                               burn_in: int = 20) -> list:
    """Variance of the depth gained over k regeneration gaps, per model.

    For each spec, runs ``n_replicates`` walks, detects strict regenerations
    and records Var over replicates of phi_{burn_in+k} - phi_{burn_in}.
    Rows carry the model's community imbalance alpha (two-community: sum of
    p/N_i; multi-community: the bottleneck ratio of Q; single community:
    None) and the variance-to-(k/alpha) ratio.
    """
    if k < 100:
        raise TreeError(f"k = {k} too small; the scan needs k >= 100")
    if horizon is None:
        horizon = 30 * (k + burn_in) + guard
    rows = []
    for si, spec in enumerate(specs):
        if spec.model == "two":
            alpha = spec.alpha
        elif spec.m == 1:
            alpha = None
        else:
            from .chainkit import cheeger
            alpha = cheeger(derive_Q(spec))[0]
        pi = derive_Q(spec).pi
        tree = TreeBatch(spec, pi, spawn_seeds(seed, f"varscan-{si}", n_replicates))
        traces = walk_batch(tree, horizon, lazy, int(spawn_seeds(seed, f"varscan-walk-{si}", 1)[0]))
        sums = []
        for tr in traces:
            rec = detect_regenerations(tr, "strict", guard)
            if len(rec) >= burn_in + k + 1:
                sums.append(float(rec.phis[burn_in + k] - rec.phis[burn_in]))
        if len(sums) < 2:
            raise TreeError(f"spec {si}: only {len(sums)} replicates reached {burn_in + k + 1} "
                            f"regenerations within horizon {horizon}")
        var = float(np.var(sums, ddof=1))
        ratio = var / (k / alpha) if alpha else var / k
        rows.append({"alpha": alpha, "k": k, "var": var, "ratio": ratio, "n_used": len(sums)})
    return rows
