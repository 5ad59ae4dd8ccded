"""Samplers for configuration-model multigraphs with a community structure.

A graph is stored as a perfect matching on half-edges.  Each vertex ``v`` owns
``d(v)`` half-edges, identified by ``(v, slot)`` with slots ``0..d(v)-1``; the
global half-edge index enumerates vertices in order and slots within a vertex,
so the index is canonical.  The matching is kept as an involution array, which
makes the sampled object fully portable: two runs agree iff the arrays agree.

Self-loops and parallel edges are kept (no rejection), so every generator
output is an honest configuration-model draw.  A self-loop contributes 2 to
its vertex's degree and the stationary law of simple random walk is always
``pi(v) = d(v) / sum(d)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ._rng import phase_rng


class SpecError(ValueError):
    """A model description violates one of its structural constraints."""


class GraphError(ValueError):
    """An operation was asked of a graph that cannot support it."""


# ---------------------------------------------------------------------------
# model descriptions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CommunitySpec:
    """Validated description of a community random-graph model.

    ``model`` is "two" or "multi".  ``degrees`` holds one tuple of per-vertex
    total degrees per community.  Two-community models carry the cross
    half-edge count ``p``; multi-community models instead carry per-vertex
    internal/outgoing splits and the symmetric count matrix ``E``.
    """

    model: str
    degrees: tuple
    p: int = 0
    deg_int: tuple | None = None
    deg_out: tuple | None = None
    E: tuple | None = None

    # -- derived quantities ------------------------------------------------

    @property
    def m(self) -> int:
        return len(self.degrees)

    @property
    def sizes(self) -> tuple:
        return tuple(len(ds) for ds in self.degrees)

    @property
    def n(self) -> int:
        return sum(self.sizes)

    @property
    def half_edge_totals(self) -> tuple:
        """Total half-edge count per community (sum of degrees)."""
        return tuple(int(sum(ds)) for ds in self.degrees)

    @property
    def max_degree(self) -> int:
        return max(max(ds) for ds in self.degrees)

    @property
    def alphas(self) -> tuple:
        """Per-community outgoing fractions alpha_i = p / N_i (two-community)."""
        if self.model != "two":
            raise SpecError("alphas are defined for the two-community model")
        return tuple(self.p / N for N in self.half_edge_totals)

    @property
    def alpha(self) -> float:
        """alpha_1 + alpha_2 for the two-community model."""
        return float(sum(self.alphas))

    def count_matrix(self) -> np.ndarray:
        """The m x m half-edge count matrix (implicit for model "two")."""
        if self.model == "two":
            n1, n2 = self.half_edge_totals
            return np.array([[n1 - self.p, self.p], [self.p, n2 - self.p]], dtype=np.int64)
        return np.array(self.E, dtype=np.int64)


def two_community_spec(degrees1, degrees2, p: int) -> CommunitySpec:
    """Build and validate a two-community model description."""
    spec = CommunitySpec(model="two", degrees=(tuple(map(int, degrees1)), tuple(map(int, degrees2))), p=int(p))
    _validate_two(spec)
    return spec


def m_community_spec(deg_int, deg_out, E) -> CommunitySpec:
    """Build and validate a multi-community model description.

    ``deg_int`` / ``deg_out`` are per-community sequences of per-vertex
    internal and outgoing degrees (aligned); ``E`` is the symmetric count
    matrix whose diagonal holds internal half-edge totals.
    """
    deg_int = tuple(tuple(map(int, ds)) for ds in deg_int)
    deg_out = tuple(tuple(map(int, ds)) for ds in deg_out)
    degrees = tuple(
        tuple(a + b for a, b in zip(di, do)) for di, do in zip(deg_int, deg_out)
    )
    E = tuple(tuple(map(int, row)) for row in E)
    spec = CommunitySpec(model="multi", degrees=degrees, deg_int=deg_int, deg_out=deg_out, E=E)
    _validate_multi(spec)
    return spec


def single_community_spec(degrees) -> CommunitySpec:
    """Plain configuration model: one community, no outgoing half-edges."""
    deg = tuple(map(int, degrees))
    N = sum(deg)
    spec = CommunitySpec(
        model="multi",
        degrees=(deg,),
        deg_int=(deg,),
        deg_out=(tuple(0 for _ in deg),),
        E=((N,),),
    )
    _validate_multi(spec)
    return spec


def _validate_degree_range(spec: CommunitySpec) -> None:
    for i, ds in enumerate(spec.degrees):
        if len(ds) == 0:
            raise SpecError(f"community {i} is empty")
        dmin = min(ds)
        if dmin < 3:
            raise SpecError(
                f"degree bound violated: community {i} has a vertex of degree {dmin} < 3"
            )


def _validate_two(spec: CommunitySpec) -> None:
    if len(spec.degrees) != 2:
        raise SpecError("two-community model needs exactly two communities")
    _validate_degree_range(spec)
    n1, n2 = spec.half_edge_totals
    for i, N in enumerate((n1, n2)):
        if N % 2 != 0:
            raise SpecError(f"half-edge total parity violated: community {i} has odd N_i = {N}")
    if spec.p % 2 != 0:
        raise SpecError(f"cross count parity violated: p = {spec.p} is odd")
    if not (2 <= spec.p <= min(n1, n2)):
        raise SpecError(
            f"cross count range violated: p = {spec.p} not in [2, min(N_1, N_2) = {min(n1, n2)}]"
        )


def _validate_multi(spec: CommunitySpec) -> None:
    m = spec.m
    E = np.array(spec.E, dtype=np.int64)
    if E.shape != (m, m):
        raise SpecError(f"count matrix shape {E.shape} does not match m = {m} communities")
    if not np.array_equal(E, E.T):
        raise SpecError("count matrix symmetry violated: E != E^T")
    if np.any(np.diag(E) % 2 != 0):
        raise SpecError("diagonal parity violated: some E_ii is odd")
    if np.any(E < 0):
        raise SpecError("count matrix has a negative entry")
    for i in range(m):
        di = spec.deg_int[i]
        do = spec.deg_out[i]
        if len(di) == 0:
            raise SpecError(f"community {i} is empty")
        if len(di) != len(do):
            raise SpecError(f"community {i}: internal/outgoing degree lists differ in length")
        if min(di) < 3:
            raise SpecError(
                f"internal degree bound violated: community {i} has deg_int = {min(di)} < 3"
            )
        if any(x < 0 for x in do):
            raise SpecError(f"community {i}: negative outgoing degree")
        if sum(do) != int(E[i].sum() - E[i, i]):
            raise SpecError(
                f"outgoing budget violated in community {i}: sum deg_out = {sum(do)}"
                f" but sum_j!=i E_ij = {int(E[i].sum() - E[i, i])}"
            )
        if sum(di) != int(E[i, i]):
            raise SpecError(
                f"internal budget violated in community {i}: sum deg_int = {sum(di)}"
                f" but E_ii = {int(E[i, i])}"
            )


# ---------------------------------------------------------------------------
# sampled graphs
# ---------------------------------------------------------------------------


@dataclass
class CommunityGraph:
    """A half-edge matching over labeled vertices plus derived index arrays."""

    labels: np.ndarray
    degrees: np.ndarray
    match: np.ndarray
    offsets: np.ndarray = field(init=False)
    half_vertex: np.ndarray = field(init=False)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int32)
        self.degrees = np.asarray(self.degrees, dtype=np.int64)
        self.match = np.asarray(self.match, dtype=np.int64)
        self.offsets = np.zeros(len(self.degrees) + 1, dtype=np.int64)
        np.cumsum(self.degrees, out=self.offsets[1:])
        self.half_vertex = np.repeat(np.arange(len(self.degrees), dtype=np.int64), self.degrees)
        if len(self.match) != self.offsets[-1]:
            raise GraphError("matching length does not equal the half-edge count")
        if not np.array_equal(self.match[self.match], np.arange(len(self.match))):
            raise GraphError("matching is not an involution")
        if np.any(self.match == np.arange(len(self.match))):
            raise GraphError("matching has a fixed point (unpaired half-edge)")

    # -- basic quantities ----------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.degrees)

    @property
    def m(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    @property
    def half_edge_count(self) -> int:
        return len(self.match)

    def stationary(self) -> np.ndarray:
        """pi(v) = d(v) / sum(d); self-loops already count 2 in d(v)."""
        return self.degrees / self.degrees.sum()

    def neighbor_indices(self) -> np.ndarray:
        """CSR-style neighbor array: row of vertex v is its d(v) slot targets."""
        return self.half_vertex[self.match]

    def count_matrix(self) -> np.ndarray:
        """Half-edge counts by (community of owner, community of partner)."""
        m = self.m
        own = self.labels[self.half_vertex]
        other = self.labels[self.half_vertex[self.match]]
        E = np.zeros((m, m), dtype=np.int64)
        np.add.at(E, (own, other), 1)
        return E

    def cross_edge_count(self) -> int:
        own = self.labels[self.half_vertex]
        other = self.labels[self.half_vertex[self.match]]
        return int(np.sum(own != other)) // 2

    def community_vertices(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.labels == i)

    def degree_of_half(self, h) -> np.ndarray:
        return self.degrees[self.half_vertex[h]]

    # -- text dump -----------------------------------------------------------

    def dump(self) -> str:
        """Plain-text serialization: header plus one line per matched pair."""
        lines = ["commwalk-graph 1", f"n {self.n}", f"m {self.m}"]
        lines.append("labels " + " ".join(map(str, self.labels.tolist())))
        E = self.count_matrix()
        lines.append("E " + " ".join(map(str, E.ravel().tolist())))
        hv = self.half_vertex
        slots = np.arange(len(self.match)) - self.offsets[hv]
        firsts = np.flatnonzero(np.arange(len(self.match)) < self.match)
        lines.append(f"pairs {len(firsts)}")
        partner = self.match[firsts]
        for h, g in zip(firsts.tolist(), partner.tolist()):
            lines.append(f"{hv[h]} {slots[h]} {hv[g]} {slots[g]}")
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, text: str) -> "CommunityGraph":
        rows = [ln for ln in text.strip().splitlines() if ln.strip()]
        if not rows or not rows[0].startswith("commwalk-graph"):
            raise GraphError("not a graph dump (missing header)")
        fields = {}
        body_at = None
        for k, ln in enumerate(rows[1:], start=1):
            key, _, rest = ln.partition(" ")
            fields[key] = rest
            if key == "pairs":
                body_at = k + 1
                break
        try:
            n = int(fields["n"])
            labels = np.array(list(map(int, fields["labels"].split())), dtype=np.int32)
            pair_count = int(fields["pairs"])
            quads = np.array(
                [list(map(int, ln.split())) for ln in rows[body_at : body_at + pair_count]],
                dtype=np.int64,
            ).reshape(pair_count, 4)
        except (KeyError, ValueError, TypeError) as e:
            raise GraphError(f"malformed graph dump: {e}") from None
        degrees = np.zeros(n, dtype=np.int64)
        for u, su, v, sv in quads:
            degrees[u] = max(degrees[u], su + 1)
            degrees[v] = max(degrees[v], sv + 1)
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(degrees, out=offsets[1:])
        match = np.full(int(degrees.sum()), -1, dtype=np.int64)
        h = offsets[quads[:, 0]] + quads[:, 1]
        g = offsets[quads[:, 2]] + quads[:, 3]
        match[h] = g
        match[g] = h
        if np.any(match < 0):
            raise GraphError("graph dump leaves unmatched half-edges")
        return cls(labels=labels, degrees=degrees, match=match)


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def _uniform_matching(ids: np.ndarray, rng: np.random.Generator, match: np.ndarray) -> None:
    """Pair the half-edges in ``ids`` uniformly (shuffle, pair consecutive)."""
    if len(ids) % 2 != 0:
        raise GraphError("cannot perfectly match an odd set of half-edges")
    perm = rng.permutation(ids)
    a, b = perm[0::2], perm[1::2]
    match[a] = b
    match[b] = a


def gen_two_community(spec: CommunitySpec, seed: int) -> CommunityGraph:
    """Sample the two-community model.

    Each community independently picks its ``p`` outgoing half-edges uniformly
    without replacement, matches the rest uniformly inside the community, and
    the two outgoing sets are joined by a uniform bijection.
    """
    if spec.model != "two":
        raise SpecError('gen_two_community needs a model = "two" description')
    labels = np.repeat(np.arange(2, dtype=np.int32), [len(ds) for ds in spec.degrees])
    degrees = np.array([d for ds in spec.degrees for d in ds], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(degrees)])
    match = np.full(int(degrees.sum()), -1, dtype=np.int64)

    outgoing = []
    for i in range(2):
        verts = np.flatnonzero(labels == i)
        halves = np.concatenate([np.arange(offsets[v], offsets[v + 1]) for v in verts])
        rng_out = phase_rng(seed, f"outgoing-select-{i}")
        out = np.sort(rng_out.choice(halves, size=spec.p, replace=False))
        internal = np.setdiff1d(halves, out, assume_unique=True)
        _uniform_matching(internal, phase_rng(seed, f"internal-matching-{i}"), match)
        outgoing.append(out)

    sigma = phase_rng(seed, "cross-bijection").permutation(spec.p)
    a, b = outgoing[0], outgoing[1][sigma]
    match[a] = b
    match[b] = a
    return CommunityGraph(labels=labels, degrees=degrees, match=match)


def gen_m_community(spec: CommunitySpec, seed: int) -> CommunityGraph:
    """Sample the multi-community model with explicit count matrix E.

    Slots ``0..deg_int(v)-1`` of each vertex are its internal half-edges, the
    rest are outgoing.  Internal half-edges are matched uniformly inside each
    community; each community's outgoing half-edges are split uniformly
    without replacement into groups of sizes ``E_ij`` and cross groups are
    joined by uniform bijections.
    """
    if spec.model != "multi":
        raise SpecError('gen_m_community needs a model = "multi" description')
    m = spec.m
    labels = np.repeat(np.arange(m, dtype=np.int32), [len(ds) for ds in spec.degrees])
    degrees = np.array([d for ds in spec.degrees for d in ds], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(degrees)])
    match = np.full(int(degrees.sum()), -1, dtype=np.int64)
    E = np.array(spec.E, dtype=np.int64)

    vert_of = [np.flatnonzero(labels == i) for i in range(m)]
    groups: dict[tuple, np.ndarray] = {}
    for i in range(m):
        internal, outgoing = [], []
        for local, v in enumerate(vert_of[i]):
            di = spec.deg_int[i][local]
            lo, hi = offsets[v], offsets[v + 1]
            internal.append(np.arange(lo, lo + di))
            outgoing.append(np.arange(lo + di, hi))
        internal = np.concatenate(internal) if internal else np.empty(0, dtype=np.int64)
        outgoing = np.concatenate(outgoing) if outgoing else np.empty(0, dtype=np.int64)
        _uniform_matching(internal, phase_rng(seed, f"internal-matching-{i}"), match)
        perm = phase_rng(seed, f"outgoing-split-{i}").permutation(outgoing)
        pos = 0
        for j in range(m):
            if j == i:
                continue
            take = int(E[i, j])
            groups[(i, j)] = np.sort(perm[pos : pos + take])
            pos += take

    for i in range(m):
        for j in range(i + 1, m):
            if E[i, j] == 0:
                continue
            sigma = phase_rng(seed, f"cross-bijection-{i}-{j}").permutation(int(E[i, j]))
            a, b = groups[(i, j)], groups[(j, i)][sigma]
            match[a] = b
            match[b] = a
    return CommunityGraph(labels=labels, degrees=degrees, match=match)


def gen_configuration_model(degrees, seed: int) -> CommunityGraph:
    """Plain single-community configuration model (uniform matching)."""
    spec = single_community_spec(degrees)
    return gen_m_community(spec, seed)


def rewire_within_community(g: CommunityGraph, i: int, seed: int) -> CommunityGraph:
    """Re-match each community's outgoing half-edges inside its own community.

    Community ``i`` is the one named by the caller, but its partner's formerly
    outgoing half-edges must also be re-paired internally for the result to be
    a matching; the output therefore splits into one component per community,
    each an ordinary configuration model on its own degree sequence.  Internal
    pairs are preserved as-is.
    """
    if g.m != 2:
        raise GraphError("rewiring is defined for two-community graphs")
    if i not in (0, 1):
        raise GraphError(f"community index {i} out of range for a two-community graph")
    own = g.labels[g.half_vertex]
    other = g.labels[g.half_vertex[g.match]]
    match = g.match.copy()
    for c in (i, 1 - i):
        out = np.flatnonzero((own == c) & (other != c))
        if len(out) == 0:
            continue
        _uniform_matching(out, phase_rng(seed, f"rewire-{c}"), match)
    return CommunityGraph(labels=g.labels.copy(), degrees=g.degrees.copy(), match=match)


def derive_Q(obj):
    """Community transition chain Q(i, j) = E_ij / sum_l E_il.

    Accepts a sampled graph, a model description (implicit E for the
    two-community model), or a bare count matrix.  A community with no
    half-edges is an error.
    """
    from .chainkit import FiniteChain

    if hasattr(obj, "count_matrix"):
        E = obj.count_matrix().astype(float)
    else:
        E = np.array(obj, dtype=float)
        if E.ndim != 2 or E.shape[0] != E.shape[1]:
            raise GraphError(f"count matrix must be square, got shape {E.shape}")
    row = E.sum(axis=1)
    if np.any(row == 0):
        bad = int(np.flatnonzero(row == 0)[0])
        raise GraphError(f"community {bad} has no half-edges; its Q row is undefined")
    Q = E / row[:, None]
    return FiniteChain(Q)


# ---------------------------------------------------------------------------
# model description files
# ---------------------------------------------------------------------------


def _expand_histogram(hist: dict) -> list:
    """{"3": 5, "4": 2} -> [4, 4, 3, 3, 3, 3, 3] (descending, deterministic)."""
    out = []
    for d in sorted((int(k) for k in hist), reverse=True):
        out.extend([d] * int(hist[str(d)] if str(d) in hist else hist[d]))
    return out


def spec_from_dict(doc: dict) -> CommunitySpec:
    """Build a validated description from parsed structured text."""
    try:
        model = doc["model"]
        comms = doc["communities"]
    except KeyError as e:
        raise SpecError(f"missing required key {e.args[0]!r}") from None
    if model == "two":
        if len(comms) != 2:
            raise SpecError("two-community description needs exactly 2 communities")
        degs = [_expand_histogram(c["degrees"]) for c in comms]
        for c, ds in zip(comms, degs):
            if "size" in c and int(c["size"]) != len(ds):
                raise SpecError("community size does not match its degree histogram total")
        return two_community_spec(degs[0], degs[1], int(doc["p"]))
    if model == "multi":
        deg_int = [_expand_histogram(c["deg_int"]) for c in comms]
        deg_out = [_expand_histogram(c["deg_out"]) for c in comms]
        return m_community_spec(deg_int, deg_out, doc["E"])
    raise SpecError(f'unknown model {model!r} (expected "two" or "multi")')


def spec_from_file(path) -> CommunitySpec:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise SpecError(f"model description is not valid JSON: {e}") from None
    return spec_from_dict(doc)
