"""Generator tests: forced counts, validation errors, uniformity statistics.

Monte-Carlo checks freeze their expected values from closed-form marginals of
uniform matchings (computed in comments next to each assertion) and test
within 3 standard errors or with a chi-square at level 0.01.
"""

import numpy as np
import pytest
from scipy.stats import chi2

import commwalk.graphgen as gg
from commwalk.chainkit import FiniteChain


def _two_spec(n1=4, n2=4, d=3, p=2):
    return gg.two_community_spec([d] * n1, [d] * n2, p)


# ---------------------------------------------------------------------------
# forced counts and validation
# ---------------------------------------------------------------------------


def test_two_community_tiny_counts():
    spec = _two_spec()
    g = gg.gen_two_community(spec, seed=7)
    assert g.cross_edge_count() == 2
    # 12 half-edges per community, 2 outgoing -> 5 internal pairings each
    E = g.count_matrix()
    assert E.tolist() == [[10, 2], [2, 10]]
    assert spec.alpha == pytest.approx(2 / 12 + 2 / 12)
    assert g.half_edge_count == 2 * len(g.match) // 2 * 1  # every half-edge matched
    assert np.all(g.match[g.match] == np.arange(g.half_edge_count))


def test_two_community_validation_errors():
    with pytest.raises(gg.SpecError, match="parity"):
        gg.two_community_spec([3] * 4, [3] * 4, 3)  # p odd
    with pytest.raises(gg.SpecError, match="parity"):
        gg.two_community_spec([3, 3, 3], [3] * 4, 2)  # N_1 = 9 odd
    with pytest.raises(gg.SpecError, match="range"):
        gg.two_community_spec([3] * 4, [3] * 4, 14)  # p > min(N_1, N_2)
    with pytest.raises(gg.SpecError, match="range"):
        gg.two_community_spec([3] * 4, [3] * 4, 0)  # p < 2
    with pytest.raises(gg.SpecError, match="degree bound"):
        gg.two_community_spec([2, 4, 3, 3], [3] * 4, 2)  # degree < 3


def test_m_community_cross_counts_forced():
    spec = gg.m_community_spec(
        deg_int=[[3, 3], [3, 3]], deg_out=[[1, 1], [1, 1]], E=[[6, 2], [2, 6]]
    )
    g = gg.gen_m_community(spec, seed=3)
    assert g.cross_edge_count() == 2
    assert g.count_matrix().tolist() == [[6, 2], [2, 6]]


def test_m_community_ring_counts_every_sample():
    # 3 communities of 4 vertices, internal degree 3, two outgoing each
    E = [[12, 4, 4], [4, 12, 4], [4, 4, 12]]
    spec = gg.m_community_spec(
        deg_int=[[3] * 4] * 3, deg_out=[[2] * 4] * 3, E=E
    )
    for seed in range(25):
        g = gg.gen_m_community(spec, seed=seed)
        assert g.count_matrix().tolist() == E


def test_m_community_validation_errors():
    # outgoing degree sums (2 per community) do not match E rows (3)
    with pytest.raises(gg.SpecError, match="outgoing"):
        gg.m_community_spec(
            deg_int=[[3, 3], [3, 3]], deg_out=[[1, 1], [1, 1]], E=[[6, 3], [3, 6]]
        )
    with pytest.raises(gg.SpecError, match="symmetry"):
        gg.m_community_spec(
            deg_int=[[3, 3], [3, 3]], deg_out=[[1, 1], [1, 1]], E=[[6, 2], [1, 6]]
        )
    with pytest.raises(gg.SpecError, match="parity"):
        gg.m_community_spec(
            deg_int=[[3, 4], [3, 3]], deg_out=[[1, 1], [1, 1]], E=[[7, 2], [2, 7]]
        )
    with pytest.raises(gg.SpecError, match="internal degree"):
        gg.m_community_spec(
            deg_int=[[2, 4], [3, 3]], deg_out=[[1, 1], [1, 1]], E=[[6, 2], [2, 6]]
        )


def test_configuration_model_counts():
    g = gg.gen_configuration_model([3] * 4, seed=0)
    assert g.half_edge_count == 12
    assert len(g.match) // 2 == 6  # 6 edges with multiplicity
    # two vertices of degree 3: forced multi-edges/self-loops, still valid
    tiny = gg.gen_configuration_model([3, 3], seed=1)
    assert tiny.half_edge_count == 6
    with pytest.raises(gg.SpecError, match="parity"):
        gg.gen_configuration_model([3, 3, 3], seed=0)


def test_degree_sum_equals_twice_edges():
    for seed in range(5):
        g = gg.gen_two_community(_two_spec(n1=10, n2=6, p=4), seed=seed)
        assert g.degrees.sum() == g.half_edge_count
        assert g.half_edge_count % 2 == 0
        pairs = np.count_nonzero(g.match > np.arange(g.half_edge_count))
        assert g.degrees.sum() == 2 * pairs


def test_seed_determinism():
    spec = _two_spec(n1=30, n2=30, p=6)
    a = gg.gen_two_community(spec, seed=42)
    b = gg.gen_two_community(spec, seed=42)
    c = gg.gen_two_community(spec, seed=43)
    assert np.array_equal(a.match, b.match)
    assert not np.array_equal(a.match, c.match)
    mspec = gg.m_community_spec(
        deg_int=[[3] * 4] * 2, deg_out=[[2] * 4] * 2, E=[[12, 8], [8, 12]]
    )
    assert np.array_equal(
        gg.gen_m_community(mspec, seed=9).match, gg.gen_m_community(mspec, seed=9).match
    )


# ---------------------------------------------------------------------------
# statistical checks against closed-form matching marginals
# ---------------------------------------------------------------------------


def test_internal_matching_marginal():
    # Community 1: 200 vertices of degree 3 -> N_1 = 600 half-edges, p = 20
    # outgoing.  Conditional on two fixed half-edges being internal, a uniform
    # perfect matching of the 580 internal half-edges pairs them with
    # probability 1/(N_1 - p - 1) = 1/579.
    spec = _two_spec(n1=200, n2=200, d=3, p=20)
    n1 = 600
    target = 1.0 / (n1 - 20 - 1)
    pairs = [(0, 1), (150, 151), (300, 301), (450, 451)]
    trials = 0
    hits = 0
    for seed in range(2500):
        g = gg.gen_two_community(spec, seed=seed)
        partner_comm = g.labels[g.half_vertex[g.match]]
        for a, b in pairs:
            if partner_comm[a] == 0 and partner_comm[b] == 0:
                trials += 1
                hits += g.match[a] == b
    assert trials >= 10_000 * 0.85  # ~93% of 10^4 (a, b) samples are conditioned in
    se = np.sqrt(target * (1 - target) / trials)
    assert abs(hits / trials - target) <= 3 * se


def test_tiny_matching_uniformity_chi2():
    # configuration model on 6 half-edges: 15 distinct perfect matchings,
    # each with probability 1/15 under uniform matching.
    counts = {}
    samples = 10_000
    for seed in range(samples):
        g = gg.gen_configuration_model([3, 3], seed=seed)
        counts[tuple(g.match.tolist())] = counts.get(tuple(g.match.tolist()), 0) + 1
    assert len(counts) == 15
    expected = samples / 15
    stat = sum((c - expected) ** 2 / expected for c in counts.values())
    assert stat < chi2.ppf(0.99, df=14)


def test_outgoing_selection_uniformity_chi2():
    # two communities of 6 half-edges each, p = 2: the chosen outgoing set in
    # community 1 is uniform over C(6, 2) = 15 subsets.
    spec = gg.two_community_spec([3, 3], [3, 3], 2)
    counts = {}
    samples = 10_000
    for seed in range(samples):
        g = gg.gen_two_community(spec, seed=seed)
        partner_comm = g.labels[g.half_vertex[g.match]]
        out0 = tuple(np.flatnonzero((g.labels[g.half_vertex] == 0) & (partner_comm == 1)).tolist())
        counts[out0] = counts.get(out0, 0) + 1
    assert len(counts) == 15
    expected = samples / 15
    stat = sum((c - expected) ** 2 / expected for c in counts.values())
    assert stat < chi2.ppf(0.99, df=14)


def test_expander_second_eigenvalue():
    # oracle: dense symmetric eigensolve of the walk matrix.  3-regular
    # configuration models are expanders: lambda_2 concentrates near the
    # 2*sqrt(2)/3 = 0.9428 floor, so < 0.95 holds in nearly every sample.
    # (The lazy walk's lambda_2 = (1 + lambda_2)/2 = 0.97 sits above 0.95 for
    # every 3-regular graph, so the threshold is tested on the simple walk;
    # the lazy spectral gap is exactly half the simple one.)
    good = 0
    for seed in range(20):
        g = gg.gen_configuration_model([3] * 500, seed=seed)
        P = np.zeros((g.n, g.n))
        heads = g.half_vertex
        tails = g.half_vertex[g.match]
        np.add.at(P, (heads, tails), 1.0 / 3.0)
        evs = np.linalg.eigvalsh(P)  # 3-regular: P symmetric
        good += evs[-2] < 0.95
    assert good >= 19


# ---------------------------------------------------------------------------
# rewiring
# ---------------------------------------------------------------------------


def test_rewire_removes_cross_edges_and_keeps_degrees():
    spec = _two_spec(n1=40, n2=40, p=8)
    for seed in range(100):
        g = gg.gen_two_community(spec, seed=seed)
        h = gg.rewire_within_community(g, 0, seed=seed + 1000)
        assert h.cross_edge_count() == 0
        assert np.array_equal(h.degrees, g.degrees)
        assert np.all(h.match[h.match] == np.arange(h.half_edge_count))
        # internal pairings preserved
        partner_comm = g.labels[g.half_vertex[g.match]]
        own_comm = g.labels[g.half_vertex]
        internal = own_comm == partner_comm
        assert np.array_equal(h.match[internal], g.match[internal])


def test_rewire_p0_identity_and_range_check():
    # hand-built two-community graph with no cross edges at all
    labels = np.array([0, 0, 1, 1])
    degrees = np.array([3, 3, 3, 3])
    match = np.array([1, 0, 3, 2, 5, 4, 7, 6, 9, 8, 11, 10])
    g = gg.CommunityGraph(labels=labels, degrees=degrees, match=match)
    h = gg.rewire_within_community(g, 0, seed=5)
    assert np.array_equal(h.match, g.match)
    with pytest.raises(gg.GraphError):
        gg.rewire_within_community(g, 2, seed=5)


# ---------------------------------------------------------------------------
# the community chain
# ---------------------------------------------------------------------------


def test_derive_Q_from_count_matrix():
    Q = gg.derive_Q([[4, 2], [2, 6]])
    assert isinstance(Q, FiniteChain)
    assert np.allclose(Q.P, [[2 / 3, 1 / 3], [1 / 4, 3 / 4]], atol=1e-15)
    assert np.all(np.abs(Q.P.sum(axis=1) - 1) <= 1e-12)


def test_derive_Q_two_community_implicit_E():
    spec = _two_spec(n1=4, n2=4, d=3, p=2)  # N_i = 12
    Q = gg.derive_Q(spec)
    assert np.allclose(Q.P, [[10 / 12, 2 / 12], [2 / 12, 10 / 12]], atol=1e-15)
    # off-diagonal entries are the alphas
    assert Q.P[0, 1] == pytest.approx(spec.alphas[0])
    assert Q.P[1, 0] == pytest.approx(spec.alphas[1])
    g = gg.gen_two_community(spec, seed=11)
    assert np.allclose(gg.derive_Q(g).P, Q.P)


def test_derive_Q_zero_row_errors():
    with pytest.raises(gg.GraphError, match="community"):
        gg.derive_Q([[0, 0], [0, 4]])


# ---------------------------------------------------------------------------
# spec files and graph dumps
# ---------------------------------------------------------------------------


def test_histogram_expansion_descending():
    assert gg._expand_histogram({"3": 2, "4": 2}) == [4, 4, 3, 3]
    assert gg._expand_histogram({5: 1, 3: 3}) == [5, 3, 3, 3]


def test_spec_from_dict_two():
    doc = {
        "model": "two",
        "p": 4,
        "communities": [
            {"size": 4, "degrees": {"3": 4}},
            {"size": 4, "degrees": {"3": 2, "4": 2}},
        ],
    }
    spec = gg.spec_from_dict(doc)
    assert spec.model == "two"
    assert spec.sizes == (4, 4)
    assert spec.degrees[1] == (4, 4, 3, 3)
    with pytest.raises(gg.SpecError, match="size"):
        gg.spec_from_dict(
            {
                "model": "two",
                "p": 2,
                "communities": [
                    {"size": 3, "degrees": {"3": 4}},
                    {"size": 4, "degrees": {"3": 4}},
                ],
            }
        )


def test_dump_load_round_trip(tmp_path):
    spec = _two_spec(n1=10, n2=8, p=4)
    g = gg.gen_two_community(spec, seed=2)
    path = tmp_path / "g.txt"
    path.write_text(g.dump())
    h = gg.CommunityGraph.load(path.read_text())
    assert np.array_equal(h.labels, g.labels)
    assert np.array_equal(h.degrees, g.degrees)
    assert np.array_equal(h.match, g.match)
    assert h.count_matrix().tolist() == g.count_matrix().tolist()
    with pytest.raises(gg.GraphError):
        gg.CommunityGraph.load("commwalk-graph 1\nnot a number\n")
