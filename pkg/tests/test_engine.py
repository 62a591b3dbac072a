import io

import networkx as nx
import numpy as np
import pytest

from conftest import random_connected_graph
from conftest import random_instance_arrays as random_instance
from lnrpcc import dynamics as dyn
from lnrpcc.datasets import NO_LABEL, LabelConfig, gen_gaussians
from lnrpcc.engine import (
    EngineError,
    LabelAssignment,
    VariantConfig,
    _advance,
    init_epoch,
    label_from_scores,
    run,
    step,
)
from lnrpcc.graph import Graph, GraphPolicy, build_graph


def bfs_hops(g, source):
    ref = nx.Graph()
    ref.add_nodes_from(range(g.n))
    ref.add_edges_from(g.edges().tolist())
    return nx.single_source_shortest_path_length(ref, int(source))


@pytest.fixture
def blob_graph(blobs):
    d, cfg = blobs
    return d, cfg, build_graph(d.features, cfg, GraphPolicy("knn_lnr", k=4))


class TestConfig:
    def test_defaults(self):
        vc = VariantConfig()
        assert (vc.p_grd, vc.delta_v, vc.alpha, vc.beta) == (0.5, 0.1, 2000.0, 10)

    def test_tau(self):
        assert VariantConfig("LNR").tau(150, 40) == 750
        assert VariantConfig("PCC1").tau(150, 40) == 7500
        # round half up, never to even
        assert VariantConfig("PCC1", alpha=10.0).tau(1, 4) == 3
        assert VariantConfig("PCC1", alpha=2.0).tau(1, 4) == 1

    @pytest.mark.parametrize(
        "kw", [{"variant": "PCC4"}, {"p_grd": 1.5}, {"delta_v": 0.0}, {"delta_rho": 2.0}, {"beta": 0}, {"alpha": -1.0}]
    )
    def test_rejects(self, kw):
        with pytest.raises(EngineError):
            VariantConfig(**kw)


class TestInit:
    def test_one_hot_and_uniform(self):
        g = Graph.from_edges(5, [0, 1, 2, 3], [1, 2, 3, 4])
        given = np.array([0, 1, 2, NO_LABEL, 3])
        cfg = LabelConfig(given != NO_LABEL, given, np.zeros(5, bool))
        s = init_epoch(g, cfg, VariantConfig("LNR"))
        np.testing.assert_array_equal(s.omega[1], [0, 1, 0, 0])
        np.testing.assert_array_equal(s.omega[3], [0.25] * 4)

    def test_particles(self):
        g = Graph.from_edges(4, [0, 1, 2], [1, 2, 3])
        given = np.array([0, NO_LABEL, NO_LABEL, 1])
        cfg = LabelConfig(given != NO_LABEL, given, np.zeros(4, bool))
        s = init_epoch(g, cfg, VariantConfig("PCC1"))
        np.testing.assert_array_equal(s.strength, [1, 1])
        np.testing.assert_array_equal(s.current, [0, 3])
        np.testing.assert_array_equal(s.previous, [0, 3])
        np.testing.assert_array_equal(s.particle_distances(0), [0, 3, 3, 3])
        np.testing.assert_array_equal(s.particle_distances(1), [3, 3, 3, 0])
        assert s.frozen[[0, 3]].all() and not s.frozen[[1, 2]].any()

    def test_shared_team_tables(self):
        g = Graph.from_edges(4, [0, 1, 2], [1, 2, 3])
        given = np.array([0, 0, NO_LABEL, 1])
        cfg = LabelConfig(given != NO_LABEL, given, np.zeros(4, bool))
        s = init_epoch(g, cfg, VariantConfig("PCC3"))
        assert s.dist.shape == (2, 4)
        np.testing.assert_array_equal(s.particle_distances(0), [0, 0, 3, 3])
        assert s.table[0] == s.table[1] != s.table[2]
        assert not s.frozen.any()

    def test_missing_class(self):
        g = Graph.from_edges(3, [0, 1], [1, 2])
        given = np.array([0, NO_LABEL, NO_LABEL])
        cfg = LabelConfig(given != NO_LABEL, given, np.zeros(3, bool))
        with pytest.raises(EngineError, match="no particle"):
            init_epoch(g, cfg, VariantConfig(), c=2)


def test_randomized_invariants():
    """Normalization, strength bounds, monotone distances and monitor on 1000 instances."""
    rng = np.random.default_rng(20240)
    audited = 0
    for trial in range(1000):
        g, cfg, c = random_instance(rng)
        variant = ("PCC1", "PCC2", "PCC3", "LNR")[trial % 4]
        vc = VariantConfig(variant, p_grd=float(rng.random()), delta_v=float(rng.uniform(0.05, 1.0)))
        s = init_epoch(g, cfg, vc, c=c)
        s.rng = dyn.make_rng_state(trial)
        frozen_omega = s.omega[cfg.labeled_mask].copy()
        best = s.best_avg_max_dom
        dist = s.dist.copy()
        for _ in range(25):
            step(s)
            audited += 1
            assert np.abs(s.omega.sum(axis=1) - 1).max() < 1e-9
            assert s.omega.min() >= 0 and s.omega.max() <= 1 + 1e-12
            assert s.strength.min() >= 0 and s.strength.max() <= 1 + 1e-12
            assert np.all(s.dist <= dist)
            assert np.all(s.dist[s.table, s.home] == 0)
            assert s.best_avg_max_dom >= best
            assert s.best_avg_max_dom >= s.avg_max_dom() - 1e-12
            assert abs(s.monitor[0] - s.omega.max(axis=1).sum()) < 1e-9
            assert np.all(s.lam >= 0)
            best, dist = s.best_avg_max_dom, s.dist.copy()
        if vc.frozen_labels:
            np.testing.assert_array_equal(s.omega[cfg.labeled_mask], frozen_omega)
    assert audited == 25_000


def test_distances_bounded_by_bfs():
    rng = np.random.default_rng(77)
    for trial in range(100):
        n = int(rng.integers(5, 51))
        src, dst = random_connected_graph(rng, n, int(rng.integers(0, n)))
        g = Graph.from_edges(n, src, dst)
        given = np.full(n, NO_LABEL)
        given[rng.choice(n, 4, replace=False)] = [0, 1, 0, 1]
        cfg = LabelConfig(given != NO_LABEL, given, np.zeros(n, bool))
        variant = ("LNR", "PCC1", "PCC3")[trial % 3]
        s = init_epoch(g, cfg, VariantConfig(variant))
        s.rng = dyn.make_rng_state(trial)
        for _ in range(4):
            _advance(s, 50)
            for j, home in enumerate(s.home):
                hops = bfs_hops(g, home)
                row = s.particle_distances(j)
                exact = np.array([hops[v] for v in range(n)])
                if variant == "PCC3":
                    # a team table is bounded by the nearest team home
                    team = s.home[s.label == s.label[j]]
                    exact = np.min([[bfs_hops(g, h)[v] for v in range(n)] for h in team], axis=0)
                assert np.all(row >= exact)
                assert np.all(row <= n - 1)


def solo_walk(g, home, p_greedy, iters, seed=0):
    """One particle of class 0 on a 2-class graph with no opposing particle."""
    n = g.n
    omega = np.full((n, 2), 0.5)
    omega[home] = [1.0, 0.0]
    rowmax = omega.max(axis=1)
    dist = np.full((1, n), n - 1, dtype=np.int64)
    dist[0, home] = 0
    dyn.advance(
        g.indptr, g.indices, omega, np.zeros((n, 2)), rowmax, np.zeros(n, bool),
        np.array([0]), np.ones(1), np.array([home]), np.array([home]), np.zeros(1, np.int64), dist,
        p_greedy, 0.1, 0.1, False, False, np.array([rowmax.sum(), rowmax.mean()]),
        np.zeros(3, np.int64), 10**9, iters, dyn.make_rng_state(seed), np.zeros((0, 5), np.int64),
    )  # fmt: skip
    return omega, dist[0]


def test_random_walk_distances_are_exact_on_path():
    n = 12
    g = Graph.from_edges(n, np.arange(n - 1), np.arange(1, n))
    for home in (0, 5):
        _, dist = solo_walk(g, home, 0.0, 5000, seed=home)
        np.testing.assert_array_equal(dist, np.abs(np.arange(n) - home))


def test_uncontested_particle_takes_every_node():
    rng = np.random.default_rng(5)
    src, dst = random_connected_graph(rng, 15, 10)
    g = Graph.from_edges(15, src, dst)
    omega, _ = solo_walk(g, 3, 0.5, 20000)
    np.testing.assert_allclose(omega[:, 0], 1.0)


def test_two_node_frozen_standoff():
    g = Graph.from_edges(2, [0], [1])
    cfg = LabelConfig(np.ones(2, bool), np.array([0, 1]), np.zeros(2, bool))
    vc = VariantConfig("PCC1", alpha=5.0)
    buf = io.StringIO()
    res = run(g, cfg, vc, seed=1, trace=buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == 2 * res.iterations
    # every possible move targets the enemy home and is pushed back
    for line in lines:
        it, j, kind, target, outcome = line.split()
        assert int(target) == 1 - int(j)
        assert outcome == "shock"
    np.testing.assert_array_equal(res.labels, [0, 1])
    np.testing.assert_array_equal(res.decision, np.eye(2))


class TestRun:
    def test_bit_identical(self, blob_graph):
        d, cfg, g = blob_graph
        for variant in ("PCC1", "PCC2", "PCC3", "LNR"):
            vc = VariantConfig(variant)
            a = run(g, cfg, vc, 42, features=d.features)
            b = run(g, cfg, vc, 42, features=d.features)
            assert a.to_dict() == b.to_dict()

    def test_seeds_matter(self, blob_graph):
        d, cfg, g = blob_graph
        a = run(g, cfg, VariantConfig("LNR"), 1)
        b = run(g, cfg, VariantConfig("LNR"), 2)
        assert a.iterations != b.iterations

    @pytest.mark.parametrize("beta", [1, 3, 10])
    def test_reset_count(self, blob_graph, beta):
        d, cfg, g = blob_graph
        res = run(g, cfg, VariantConfig("LNR", beta=beta), 0)
        assert not res.truncated
        assert res.resets == beta

    def test_single_epoch(self, blob_graph):
        d, cfg, g = blob_graph
        vc = VariantConfig("LNR", beta=1)
        res = run(g, cfg, vc, 9)
        s = init_epoch(g, cfg, vc)
        s.rng = dyn.make_rng_state(9)
        stalled = False
        while not stalled:
            _, stalled, _ = _advance(s, 10**6)
        np.testing.assert_array_equal(res.decision, s.omega)
        np.testing.assert_array_equal(res.labels, np.argmax(s.omega, axis=1))

    def test_pcc1_keeps_labels(self, blob_graph):
        d, cfg, g = blob_graph
        noisy = cfg.copy()
        noisy.given_labels[0] = 1
        noisy.noisy_mask[0] = True
        res = run(g, noisy, VariantConfig("PCC1"), 3)
        lab = noisy.labeled_mask
        np.testing.assert_array_equal(res.labels[lab], noisy.given_labels[lab])

    def test_separable_blobs(self, blob_graph):
        d, cfg, g = blob_graph
        for variant in ("PCC1", "PCC2", "PCC3", "LNR"):
            res = run(g, cfg, VariantConfig(variant), 0, features=d.features)
            np.testing.assert_array_equal(res.labels, d.true_labels)

    def test_pcc2_ignores_greedy_moves(self, blob_graph):
        d, cfg, g = blob_graph
        vc = VariantConfig("PCC2", p_grd=1.0, max_total_iterations=200)
        s = init_epoch(g, cfg, vc)
        _advance(s, 200)
        assert not s.lam.any()
        vc = VariantConfig("PCC2", p_grd=0.0, max_total_iterations=200)
        s = init_epoch(g, cfg, vc)
        _advance(s, 1)
        # the first move carries the initial strength of 1 into lambda
        assert s.lam.sum() == pytest.approx(s.label.shape[0])

    def test_truncation(self, blob_graph):
        d, cfg, g = blob_graph
        res = run(g, cfg, VariantConfig("LNR", max_total_iterations=7), 0)
        assert res.truncated and res.iterations == 7
        assert res.resets == 0
        assert res.labels.shape == (d.n,)

    def test_isolated_particle_flagged(self):
        g = Graph.from_edges(4, [1, 2], [2, 3])
        given = np.array([0, NO_LABEL, NO_LABEL, 1])
        cfg = LabelConfig(given != NO_LABEL, given, np.zeros(4, bool))
        res = run(g, cfg, VariantConfig("PCC1", alpha=2.0), 0)
        assert res.isolated_events > 0
        assert res.labels[0] == 0

    def test_trace_lines(self, blob_graph):
        d, cfg, g = blob_graph
        buf = io.StringIO()
        res = run(g, cfg, VariantConfig("PCC3", alpha=20.0), 0, trace=buf)
        lines = buf.getvalue().splitlines()
        assert len(lines) == res.iterations * cfg.l
        it, j, kind, target, outcome = lines[0].split()
        assert (it, j) == ("0", "0")
        assert kind in ("random", "greedy") and outcome in ("stay", "shock")
        assert g.has_edge(int(cfg.labeled_indices[0]), int(target))

    def test_assignment_json(self, tmp_path, blob_graph):
        d, cfg, g = blob_graph
        res = run(g, cfg, VariantConfig("LNR", beta=2), 4)
        res.to_json(tmp_path / "a.json")
        back = LabelAssignment.from_json(tmp_path / "a.json")
        assert back.to_dict() == res.to_dict()
        assert back.resets == 2 and back.seed == 4


def test_tied_rows_use_nearest_labeled_sample():
    x = np.array([[0.0], [1.0], [9.0], [10.0]])
    given = np.array([0, NO_LABEL, NO_LABEL, 1])
    cfg = LabelConfig(given != NO_LABEL, given, np.zeros(4, bool))
    scores = np.array([[2.0, 0.0], [0.5, 0.5], [0.0, 0.0], [0.0, 3.0]])
    np.testing.assert_array_equal(label_from_scores(scores, cfg, x), [0, 0, 1, 1])
    # without features ties go to the lowest class
    np.testing.assert_array_equal(label_from_scores(scores, cfg), [0, 0, 0, 1])


def test_lnr_can_override_given_label():
    rng = np.random.default_rng(0)
    d = gen_gaussians(50, 2, 2, 6.0, rng)
    idx = np.r_[rng.choice(50, 5, replace=False), 50 + rng.choice(50, 5, replace=False)]
    cfg = LabelConfig.from_indices(d, idx)
    centre = d.features[:50].mean(axis=0)
    own = idx[:5]
    flip = own[np.argmin(((d.features[own] - centre) ** 2).sum(axis=1))]
    cfg.given_labels[flip] = 1
    cfg.noisy_mask[flip] = True
    g = build_graph(d.features, cfg, GraphPolicy("knn_lnr", k=20))
    res = run(g, cfg, VariantConfig("LNR"), 0, features=d.features)
    assert res.labels[flip] == 0
