import math

import numpy as np
import pytest

from disgen.augment import (default_k, make_view_triple, read_audit_csv,
                            size_invariant_view, task_invariant_view,
                            write_audit_csv)
from disgen.data import GraphRecord
from disgen.errors import AugmentationError
from disgen.explain import EdgeImportance, symmetrize


def _graph(gid, n, edges, label=0):
    return GraphRecord(id=gid, node_features=np.ones((n, 1)),
                       edges=edges, label=label)


class StubModel:
    """predict_proba stand-in driven by a labeling rule on the graph."""

    N_CLASSES = 64

    def __init__(self, rule):
        self.rule = rule
        self.fingerprint = "stub"

    def predict_proba(self, graph):
        out = np.zeros(self.N_CLASSES)
        out[self.rule(graph) % self.N_CLASSES] = 1.0
        return out


CONSTANT_MODEL = StubModel(lambda g: 0)
PARITY_MODEL = StubModel(lambda g: g.num_nodes % 2)


def _scores(graph, values):
    m = np.zeros((graph.num_nodes, graph.num_nodes))
    for (u, v), s in values.items():
        m[u, v] = m[v, u] = s
    return symmetrize(m)


# ----------------------------------------------------------------------
# size-invariant view


def test_size_view_k1_zero_is_noop():
    g = _graph(0, 4, [(0, 1), (1, 2), (2, 3)])
    view = size_invariant_view(g, np.zeros((4, 4)), 0)
    assert view.edges == g.edges
    assert view.num_nodes == g.num_nodes


def test_size_view_removes_argmax_edge():
    g = _graph(0, 3, [(0, 1), (1, 2)])
    m_hat = _scores(g, {(0, 1): 0.4, (1, 2): 0.6})
    view = size_invariant_view(g, m_hat, 1)
    assert view.edges == [(0, 1)]


def test_size_view_tie_breaks_lexicographically():
    g = _graph(0, 3, [(0, 1), (0, 2), (1, 2)])
    m_hat = _scores(g, {(0, 1): 0.5, (0, 2): 0.5, (1, 2): 0.5})
    view = size_invariant_view(g, m_hat, 1)
    assert view.edges == [(0, 2), (1, 2)]  # (0, 1) removed first


def test_size_view_removing_everything_warns(caplog):
    g = _graph(0, 3, [(0, 1), (1, 2)])
    with caplog.at_level("WARNING"):
        view = size_invariant_view(g, np.zeros((3, 3)), 5)
    assert view.num_edges == 0
    assert view.num_nodes == 3
    assert any("removing all edges" in r.message for r in caplog.records)


# ----------------------------------------------------------------------
# task-invariant view


def test_task_view_structure_blind_first_attempt_passes():
    g = _graph(0, 10, [(i, i + 1) for i in range(9)])
    scores = np.arange(10.0)
    view, k2, retries, passed = task_invariant_view(g, scores, default_k(10),
                                                    CONSTANT_MODEL)
    assert (k2, retries, passed) == (2, 0, True)
    assert view.num_nodes == 8
    # lowest-score nodes 0 and 1 removed, rest reindexed in order
    assert view.edges == [(i, i + 1) for i in range(7)]


def test_task_view_tie_breaks_by_node_index():
    g = _graph(0, 4, [(0, 1), (1, 2), (2, 3)])
    view, _, _, _ = task_invariant_view(g, np.zeros(4), 1, CONSTANT_MODEL)
    # all-equal scores: node 0 removed
    assert view.num_nodes == 3
    assert view.edges == [(0, 1), (1, 2)]


def test_task_view_forced_retry_trace_n5():
    # k2 starts at max(1, round(0.2 * 5)) = 1; parity model always fails:
    # one forced retry, then the 1-node-removed view with passed = False
    g = _graph(0, 5, [(0, 1), (1, 2), (2, 3), (3, 4)])
    view, k2, retries, passed = task_invariant_view(g, np.arange(5.0), 1,
                                                    PARITY_MODEL)
    assert (k2, retries, passed) == (1, 1, False)
    assert view.num_nodes == 4


def test_task_view_shrink_then_pass():
    # fails at k2 = 3 and k2 = 2 (odd remainder), passes at k2 = 1? No:
    # parity flips for odd removals; use a rule that needs >= threshold nodes
    threshold_model = StubModel(lambda g: 0 if g.num_nodes >= 9 else 1)
    g = _graph(0, 10, [(i, i + 1) for i in range(9)])
    view, k2, retries, passed = task_invariant_view(g, np.arange(10.0), 2,
                                                    threshold_model)
    assert passed
    assert k2 == 1
    assert retries == 1
    assert view.num_nodes == 9


def test_task_view_single_node_rejected():
    with pytest.raises(AugmentationError):
        task_invariant_view(_graph(0, 1, []), np.zeros(1), 1, CONSTANT_MODEL)


# ----------------------------------------------------------------------
# triples


def _random_graph(rng, gid):
    n = int(rng.integers(4, 14))
    candidates = [(u, v) for u in range(n) for v in range(u + 1, n)]
    take = rng.random(len(candidates)) < 0.35
    edges = [e for e, t in zip(candidates, take) if t]
    # keep it connected enough: chain fallback
    edges = sorted(set(edges) | {(i, i + 1) for i in range(n - 1)})
    return _graph(gid, n, edges, label=int(rng.integers(0, 2)))


def _random_importance(rng, graph):
    m = np.zeros((graph.num_nodes, graph.num_nodes))
    for u, v in graph.edges:
        m[u, v] = m[v, u] = rng.normal()
    return EdgeImportance(graph_id=graph.id, raw=m, symmetric=symmetrize(m),
                          model_fingerprint="stub")


def test_triple_invariants_on_random_graphs():
    rng = np.random.default_rng(0)
    model = StubModel(lambda g: int(g.num_nodes >= 6))
    for gid in range(200):
        g = _random_graph(rng, gid)
        imp = _random_importance(rng, g)
        triple = make_view_triple(g, imp, model)
        k1 = default_k(g.num_nodes)
        assert triple.size_invariant.num_nodes == g.num_nodes
        assert triple.size_invariant.num_edges == g.num_edges - min(k1, g.num_edges)
        assert triple.task_invariant.num_nodes <= g.num_nodes - 1
        if triple.audit.passed:
            got = model.predict_proba(triple.task_invariant).argmax()
            assert got == model.predict_proba(g).argmax()


def test_triple_retry_bound():
    rng = np.random.default_rng(1)
    always_fail = StubModel(lambda g: g.num_nodes)  # changes on any removal
    for gid in range(50):
        g = _random_graph(rng, gid)
        imp = _random_importance(rng, g)
        triple = make_view_triple(g, imp, always_fail)
        k2_init = max(1, default_k(g.num_nodes))
        bound = math.ceil(math.log(1.0 / k2_init) / math.log(0.9)) + 1
        assert triple.audit.retries + 1 <= bound + 1
        assert not triple.audit.passed
        assert triple.task_invariant.num_nodes == g.num_nodes - 1


def test_triple_determinism():
    rng = np.random.default_rng(2)
    g = _random_graph(rng, 0)
    imp = _random_importance(rng, g)
    model = StubModel(lambda gr: 0)
    t1 = make_view_triple(g, imp, model)
    t2 = make_view_triple(g, imp, model)
    assert t1.size_invariant == t2.size_invariant
    assert t1.task_invariant == t2.task_invariant
    assert t1.audit == t2.audit


def test_audit_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    model = CONSTANT_MODEL
    triples = []
    for gid in range(5):
        g = _random_graph(rng, gid)
        triples.append(make_view_triple(g, _random_importance(rng, g), model))
    path = str(tmp_path / "audit.csv")
    write_audit_csv(triples, path)
    back = read_audit_csv(path)
    for t in triples:
        audit = back[t.original.id]
        assert (audit.k1, audit.k2_final, audit.retries, audit.passed) == \
               (t.audit.k1, t.audit.k2_final, t.audit.retries, t.audit.passed)
