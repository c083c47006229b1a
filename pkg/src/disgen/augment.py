"""Size- and task-invariant view generation.

The size-invariant view keeps every node but drops the k1 highest-importance
edges (the structure the frozen model leans on most). The task-invariant view
drops the k2 lowest-importance nodes; if the frozen model's prediction
changes, k2 shrinks geometrically (floor 1) and the removal is retried, so
the emitted view always has strictly fewer nodes than the original.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .backbone import PretrainedModel, predict_label
from .data import GraphRecord
from .errors import AugmentationError, ContractError
from .explain import EdgeImportance, node_scores

log = logging.getLogger(__name__)


@dataclass
class ViewAudit:
    k1: int
    k2_final: int
    retries: int
    passed: bool
    size_view_pred_changed: bool | None = None


@dataclass
class ViewTriple:
    original: GraphRecord
    size_invariant: GraphRecord
    task_invariant: GraphRecord
    audit: ViewAudit


def default_k(n: int, frac: float = 0.2) -> int:
    return int(round(frac * n))


def size_invariant_view(graph: GraphRecord, m_hat: np.ndarray, k1: int) -> GraphRecord:
    """Drop the k1 highest-scoring undirected edges; ties by ascending (u, v)."""
    if k1 < 0:
        raise ContractError(f"k1 must be >= 0, got {k1}")
    if k1 >= graph.num_edges and graph.num_edges > 0 and k1 > 0:
        log.warning("graph %d: k1=%d >= %d edges; removing all edges",
                    graph.id, k1, graph.num_edges)
    ranked = sorted(graph.edges, key=lambda e: (-m_hat[e[0], e[1]], e))
    removed = set(ranked[:k1])
    return GraphRecord(id=graph.id, node_features=graph.node_features,
                       edges=[e for e in graph.edges if e not in removed],
                       label=graph.label)


def _remove_lowest_nodes(graph: GraphRecord, scores: np.ndarray, k2: int) -> GraphRecord:
    order = np.argsort(scores, kind="stable")  # ties -> ascending node index
    dropped = set(int(i) for i in order[:k2])
    keep = [i for i in range(graph.num_nodes) if i not in dropped]
    remap = {old: new for new, old in enumerate(keep)}
    edges = [(remap[u], remap[v]) for u, v in graph.edges
             if u not in dropped and v not in dropped]
    return GraphRecord(id=graph.id, node_features=graph.node_features[keep],
                       edges=edges, label=graph.label)


def task_invariant_view(graph: GraphRecord, scores: np.ndarray, k2: int,
                        model: PretrainedModel):
    """Remove the k2 lowest-score nodes, shrinking k2 by 0.9 on a failed
    prediction check. Returns (view, k2_final, retries, passed)."""
    n = graph.num_nodes
    if n <= 1:
        raise AugmentationError(
            f"graph {graph.id} has {n} node(s); cannot remove any")
    k2 = max(1, min(int(k2), n - 1))
    target, _ = predict_label(model, graph)
    retries = 0
    while True:
        view = _remove_lowest_nodes(graph, scores, k2)
        got, _ = predict_label(model, view)
        if got == target:
            return view, k2, retries, True
        nxt = max(1, math.floor(0.9 * k2))
        if nxt == k2:
            # k2 is already 1: one forced final attempt, then give up
            retries += 1
            view = _remove_lowest_nodes(graph, scores, 1)
            got, _ = predict_label(model, view)
            return view, 1, retries, got == target
        k2 = nxt
        retries += 1


def make_view_triple(graph: GraphRecord, importance: EdgeImportance,
                     model: PretrainedModel, k1_frac: float = 0.2,
                     k2_frac: float = 0.2) -> ViewTriple:
    n = graph.num_nodes
    k1 = default_k(n, k1_frac)
    k2 = max(1, default_k(n, k2_frac))
    view1 = size_invariant_view(graph, importance.symmetric, k1)
    scores = node_scores(importance.symmetric, graph).scores
    view2, k2_final, retries, passed = task_invariant_view(graph, scores, k2, model)
    changed = predict_label(model, view1)[0] != predict_label(model, graph)[0]
    return ViewTriple(
        original=graph, size_invariant=view1, task_invariant=view2,
        audit=ViewAudit(k1=k1, k2_final=k2_final, retries=retries,
                        passed=passed, size_view_pred_changed=changed))


# ----------------------------------------------------------------------
# audit sidecar


def write_audit_csv(triples: list[ViewTriple], path: str):
    with open(path, "w", encoding="ascii", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["graph_id", "k1", "k2_final", "retries", "passed"])
        for t in triples:
            w.writerow([t.original.id, t.audit.k1, t.audit.k2_final,
                        t.audit.retries, int(t.audit.passed)])


def read_audit_csv(path: str) -> dict[int, ViewAudit]:
    out = {}
    with open(path, "r", encoding="ascii") as fh:
        for row in csv.DictReader(fh):
            out[int(row["graph_id"])] = ViewAudit(
                k1=int(row["k1"]), k2_final=int(row["k2_final"]),
                retries=int(row["retries"]), passed=bool(int(row["passed"])))
    return out
