"""Occlusion-based edge importance: score = prediction-probability drop.

For the model's predicted class on the full graph, each undirected edge is
removed in turn and the same-class probability re-evaluated; the drop fills
both directed entries of the importance matrix M. Any explainer producing an
N x N edge-score matrix can substitute for this one; downstream code only
consumes the matrix.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np

from .backbone import PretrainedModel, predict_label
from .data import GraphRecord
from .errors import DimensionError, FormatError

log = logging.getLogger(__name__)


@dataclass
class EdgeImportance:
    graph_id: int
    raw: np.ndarray
    symmetric: np.ndarray
    model_fingerprint: str


@dataclass
class NodeImportance:
    scores: np.ndarray


def symmetrize(m: np.ndarray) -> np.ndarray:
    """M_hat = (M + M^T) / 2."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError("symmetrize", m.shape, detail="expects square matrix")
    return 0.5 * (m + m.T)


def occlusion_importance(graph: GraphRecord, model: PretrainedModel) -> np.ndarray:
    """Raw M: per-edge same-class probability drop, zero where no edge."""
    n = graph.num_nodes
    m = np.zeros((n, n))
    if graph.num_edges == 0:
        log.warning("graph %d has no edges; importance matrix is all-zero",
                    graph.id)
        return m
    label, probs = predict_label(model, graph)
    p_full = probs[label]
    for u, v in graph.edges:
        reduced = GraphRecord(
            id=graph.id,
            node_features=graph.node_features,
            edges=[e for e in graph.edges if e != (u, v)],
            label=graph.label,
        )
        p_minus = model.predict_proba(reduced)[label]
        score = p_full - p_minus
        m[u, v] = score
        m[v, u] = score
    return m


def explain_graph(graph: GraphRecord, model: PretrainedModel) -> EdgeImportance:
    raw = occlusion_importance(graph, model)
    return EdgeImportance(graph_id=graph.id, raw=raw, symmetric=symmetrize(raw),
                          model_fingerprint=model.fingerprint)


def node_scores(m_hat: np.ndarray, graph: GraphRecord) -> NodeImportance:
    """Score of node j = sum of M_hat[j, k] over neighbors k of j."""
    scores = np.zeros(graph.num_nodes)
    for u, v in graph.edges:
        scores[u] += m_hat[u, v]
        scores[v] += m_hat[v, u]
    return NodeImportance(scores=scores)


# ----------------------------------------------------------------------
# plain-text cache, one file per (dataset, model fingerprint)


def cache_path(directory: str, dataset: str, fingerprint: str) -> str:
    return os.path.join(directory, f"{dataset}_importance_{fingerprint}.csv")


def save_importance_cache(path: str, importances: list[EdgeImportance],
                          graphs: dict[int, GraphRecord]):
    with open(path, "w", encoding="ascii", newline="") as fh:
        for imp in importances:
            for u, v in graphs[imp.graph_id].edges:
                fh.write(f"{imp.graph_id},{u},{v},{float(imp.symmetric[u, v])!r}\n")


def load_importance_cache(path: str, graphs: dict[int, GraphRecord],
                          fingerprint: str) -> dict[int, EdgeImportance]:
    scores: dict[int, list[tuple[int, int, float]]] = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise FormatError(path, lineno, f"expected 4 fields, got {line!r}")
            gid, u, v = int(parts[0]), int(parts[1]), int(parts[2])
            scores.setdefault(gid, []).append((u, v, float(parts[3])))
    out = {}
    for gid, triples in scores.items():
        graph = graphs[gid]
        m = np.zeros((graph.num_nodes, graph.num_nodes))
        for u, v, s in triples:
            m[u, v] = s
            m[v, u] = s
        out[gid] = EdgeImportance(graph_id=gid, raw=m, symmetric=symmetrize(m),
                                  model_fingerprint=fingerprint)
    return out
