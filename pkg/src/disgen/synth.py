"""Synthetic size-shift benchmark.

Labels are motif-determined (class 0 carries a triangle, class 1 a star
hub); node count is spuriously correlated with the label among the small
graphs that feed train/validation/small-test, and decorrelated in the large
tail that becomes the large test set. A model that shortcuts through size
(or through mean-pool dilution of the motif signal) fails on the tail; a
model that reads the motif does not.
"""

from __future__ import annotations

import numpy as np

from .data import GraphRecord
from .errors import ContractError

TRIANGLE_SIZE = 3
STAR_SIZE = 5
DEGREE_CAP = 6


def degree_onehot(num_nodes: int, edges) -> np.ndarray:
    """One-hot encoded node degree, capped at DEGREE_CAP - 1."""
    deg = np.zeros(num_nodes, dtype=np.int64)
    for u, v in edges:
        deg[u] += 1
        deg[v] += 1
    x = np.zeros((num_nodes, DEGREE_CAP))
    x[np.arange(num_nodes), np.minimum(deg, DEGREE_CAP - 1)] = 1.0
    return x


def make_motif_graph(gid: int, label: int, n: int,
                     rng: np.random.Generator) -> GraphRecord:
    """One graph: motif (triangle or 5-node star) bridged to a path filler."""
    motif = TRIANGLE_SIZE if label == 0 else STAR_SIZE
    if n < motif + 2:
        raise ContractError(f"need at least {motif + 2} nodes, got {n}")
    edges = []
    if label == 0:
        edges += [(0, 1), (1, 2), (0, 2)]
    else:
        edges += [(0, k) for k in range(1, STAR_SIZE)]
    # path filler, shuffled attachment point for the bridge
    filler = list(range(motif, n))
    edges += [(filler[i], filler[i + 1]) for i in range(len(filler) - 1)]
    edges.append((int(rng.integers(0, motif)), filler[0]))
    return GraphRecord(id=gid, node_features=degree_onehot(n, edges),
                       edges=edges, label=label)


def generate_size_shift_dataset(seed: int = 0,
                                n_small_per_class: int = 50,
                                n_large_per_class: int = 50,
                                small_sizes=((10, 16), (13, 19)),
                                large_size=(28, 40)) -> list[GraphRecord]:
    """Small pool: class-dependent size ranges (overlapping but skewed).
    Large tail: one shared size range for both classes."""
    rng = np.random.default_rng(seed)
    records = []
    gid = 0
    for label in (0, 1):
        lo, hi = small_sizes[label]
        for _ in range(n_small_per_class):
            n = int(rng.integers(lo, hi + 1))
            records.append(make_motif_graph(gid, label, n, rng))
            gid += 1
    for label in (0, 1):
        lo, hi = large_size
        for _ in range(n_large_per_class):
            n = int(rng.integers(lo, hi + 1))
            records.append(make_motif_graph(gid, label, n, rng))
            gid += 1
    return records
