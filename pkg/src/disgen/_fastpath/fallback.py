"""Pure-numpy frozen-model forward; reference semantics for the compiled core.

Both backends must agree on accumulation order where it is observable:
GIN neighbor sums run over the lexicographically sorted edge list, which
yields ascending-neighbor order per node.
"""

from __future__ import annotations

import numpy as np


def _normalized_adjacency(n, edges):
    a = np.eye(n)
    for u, v in edges:
        a[u, v] = 1.0
        a[v, u] = 1.0
    dinv = 1.0 / np.sqrt(a.sum(axis=1))
    return a * dinv[:, None] * dinv[None, :]


def _softmax(z):
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def gcn_probs(features, edges, weights, head_w, head_b):
    """3-ish layer GCN forward -> class probabilities for one graph.

    H <- relu(A_hat H W) per layer (no relu after the last), mean pool,
    linear head, softmax.
    """
    n = features.shape[0]
    a_hat = _normalized_adjacency(n, edges)
    h = features
    last = len(weights) - 1
    for i, w in enumerate(weights):
        h = (a_hat @ h) @ w
        if i != last:
            h = np.maximum(h, 0.0)
    pooled = h.mean(axis=0)
    return _softmax(pooled @ head_w + head_b)


def gin_probs(features, edges, layers, head_w, head_b):
    """GIN forward -> class probabilities for one graph.

    Each layer is MLP((1 + eps) h_v + sum_{u in N_v} h_u) with a two-layer
    perceptron; relu between layers, none after the last.
    """
    h = features
    last = len(layers) - 1
    for i, (eps, w1, b1, w2, b2) in enumerate(layers):
        agg = (1.0 + eps) * h
        for u, v in edges:
            agg[u] = agg[u] + h[v]
            agg[v] = agg[v] + h[u]
        z = np.maximum(agg @ w1 + b1, 0.0) @ w2 + b2
        h = np.maximum(z, 0.0) if i != last else z
    pooled = h.mean(axis=0)
    return _softmax(pooled @ head_w + head_b)
