"""GCN / GIN message-passing backbones with mean pooling and pretraining.

Two forward paths exist on purpose: a tape-recorded one used by training
(gradients), and the frozen fast path in :mod:`disgen._fastpath` used by
the explainer and augmentation checks (no gradients, many calls).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import _fastpath
from .autodiff import Tape, Tensor, mean_of
from .data import BatchAssembly, GraphRecord, assemble_plain
from .errors import ContractError, DimensionError, TrainingError
from .params import ParameterSet, glorot

CHECKPOINT_VERSION = 1


@dataclass
class BackboneConfig:
    kind: str = "gcn"
    layers: int = 3
    hidden: int = 32
    in_dim: int = 1

    def __post_init__(self):
        if self.kind not in ("gcn", "gin"):
            raise ContractError(f"unknown backbone kind {self.kind!r}")
        if self.layers < 1 or self.hidden < 1 or self.in_dim < 1:
            raise ContractError("backbone dims must be >= 1")

    def to_dict(self):
        return {"kind": self.kind, "layers": self.layers,
                "hidden": self.hidden, "in_dim": self.in_dim}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def init_backbone_params(config: BackboneConfig, n_classes: int,
                         rng: np.random.Generator,
                         params: ParameterSet | None = None,
                         prefix: str = "backbone") -> ParameterSet:
    """Glorot-seeded weights; GIN eps starts at 0 and is learnable."""
    ps = params if params is not None else ParameterSet()
    d_in = config.in_dim
    for i in range(config.layers):
        if config.kind == "gcn":
            ps.add(f"{prefix}.conv{i}.W", glorot((d_in, config.hidden), rng))
        else:
            ps.add(f"{prefix}.conv{i}.W1", glorot((d_in, config.hidden), rng))
            ps.add(f"{prefix}.conv{i}.b1", np.zeros((1, config.hidden)))
            ps.add(f"{prefix}.conv{i}.W2", glorot((config.hidden, config.hidden), rng))
            ps.add(f"{prefix}.conv{i}.b2", np.zeros((1, config.hidden)))
            ps.add(f"{prefix}.conv{i}.eps", np.zeros(()))
        d_in = config.hidden
    if n_classes:
        ps.add(f"{prefix}.head.W", glorot((config.hidden, n_classes), rng))
        ps.add(f"{prefix}.head.b", np.zeros((1, n_classes)))
    return ps


# ----------------------------------------------------------------------
# tape-recorded layers


def gcn_layer(tape: Tape, h: Tensor, a_hat: Tensor, w: Tensor,
              final: bool = False) -> Tensor:
    """relu(A_hat H W); the final layer omits the relu before pooling."""
    out = tape.matmul(tape.matmul(a_hat, h), w)
    return out if final else tape.relu(out)


def gin_layer(tape: Tape, h: Tensor, adj_sum: Tensor, w1: Tensor, b1: Tensor,
              w2: Tensor, b2: Tensor, eps: Tensor, ones_col: Tensor,
              final: bool = False) -> Tensor:
    """MLP((1 + eps) h_v + sum of neighbor rows), neighbor sums via 0/1 adjacency."""
    agg = tape.add(tape.add(tape.matmul(adj_sum, h), h), tape.scale(h, eps))
    z = tape.relu(tape.add(tape.matmul(agg, w1), tape.matmul(ones_col, b1)))
    out = tape.add(tape.matmul(z, w2), tape.matmul(ones_col, b2))
    return out if final else tape.relu(out)


def mean_pool(tape: Tape, h: Tensor, node_to_graph: np.ndarray,
              num_graphs: int) -> Tensor:
    """Per-graph arithmetic mean of node rows, as one pooling matmul."""
    node_to_graph = np.asarray(node_to_graph, dtype=np.int64)
    if node_to_graph.shape[0] != h.shape[0]:
        raise DimensionError("mean_pool", h.shape, node_to_graph.shape)
    counts = np.bincount(node_to_graph, minlength=num_graphs)
    if np.any(counts == 0):
        raise ContractError(
            f"mean_pool: graphs with zero mapped nodes: "
            f"{np.flatnonzero(counts == 0).tolist()}")
    pool = np.zeros((num_graphs, h.shape[0]))
    pool[node_to_graph, np.arange(h.shape[0])] = 1.0 / counts[node_to_graph]
    return tape.matmul(tape.constant(pool), h)


def _sum_adjacency(assembly: BatchAssembly) -> np.ndarray:
    out = np.zeros((assembly.total_nodes, assembly.total_nodes))
    for u, v in assembly.global_edges():
        out[u, v] = 1.0
        out[v, u] = 1.0
    return out


def backbone_forward(tape: Tape, leaves: dict[str, Tensor],
                     config: BackboneConfig, assembly: BatchAssembly,
                     prefix: str = "backbone") -> Tensor:
    """Pooled graph representations (num_graphs x hidden) for a batch."""
    feats = assembly.features()
    if feats.shape[1] != config.in_dim:
        raise DimensionError("backbone_forward", feats.shape,
                             (feats.shape[0], config.in_dim),
                             detail="feature width mismatch")
    h = tape.constant(feats)
    if config.kind == "gcn":
        a_hat = tape.constant(assembly.block_adjacency())
        for i in range(config.layers):
            h = gcn_layer(tape, h, a_hat, leaves[f"{prefix}.conv{i}.W"],
                          final=(i == config.layers - 1))
    else:
        adj = tape.constant(_sum_adjacency(assembly))
        ones_col = tape.constant(np.ones((assembly.total_nodes, 1)))
        for i in range(config.layers):
            h = gin_layer(tape, h, adj,
                          leaves[f"{prefix}.conv{i}.W1"],
                          leaves[f"{prefix}.conv{i}.b1"],
                          leaves[f"{prefix}.conv{i}.W2"],
                          leaves[f"{prefix}.conv{i}.b2"],
                          leaves[f"{prefix}.conv{i}.eps"], ones_col,
                          final=(i == config.layers - 1))
    return mean_pool(tape, h, assembly.node_to_graph, assembly.num_graphs)


def head_logits(tape: Tape, leaves: dict[str, Tensor], pooled: Tensor,
                prefix: str = "backbone") -> Tensor:
    ones = tape.constant(np.ones((pooled.shape[0], 1)))
    return tape.add(tape.matmul(pooled, leaves[f"{prefix}.head.W"]),
                    tape.matmul(ones, leaves[f"{prefix}.head.b"]))


# ----------------------------------------------------------------------
# frozen model


def fingerprint_ids(ids) -> str:
    h = hashlib.sha256(",".join(str(i) for i in sorted(ids)).encode())
    return h.hexdigest()[:16]


class PretrainedModel:
    """Frozen backbone + head; array buffers are write-protected."""

    def __init__(self, params: ParameterSet, config: BackboneConfig,
                 n_classes: int, fingerprint: str):
        self.params = params.copy()
        for arr in self.params.values.values():
            arr.setflags(write=False)
        self.config = config
        self.n_classes = n_classes
        self.fingerprint = fingerprint

    def _weight_stack(self):
        p = self.params
        if self.config.kind == "gcn":
            return [p[f"backbone.conv{i}.W"] for i in range(self.config.layers)]
        return [(float(p[f"backbone.conv{i}.eps"]),
                 p[f"backbone.conv{i}.W1"], p[f"backbone.conv{i}.b1"][0],
                 p[f"backbone.conv{i}.W2"], p[f"backbone.conv{i}.b2"][0])
                for i in range(self.config.layers)]

    def predict_proba(self, graph: GraphRecord) -> np.ndarray:
        if graph.node_features.shape[1] != self.config.in_dim:
            raise DimensionError("predict", graph.node_features.shape,
                                 (graph.num_nodes, self.config.in_dim),
                                 detail="feature width mismatch")
        head_w = self.params["backbone.head.W"]
        head_b = self.params["backbone.head.b"][0]
        if self.config.kind == "gcn":
            return _fastpath.gcn_probs(graph.node_features, graph.edges,
                                       self._weight_stack(), head_w, head_b)
        return _fastpath.gin_probs(graph.node_features, graph.edges,
                                   self._weight_stack(), head_w, head_b)


def predict_label(model: PretrainedModel, graph: GraphRecord):
    """(argmax class, probability vector); ties break toward the lower index."""
    probs = model.predict_proba(graph)
    return int(np.argmax(probs)), probs


# ----------------------------------------------------------------------
# pretraining


def _ce_loss(tape, leaves, config, graphs):
    assembly = assemble_plain(graphs)
    pooled = backbone_forward(tape, leaves, config, assembly)
    logits = head_logits(tape, leaves, pooled)
    terms = [tape.softmax_xent(tape.row(logits, k), g.label)
             for k, g in enumerate(graphs)]
    return mean_of(tape, terms)


def pretrain_backbone(train_graphs: list[GraphRecord], config: BackboneConfig,
                      epochs: int = 300, seed: int = 0, lr: float = 1e-3,
                      batch_size: int = 32, patience: int = 50) -> PretrainedModel:
    """Supervised cross-entropy pretraining; returns the frozen best-loss model.

    Early stopping watches the epoch-mean training loss with the same
    patience rule as the main trainer.
    """
    if not train_graphs:
        raise ContractError("pretrain_backbone: empty training set")
    n_classes = max(g.label for g in train_graphs) + 1
    rng = np.random.default_rng(seed)
    params = init_backbone_params(config, n_classes, rng)
    fp = fingerprint_ids([g.id for g in train_graphs])

    best = params.copy()
    best_loss = np.inf
    best_epoch = -1
    for epoch in range(epochs):
        order = rng.permutation(len(train_graphs))
        losses = []
        for start in range(0, len(order), batch_size):
            batch = [train_graphs[i] for i in order[start:start + batch_size]]
            tape = Tape()
            leaves = params.leaves(tape)
            loss = _ce_loss(tape, leaves, config, batch)
            val = loss.item()
            if not np.isfinite(val):
                raise TrainingError(
                    f"pretraining loss diverged at epoch {epoch}", epoch=epoch,
                    last_good=best)
            losses.append(val)
            params.adam_step(tape.backward(loss).by_name(), lr=lr)
        epoch_loss = float(np.mean(losses))
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best = params.copy()
            best_epoch = epoch
        elif epoch - best_epoch >= patience:
            break
    return PretrainedModel(best, config, n_classes, fp)


# ----------------------------------------------------------------------
# checkpoint io


def save_model(model: PretrainedModel, path: str):
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "n_classes": model.n_classes,
        "fingerprint": model.fingerprint,
    }
    arrays = {f"param/{k}": v for k, v in model.params.values.items()}
    np.savez(path, __meta__=np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)


def load_model(path: str, expect_fingerprint: str | None = None,
               allow_mismatch: bool = False) -> PretrainedModel:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ContractError(
                f"checkpoint version {meta.get('version')} != {CHECKPOINT_VERSION}")
        params = ParameterSet()
        for key in data.files:
            if key.startswith("param/"):
                params.add(key[len("param/"):], data[key])
    if (expect_fingerprint is not None
            and meta["fingerprint"] != expect_fingerprint
            and not allow_mismatch):
        raise ContractError(
            f"checkpoint fingerprint {meta['fingerprint']} does not match the "
            f"active split {expect_fingerprint}; pass allow_mismatch to override")
    return PretrainedModel(params, BackboneConfig.from_dict(meta["config"]),
                           meta["n_classes"], meta["fingerprint"])
