"""Joint training over the weighted three-part objective, plus evaluation.

Each batch stacks b (original, size-invariant, task-invariant) triples in
fixed order, runs the shared backbone and both encoders, and descends
beta1 * L_s + beta2 * L_t + beta3 * L_d with Adam. Early stopping keeps the
parameters from the epoch with the lowest validation loss (CE of the task
head on the original validation graphs; validation graphs carry no views).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .augment import ViewTriple
from .autodiff import Tape, mean_of
from .backbone import BackboneConfig, backbone_forward, init_backbone_params
from .config import RunConfig
from .data import GraphRecord, DatasetSplit, assemble_batch, assemble_plain, upsample_class
from .disentangle import (LossBreakdown, contrastive_loss, decoupling_loss,
                          encode_views, init_head_params, optimal_projection,
                          supervision_loss, total_loss)
from .errors import ContractError, TrainingError
from .params import ParameterSet


@dataclass
class MetricsReport:
    train_losses: list[float]
    val_losses: list[float]
    f1_small: float
    f1_large: float
    best_epoch: int
    seed: int
    wall_clock: float

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {
            "train_losses": self.train_losses,
            "val_losses": self.val_losses,
            "f1_small": self.f1_small,
            "f1_large": self.f1_large,
            "best_epoch": self.best_epoch,
            "seed": self.seed,
        }
        # wall clock is reported separately so metrics stay rerun-identical
        if include_timing:
            out["wall_clock"] = self.wall_clock
        return out


def early_stop_check(val_history: list[float], patience: int):
    """(keep_going, best_epoch); best epoch is the earliest argmin."""
    if not val_history:
        raise ContractError("early_stop_check: empty history")
    best = int(np.argmin(val_history))
    current = len(val_history) - 1
    return (current - best) < patience, best


def macro_f1(y_true, y_pred, n_classes: int) -> float:
    """Macro-averaged F1 with 0/0 ratios defined as 0."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    scores = []
    for c in range(n_classes):
        tp = int(np.sum((y_pred == c) & (y_true == c)))
        fp = int(np.sum((y_pred == c) & (y_true != c)))
        fn = int(np.sum((y_pred != c) & (y_true == c)))
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return float(np.mean(scores))


def _init_disgen_params(config: RunConfig, d_f: int, n_classes: int,
                        rng: np.random.Generator,
                        warm_start: ParameterSet | None = None) -> ParameterSet:
    bcfg = BackboneConfig(kind=config.backbone, layers=config.layers,
                          hidden=config.hidden, in_dim=d_f)
    params = init_backbone_params(bcfg, n_classes=0, rng=rng)
    init_head_params(config.hidden, config.d_h, config.d_s, n_classes, rng,
                     params=params)
    if warm_start is not None:
        for name, value in warm_start.values.items():
            if name in params and not name.startswith("backbone.head"):
                params[name] = value.copy()
    return params, bcfg


def _task_logits_plain(tape, leaves, bcfg, graphs):
    """Task-head logits for bare graphs (no views): backbone -> ENC1 -> head."""
    pooled = backbone_forward(tape, leaves, bcfg, assemble_plain(graphs))
    ones = tape.constant(np.ones((pooled.shape[0], 1)))
    h_t = tape.relu(tape.add(tape.matmul(pooled, leaves["enc1.W"]),
                             tape.matmul(ones, leaves["enc1.b"])))
    return tape.add(tape.matmul(h_t, leaves["task_head.W"]),
                    tape.matmul(ones, leaves["task_head.b"]))


def _validation_loss(params, bcfg, graphs, chunk=64) -> float:
    total, count = 0.0, 0
    for start in range(0, len(graphs), chunk):
        part = graphs[start:start + chunk]
        tape = Tape()
        leaves = params.leaves(tape)
        logits = _task_logits_plain(tape, leaves, bcfg, part)
        terms = [tape.softmax_xent(tape.row(logits, k), g.label)
                 for k, g in enumerate(part)]
        total += mean_of(tape, terms).item() * len(part)
        count += len(part)
    return total / count


def predict_labels(params: ParameterSet, bcfg: BackboneConfig,
                   graphs: list[GraphRecord], chunk=64) -> np.ndarray:
    preds = []
    for start in range(0, len(graphs), chunk):
        part = graphs[start:start + chunk]
        tape = Tape()
        leaves = params.leaves(tape)
        logits = _task_logits_plain(tape, leaves, bcfg, part)
        preds.extend(int(np.argmax(logits.value[k])) for k in range(len(part)))
    return np.asarray(preds)


def evaluate_f1(params: ParameterSet, bcfg: BackboneConfig,
                graphs: list[GraphRecord], n_classes: int) -> float:
    """Macro F1 of task-head predictions; never mutates the parameters."""
    if not graphs:
        raise ContractError("evaluate_f1: empty evaluation set")
    preds = predict_labels(params, bcfg, graphs)
    return macro_f1([g.label for g in graphs], preds, n_classes)


def disgen_batch_objective(tape, leaves, bcfg, triples, config: RunConfig):
    """(total tensor, LossBreakdown) for one batch of triples."""
    assembly = assemble_batch(triples)
    pooled = backbone_forward(tape, leaves, bcfg, assembly)
    hidden, t_logits, s_vecs = encode_views(tape, leaves, pooled)
    l_s = contrastive_loss(tape, s_vecs, tau=config.tau)
    l_t = supervision_loss(tape, t_logits, [t.original.label for t in triples],
                           alpha1=config.alpha1, alpha2=config.alpha2)
    _, d = optimal_projection(tape, hidden, ridge=config.ridge)
    l_d = decoupling_loss(tape, d, eps=config.eps)
    return total_loss(tape, l_s, l_t, l_d, d,
                      config.beta1, config.beta2, config.beta3)


def train_disgen(records_by_id: dict[int, GraphRecord], split: DatasetSplit,
                 triples: dict[int, ViewTriple], config: RunConfig,
                 warm_start: ParameterSet | None = None):
    """Returns (best ParameterSet, MetricsReport, per-step LossBreakdowns)."""
    missing = [i for i in split.train if i not in triples]
    if missing:
        raise ContractError(f"no view triple for train graphs {missing[:5]}")
    started = time.perf_counter()

    all_graphs = list(records_by_id.values())
    n_classes = max(g.label for g in all_graphs) + 1
    d_f = all_graphs[0].node_features.shape[1]

    ss = np.random.SeedSequence(config.seed)
    init_rng, shuffle_rng = [np.random.default_rng(s) for s in ss.spawn(2)]
    params, bcfg = _init_disgen_params(config, d_f, n_classes, init_rng,
                                       warm_start)

    train_ids = list(split.train)
    if config.upsample_label >= 0 and config.upsample_ratio > 1:
        train_ids = upsample_class(train_ids, records_by_id,
                                   config.upsample_label,
                                   config.upsample_ratio, seed=config.seed)
    val_graphs = [records_by_id[i] for i in split.validation]

    train_losses: list[float] = []
    val_losses: list[float] = []
    loss_rows: list[LossBreakdown] = []
    best_params = params.copy()
    best_epoch = 0
    step = 0
    for epoch in range(config.max_epochs):
        order = shuffle_rng.permutation(len(train_ids))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [triples[train_ids[k]] for k in order[start:start + config.batch_size]]
            tape = Tape()
            leaves = params.leaves(tape)
            total, breakdown = disgen_batch_objective(tape, leaves, bcfg,
                                                      batch, config)
            if not np.isfinite(breakdown.total):
                raise TrainingError(
                    f"loss diverged at epoch {epoch} step {step}",
                    epoch=epoch, last_good=best_params)
            params.adam_step(tape.backward(total).by_name(), lr=config.lr)
            epoch_losses.append(breakdown.total)
            loss_rows.append(breakdown)
            step += 1
        train_losses.append(float(np.mean(epoch_losses)))
        val_losses.append(_validation_loss(params, bcfg, val_graphs))
        keep_going, best = early_stop_check(val_losses, config.patience)
        if best == len(val_losses) - 1:
            best_params = params.copy()
            best_epoch = best
        if not keep_going:
            break

    f1_small = evaluate_f1(best_params, bcfg,
                           [records_by_id[i] for i in split.small_test], n_classes)
    f1_large = evaluate_f1(best_params, bcfg,
                           [records_by_id[i] for i in split.large_test], n_classes)
    report = MetricsReport(
        train_losses=train_losses, val_losses=val_losses,
        f1_small=f1_small, f1_large=f1_large, best_epoch=best_epoch,
        seed=config.seed, wall_clock=time.perf_counter() - started)
    return best_params, report, loss_rows
