"""Dual-encoder head and the contrastive / supervision / decoupling losses.

Given pooled backbone outputs for a batch of (original, size-invariant,
task-invariant) triples, two relu encoders produce task and size hidden
stacks H_t, H_s (3b x d_h, rows in triple order). The three losses:

- contrastive: per graph, with c1 = cos(s_i, s_i^(1)) and
  c2 = cos(s_i, s_i^(2)), the term is -log(exp(c1/tau) /
  (exp(c1/tau) + exp(c2/tau))); batch mean.
- supervision: alpha1 * CE(y_i, t_i) + alpha2 * CE(y_i, t_i^(2)); batch
  mean. The size-invariant view carries a different label and is never
  supervised.
- decoupling: 1 / (D^2 + eps) where D = ||H_t P_opt - H_s||_F at the
  closed-form least-squares P_opt. P_opt is held constant during
  backpropagation: D is the value of the inner minimization over P, so its
  gradient w.r.t. H_t and H_s equals the partial gradient at the minimizer
  (envelope property), which the gradient test suite verifies against
  finite differences of the true min-residual objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor, mean_of, reciprocal
from .errors import ContractError, DimensionError
from .linalg import least_squares_solve
from .params import ParameterSet, glorot

DEFAULT_TAU = 0.5
DEFAULT_RIDGE = 1e-6
DEFAULT_EPS = 1e-8


@dataclass
class HiddenBatch:
    """Row-stacked hidden representations, rows in batch triple order."""

    h_t: Tensor
    h_s: Tensor

    def __post_init__(self):
        if self.h_t.shape != self.h_s.shape:
            raise DimensionError("HiddenBatch", self.h_t.shape, self.h_s.shape)
        if self.h_t.shape[0] % 3 != 0:
            raise ContractError(
                f"HiddenBatch row count {self.h_t.shape[0]} not divisible by 3")

    @property
    def batch_size(self) -> int:
        return self.h_t.shape[0] // 3


@dataclass
class LossBreakdown:
    l_s: float
    l_t: float
    l_d: float
    total: float
    d: float
    beta1: float
    beta2: float
    beta3: float

    CSV_HEADER = "step,L_s,L_t,L_d,D,total"

    def csv_row(self, step: int) -> str:
        return (f"{step},{self.l_s!r},{self.l_t!r},{self.l_d!r},"
                f"{self.d!r},{self.total!r}")


def init_head_params(d_g: int, d_h: int, d_s: int, n_classes: int,
                     rng: np.random.Generator,
                     params: ParameterSet | None = None) -> ParameterSet:
    ps = params if params is not None else ParameterSet()
    ps.add("enc1.W", glorot((d_g, d_h), rng))
    ps.add("enc1.b", np.zeros((1, d_h)))
    ps.add("enc2.W", glorot((d_g, d_h), rng))
    ps.add("enc2.b", np.zeros((1, d_h)))
    ps.add("task_head.W", glorot((d_h, n_classes), rng))
    ps.add("task_head.b", np.zeros((1, n_classes)))
    ps.add("size_head.W", glorot((d_h, d_s), rng))
    ps.add("size_head.b", np.zeros((1, d_s)))
    return ps


def encode_views(tape: Tape, leaves: dict[str, Tensor], pooled: Tensor):
    """(HiddenBatch, task logits 3b x C, size vectors 3b x d_s)."""
    if leaves["enc1.W"].shape[0] != pooled.shape[1]:
        raise DimensionError("encode_views", pooled.shape,
                             leaves["enc1.W"].shape)
    ones = tape.constant(np.ones((pooled.shape[0], 1)))

    def affine(x, w, b):
        return tape.add(tape.matmul(x, leaves[w]), tape.matmul(ones, leaves[b]))

    h_t = tape.relu(affine(pooled, "enc1.W", "enc1.b"))
    h_s = tape.relu(affine(pooled, "enc2.W", "enc2.b"))
    t_logits = affine(h_t, "task_head.W", "task_head.b")
    s_vecs = affine(h_s, "size_head.W", "size_head.b")
    return HiddenBatch(h_t=h_t, h_s=h_s), t_logits, s_vecs


def contrastive_loss(tape: Tape, s_vecs: Tensor, tau: float = DEFAULT_TAU) -> Tensor:
    """Batch-mean relative-size contrastive loss over size vectors."""
    if tau <= 0:
        raise ContractError(f"tau must be positive, got {tau}")
    if s_vecs.shape[0] % 3 != 0:
        raise ContractError("contrastive_loss: rows not divisible by 3")
    terms = []
    for i in range(s_vecs.shape[0] // 3):
        s = tape.row(s_vecs, 3 * i)
        s1 = tape.row(s_vecs, 3 * i + 1)
        s2 = tape.row(s_vecs, 3 * i + 2)
        x1 = tape.scale(tape.cosine(s, s1), 1.0 / tau)
        x2 = tape.scale(tape.cosine(s, s2), 1.0 / tau)
        # -log(e^{x1} / (e^{x1} + e^{x2})) = log(e^{x1} + e^{x2}) - x1
        lse = tape.log(tape.add(tape.exp(x1), tape.exp(x2)))
        terms.append(tape.add(lse, tape.scale(x1, -1.0)))
    return mean_of(tape, terms)


def supervision_loss(tape: Tape, t_logits: Tensor, labels: list[int],
                     alpha1: float = 1.0, alpha2: float = 1.0) -> Tensor:
    """Batch-mean alpha1 CE(y, t) + alpha2 CE(y, t^(2)); t^(1) is unsupervised."""
    if t_logits.shape[0] != 3 * len(labels):
        raise ContractError(
            f"supervision_loss: {t_logits.shape[0]} logit rows for "
            f"{len(labels)} labels")
    terms = []
    for i, y in enumerate(labels):
        ce_orig = tape.softmax_xent(tape.row(t_logits, 3 * i), y)
        ce_task = tape.softmax_xent(tape.row(t_logits, 3 * i + 2), y)
        terms.append(tape.add(tape.scale(ce_orig, alpha1),
                              tape.scale(ce_task, alpha2)))
    return mean_of(tape, terms)


def optimal_projection(tape: Tape, batch: HiddenBatch,
                       ridge: float = DEFAULT_RIDGE):
    """(P_opt array, residual D tensor). P_opt carries no tape history."""
    p_opt = least_squares_solve(batch.h_t.value, batch.h_s.value, ridge)
    mapped = tape.matmul(batch.h_t, tape.constant(p_opt))
    d = tape.frobenius(tape.add(mapped, tape.scale(batch.h_s, -1.0)))
    return p_opt, d


def decoupling_loss(tape: Tape, d: Tensor, eps: float = DEFAULT_EPS) -> Tensor:
    """1 / (D^2 + eps); minimizing it pushes the residual D up."""
    if eps <= 0:
        raise ContractError(f"eps must be positive, got {eps}")
    d2 = tape.hadamard(d, d)
    return reciprocal(tape, tape.add(d2, tape.constant(np.float64(eps))))


def total_loss(tape: Tape, l_s: Tensor, l_t: Tensor, l_d: Tensor, d: Tensor,
               beta1: float, beta2: float, beta3: float):
    """(total tensor, LossBreakdown); total = b1 L_s + b2 L_t + b3 L_d."""
    for b in (beta1, beta2, beta3):
        if not np.isfinite(b):
            raise ContractError("loss weights must be finite")
    total = tape.add(tape.add(tape.scale(l_s, beta1), tape.scale(l_t, beta2)),
                     tape.scale(l_d, beta3))
    breakdown = LossBreakdown(
        l_s=l_s.item(), l_t=l_t.item(), l_d=l_d.item(), total=total.item(),
        d=d.item(), beta1=beta1, beta2=beta2, beta3=beta3)
    return total, breakdown
