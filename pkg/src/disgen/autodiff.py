"""Define-by-run reverse-mode differentiation on dense float64 arrays.

A :class:`Tape` records every primitive application as a node; calling
:meth:`Tape.backward` on a scalar node runs reverse accumulation over the
recorded program. Tapes are cheap and rebuilt per batch.

Supported primitive kinds (see :meth:`Tape.apply`):

    matmul, add, scale, hadamard, relu, row_mean, log, exp, cosine,
    softmax_xent, frobenius, transpose, row

Only scalar-times-tensor broadcasting is allowed; every other shape
coercion must be made explicit by the caller (e.g. bias rows via an
outer product with a column of ones). This keeps each vector-Jacobian
product a one-liner that can be audited against the forward formula.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError, DomainError

_COS_NORM_FLOOR = 1e-12


def _as_f64(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


class Tensor:
    """One node on a tape: a value plus references to its inputs."""

    __slots__ = ("tape", "idx", "value", "op", "parents", "vjps", "name")

    def __init__(self, tape, idx, value, op, parents, vjps, name=None):
        self.tape = tape
        self.idx = idx
        self.value = value
        self.op = op
        self.parents = parents
        self.vjps = vjps
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ContractError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.value.reshape(()))

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"<Tensor #{self.idx} {self.op} shape={self.shape}{tag}>"


class BackwardResult:
    """Gradient accumulators produced by one backward pass."""

    def __init__(self, grads, nodes):
        self._grads = grads
        self._nodes = nodes

    def of(self, tensor: Tensor) -> np.ndarray:
        return self._grads[tensor.idx]

    def by_name(self) -> dict[str, np.ndarray]:
        return {n.name: self._grads[n.idx] for n in self._nodes if n.name is not None}


class Tape:
    """Append-only computation record; every node's inputs precede it."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    # ------------------------------------------------------------------
    # node construction

    def _record(self, value, op, parents=(), vjps=(), name=None) -> Tensor:
        t = Tensor(self, len(self.nodes), value, op, tuple(parents), tuple(vjps), name)
        self.nodes.append(t)
        return t

    def leaf(self, value, name=None) -> Tensor:
        """Register an input tensor. Named leaves are reported by backward()."""
        return self._record(_as_f64(value), "leaf", name=name)

    def constant(self, value) -> Tensor:
        return self._record(_as_f64(value), "const")

    # ------------------------------------------------------------------
    # primitives

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
            raise DimensionError("matmul", a.shape, b.shape)
        out = a.value @ b.value
        return self._record(
            out, "matmul", (a, b),
            (lambda g: g @ b.value.T, lambda g: a.value.T @ g),
        )

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise DimensionError("add", a.shape, b.shape)
        return self._record(a.value + b.value, "add", (a, b),
                            (lambda g: g, lambda g: g))

    def scale(self, t: Tensor, c) -> Tensor:
        """c * t for a python float or a scalar tensor c."""
        if isinstance(c, Tensor):
            if c.value.size != 1:
                raise DimensionError("scale", c.shape, t.shape,
                                     detail="scale factor must be scalar")
            cv = float(c.value.reshape(()))
            return self._record(
                cv * t.value, "scale", (t, c),
                (lambda g: cv * g,
                 lambda g: _as_f64(np.sum(g * t.value)).reshape(c.shape)),
            )
        cv = float(c)
        return self._record(cv * t.value, "scale", (t,), (lambda g: cv * g,))

    def hadamard(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise DimensionError("hadamard", a.shape, b.shape)
        return self._record(a.value * b.value, "hadamard", (a, b),
                            (lambda g: g * b.value, lambda g: g * a.value))

    def relu(self, t: Tensor) -> Tensor:
        mask = t.value > 0.0
        return self._record(np.where(mask, t.value, 0.0), "relu", (t,),
                            (lambda g: g * mask,))

    def row_mean(self, t: Tensor) -> Tensor:
        """Mean over rows of an m x n matrix -> length-n vector."""
        if t.value.ndim != 2:
            raise DimensionError("row_mean", t.shape, detail="expects a matrix")
        m = t.shape[0]
        return self._record(t.value.mean(axis=0), "row_mean", (t,),
                            (lambda g: np.broadcast_to(g / m, t.shape).copy(),))

    def log(self, t: Tensor) -> Tensor:
        if np.any(t.value <= 0.0):
            raise DomainError(f"log: non-positive input (min={t.value.min()})")
        return self._record(np.log(t.value), "log", (t,),
                            (lambda g: g / t.value,))

    def exp(self, t: Tensor) -> Tensor:
        out = np.exp(t.value)
        return self._record(out, "exp", (t,), (lambda g: g * out,))

    def cosine(self, v: Tensor, w: Tensor) -> Tensor:
        """Cosine similarity of two equal-length vectors -> scalar in [-1, 1].

        Norms are floored at 1e-12 so zero vectors yield 0 instead of NaN;
        the backward pass uses the same flooring.
        """
        if v.value.ndim != 1 or w.value.ndim != 1 or v.shape != w.shape:
            raise DimensionError("cosine", v.shape, w.shape)
        nv = max(float(np.linalg.norm(v.value)), _COS_NORM_FLOOR)
        nw = max(float(np.linalg.norm(w.value)), _COS_NORM_FLOOR)
        c = float(v.value @ w.value) / (nv * nw)
        out = _as_f64(c)

        def d_v(g):
            gs = float(g.reshape(()))
            return gs * (w.value / (nv * nw) - c * v.value / (nv * nv))

        def d_w(g):
            gs = float(g.reshape(()))
            return gs * (v.value / (nv * nw) - c * w.value / (nw * nw))

        return self._record(out, "cosine", (v, w), (d_v, d_w))

    def softmax_xent(self, logits: Tensor, label: int) -> Tensor:
        """Fused softmax + cross-entropy of a logit vector against a class index."""
        if logits.value.ndim != 1:
            raise DimensionError("softmax_xent", logits.shape,
                                 detail="expects a logit vector")
        if not 0 <= label < logits.shape[0]:
            raise ContractError(
                f"softmax_xent: label {label} outside [0, {logits.shape[0]})")
        z = logits.value
        zmax = z.max()
        lse = zmax + np.log(np.sum(np.exp(z - zmax)))
        out = _as_f64(lse - z[label])
        probs = np.exp(z - lse)

        def d_logits(g):
            gs = float(g.reshape(()))
            d = probs.copy()
            d[label] -= 1.0
            return gs * d

        return self._record(out, "softmax_xent", (logits,), (d_logits,))

    def frobenius(self, t: Tensor) -> Tensor:
        """Frobenius norm -> scalar; gradient is t / ||t|| (zero at the origin)."""
        out = float(np.linalg.norm(t.value))

        def d_t(g):
            if out == 0.0:
                return np.zeros_like(t.value)
            return float(g.reshape(())) * t.value / out

        return self._record(_as_f64(out), "frobenius", (t,), (d_t,))

    def transpose(self, t: Tensor) -> Tensor:
        if t.value.ndim != 2:
            raise DimensionError("transpose", t.shape, detail="expects a matrix")
        return self._record(t.value.T.copy(), "transpose", (t,),
                            (lambda g: g.T.copy(),))

    def row(self, t: Tensor, i: int) -> Tensor:
        """Select row i of a matrix as a vector (explicit selector, not a view)."""
        if t.value.ndim != 2:
            raise DimensionError("row", t.shape, detail="expects a matrix")
        if not 0 <= i < t.shape[0]:
            raise ContractError(f"row: index {i} outside [0, {t.shape[0]})")

        def d_t(g):
            out = np.zeros_like(t.value)
            out[i] = g
            return out

        return self._record(t.value[i].copy(), "row", (t,), (d_t,))

    _KINDS = ("matmul", "add", "scale", "hadamard", "relu", "row_mean", "log",
              "exp", "cosine", "softmax_xent", "frobenius", "transpose", "row")

    def apply(self, kind: str, *args) -> Tensor:
        """Dispatch a primitive by id; see the module docstring for the set."""
        if kind not in self._KINDS:
            raise ContractError(f"unknown primitive kind {kind!r}")
        return getattr(self, kind)(*args)

    # ------------------------------------------------------------------
    # reverse pass

    def backward(self, root: Tensor) -> BackwardResult:
        """Reverse accumulation of d(root)/d(node) for every node.

        root must be a scalar node on this tape. Accumulators are
        zero-initialized, so leaves unreachable from root report exact zeros.
        """
        if root.tape is not self:
            raise ContractError("backward: root belongs to a different tape")
        if root.value.size != 1:
            raise ContractError(
                f"backward: root must be scalar, got shape {root.shape}")
        grads = [np.zeros_like(n.value) for n in self.nodes]
        grads[root.idx] = np.ones_like(root.value)
        reached = {root.idx}
        for node in reversed(self.nodes[: root.idx + 1]):
            if node.idx not in reached or not node.parents:
                continue
            g = grads[node.idx]
            for parent, vjp in zip(node.parents, node.vjps):
                grads[parent.idx] = grads[parent.idx] + vjp(g)
                reached.add(parent.idx)
        return BackwardResult(grads, self.nodes)

    def assert_all_finite(self):
        """Raise if any recorded forward value is NaN or Inf."""
        for n in self.nodes:
            if not np.all(np.isfinite(n.value)):
                raise DomainError(f"non-finite value at node {n!r}")


# ----------------------------------------------------------------------
# convenience compositions (pure sugar over the primitive set)

def subtract(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    return tape.add(a, tape.scale(b, -1.0))

def reciprocal(tape: Tape, t: Tensor) -> Tensor:
    """1/t for positive scalar t, expressed as exp(-log t)."""
    return tape.exp(tape.scale(tape.log(t), -1.0))

def mean_of(tape: Tape, terms: list[Tensor]) -> Tensor:
    """Arithmetic mean of scalar tensors via chained adds."""
    if not terms:
        raise ContractError("mean_of: empty term list")
    total = terms[0]
    for t in terms[1:]:
        total = tape.add(total, t)
    return tape.scale(total, 1.0 / len(terms))
