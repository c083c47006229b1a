"""Central-difference verification of reverse-mode gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape
from .errors import ContractError, ProbeError
from .params import ParameterSet


@dataclass
class GradCheckReport:
    max_relative_error: float
    per_parameter: dict[str, float] = field(default_factory=dict)
    tolerance: float = 0.0

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance


def _loss_value(loss_fn, params: ParameterSet, name: str) -> float:
    tape = Tape()
    out = loss_fn(params, tape)
    val = out.item()
    if not math.isfinite(val):
        raise ProbeError(f"non-finite loss while probing parameter {name!r}")
    return val


def finite_diff_check(loss_fn, params: ParameterSet, step: float = 1e-5,
                      tolerance: float = 1e-4) -> GradCheckReport:
    """Compare backward() gradients of loss_fn against central differences.

    loss_fn(params, tape) must deterministically build and return a scalar
    tensor on the given tape. Relative error per entry is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    if step <= 0:
        raise ContractError("finite_diff_check: step must be positive")

    tape = Tape()
    loss = loss_fn(params, tape)
    if loss.value.size != 1:
        raise ContractError("finite_diff_check: loss must be scalar")
    analytic = tape.backward(loss).by_name()

    report = GradCheckReport(0.0, {}, tolerance)
    for name in params.names():
        grad = analytic.get(name)
        if grad is None:
            continue
        base = params.values[name]
        worst = 0.0
        flat = base.reshape(-1)
        gflat = grad.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            f_plus = _loss_value(loss_fn, params, name)
            flat[k] = orig - step
            f_minus = _loss_value(loss_fn, params, name)
            flat[k] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(gflat[k])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
        report.per_parameter[name] = worst
        report.max_relative_error = max(report.max_relative_error, worst)
    return report
