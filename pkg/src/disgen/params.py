"""Named parameter storage with per-parameter Adam moment buffers."""

from __future__ import annotations

import hashlib

import numpy as np

from .autodiff import Tape, Tensor
from .errors import ContractError


def glorot(shape, rng: np.random.Generator) -> np.ndarray:
    """Uniform init in +/- sqrt(6 / (fan_in + fan_out))."""
    fan_in, fan_out = (shape[0], shape[-1]) if len(shape) > 1 else (shape[0], shape[0])
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ParameterSet:
    """Dot-path named tensors plus Adam state (m, v, step) per parameter."""

    def __init__(self):
        self.values: dict[str, np.ndarray] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> np.ndarray:
        if name in self.values:
            raise ContractError(f"duplicate parameter path {name!r}")
        a = np.asarray(value, dtype=np.float64)
        self.values[name] = a
        self._m[name] = np.zeros_like(a)
        self._v[name] = np.zeros_like(a)
        return a

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __setitem__(self, name: str, value):
        a = np.asarray(value, dtype=np.float64)
        if name in self.values and a.shape != self.values[name].shape:
            raise ContractError(f"shape change for parameter {name!r}")
        if name not in self.values:
            self.add(name, a)
        else:
            self.values[name] = a

    def __contains__(self, name):
        return name in self.values

    def names(self) -> list[str]:
        return sorted(self.values)

    def leaves(self, tape: Tape) -> dict[str, Tensor]:
        """Register every parameter as a named leaf on a fresh tape."""
        return {name: tape.leaf(self.values[name], name=name) for name in self.names()}

    def adam_step(self, grads: dict[str, np.ndarray], lr=1e-3,
                  beta1=0.9, beta2=0.999, eps=1e-8):
        """One Adam update from a gradient dict (missing names are skipped)."""
        self.step += 1
        t = self.step
        for name in self.names():
            g = grads.get(name)
            if g is None:
                continue
            if g.shape != self.values[name].shape:
                raise ContractError(
                    f"gradient shape {g.shape} != parameter shape "
                    f"{self.values[name].shape} for {name!r}")
            m = self._m[name] = beta1 * self._m[name] + (1 - beta1) * g
            v = self._v[name] = beta2 * self._v[name] + (1 - beta2) * g * g
            mhat = m / (1 - beta1 ** t)
            vhat = v / (1 - beta2 ** t)
            self.values[name] = self.values[name] - lr * mhat / (np.sqrt(vhat) + eps)

    def copy(self) -> "ParameterSet":
        out = ParameterSet()
        for name, v in self.values.items():
            out.add(name, v.copy())
            out._m[name] = self._m[name].copy()
            out._v[name] = self._v[name].copy()
        out.step = self.step
        return out

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in self.names():
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.values[name]).tobytes())
        return h.hexdigest()
