"""Numerical probes of the decoupling analysis at desk scale.

A SmoothFunctionPair holds two black-box maps h_t, h_s : R^{2c} -> R^{d_h}
(the composed encoder outputs as functions of the stacked latent vector r).
The probes measure, around an expansion point r0:

- the Taylor system (B, C) of values and first partials, whose linear
  consistency C C+ B = B characterizes when some P matches h_s with h_t P
  up to second order;
- the decay order of the best-linear-fit residual on shrinking spheres:
  pairs whose components depend on disjoint halves of r leave a
  first-order residual (log-log slope near 1), while pairs built from a
  consistent system plus a curvature term decay at second order (slope
  near 2);
- a Monte-Carlo instantiation of the universal upper bound on the
  batch-residual integral over a family of quadratically-enveloped
  residual functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractError, ProbeError

PINV_CUTOFF = 1e-10
CONSISTENCY_TOL = 1e-8
EXACT_FIT_FLOOR = 1e-12
SLOPE_THRESHOLD = 1.8


@dataclass
class SmoothFunctionPair:
    h_t: Callable[[np.ndarray], np.ndarray]
    h_s: Callable[[np.ndarray], np.ndarray]
    r0: np.ndarray
    c: int
    d_h: int
    decoupled: bool
    name: str = ""

    def __post_init__(self):
        self.r0 = np.asarray(self.r0, dtype=np.float64)
        if self.r0.shape != (2 * self.c,):
            raise ContractError(
                f"r0 shape {self.r0.shape} != (2c,) = ({2 * self.c},)")


@dataclass
class TaylorSystem:
    """Row 0: function values at r0; rows 1..2c: first partials, t-block
    coordinates first, then the s-block."""

    b: np.ndarray
    c_mat: np.ndarray


@dataclass
class ConsistencyReport:
    consistent: bool
    p: np.ndarray
    residual: float
    pinv_residual: float


@dataclass
class DecayProbeReport:
    """Per-radius best-fit residual decay.

    exact_fit flags residuals at rounding level on every sphere, which
    happens when d_h meets or exceeds the dimension of the sampled function
    space (e.g. quadratics on a circle span 5 functions); an exact fit
    decays faster than any power, so it classifies as second order.
    """

    radii: list[float]
    max_residuals: list[float]
    residual_over_r: list[float]
    residual_over_r2: list[float]
    slope: float | None
    exact_fit: bool
    p_rank: int

    @property
    def second_order(self) -> bool:
        return self.exact_fit or (self.slope is not None
                                  and self.slope > SLOPE_THRESHOLD)

    @property
    def first_order(self) -> bool:
        return not self.exact_fit and (self.slope is not None
                                       and self.slope < SLOPE_THRESHOLD)

    def to_dict(self):
        return {
            "radii": self.radii,
            "max_residuals": self.max_residuals,
            "residual_over_r": self.residual_over_r,
            "residual_over_r2": self.residual_over_r2,
            "slope": self.slope,
            "exact_fit": self.exact_fit,
            "p_rank": self.p_rank,
        }


def _probe_eval(fn, point, what):
    out = np.asarray(fn(point), dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise ProbeError(f"non-finite {what} at coordinate {point.tolist()}")
    return out


def build_taylor_system(pair: SmoothFunctionPair, r0=None,
                        step: float = 1e-4) -> TaylorSystem:
    """Values and central-difference first partials stacked per the (B, C)
    layout: one value row then one row per input coordinate."""
    if step <= 0:
        raise ContractError("build_taylor_system: step must be positive")
    r0 = pair.r0 if r0 is None else np.asarray(r0, dtype=np.float64)
    dim = 2 * pair.c

    def rows(fn, what):
        out = np.zeros((dim + 1, pair.d_h))
        out[0] = _probe_eval(fn, r0, what)
        for j in range(dim):
            e = np.zeros(dim)
            e[j] = step
            f_plus = _probe_eval(fn, r0 + e, what)
            f_minus = _probe_eval(fn, r0 - e, what)
            out[j + 1] = (f_plus - f_minus) / (2.0 * step)
        return out

    return TaylorSystem(b=rows(pair.h_s, "h_s"), c_mat=rows(pair.h_t, "h_t"))


def solve_matrix_equation(c_mat: np.ndarray, b: np.ndarray) -> ConsistencyReport:
    """Classify C P = B via the pseudo-inverse test C C+ B = B.

    C+ comes from SVD with singular values below 1e-10 * sigma_max dropped;
    inconsistency is a report state, not an error.
    """
    c_mat = np.asarray(c_mat, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if c_mat.shape[0] != b.shape[0]:
        raise ContractError(
            f"row mismatch: C has {c_mat.shape[0]}, B has {b.shape[0]}")
    c_pinv = np.linalg.pinv(c_mat, rcond=PINV_CUTOFF)
    p = c_pinv @ b
    b_norm = float(np.linalg.norm(b))
    pinv_residual = float(np.linalg.norm(c_mat @ (c_pinv @ b) - b))
    return ConsistencyReport(
        consistent=pinv_residual < CONSISTENCY_TOL * (1.0 + b_norm),
        p=p,
        residual=float(np.linalg.norm(c_mat @ p - b)),
        pinv_residual=pinv_residual)


def decoupling_probe(pair: SmoothFunctionPair, radii,
                     n_samples: int = 64, seed: int = 0) -> DecayProbeReport:
    """Fit the best per-radius linear map on sphere samples and report the
    log-log decay slope of the worst-case residual."""
    radii = [float(r) for r in radii]
    if any(r2 >= r1 for r1, r2 in zip(radii, radii[1:])) or radii[-1] <= 0:
        raise ContractError("radii must be strictly decreasing and positive")
    if pair.d_h < 2 * pair.c + 1:
        raise ContractError(
            f"pair violates d_h >= 2c + 1 ({pair.d_h} < {2 * pair.c + 1})")
    if n_samples < pair.d_h:
        raise ContractError(
            f"need at least d_h = {pair.d_h} samples, got {n_samples}")
    rng = np.random.default_rng(seed)
    dim = 2 * pair.c

    max_res = []
    last_rank = 0
    for rho in radii:
        dirs = rng.normal(size=(n_samples, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        points = pair.r0 + rho * dirs
        t_mat = np.stack([_probe_eval(pair.h_t, p, "h_t") for p in points])
        s_mat = np.stack([_probe_eval(pair.h_s, p, "h_s") for p in points])
        p_fit, *_ = np.linalg.lstsq(t_mat, s_mat, rcond=None)
        res = np.linalg.norm(t_mat @ p_fit - s_mat, axis=1)
        max_res.append(float(res.max()))
        last_rank = int(np.linalg.matrix_rank(p_fit))

    exact = all(r < EXACT_FIT_FLOOR for r in max_res)
    slope = None
    if not exact:
        slope = float(np.polyfit(np.log(radii), np.log(max_res), 1)[0])
    return DecayProbeReport(
        radii=radii, max_residuals=max_res,
        residual_over_r=[m / r for m, r in zip(max_res, radii)],
        residual_over_r2=[m / r ** 2 for m, r in zip(max_res, radii)],
        slope=slope, exact_fit=exact, p_rank=last_rank)


# ----------------------------------------------------------------------
# generators for the two probe populations


def make_decoupled_pair(c: int, d_h: int, rng: np.random.Generator,
                        r0=None) -> SmoothFunctionPair:
    """h_t reads only the t-block, h_s only the s-block; gradients nonzero."""
    if d_h < 2 * c + 1:
        raise ContractError(f"d_h must be >= 2c + 1, got {d_h} < {2 * c + 1}")
    r0 = rng.normal(size=2 * c) if r0 is None else np.asarray(r0, float)
    m_t = rng.normal(size=(c, d_h))
    m_s = rng.normal(size=(c, d_h))
    q_t = rng.normal(size=(d_h, c, c)) * 0.3
    q_s = rng.normal(size=(d_h, c, c)) * 0.3
    v_t = rng.normal(size=d_h)
    v_s = rng.normal(size=d_h)

    def h_t(r):
        t = r[:c]
        return v_t + t @ m_t + np.einsum("kij,i,j->k", q_t, t, t)

    def h_s(r):
        s = r[c:]
        return v_s + s @ m_s + np.einsum("kij,i,j->k", q_s, s, s)

    return SmoothFunctionPair(h_t=h_t, h_s=h_s, r0=r0, c=c, d_h=d_h,
                              decoupled=True, name=f"decoupled-c{c}-dh{d_h}")


def make_entangled_pair(c: int, d_h: int, rng: np.random.Generator,
                        r0=None):
    """(pair, P0) where h_s = h_t P0 + a curvature term vanishing to second
    order at r0, so the Taylor system is consistent by construction."""
    if d_h < 2 * c + 1:
        raise ContractError(f"d_h must be >= 2c + 1, got {d_h} < {2 * c + 1}")
    dim = 2 * c
    r0 = rng.normal(size=dim) if r0 is None else np.asarray(r0, float)
    a0 = rng.normal(size=d_h)
    a1 = rng.normal(size=(dim, d_h))
    q_t = rng.normal(size=(d_h, dim, dim)) * 0.3
    q_pert = rng.normal(size=(d_h, dim, dim)) * 0.5
    # keep P0 well-conditioned so the probe cannot trade rank for fit
    p0 = np.eye(d_h) + 0.3 * rng.normal(size=(d_h, d_h))

    def h_t(r):
        d = r - r0
        return a0 + d @ a1 + np.einsum("kij,i,j->k", q_t, d, d)

    def h_s(r):
        d = r - r0
        return h_t(r) @ p0 + np.einsum("kij,i,j->k", q_pert, d, d)

    pair = SmoothFunctionPair(h_t=h_t, h_s=h_s, r0=r0, c=c, d_h=d_h,
                              decoupled=False, name=f"entangled-c{c}-dh{d_h}")
    return pair, p0


def make_consistent_system(m: int, d_h: int, rng: np.random.Generator):
    """(C, B) with B constructed inside range(C)."""
    c_mat = rng.normal(size=(m, d_h))
    b = c_mat @ rng.normal(size=(d_h, d_h))
    return c_mat, b


def make_inconsistent_system(m: int, d_h: int, rng: np.random.Generator,
                             outside_norm: float = 0.5):
    """(C, B) with a rank-deficient C and a B component outside range(C)."""
    if m < 2:
        raise ContractError("need at least 2 rows to leave range(C)")
    rank = m - 1
    c_mat = rng.normal(size=(m, rank)) @ rng.normal(size=(rank, d_h))
    b = c_mat @ rng.normal(size=(d_h, d_h))
    # unit left-null vector of C
    u, s, _ = np.linalg.svd(c_mat)
    null_vec = u[:, -1]
    w = rng.normal(size=d_h)
    w /= np.linalg.norm(w)
    b = b + outside_norm * np.outer(null_vec, w)
    return c_mat, b


# ----------------------------------------------------------------------
# universal upper bound (Monte Carlo)


@dataclass
class BoundReport:
    u: float
    eps0: float
    eps1: float
    v_s: float
    v_sprime: float
    v_eps0: float
    v_sprime_minus_eps0: float
    sup_r_dist: float
    term_ball: float
    term_shell: float
    m0: float

    def to_dict(self):
        return {k: getattr(self, k) for k in (
            "u", "eps0", "eps1", "v_s", "v_sprime", "v_eps0",
            "v_sprime_minus_eps0", "sup_r_dist", "term_ball", "term_shell",
            "m0")}


def _box_contains(lo, hi, points):
    return np.all((points >= lo) & (points <= hi), axis=1)


def upper_bound_estimate(r0, s_box, sprime_box, rho1, rho2, m0, eps0, b,
                         n_samples: int = 100_000, seed: int = 0) -> BoundReport:
    """Monte-Carlo value of the universal bound

        U = 3b eps0^2 V_{ball} / (rho2 V_S) + 3b eps1 V_{S' \\ ball} sup||r'-r0|| / V_S + m0

    where ball = { ||r - r0|| < eps0 / rho2 } and eps1 is the smallest value
    whose ball covers S'. Subset volumes are sample fractions of the exact
    box volume of S; sup||r' - r0|| is taken over the S' \\ ball samples.
    """
    r0 = np.asarray(r0, dtype=np.float64)
    s_lo, s_hi = (np.asarray(x, dtype=np.float64) for x in s_box)
    sp_lo, sp_hi = (np.asarray(x, dtype=np.float64) for x in sprime_box)
    if not (0 < rho1 < rho2):
        raise ContractError(f"need 0 < rho1 < rho2, got {rho1}, {rho2}")
    if np.any(sp_lo < s_lo) or np.any(sp_hi > s_hi):
        raise ContractError("S' must be contained in S")

    # farthest corner of S' from r0 gives the covering radius exactly
    corner = np.maximum(np.abs(sp_lo - r0), np.abs(sp_hi - r0))
    eps1 = rho2 * float(np.linalg.norm(corner))
    if eps0 >= eps1:
        raise ContractError(f"eps0 must be < eps1 = {eps1}, got {eps0}")

    rng = np.random.default_rng(seed)
    samples = rng.uniform(s_lo, s_hi, size=(n_samples, r0.size))
    v_s = float(np.prod(s_hi - s_lo))
    dist = np.linalg.norm(samples - r0, axis=1)
    in_ball = dist < eps0 / rho2
    in_sprime = _box_contains(sp_lo, sp_hi, samples)
    shell = in_sprime & ~in_ball

    v_eps0 = v_s * float(np.mean(in_ball))
    v_sprime = v_s * float(np.mean(in_sprime))
    v_shell = v_s * float(np.mean(shell))
    sup_r = float(dist[shell].max()) if shell.any() else 0.0

    term_ball = 3 * b * eps0 ** 2 * v_eps0 / (rho2 * v_s)
    term_shell = 3 * b * eps1 * v_shell * sup_r / v_s
    return BoundReport(
        u=term_ball + term_shell + m0, eps0=eps0, eps1=eps1, v_s=v_s,
        v_sprime=v_sprime, v_eps0=v_eps0, v_sprime_minus_eps0=v_shell,
        sup_r_dist=sup_r, term_ball=term_ball, term_shell=term_shell, m0=m0)


def make_bounded_residual(r0, rho1, rho2, d_h, rng: np.random.Generator):
    """One member of the bounded family: ||y(r)|| sits strictly inside the
    (rho1, rho2) quadratic envelope everywhere."""
    r0 = np.asarray(r0, dtype=np.float64)
    direction = rng.normal(size=d_h)
    direction /= np.linalg.norm(direction)
    w = rng.normal(size=r0.size)
    phase = rng.normal()
    lo, hi = rho1 + 0.1 * (rho2 - rho1), rho1 + 0.9 * (rho2 - rho1)

    def y(r):
        d = r - r0
        gate = 1.0 / (1.0 + math.exp(-(float(w @ d) + phase)))
        scale = lo + (hi - lo) * gate
        return scale * float(d @ d) * direction

    return y


def residual_integral(y, r0, s_box, b, n_samples: int = 100_000,
                      seed: int = 0) -> float:
    """Monte-Carlo 3b * integral of ||y|| over S divided by V_S."""
    s_lo, s_hi = (np.asarray(x, dtype=np.float64) for x in s_box)
    rng = np.random.default_rng(seed)
    samples = rng.uniform(s_lo, s_hi, size=(n_samples, np.size(s_lo)))
    norms = [float(np.linalg.norm(y(p))) for p in samples]
    return 3 * b * float(np.mean(norms))
