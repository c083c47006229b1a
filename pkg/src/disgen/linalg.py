"""Ridge-regularized least-squares projection solver.

Solves for the matrix P minimizing ||A P - B||_F (plus an optional ridge
term) through the normal equations. The result is a plain array with no
differentiation history; callers that need gradients treat it as a
constant (see :mod:`disgen.disentangle` for why that is sound).
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import ContractError, SingularityError

COND_LIMIT = 1e12


def least_squares_solve(a: np.ndarray, b: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Return P = (A^T A + ridge I)^{-1} A^T B via Cholesky.

    With ridge = 0 this is the exact normal-equations solution; the Gram
    matrix is then checked for conditioning first and a SingularityError
    (advising ridge > 0) is raised when its condition estimate exceeds 1e12.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ContractError(
            f"least_squares_solve: incompatible shapes {a.shape} and {b.shape}")
    if a.shape[0] < 1:
        raise ContractError("least_squares_solve: need at least one row")
    if ridge < 0:
        raise ContractError("least_squares_solve: ridge must be nonnegative")

    gram = a.T @ a
    if ridge > 0:
        gram = gram + ridge * np.eye(gram.shape[0])
    else:
        cond = np.linalg.cond(gram)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise SingularityError(
                f"normal-equations matrix is numerically singular "
                f"(condition estimate {cond:.3e} > {COND_LIMIT:.0e}); "
                f"pass a positive ridge")
    rhs = a.T @ b
    try:
        c, low = scipy.linalg.cho_factor(gram)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - cond guard first
        raise SingularityError(str(exc)) from exc
    return scipy.linalg.cho_solve((c, low), rhs)


def projection_residual(a: np.ndarray, b: np.ndarray, p: np.ndarray) -> float:
    """Frobenius norm of A P - B."""
    return float(np.linalg.norm(a @ p - b))
