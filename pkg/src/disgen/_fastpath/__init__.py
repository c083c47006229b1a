"""Frozen-model forward kernels: compiled core with a pure-Python fallback.

The compiled extension is selected at import when present; set
DISGEN_PURE_PYTHON=1 to force the numpy implementation. `BACKEND` reports
which one is active. Both expose the same two entry points:

    gcn_probs(features, edges, weights, head_w, head_b) -> probs
    gin_probs(features, edges, layers, head_w, head_b) -> probs
"""

import os

if os.environ.get("DISGEN_PURE_PYTHON", "0") not in ("", "0"):
    from . import fallback as _impl
    BACKEND = "python"
else:
    try:
        from . import _fused as _impl  # type: ignore[attr-defined]
        BACKEND = "compiled"
    except ImportError:
        from . import fallback as _impl
        BACKEND = "python"

gcn_probs = _impl.gcn_probs
gin_probs = _impl.gin_probs

__all__ = ["BACKEND", "gcn_probs", "gin_probs"]
