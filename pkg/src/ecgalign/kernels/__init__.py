"""Hot-kernel backend selection, fixed at import time.

With the compiled extension present, each kernel binds to whichever
implementation measures faster (benchmarks/bench_kernels.py): the fused
layer-norm, GELU, and AdamW loops come from the extension, while softmax
stays on numpy, whose vectorized exp beats a scalar C loop. Without the
extension everything falls back to numpy. ``ECGALIGN_KERNELS=numpy`` or
``=compiled`` forces a uniform backend (forcing ``compiled`` raises if the
extension was never built).
"""

from __future__ import annotations

import os

from . import _numpy

_forced = os.environ.get("ECGALIGN_KERNELS", "").strip().lower()

if _forced == "numpy":
    _ext = None
elif _forced == "compiled":
    from . import _compiled as _ext  # type: ignore[no-redef]
else:
    try:
        from . import _compiled as _ext  # type: ignore[no-redef]
    except ImportError:
        _ext = None

if _ext is None:
    BACKEND: str = "numpy"
    gelu_fwd = _numpy.gelu_fwd
    gelu_bwd = _numpy.gelu_bwd
    softmax_fwd = _numpy.softmax_fwd
    softmax_bwd = _numpy.softmax_bwd
    layer_norm_fwd = _numpy.layer_norm_fwd
    layer_norm_bwd = _numpy.layer_norm_bwd
    adamw_update = _numpy.adamw_update
else:
    BACKEND = "compiled"
    gelu_fwd = _ext.gelu_fwd
    gelu_bwd = _ext.gelu_bwd
    softmax_fwd = _numpy.softmax_fwd if _forced != "compiled" else _ext.softmax_fwd
    softmax_bwd = _numpy.softmax_bwd if _forced != "compiled" else _ext.softmax_bwd
    layer_norm_fwd = _ext.layer_norm_fwd
    layer_norm_bwd = _ext.layer_norm_bwd
    adamw_update = _ext.adamw_update
