"""Search kernel backend selection.

The compiled extension is used when importable; set ``FACETRET_PURE=1`` to
force the NumPy fallback.
"""
import os

if os.environ.get("FACETRET_PURE", "") not in ("", "0"):
    from . import _kernels_py as impl
else:
    try:
        from . import _kernels as impl
    except ImportError:
        from . import _kernels_py as impl

BACKEND = impl.BACKEND
score = impl.score
rank_in_pool = impl.rank_in_pool
batch_rank = impl.batch_rank
topk = impl.topk
