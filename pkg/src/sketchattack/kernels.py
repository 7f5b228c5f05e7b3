"""Kernel selection: the compiled extension when importable, else numpy.

Set ``SKETCHATTACK_PURE_PYTHON=1`` to force the fallback.
"""
import os

if os.environ.get("SKETCHATTACK_PURE_PYTHON"):
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        from . import _kernels_py as _impl

IMPLEMENTATION = _impl.IMPLEMENTATION
kth_present = _impl.kth_present
first_present = _impl.first_present
kth_present_batch = _impl.kth_present_batch
bucket_minima = _impl.bucket_minima
lower_median = _impl.lower_median
score_and_promote = _impl.score_and_promote
ScoreBoard = _impl.ScoreBoard
bernoulli_union = _impl.bernoulli_union
