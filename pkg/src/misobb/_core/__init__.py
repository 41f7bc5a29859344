"""Hot kernels: barrier centering and the two-user grid sweep.

The compiled extension ``_ext`` is used when importable; otherwise the numpy
fallback.  Set ``MISOBB_PURE_PYTHON=1`` to force the fallback.
"""

import importlib
import os

from . import _fallback
from .problem import BarrierProblem, affine_substitute, pack_blocks, phase1_problem

OK, MAX_ITER, STALL = _fallback.OK, _fallback.MAX_ITER, _fallback.STALL

_ext = None
if os.environ.get("MISOBB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        _ext = importlib.import_module(__name__ + "._ext")
    except ImportError:  # extension not built
        _ext = None

BACKEND = "cython" if _ext is not None else "python"
_impl = _ext if _ext is not None else _fallback

evaluate = _impl.evaluate
derivatives = _impl.derivatives
center = _impl.center
grid_pairs = _impl.grid_pairs


def use_backend(name: str) -> None:
    """Switch kernels at runtime (``"python"`` or ``"cython"``); for benchmarks."""
    global BACKEND, _impl, evaluate, derivatives, center, grid_pairs
    if name == "cython":
        if _ext is None:
            raise RuntimeError("compiled extension is not available")
        _impl = _ext
    elif name == "python":
        _impl = _fallback
    else:
        raise ValueError(name)
    BACKEND = name
    evaluate, derivatives = _impl.evaluate, _impl.derivatives
    center, grid_pairs = _impl.center, _impl.grid_pairs


__all__ = [
    "BACKEND", "BarrierProblem", "OK", "MAX_ITER", "STALL", "affine_substitute",
    "center", "derivatives", "evaluate", "grid_pairs", "pack_blocks", "phase1_problem",
    "use_backend",
]
