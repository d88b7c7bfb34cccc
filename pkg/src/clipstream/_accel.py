"""Backend selection for the hot kernels.

Set ``CLIPSTREAM_BACKEND=numpy`` to bypass numba and use the vectorized
numpy kernels instead (slower, but no JIT and easier to debug).
"""
import os

BACKEND = os.environ.get("CLIPSTREAM_BACKEND", "numba").strip().lower()
if BACKEND not in ("numba", "numpy"):
    raise ImportError(f"CLIPSTREAM_BACKEND must be 'numba' or 'numpy', got {BACKEND!r}")

USE_NUMBA = BACKEND == "numba"
if USE_NUMBA:
    try:
        import numba

        # the TBB layer warns on older TBB builds; workqueue is always available and deterministic enough
        if os.environ.get("NUMBA_THREADING_LAYER") is None:
            numba.config.THREADING_LAYER = "workqueue"
    except ImportError:  # pragma: no cover
        USE_NUMBA = False
        BACKEND = "numpy"


def set_threads(n):
    """Cap numba's thread pool. No-op on the numpy backend."""
    if USE_NUMBA and n:
        import numba

        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
