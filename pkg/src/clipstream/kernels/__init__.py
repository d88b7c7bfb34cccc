"""Hot numeric kernels; each module exports the numba or numpy variant per ``CLIPSTREAM_BACKEND``."""
from .._accel import BACKEND, USE_NUMBA

__all__ = ["BACKEND", "USE_NUMBA"]
