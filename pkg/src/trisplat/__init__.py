"""Differentiable triangle splatting on the CPU."""

import numba

# prefer OpenMP / workqueue; an outdated system TBB only produces a warning
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

__version__ = "0.1.0"
