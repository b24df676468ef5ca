"""Shared test configuration.

Pins BLAS to one thread (set before numpy's first import) so the timing-based
assertions see stable numbers, and gives every test an isolated tmp cwd helper.
"""

import os

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
