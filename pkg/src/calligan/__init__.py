"""calligan: glyph style transfer with a conditional adversarial network.

A small numpy-based toolkit that learns a mapping from a source font's glyph
images to a target calligraphic style, and measures how close the results get
with stroke-coverage and structural-similarity metrics plus a human
discrimination (Turing-style) test harness.
"""

import os as _os
import sys as _sys

# Single-threaded BLAS keeps float32 reduction order fixed, which the
# bitwise-reproducibility guarantees depend on.  Must happen before numpy
# loads; explicit environment settings win.
if "numpy" not in _sys.modules:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        _os.environ.setdefault(_var, "1")

from .errors import (
    CalliganError,
    ConfigError,
    DataError,
    DimensionError,
    DomainError,
    NumericsError,
    UsageError,
)
from .tensor import (
    Tensor,
    batchnorm,
    concat_channels,
    conv2d,
    conv_transpose2d,
    finite_diff_check,
    fully_connected,
    leaky_relu,
    relu,
    sigmoid,
)

__version__ = "0.1.0"
