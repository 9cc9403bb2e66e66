"""Pick the quotient filter kernel at import time.

The compiled kernel is used when it was built; setting ``QFMAPLET_PURE_PYTHON=1``
forces the pure-Python fallback (handy for debugging and for the backend
equivalence tests).
"""

import os

from qfmaplet import _kernel_py

PURE_KERNEL = _kernel_py.QuotientKernel

if os.environ.get("QFMAPLET_PURE_PYTHON", "") not in ("", "0"):
    QuotientKernel = PURE_KERNEL
    COMPILED_KERNEL = None
else:
    try:
        from qfmaplet._kernel import QuotientKernel as COMPILED_KERNEL
    except ImportError:
        COMPILED_KERNEL = None
        QuotientKernel = PURE_KERNEL
    else:
        QuotientKernel = COMPILED_KERNEL

BACKEND = "compiled" if QuotientKernel is not PURE_KERNEL else "python"
