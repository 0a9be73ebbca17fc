"""Selects the compiled block kernel when it was built, else the numpy one.

Set ``JLBO_PURE_PYTHON=1`` to force the numpy implementation.
"""

import os

from . import _kernels_py

BACKEND = "python"
block_terms = _kernels_py.block_terms

if os.environ.get("JLBO_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        block_terms = _compiled.block_terms
        BACKEND = "cython"
