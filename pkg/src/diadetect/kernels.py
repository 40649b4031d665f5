"""Kernel backend selection.

The compiled extension is used when importable; set ``DIADETECT_PURE_PYTHON=1``
to force the numpy fallback (used by the backend-agreement tests and the
benchmark).
"""

import os

from . import _pykernels

python_backend = _pykernels

if os.environ.get("DIADETECT_PURE_PYTHON"):
    compiled_backend = None
else:
    try:
        from . import _kernels as compiled_backend
    except ImportError:
        compiled_backend = None

active = compiled_backend or python_backend
BACKEND = "cython" if compiled_backend is not None else "python"

build_tree = active.build_tree
predict_forest = active.predict_forest
c_steps = active.c_steps
mcd_search = active.mcd_search
