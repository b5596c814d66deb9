"""Hot kernels with a compiled implementation and a pure-Python fallback.

The compiled module is used when it imports; set ``TPGSTREAM_PURE_PYTHON=1``
to force the fallback.
"""

import os

from . import _pykernels as python_backend

compiled_backend = None
if not os.environ.get("TPGSTREAM_PURE_PYTHON"):
    try:
        from . import _ckernels as compiled_backend
    except ImportError:
        compiled_backend = None

_impl = compiled_backend if compiled_backend is not None else python_backend

BACKEND = _impl.BACKEND
spin_us = _impl.spin_us
dag_ranks = _impl.dag_ranks
scc_labels = _impl.scc_labels

__all__ = ["BACKEND", "spin_us", "dag_ranks", "scc_labels",
           "python_backend", "compiled_backend"]
