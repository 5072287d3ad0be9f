"""Hot-loop dispatch.

The compiled Cython extension is used when it was built; otherwise the numpy
fallback in ``_pykernels`` is selected at import. Setting the environment
variable ``CTRELM_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _pykernels

try:
    if os.environ.get("CTRELM_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _kernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"

hash_keys = _impl.hash_keys
coalesce_rows = _impl.coalesce_rows
sgd_epoch = _impl.sgd_epoch

__all__ = ["BACKEND", "hash_keys", "coalesce_rows", "sgd_epoch"]
