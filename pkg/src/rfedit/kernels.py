"""Row-wise editing kernels, compiled when available.

The Cython extension ``rfedit._kernels`` is used if it was built; otherwise
(or with ``RFEDIT_PURE_PYTHON=1``) the numpy versions in
``rfedit._kernels_py`` are used. ``BACKEND`` names the active one.

The attention map always uses the numpy version: its batched dot products
go through BLAS, which beats the compiled loop (see benchmarks/).
"""

import os

from rfedit import _kernels_py

if os.environ.get("RFEDIT_PURE_PYTHON"):
    _impl = _kernels_py
else:
    try:
        from rfedit import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "cython"

orthogonal_rows = _impl.orthogonal_rows
fine_edit = _impl.fine_edit
first_token_map = _kernels_py.first_token_map
