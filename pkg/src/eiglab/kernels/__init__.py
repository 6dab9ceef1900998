"""Hot numerical kernels with a compiled core and a numpy fallback.

Estimation cost is dominated by filling pairwise Gaussian log-likelihood
matrices and reducing them with log-mean-exp. Those inner loops live in a
Cython extension (`_ckernels`) when it was built; otherwise the numpy
implementations in `_pykernels` are used. Set ``EIGLAB_KERNELS=py`` or
``EIGLAB_KERNELS=c`` to force a backend (the benchmark uses this); the
default prefers the compiled one.

Both backends are deterministic. They may differ in the last float ulp
because summation order differs, so reproducibility guarantees hold per
backend, not across backends.
"""

from __future__ import annotations

import os

from . import _pykernels

_choice = os.environ.get("EIGLAB_KERNELS", "").strip().lower()
if _choice not in ("", "c", "py"):
    raise RuntimeError(f"EIGLAB_KERNELS must be 'c' or 'py', got {_choice!r}")

_impl = None
if _choice != "py":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        if _choice == "c":
            raise
        _impl = None
if _impl is None:
    _impl = _pykernels

normal_logpdf_mat = _impl.normal_logpdf_mat
normal_logpdf_vec = _impl.normal_logpdf_vec
logmeanexp_2d = _impl.logmeanexp_2d
logmeanexp_1d = _impl.logmeanexp_1d
systematic_resample = _impl.systematic_resample


def backend_name() -> str:
    """Which implementation is active: 'c' or 'py'."""
    return "py" if _impl is _pykernels else "c"


def get_backend(name: str):
    """Return a backend module by name regardless of the active default."""
    if name == "py":
        return _pykernels
    if name == "c":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")
