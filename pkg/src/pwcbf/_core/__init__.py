"""Hot numerical kernels with a compiled backend and a numpy fallback.

The Cython extension ``_speedups`` is used when it was built; otherwise, or
when ``PWCBF_PURE_PYTHON=1`` is set, the numpy implementation in
``_fallback`` is used. Both expose the same functions.
"""

import os

from . import _fallback

BACKEND = "python"
_impl = _fallback
if os.environ.get("PWCBF_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _speedups as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback

phi = _fallback.phi
phi_err = _fallback.phi_err
dphi = _fallback.dphi
ddphi_range = _fallback.ddphi_range
greedy_order = _fallback.greedy_order
relax_windows = _impl.relax_windows
greedy_inner = _impl.greedy_inner
greedy_values = _impl.greedy_values

__all__ = ["BACKEND", "phi", "phi_err", "dphi", "ddphi_range", "relax_windows",
           "greedy_inner", "greedy_values", "greedy_order"]
