"""Hot loops, dispatched to the compiled extension when it is importable.

Set ``GRIDFRAG_PURE_PYTHON=1`` before import to force the numpy versions.

``logistic_sum(u, v)``
    ``out[i] = sum_j logistic(u[i] - v[j])`` with the exponent clamped to +-700.
``poisson_loglik(x, counts, hours, alpha, beta, n)``
    Poisson log-likelihood of grouped rows, without the ``log y!`` constant.
``poisson_mixture_pmf(lam, ymax)``
    Mean and mean-square of ``Poisson(lam[d]).pmf(0..ymax)`` over ``d``.
"""

import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if not os.environ.get("GRIDFRAG_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def _resolve(impl):
    if impl is None:
        return _impl
    if isinstance(impl, str):
        return implementations()[impl]
    return impl


def _vec(a):
    return np.ascontiguousarray(a, dtype=np.float64).reshape(-1)


def logistic_sum(u, v, impl=None):
    impl = _resolve(impl)
    return impl.logistic_sum(_vec(u), _vec(v))


def poisson_loglik(x, counts, hours, alpha, beta, n_components, impl=None):
    impl = _resolve(impl)
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return float(
        impl.poisson_loglik(x, _vec(counts), _vec(hours), _vec(alpha), _vec(beta), float(n_components))
    )


def poisson_mixture_pmf(lam, ymax, impl=None):
    impl = _resolve(impl)
    return impl.poisson_mixture_pmf(_vec(lam), int(ymax))


def implementations():
    """Return the available backends as ``{name: module}``; ``impl=`` accepts either."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels

        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
