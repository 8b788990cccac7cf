"""Kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``HMEV_PURE_PYTHON=1`` to force the numpy implementation.
"""
import os

import numpy as np

from . import _pykernels

if os.environ.get("HMEV_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "compiled" if _impl is not _pykernels else "python"


def backend(name=None):
    """Kernel module by name ('compiled' or 'python'); the active one by default."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "compiled":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int_)


def weibull_block_sums(logx, offsets, shape, scale, impl=None):
    impl = impl or _impl
    return impl.weibull_block_sums(_f64(logx), _i64(offsets), _f64(shape), _f64(scale))


def compound_cdf(y, shape, scale, n, impl=None):
    impl = impl or _impl
    return impl.compound_cdf(_f64(np.atleast_1d(y)), _f64(np.atleast_2d(shape)),
                             _f64(np.atleast_2d(scale)), _i64(np.atleast_2d(n)))


def compound_pdf(y, shape, scale, n, impl=None):
    impl = impl or _impl
    return impl.compound_pdf(_f64(np.atleast_1d(y)), _f64(np.atleast_2d(shape)),
                             _f64(np.atleast_2d(scale)), _i64(np.atleast_2d(n)))


def compound_quantile(prob, shape, scale, n, tol, impl=None):
    impl = impl or _impl
    return impl.compound_quantile(_f64(np.atleast_1d(prob)), _f64(np.atleast_2d(shape)),
                                  _f64(np.atleast_2d(scale)), _i64(np.atleast_2d(n)), float(tol))


def hmev_log_density(v, model, impl=None):
    """Hierarchical log-posterior and gradient for ``model`` (an ``HmevModel``)."""
    impl = impl or _impl
    return impl.hmev_log_density(_f64(v), model.logx, model.offsets, model.counts, model.sum_logx,
                                 int(model.N), model.ig_shape, model.ig_scale,
                                 float(model.priors.lam_a), float(model.priors.lam_b), model.const_term)
