# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Signatures mirror :mod:`hmev._pykernels`."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, expm1, fabs, INFINITY, NAN

cnp.import_array()

cdef double LN2 = 0.6931471805599453


cdef inline double _log1mexp(double a) noexcept nogil:
    # log(1 - exp(-a)), a > 0
    if a <= 0.0:
        return -INFINITY
    if a < LN2:
        return log(-expm1(-a))
    return log1p(-exp(-a))


def weibull_block_sums(const double[::1] logx, const long[::1] offsets,
                       const double[::1] shape, const double[::1] scale):
    """Per-block sums of w = (x/scale)^shape and log(x/scale) * w."""
    cdef Py_ssize_t J = shape.shape[0]
    cdef Py_ssize_t j, i
    cdef double g, ld, r, w, a, b
    out_a = np.zeros(J)
    out_b = np.zeros(J)
    cdef double[::1] A = out_a
    cdef double[::1] B = out_b
    with nogil:
        for j in range(J):
            g = shape[j]
            ld = log(scale[j])
            a = 0.0
            b = 0.0
            for i in range(offsets[j], offsets[j + 1]):
                r = logx[i] - ld
                w = exp(g * r)
                a += w
                b += r * w
            A[j] = a
            B[j] = b
    return out_a, out_b


cdef struct _Blocks:
    # one draw's nonempty blocks, with logs precomputed
    double* g
    double* ld
    double* k
    Py_ssize_t m
    double empty
    double total


cdef inline void _load(_Blocks* bl, const double[:] g, const double[:] d,
                       const long[:] n, Py_ssize_t M) noexcept nogil:
    cdef Py_ssize_t m
    bl.m = 0
    bl.empty = 0.0
    bl.total = M
    for m in range(M):
        if n[m] == 0:
            bl.empty += 1.0
            continue
        bl.g[bl.m] = g[m]
        bl.ld[bl.m] = log(d[m])
        bl.k[bl.m] = <double>n[m]
        bl.m += 1


cdef inline void _mix(_Blocks* bl, double y, bint want_pdf,
                      double* cdf, double* pdf) noexcept nogil:
    # mean over blocks of F^n and of n F^(n-1) f, F Weibull with (g, d)
    cdef Py_ssize_t m
    cdef double c = bl.empty, p = 0.0, ly, w, F, A
    if y <= 0.0:
        cdf[0] = c / bl.total
        pdf[0] = 0.0
        return
    ly = log(y)
    for m in range(bl.m):
        w = exp(bl.g[m] * (ly - bl.ld[m]))
        F = -expm1(-w)
        if F <= 0.0:
            continue
        A = exp((bl.k[m] - 1.0) * log(F))
        c += A * F
        if want_pdf:
            p += bl.k[m] * A * bl.g[m] * w * exp(-w)
    cdf[0] = c / bl.total
    pdf[0] = p / (bl.total * y)


cdef class _Buffers:
    cdef double[::1] g, ld, k

    def __init__(self, Py_ssize_t M):
        self.g = np.empty(max(M, 1))
        self.ld = np.empty(max(M, 1))
        self.k = np.empty(max(M, 1))


cdef inline _Blocks _blocks_from(_Buffers buf) noexcept:
    cdef _Blocks bl
    bl.g = &buf.g[0]
    bl.ld = &buf.ld[0]
    bl.k = &buf.k[0]
    bl.m = 0
    bl.empty = 0.0
    bl.total = 1.0
    return bl


def compound_cdf(const double[::1] y, const double[:, :] shape,
                 const double[:, :] scale, const long[:, :] n):
    """zeta_b(y) = mean_m F(y; theta_bm)^n_bm for every draw b and level y."""
    cdef Py_ssize_t B = shape.shape[0], M = shape.shape[1], P = y.shape[0]
    cdef Py_ssize_t b, k
    cdef double c, p
    out = np.empty((B, P))
    cdef double[:, ::1] o = out
    buf = _Buffers(M)
    cdef _Blocks bl = _blocks_from(buf)
    with nogil:
        for b in range(B):
            _load(&bl, shape[b], scale[b], n[b], M)
            for k in range(P):
                _mix(&bl, y[k], False, &c, &p)
                o[b, k] = c
    return out


def compound_pdf(const double[::1] y, const double[:, :] shape,
                 const double[:, :] scale, const long[:, :] n):
    """Block-maximum density mean_m n F^(n-1) f for every draw and level."""
    cdef Py_ssize_t B = shape.shape[0], M = shape.shape[1], P = y.shape[0]
    cdef Py_ssize_t b, k
    cdef double c, p
    out = np.empty((B, P))
    cdef double[:, ::1] o = out
    buf = _Buffers(M)
    cdef _Blocks bl = _blocks_from(buf)
    with nogil:
        for b in range(B):
            _load(&bl, shape[b], scale[b], n[b], M)
            for k in range(P):
                _mix(&bl, y[k], True, &c, &p)
                o[b, k] = p
    return out


cdef inline double _block_quantile(double p, double g, double ld, double k) noexcept nogil:
    # level where F(y; g, d)^k = p
    return exp(ld + log(-log(-expm1(log(p) / k))) / g)


cdef inline double _max_block_quantile(_Blocks* bl, double p) noexcept nogil:
    cdef Py_ssize_t m
    cdef double q, top = 0.0
    for m in range(bl.m):
        q = _block_quantile(p, bl.g[m], bl.ld[m], bl.k[m])
        if q > top:
            top = q
    return top


def compound_quantile(const double[::1] prob, const double[:, :] shape,
                      const double[:, :] scale, const long[:, :] n, double tol):
    """Invert zeta_b at each probability by safeguarded Newton-bisection.

    zeta_b is at least p at the largest per-block quantile, which caps the
    bracket. Probabilities are visited in increasing order and each solve
    starts from the previous root, where the cdf is below the new target;
    the cap is computed only when a Newton step leaves the bracket. A draw
    whose empty blocks alone carry mass p gets level 0.
    """
    cdef Py_ssize_t B = shape.shape[0], M = shape.shape[1], P = prob.shape[0]
    cdef Py_ssize_t b, kk, k, it
    cdef double p, lo, hi, y, c, f, q, step, prev
    out = np.empty((B, P))
    cdef double[:, ::1] o = out
    order_arr = np.argsort(np.asarray(prob), kind="stable").astype(np.intp)
    cdef Py_ssize_t[::1] order = order_arr
    buf = _Buffers(M)
    cdef _Blocks bl = _blocks_from(buf)
    with nogil:
        for b in range(B):
            _load(&bl, shape[b], scale[b], n[b], M)
            prev = 0.0
            for kk in range(P):
                k = order[kk]
                p = prob[k]
                if bl.empty / bl.total >= p:
                    o[b, k] = 0.0
                    continue
                lo = 0.0
                hi = INFINITY
                if prev > 0.0:
                    y = prev
                else:
                    hi = _max_block_quantile(&bl, p)
                    if not (hi < INFINITY):
                        o[b, k] = INFINITY
                        continue
                    y = 0.5 * hi
                for it in range(200):
                    _mix(&bl, y, True, &c, &f)
                    if c < p:
                        lo = y
                    else:
                        hi = y
                    if f > 0.0:
                        step = (c - p) / f
                        q = y - step
                    else:
                        step = INFINITY
                        q = lo - 1.0
                    if q <= lo or q >= hi or not (q < INFINITY):
                        if not (hi < INFINITY):
                            # the cap is only needed once Newton cannot be trusted
                            hi = _max_block_quantile(&bl, p)
                            if not (hi < INFINITY):
                                y = INFINITY
                                break
                        q = 0.5 * (lo + hi)
                        step = hi - lo
                    y = q
                    if fabs(step) <= tol or hi - lo <= tol:
                        break
                o[b, k] = y
                prev = y
    return out


cdef inline double _log_expit(double u) noexcept nogil:
    if u > 0:
        return -log1p(exp(-u))
    return u - log1p(exp(u))


def hmev_log_density(const double[::1] v, const double[::1] logx, const long[::1] offsets,
                     const double[::1] counts, const double[::1] sum_logx, long N,
                     const double[::1] ig_shape, const double[::1] ig_scale,
                     double lam_a, double lam_b, double const_term):
    """Log-posterior and gradient of the hierarchical model on the unconstrained scale."""
    cdef Py_ssize_t J = counts.shape[0]
    cdef Py_ssize_t j, i, k, off, loc_i, sc_i, pair
    cdef double lp = const_term, u, lam, llam, l1m, ntot = 0.0
    cdef double mu, sig, t, e_t, log_norm, ratio, z, e, lat, dmu, dsig
    cdef double g, ld, r, w, A, Bs, n
    grad_arr = np.zeros(5 + 2 * J)
    cdef double[::1] grad = grad_arr
    cdef double hyp[4]
    with nogil:
        for k in range(4):
            hyp[k] = exp(v[k])
            lp += -ig_shape[k] * v[k] - ig_scale[k] / hyp[k]
            grad[k] = -ig_shape[k] + ig_scale[k] / hyp[k]
        for j in range(J):
            ntot += counts[j]
        u = v[4]
        lam = 1.0 / (1.0 + exp(-u))
        llam = _log_expit(u)
        l1m = _log_expit(-u)
        lp += (lam_a + ntot) * llam + (lam_b + J * N - ntot) * l1m
        grad[4] = lam_a * (1.0 - lam) - lam_b * lam + ntot - J * N * lam
        for pair in range(2):
            if pair == 0:
                loc_i, sc_i, off = 2, 3, 5
            else:
                loc_i, sc_i, off = 0, 1, 5 + J
            mu = hyp[loc_i]
            sig = hyp[sc_i]
            t = mu / sig
            e_t = exp(t) if t < 700.0 else INFINITY
            log_norm = _log1mexp(e_t)
            if t > 6.5:
                ratio = 0.0
            elif e_t > 1e-300:
                ratio = e_t / expm1(e_t)
            else:
                ratio = 1.0
            dmu = 0.0
            dsig = 0.0
            for j in range(J):
                lat = exp(v[off + j])
                z = (lat - mu) / sig
                e = exp(-z)
                lp += -z - e + v[off + j]
                grad[off + j] = lat * (e - 1.0) / sig + 1.0
                dmu += 1.0 - e
                dsig += -1.0 + z - z * e
            lp -= J * (log(sig) + log_norm)
            grad[loc_i] += mu * (dmu / sig - J * ratio / sig)
            grad[sc_i] += sig * (dsig / sig + J * ratio * t / sig)
        for j in range(J):
            g = exp(v[5 + j])
            ld = v[5 + J + j]
            A = 0.0
            Bs = 0.0
            for i in range(offsets[j], offsets[j + 1]):
                r = logx[i] - ld
                w = exp(g * r)
                A += w
                Bs += r * w
            n = counts[j]
            lp += n * v[5 + j] + (g - 1.0) * sum_logx[j] - n * g * ld - A
            grad[5 + j] += n + g * (sum_logx[j] - n * ld - Bs)
            grad[5 + J + j] += g * (A - n)
    if not (lp > -INFINITY and lp < INFINITY) or not np.all(np.isfinite(grad_arr)):
        return -INFINITY, np.zeros(5 + 2 * J)
    return lp, grad_arr
