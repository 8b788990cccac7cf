"""Pure numpy implementations of the hot loops (fallback for the compiled core)."""
import numpy as np

_CHUNK = 2_000_000  # max elements of a (draws, levels, blocks) temporary


def _log1mexp(a):
    with np.errstate(divide="ignore"):
        small = a < np.log(2.0)
        return np.where(small, np.log(-np.expm1(-np.where(small, a, 1.0))),
                        np.log1p(-np.exp(-np.where(small, 1.0, a))))


def weibull_block_sums(logx, offsets, shape, scale):
    """Per-block sums of w = (x/scale)^shape and log(x/scale) * w."""
    counts = np.diff(offsets)
    block = np.repeat(np.arange(len(shape)), counts)
    r = logx - np.log(scale)[block]
    w = np.exp(shape[block] * r)
    J = len(shape)
    return np.bincount(block, w, minlength=J), np.bincount(block, r * w, minlength=J)


def _terms(y, g, d, n):
    # y: (P,), g/d/n: (b, M) -> cdf and pdf of shape (b, P)
    y = y[None, :, None]
    g = g[:, None, :]
    d = d[:, None, :]
    k = n[:, None, :].astype(float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        pos = y > 0
        r = np.log(np.where(pos, y, 1.0) / d)
        w = np.exp(g * r)
        lF = np.where(pos, _log1mexp(w), -np.inf)
        cdf = np.where(k == 0, 1.0, np.exp(k * lF))
        logf = np.log(g / d) + (g - 1.0) * r - w
        pdf = np.where((k == 0) | ~pos, 0.0, np.exp(np.log(np.maximum(k, 1)) + (k - 1) * lF + logf))
    return cdf.mean(axis=2), pdf.mean(axis=2)


def _chunks(B, P, M):
    step = max(1, _CHUNK // max(1, P * M))
    for start in range(0, B, step):
        yield slice(start, min(B, start + step))


def compound_cdf(y, shape, scale, n):
    out = np.empty((shape.shape[0], len(y)))
    for sl in _chunks(shape.shape[0], len(y), shape.shape[1]):
        out[sl] = _terms(y, shape[sl], scale[sl], n[sl])[0]
    return out


def compound_pdf(y, shape, scale, n):
    out = np.empty((shape.shape[0], len(y)))
    for sl in _chunks(shape.shape[0], len(y), shape.shape[1]):
        out[sl] = _terms(y, shape[sl], scale[sl], n[sl])[1]
    return out


def _cdf_rows(y, g, d, n):
    # one level per draw: y (R,), g/d/n (R, M) -> (R,)
    k = n.astype(float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        pos = (y > 0)[:, None]
        w = np.exp(g * np.log(np.where(pos, y[:, None], 1.0) / d))
        lF = np.where(pos, _log1mexp(w), -np.inf)
        return np.where(k == 0, 1.0, np.exp(k * lF)).mean(axis=1)


def compound_quantile(prob, shape, scale, n, tol):
    """Vectorised bisection over all draws, one probability at a time."""
    B, M = shape.shape
    out = np.empty((B, len(prob)))
    k = np.maximum(n, 1).astype(float)
    empty_frac = (n == 0).mean(axis=1)
    for j, p in enumerate(prob):
        with np.errstate(divide="ignore", invalid="ignore"):
            qb = scale * (-np.log(-np.expm1(np.log(p) / k))) ** (1.0 / shape)
        hi = np.where(n > 0, qb, 0.0).max(axis=1)
        lo = np.zeros(B)
        while True:
            active = np.flatnonzero(hi - lo > tol)
            if active.size == 0:
                break
            mid = 0.5 * (lo[active] + hi[active])
            below = _cdf_rows(mid, shape[active], scale[active], n[active]) < p
            lo[active[below]] = mid[below]
            hi[active[~below]] = mid[~below]
        q = 0.5 * (lo + hi)
        q[empty_frac >= p] = 0.0
        out[:, j] = q
    return out


def _log_expit(u):
    return -np.logaddexp(0.0, -u)


def _truncation_terms(t):
    # log(1 - G(0)) for a Gumbel with loc/scale = t, and its derivative in t
    e = np.exp(min(t, 700.0))
    log_norm = float(_log1mexp(np.asarray(e)))
    if t > 6.5:
        return log_norm, 0.0
    return log_norm, (e / np.expm1(e) if e > 1e-300 else 1.0)


def hmev_log_density(v, logx, offsets, counts, sum_logx, N, ig_shape, ig_scale,
                     lam_a, lam_b, const_term):
    """Log-posterior and gradient of the hierarchical model on the unconstrained scale."""
    J = len(counts)
    grad = np.zeros(5 + 2 * J)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        hyp = np.exp(v[:4])
        lp = const_term + np.sum(-ig_shape * v[:4] - ig_scale / hyp)
        grad[:4] = -ig_shape + ig_scale / hyp
        u = v[4]
        lam = 1.0 / (1.0 + np.exp(-u))
        n_tot = counts.sum()
        lp += (lam_a + n_tot) * _log_expit(u) + (lam_b + J * N - n_tot) * _log_expit(-u)
        grad[4] = lam_a * (1 - lam) - lam_b * lam + n_tot - J * N * lam
        ug, ud = v[5:5 + J], v[5 + J:]
        gam, dlt = np.exp(ug), np.exp(ud)
        for lat, uu, loc_i, sc_i, off in ((gam, ug, 2, 3, 5), (dlt, ud, 0, 1, 5 + J)):
            mu, sig = hyp[loc_i], hyp[sc_i]
            z = (lat - mu) / sig
            e = np.exp(-z)
            t = mu / sig
            log_norm, ratio = _truncation_terms(t)
            lp += np.sum(-z - e + uu) - J * (np.log(sig) + log_norm)
            grad[off:off + J] = lat * (e - 1.0) / sig + 1.0
            grad[loc_i] += mu * (np.sum(1.0 - e) / sig - J * ratio / sig)
            grad[sc_i] += sig * (np.sum(-1.0 + z - z * e) / sig + J * ratio * t / sig)
        A, Bs = weibull_block_sums(logx, offsets, gam, dlt)
        lp += np.sum(counts * ug + (gam - 1.0) * sum_logx - counts * gam * ud - A)
        grad[5:5 + J] += counts + gam * (sum_logx - counts * ud - Bs)
        grad[5 + J:] += gam * (A - counts)
    if not np.isfinite(lp) or not np.all(np.isfinite(grad)):
        return -np.inf, np.zeros(5 + 2 * J)
    return float(lp), grad
