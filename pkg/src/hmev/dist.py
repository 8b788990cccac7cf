"""Univariate distributions used by the models and the scenario generator.

Every distribution is a small frozen dataclass exposing ``logpdf``, ``cdf``,
``quantile``, ``grad_logpdf`` and ``sample``. Log-densities return ``-inf``
outside the support; only invalid parameters raise.

``grad_logpdf`` returns an array whose leading axis runs over the parameters
(in field order) followed by the argument ``x`` for continuous families.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

XI_EPS = 1e-8  # |xi| below this uses the exponential / Gumbel limit
EULER_GAMMA = float(np.euler_gamma)


class ParameterError(ValueError):
    """Invalid distribution parameters."""


class DomainError(ValueError):
    """Argument outside the domain of a function (e.g. a probability not in (0, 1))."""


def _positive(name, value):
    if not np.all(np.asarray(value) > 0) or not np.all(np.isfinite(value)):
        raise ParameterError(f"{name} must be positive and finite, got {value!r}")


def _check_prob(p):
    p = np.asarray(p, dtype=float)
    if np.any(~(p > 0)) or np.any(~(p < 1)):
        raise DomainError("probability must lie strictly inside (0, 1)")
    return p


def _out(value):
    value = np.asarray(value, dtype=float)
    return value.item() if value.ndim == 0 else value


def log1mexp(a):
    """log(1 - exp(-a)) for a > 0, accurate for small and large a."""
    a = np.asarray(a, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(a < np.log(2.0), np.log(-np.expm1(-np.minimum(a, np.log(2.0)))),
                        np.log1p(-np.exp(-np.maximum(a, np.log(2.0)))))


def _xi_series(xi, z):
    """q = log1p(xi z)/xi and dq/dxi, switching to series expansions near xi = 0."""
    xi = np.asarray(xi, dtype=float)
    z = np.asarray(z, dtype=float)
    small = np.abs(xi) < 1e-5
    xs = np.where(small, 1.0, xi)
    t = 1.0 + xi * z
    with np.errstate(divide="ignore", invalid="ignore"):
        q_big = np.log1p(xs * z) / xs
        dq_big = (z / t - q_big) / xs
    q_small = z - xi * z**2 / 2 + xi**2 * z**3 / 3
    dq_small = -(z**2) / 2 + 2 * xi * z**3 / 3 - 3 * xi**2 * z**4 / 4
    zero = np.abs(xi) < XI_EPS
    q = np.where(zero, z, np.where(small, q_small, q_big))
    dq = np.where(zero, -(z**2) / 2, np.where(small, dq_small, dq_big))
    return q, dq


@dataclass(frozen=True)
class Weibull:
    shape: float
    scale: float

    def __post_init__(self):
        _positive("Weibull shape", self.shape)
        _positive("Weibull scale", self.scale)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        g, d = self.shape, self.scale
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.log(np.where(x > 0, x, 1.0) / d)
            lp = np.log(g / d) + (g - 1) * r - np.exp(g * r)
            if g == 1:
                lp = np.where(x == 0, -np.log(d), lp)
            elif g < 1:
                lp = np.where(x == 0, np.inf, lp)
            else:
                lp = np.where(x == 0, -np.inf, lp)
        return _out(np.where(x < 0, -np.inf, lp))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        w = (np.maximum(x, 0.0) / self.scale) ** self.shape
        return _out(-np.expm1(-w))

    def sf(self, x):
        x = np.asarray(x, dtype=float)
        return _out(np.exp(-((np.maximum(x, 0.0) / self.scale) ** self.shape)))

    def quantile(self, p):
        p = _check_prob(p)
        return _out(self.scale * (-np.log1p(-p)) ** (1.0 / self.shape))

    def grad_logpdf(self, x):
        x = np.asarray(x, dtype=float)
        g, d = self.shape, self.scale
        r = np.log(x / d)
        w = np.exp(g * r)
        return np.array([1.0 / g + r - r * w, g * (w - 1.0) / d, ((g - 1.0) - g * w) / x])

    def mean(self):
        return self.scale * special.gamma(1.0 + 1.0 / self.shape)

    def var(self):
        return self.scale**2 * (special.gamma(1 + 2 / self.shape) - special.gamma(1 + 1 / self.shape) ** 2)

    def sample(self, rng, size=None):
        u = rng.random(size)
        return self.scale * (-np.log1p(-u)) ** (1.0 / self.shape)


@dataclass(frozen=True)
class Gumbel:
    loc: float
    scale: float

    def __post_init__(self):
        _positive("Gumbel scale", self.scale)

    def logpdf(self, x):
        z = (np.asarray(x, dtype=float) - self.loc) / self.scale
        return _out(-np.log(self.scale) - z - np.exp(-z))

    def cdf(self, x):
        z = (np.asarray(x, dtype=float) - self.loc) / self.scale
        return _out(np.exp(-np.exp(-z)))

    def quantile(self, p):
        p = _check_prob(p)
        return _out(self.loc - self.scale * np.log(-np.log(p)))

    def grad_logpdf(self, x):
        s = self.scale
        z = (np.asarray(x, dtype=float) - self.loc) / s
        e = np.exp(-z)
        return np.array([(1.0 - e) / s, (-1.0 + z - z * e) / s, (e - 1.0) / s])

    def mean(self):
        return self.loc + EULER_GAMMA * self.scale

    def sample(self, rng, size=None):
        return self.quantile(rng.random(size) * (1 - 2e-16) + 1e-16)


@dataclass(frozen=True)
class TruncatedGumbel:
    """Gumbel law restricted to (0, inf) and renormalised."""

    loc: float
    scale: float

    def __post_init__(self):
        _positive("Gumbel scale", self.scale)

    def log_norm(self):
        # log(1 - G(0)), G(0) = exp(-exp(loc/scale))
        return float(log1mexp(np.exp(self.loc / self.scale)))

    def _dlog_norm(self):
        t = self.loc / self.scale
        if t > 6.5:
            return 0.0, 0.0
        e = np.exp(t)
        ratio = e / np.expm1(e) if e > 1e-300 else 1.0
        return ratio / self.scale, -ratio * t / self.scale

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        lp = np.asarray(Gumbel(self.loc, self.scale).logpdf(x)) - self.log_norm()
        return _out(np.where(x > 0, lp, -np.inf))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        a = np.exp(self.loc / self.scale)
        e = np.exp(-(np.maximum(x, 0.0) - self.loc) / self.scale)  # <= a on x >= 0
        # G(x) - G(0) = exp(-e) * (1 - exp(e - a)), free of cancellation
        num = np.exp(-e) * -np.expm1(np.minimum(e - a, 0.0))
        return _out(np.clip(num / -np.expm1(-a), 0.0, 1.0))

    def sf(self, x):
        x = np.asarray(x, dtype=float)
        z = (np.maximum(x, 0.0) - self.loc) / self.scale
        return _out(np.clip(-np.expm1(-np.exp(-z)) / -np.expm1(-np.exp(self.loc / self.scale)), 0.0, 1.0))

    def quantile(self, p):
        p = _check_prob(p)
        mass = -np.expm1(-np.exp(self.loc / self.scale))
        # -log G(x) where G(x) = 1 - (1 - p) * mass
        e = -np.log1p(-(1.0 - p) * mass)
        return _out(self.loc - self.scale * np.log(e))

    def grad_logpdf(self, x):
        base = Gumbel(self.loc, self.scale).grad_logpdf(x)
        dmu, dsig = self._dlog_norm()
        base[0] = base[0] - dmu
        base[1] = base[1] - dsig
        return base

    def sample(self, rng, size=None):
        return self.quantile(rng.random(size) * (1 - 2e-16) + 1e-16)


@dataclass(frozen=True)
class GEV:
    loc: float
    scale: float
    shape: float

    def __post_init__(self):
        _positive("GEV scale", self.scale)
        if not np.isfinite(self.loc) or not np.isfinite(self.shape):
            raise ParameterError("GEV location and shape must be finite")

    def _terms(self, x):
        z = (np.asarray(x, dtype=float) - self.loc) / self.scale
        t = 1.0 + self.shape * z
        ok = t > 0
        zs = np.where(ok, z, 0.0)
        q, dq = _xi_series(self.shape, zs)
        return z, t, ok, q, dq

    def logpdf(self, x):
        z, t, ok, q, _ = self._terms(x)
        lp = -np.log(self.scale) - self.shape * q - q - np.exp(-q)
        return _out(np.where(ok, lp, -np.inf))

    def cdf(self, x):
        z, t, ok, q, _ = self._terms(x)
        below = 0.0 if self.shape > 0 else 1.0
        return _out(np.where(ok, np.exp(-np.exp(-q)), below))

    def quantile(self, p):
        p = _check_prob(p)
        lg = np.log(-np.log(p))
        if abs(self.shape) < XI_EPS:
            return _out(self.loc - self.scale * lg)
        return _out(self.loc + self.scale * np.expm1(-self.shape * lg) / self.shape)

    def grad_logpdf(self, x):
        z, t, ok, q, dq = self._terms(x)
        xi, s = self.shape, self.scale
        a = np.exp(-q)
        d_z = -(xi + 1.0 - a) / t
        d_xi = -z / t - (1.0 - a) * dq
        return np.array([-d_z / s, -1.0 / s - d_z * z / s, d_xi, d_z / s])

    def sample(self, rng, size=None):
        return self.quantile(rng.random(size) * (1 - 2e-16) + 1e-16)


@dataclass(frozen=True)
class GPD:
    threshold: float
    scale: float
    shape: float

    def __post_init__(self):
        _positive("GPD scale", self.scale)
        if not np.isfinite(self.threshold) or not np.isfinite(self.shape):
            raise ParameterError("GPD threshold and shape must be finite")

    def _terms(self, x):
        z = (np.asarray(x, dtype=float) - self.threshold) / self.scale
        t = 1.0 + self.shape * z
        ok = (z >= 0) & (t > 0)
        zs = np.where(ok, z, 0.0)
        q, dq = _xi_series(self.shape, zs)
        return z, t, ok, q, dq

    def logpdf(self, x):
        z, t, ok, q, _ = self._terms(x)
        return _out(np.where(ok, -np.log(self.scale) - self.shape * q - q, -np.inf))

    def sf(self, x):
        z, t, ok, q, _ = self._terms(x)
        return _out(np.where(ok, np.exp(-q), np.where(z < 0, 1.0, 0.0)))

    def cdf(self, x):
        return _out(1.0 - np.asarray(self.sf(x)))

    def quantile(self, p):
        p = _check_prob(p)
        lg = np.log1p(-p)
        if abs(self.shape) < XI_EPS:
            return _out(self.threshold - self.scale * lg)
        return _out(self.threshold + self.scale * np.expm1(-self.shape * lg) / self.shape)

    def grad_logpdf(self, x):
        z, t, ok, q, dq = self._terms(x)
        xi, s = self.shape, self.scale
        d_z = -(xi + 1.0) / t
        d_xi = -z / t - dq
        return np.array([-d_z / s, -1.0 / s - d_z * z / s, d_xi, d_z / s])

    def sample(self, rng, size=None):
        return self.quantile(rng.random(size) * (1 - 2e-16))


@dataclass(frozen=True)
class Normal:
    loc: float
    scale: float

    def __post_init__(self):
        _positive("normal scale", self.scale)

    def logpdf(self, x):
        z = (np.asarray(x, dtype=float) - self.loc) / self.scale
        return _out(-0.5 * z**2 - np.log(self.scale) - 0.5 * np.log(2 * np.pi))

    def cdf(self, x):
        return _out(special.ndtr((np.asarray(x, dtype=float) - self.loc) / self.scale))

    def quantile(self, p):
        return _out(self.loc + self.scale * special.ndtri(_check_prob(p)))

    def grad_logpdf(self, x):
        z = (np.asarray(x, dtype=float) - self.loc) / self.scale
        s = self.scale
        return np.array([z / s, (z**2 - 1.0) / s, -z / s])

    def sample(self, rng, size=None):
        return self.loc + self.scale * rng.standard_normal(size)


@dataclass(frozen=True)
class HalfNormal:
    scale: float

    def __post_init__(self):
        _positive("half-normal scale", self.scale)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        z = x / self.scale
        lp = 0.5 * np.log(2 / np.pi) - np.log(self.scale) - 0.5 * z**2
        return _out(np.where(x >= 0, lp, -np.inf))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return _out(np.where(x > 0, special.erf(np.maximum(x, 0) / (self.scale * np.sqrt(2))), 0.0))

    def quantile(self, p):
        return _out(self.scale * np.sqrt(2) * special.erfinv(_check_prob(p)))

    def grad_logpdf(self, x):
        z = np.asarray(x, dtype=float) / self.scale
        return np.array([(z**2 - 1.0) / self.scale, -z / self.scale])

    def sample(self, rng, size=None):
        return np.abs(self.scale * rng.standard_normal(size))


@dataclass(frozen=True)
class Gamma:
    shape: float
    scale: float

    def __post_init__(self):
        _positive("gamma shape", self.shape)
        _positive("gamma scale", self.scale)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        k, th = self.shape, self.scale
        with np.errstate(divide="ignore", invalid="ignore"):
            lp = -special.gammaln(k) - k * np.log(th) + (k - 1) * np.log(x) - x / th
        return _out(np.where(x > 0, lp, -np.inf))

    def cdf(self, x):
        return _out(special.gammainc(self.shape, np.maximum(np.asarray(x, dtype=float), 0) / self.scale))

    def quantile(self, p):
        return _out(self.scale * special.gammaincinv(self.shape, _check_prob(p)))

    def grad_logpdf(self, x):
        x = np.asarray(x, dtype=float)
        k, th = self.shape, self.scale
        return np.array([-special.digamma(k) - np.log(th) + np.log(x), -k / th + x / th**2, (k - 1) / x - 1 / th])

    def sample(self, rng, size=None):
        return rng.gamma(self.shape, self.scale, size)


@dataclass(frozen=True)
class InvGamma:
    shape: float
    scale: float

    def __post_init__(self):
        _positive("inverse-gamma shape", self.shape)
        _positive("inverse-gamma scale", self.scale)

    @classmethod
    def from_mean(cls, mean, shape=5.0):
        """Inverse gamma with the given mean; needs shape > 1."""
        if shape <= 1:
            raise ParameterError("inverse-gamma mean exists only for shape > 1")
        return cls(shape, (shape - 1.0) * mean)

    def mean(self):
        return self.scale / (self.shape - 1.0) if self.shape > 1 else np.inf

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        a, b = self.shape, self.scale
        with np.errstate(divide="ignore", invalid="ignore"):
            lp = a * np.log(b) - special.gammaln(a) - (a + 1) * np.log(x) - b / x
        return _out(np.where(x > 0, lp, -np.inf))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return _out(np.where(x > 0, special.gammaincc(self.shape, self.scale / np.where(x > 0, x, 1.0)), 0.0))

    def quantile(self, p):
        return _out(self.scale / special.gammainccinv(self.shape, _check_prob(p)))

    def grad_logpdf(self, x):
        x = np.asarray(x, dtype=float)
        a, b = self.shape, self.scale
        return np.array([np.log(b) - special.digamma(a) - np.log(x), a / b - 1 / x, -(a + 1) / x + b / x**2])

    def sample(self, rng, size=None):
        return self.scale / rng.gamma(self.shape, 1.0, size)


@dataclass(frozen=True)
class Beta:
    a: float
    b: float

    def __post_init__(self):
        _positive("beta a", self.a)
        _positive("beta b", self.b)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            lp = (self.a - 1) * np.log(x) + (self.b - 1) * np.log1p(-x) - special.betaln(self.a, self.b)
        return _out(np.where((x > 0) & (x < 1), lp, -np.inf))

    def cdf(self, x):
        return _out(special.betainc(self.a, self.b, np.clip(np.asarray(x, dtype=float), 0, 1)))

    def quantile(self, p):
        return _out(special.betaincinv(self.a, self.b, _check_prob(p)))

    def grad_logpdf(self, x):
        x = np.asarray(x, dtype=float)
        a, b = self.a, self.b
        ab = special.digamma(a + b)
        return np.array([np.log(x) - special.digamma(a) + ab, np.log1p(-x) - special.digamma(b) + ab,
                         (a - 1) / x - (b - 1) / (1 - x)])

    def sample(self, rng, size=None):
        return rng.beta(self.a, self.b, size)


class _Discrete:
    trials: int

    def support(self):
        return np.arange(self.trials + 1)

    def cdf(self, x):
        x = np.floor(np.asarray(x, dtype=float))
        cum = np.cumsum(np.exp(self.logpdf(self.support())))
        idx = np.clip(x, -1, self.trials).astype(int)
        return _out(np.where(idx < 0, 0.0, np.minimum(cum[np.maximum(idx, 0)], 1.0)))

    def quantile(self, p):
        p = _check_prob(p)
        cum = np.cumsum(np.exp(self.logpdf(self.support())))
        return _out(np.minimum(np.searchsorted(cum, p * (1 - 1e-12)), self.trials).astype(float))


@dataclass(frozen=True)
class Binomial(_Discrete):
    rate: float
    trials: int

    def __post_init__(self):
        if not 0 <= self.rate <= 1:
            raise ParameterError(f"binomial rate must be in [0, 1], got {self.rate!r}")
        if int(self.trials) != self.trials or self.trials < 1:
            raise ParameterError("binomial trials must be a positive integer")

    def logpdf(self, n):
        n = np.asarray(n, dtype=float)
        N, lam = self.trials, self.rate
        ok = (n >= 0) & (n <= N) & (n == np.floor(n))
        ns = np.where(ok, n, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            lc = special.gammaln(N + 1) - special.gammaln(ns + 1) - special.gammaln(N - ns + 1)
            lp = lc + special.xlogy(ns, lam) + special.xlog1py(N - ns, -lam)
        return _out(np.where(ok, lp, -np.inf))

    def grad_logpdf(self, n):
        n = np.asarray(n, dtype=float)
        return np.array([n / self.rate - (self.trials - n) / (1 - self.rate)])

    def mean(self):
        return self.rate * self.trials

    def var(self):
        return self.trials * self.rate * (1 - self.rate)

    def sample(self, rng, size=None):
        return rng.binomial(self.trials, self.rate, size)


@dataclass(frozen=True)
class BetaBinomial(_Discrete):
    alpha: float
    beta: float
    trials: int

    def __post_init__(self):
        _positive("beta-binomial alpha", self.alpha)
        _positive("beta-binomial beta", self.beta)
        if int(self.trials) != self.trials or self.trials < 1:
            raise ParameterError("beta-binomial trials must be a positive integer")

    def logpdf(self, n):
        n = np.asarray(n, dtype=float)
        N, a, b = self.trials, self.alpha, self.beta
        ok = (n >= 0) & (n <= N) & (n == np.floor(n))
        ns = np.where(ok, n, 0.0)
        lc = special.gammaln(N + 1) - special.gammaln(ns + 1) - special.gammaln(N - ns + 1)
        lp = lc + special.betaln(ns + a, N - ns + b) - special.betaln(a, b)
        return _out(np.where(ok, lp, -np.inf))

    def grad_logpdf(self, n):
        n = np.asarray(n, dtype=float)
        N, a, b = self.trials, self.alpha, self.beta
        common = -special.digamma(N + a + b) + special.digamma(a + b)
        return np.array([special.digamma(n + a) - special.digamma(a) + common,
                         special.digamma(N - n + b) - special.digamma(b) + common])

    def mean(self):
        return self.trials * self.alpha / (self.alpha + self.beta)

    def var(self):
        N, a, b = self.trials, self.alpha, self.beta
        s = a + b
        return N * a * b * (s + N) / (s**2 * (s + 1))

    def sample(self, rng, size=None):
        return rng.binomial(self.trials, rng.beta(self.alpha, self.beta, size))


@dataclass(frozen=True)
class Fixed:
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 0:
            raise ParameterError("fixed count must be a nonnegative integer")

    def logpdf(self, n):
        return _out(np.where(np.asarray(n) == self.n, 0.0, -np.inf))

    def cdf(self, x):
        return _out(np.where(np.asarray(x, dtype=float) >= self.n, 1.0, 0.0))

    def quantile(self, p):
        _check_prob(p)
        return _out(np.full(np.shape(p), float(self.n)))

    def mean(self):
        return float(self.n)

    def var(self):
        return 0.0

    def sample(self, rng, size=None):
        return np.full(size, self.n, dtype=np.int64) if size is not None else self.n


def log_pdf(dist, x):
    return dist.logpdf(x)


def cdf(dist, x):
    return dist.cdf(x)


def quantile(dist, p):
    return dist.quantile(p)


def grad_log_pdf(dist, x):
    return dist.grad_logpdf(x)


def sample(dist, rng, size=None):
    return dist.sample(rng, size)


def truncated_gumbel_log_pdf(loc, scale, x):
    return TruncatedGumbel(loc, scale).logpdf(x)


def bisect_quantile(dist, p, lo, hi, tol=1e-13, maxiter=400):
    """Quantile by bisection on the cdf; used as an independent check of closed forms."""
    p = float(p)
    for _ in range(maxiter):
        mid = 0.5 * (lo + hi)
        if dist.cdf(mid) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, abs(hi)):
            break
    return 0.5 * (lo + hi)
