"""Residual checks for fitted structural models.

Every function takes a one-dimensional array of standardized residuals;
``NaN`` entries (diffuse or missing steps of the filter) are dropped first.
Autocorrelations are computed about zero, since standardized innovations of
a correct model have mean zero.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import ndtri

from .exceptions import DegenerateInputError, InsufficientDataError

__all__ = [
    "CUSUM_CONSTANTS",
    "LjungBox",
    "Heteroskedasticity",
    "Normality",
    "Cusum",
    "DiagnosticsReport",
    "acf",
    "ljung_box",
    "hetero_H",
    "lobato_velasco",
    "cusum",
    "qq_data",
    "diagnose",
]

# Brown-Durbin-Evans boundary constants by significance level
CUSUM_CONSTANTS = {0.10: 0.850, 0.05: 0.948, 0.01: 1.143}


def _clean(e):
    e = np.asarray(e, dtype=float).reshape(-1)
    return e[~np.isnan(e)]


def acf(e, maxlag):
    """Sample autocorrelations ``r_0..r_maxlag`` (``r_0 = 1``).

    ``r_k = sum_t e_t e_{t+k} / sum_t e_t^2``. An all-zero input returns
    ``r_k = 0`` for ``k >= 1``.
    """
    e = _clean(e)
    n = e.size
    maxlag = int(maxlag)
    if n < 3 or n <= maxlag:
        raise InsufficientDataError(f"acf needs n > maxlag and n >= 3 (n={n}, maxlag={maxlag})")
    c0 = float(np.dot(e, e))
    r = np.zeros(maxlag + 1)
    r[0] = 1.0
    if c0 > 0:
        for k in range(1, maxlag + 1):
            r[k] = float(np.dot(e[:-k], e[k:])) / c0
    return r


@dataclass(frozen=True)
class LjungBox:
    Q: float
    lags: int
    df: int
    p: float
    p_raw: float

    def to_dict(self):
        return {"Q": self.Q, "lags": self.lags, "df": self.df, "p": self.p, "p_raw": self.p_raw}


def ljung_box(e, lags=24, n_hyper=0):
    """Portmanteau statistic ``Q = n(n+2) sum_k r_k^2 / (n-k)``.

    ``p`` uses ``max(lags - n_hyper, 1)`` degrees of freedom; ``p_raw`` uses
    ``lags``.
    """
    e = _clean(e)
    n = e.size
    lags = int(lags)
    if n <= lags:
        raise InsufficientDataError(f"Ljung-Box needs n > lags (n={n}, lags={lags})")
    r = acf(e, lags)[1:]
    k = np.arange(1, lags + 1)
    Q = float(n * (n + 2) * np.sum(r * r / (n - k)))
    df = max(lags - int(n_hyper), 1)
    return LjungBox(Q, lags, df, float(stats.chi2.sf(Q, df)), float(stats.chi2.sf(Q, lags)))


@dataclass(frozen=True)
class Heteroskedasticity:
    H: float
    h: int
    p: float

    def to_dict(self):
        return {"H": self.H, "h": self.h, "p": self.p}


def hetero_H(e, h=None):
    """Ratio of the last ``h`` to the first ``h`` squared residuals.

    The p-value is two-sided against ``F(h, h)``. ``h`` defaults to
    ``n // 3``; any ``h`` with non-overlapping blocks (``2 h <= n``) is
    accepted.
    """
    e = _clean(e)
    n = e.size
    h = n // 3 if h is None else int(h)
    if h < 1 or n < 2 * h:
        raise InsufficientDataError(f"H test needs h >= 1 and n >= 2h (n={n}, h={h})")
    den = float(np.sum(e[:h] ** 2))
    if den == 0.0:
        raise DegenerateInputError("first block of residuals is identically zero")
    H = float(np.sum(e[-h:] ** 2)) / den
    p = 2.0 * min(stats.f.cdf(H, h, h), stats.f.sf(H, h, h))
    return Heteroskedasticity(H, h, float(min(p, 1.0)))


@dataclass(frozen=True)
class Normality:
    statistic: float
    p: float
    skewness_term: float
    kurtosis_term: float
    skewness: float

    def to_dict(self):
        return {
            "statistic": self.statistic,
            "p": self.p,
            "skewness_term": self.skewness_term,
            "kurtosis_term": self.kurtosis_term,
            "skewness": self.skewness,
        }


def lobato_velasco(e):
    """Autocorrelation-robust skewness-kurtosis normality test.

    ``G = n mu3^2 / (6 F3) + n (mu4 - 3 mu2^2)^2 / (24 F4)`` with
    ``Fk = sum_{|t|<n} g(t) [g(t) + g(n-|t|)]^(k-1)`` built from the sample
    autocovariances ``g``; ``G`` is compared with chi-squared(2).
    ``skewness`` carries the sign of the third central moment.
    """
    e = _clean(e)
    n = e.size
    if n < 30:
        raise InsufficientDataError(f"Lobato-Velasco test needs n >= 30, got {n}")
    if np.ptp(e) == 0.0:
        raise DegenerateInputError("constant residual series")
    d = e - e.mean()
    mu2, mu3, mu4 = (float(np.mean(d**k)) for k in (2, 3, 4))
    full = np.correlate(d, d, mode="full") / n  # lags -(n-1)..n-1
    g = full[n - 1 :]  # g[0..n-1]
    gext = np.append(g, 0.0)  # g(n) = 0
    lags = np.abs(np.arange(-(n - 1), n))
    gt = g[lags]
    comp = gext[n - lags]
    F3 = float(np.sum(gt * (gt + comp) ** 2))
    F4 = float(np.sum(gt * (gt + comp) ** 3))
    skew_term = n * mu3 * mu3 / (6.0 * F3) if F3 > 0 else 0.0
    kurt_term = n * (mu4 - 3.0 * mu2 * mu2) ** 2 / (24.0 * F4) if F4 > 0 else 0.0
    G = skew_term + kurt_term
    return Normality(float(G), float(stats.chi2.sf(G, 2)), float(skew_term), float(kurt_term),
                     mu3 / mu2**1.5)


@dataclass(frozen=True)
class Cusum:
    path: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    a: float

    @property
    def stable(self):
        return bool(np.all((self.path >= self.lower) & (self.path <= self.upper)))

    def to_dict(self):
        return {"stable": self.stable, "a": self.a, "n": int(self.path.size)}


def cusum(e, level=0.05):
    """Cumulative sum of residuals scaled by their root mean square.

    Boundaries are ``+-(a sqrt(n) + 2 a t / sqrt(n))`` for ``t = 1..n``.
    """
    e = _clean(e)
    n = e.size
    if n < 10:
        raise InsufficientDataError(f"CUSUM needs n >= 10, got {n}")
    a = CUSUM_CONSTANTS[level]
    s = math.sqrt(float(np.mean(e * e)))
    path = np.cumsum(e) / s if s > 0 else np.zeros(n)
    t = np.arange(1, n + 1, dtype=float)
    upper = a * math.sqrt(n) + 2.0 * a * t / math.sqrt(n)
    for arr in (path, upper):
        arr.setflags(write=False)
    lower = -upper
    lower.setflags(write=False)
    return Cusum(path, lower, upper, a)


def qq_data(e):
    """Pairs ``(ndtri((i - 0.5) / n), e_(i))`` as an ``(n, 2)`` array."""
    e = np.sort(_clean(e))
    n = e.size
    if n < 3:
        raise InsufficientDataError(f"QQ data needs n >= 3, got {n}")
    theo = ndtri((np.arange(1, n + 1) - 0.5) / n)
    return np.column_stack([theo, e])


@dataclass(frozen=True)
class DiagnosticsReport:
    ljung_box: LjungBox
    hetero: Heteroskedasticity
    normality: Normality
    cusum: Cusum
    acf: np.ndarray
    qq: np.ndarray
    residuals: np.ndarray
    fit: dict = None

    def to_dict(self):
        out = {
            "ljung_box": self.ljung_box.to_dict(),
            "heteroskedasticity": self.hetero.to_dict(),
            "normality": self.normality.to_dict(),
            "cusum": self.cusum.to_dict(),
            "acf": self.acf.tolist(),
        }
        if self.fit is not None:
            out["fit"] = dict(self.fit)
        return out

    def to_text(self):
        lb = self.ljung_box
        star = "***" if lb.p < 0.01 else "**" if lb.p < 0.05 else "*" if lb.p < 0.10 else ""
        star_raw = "***" if lb.p_raw < 0.01 else "**" if lb.p_raw < 0.05 else "*" if lb.p_raw < 0.10 else ""
        rows = [
            (f"Ljung-Box[{lb.lags}] test", f"{lb.Q:.3f}{star}"),
            (f"  p (df={lb.df}) / p (df={lb.lags})", f"{lb.p:.3f} / {lb.p_raw:.3f}{star_raw}"),
            (f"Heteroskedasticity[{self.hetero.h}]", f"{self.hetero.H:.3f}"),
            ("LV Test (Normality)", f"{self.normality.statistic:.3f}"),
            ("CUSUM stable (5%)", "yes" if self.cusum.stable else "no"),
        ]
        if self.fit is not None:
            rows += [
                ("Log-Likelihood", f"{self.fit['loglik']:.3f}"),
                ("AIC", f"{self.fit['AIC']:.3f}"),
                ("BIC", f"{self.fit['BIC']:.3f}"),
                ("AICc", f"{self.fit['AICc']:.3f}"),
            ]
        width = max(len(r[0]) for r in rows) + 2
        lines = [f"{name:<{width}}{val:>14}" for name, val in rows]
        lines.append("stars on Ljung-Box: * 10%, ** 5%, *** 1%")
        return "\n".join(lines) + "\n"


def diagnose(residuals, lags=24, n_hyper=0, h=None, maxlag=None, fit=None):
    """Run every residual check.

    Parameters
    ----------
    residuals : array_like
        Standardized innovations; ``NaN`` entries are ignored.
    n_hyper : int
        Estimated hyperparameters, subtracted from the Ljung-Box df.
    fit : dict, optional
        ``loglik``, ``AIC``, ``BIC`` and ``AICc`` to append to the text block.
    """
    e = _clean(residuals)
    maxlag = lags if maxlag is None else int(maxlag)
    return DiagnosticsReport(
        ljung_box(e, lags, n_hyper),
        hetero_H(e, h),
        lobato_velasco(e),
        cusum(e),
        acf(e, maxlag),
        qq_data(e),
        e,
        fit,
    )
