"""Stationarity tests on the variances of unobserved components.

All statistics cumulate OLS residuals from a deterministic null regression
(constant, optional linear trend, seasonal dummies) and normalise by a
Bartlett long-run variance. Under the null they converge to generalized
Cramer-von Mises laws whose degrees of freedom equal the number of cumulated
processes; critical values come from a shipped Monte Carlo table.

* level test: H0 sigma_level^2 = 0, statistic on the levels, 1 df.
* slope test: H0 sigma_slope^2 = 0, same statistic on first differences.
* seasonal tests: cos/sin-weighted cumulated residuals per harmonic, 2 df
  (1 df at frequency pi); groups and the joint test sum member statistics.
"""
import json
import math
import os
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .exceptions import ConfigurationError, InsufficientDataError, RangeError, SpecError

__all__ = [
    "TestResult",
    "VarianceTestReport",
    "level_test",
    "slope_test",
    "seasonal_test",
    "cvm_critical_values",
    "load_critical_values",
    "newey_west_lags",
    "run_battery",
    "stars",
    "CRITVALS_ENV",
]

CRITVALS_ENV = "UC_CF_CRITVALS"
LEVELS = (0.10, 0.05, 0.01)
MIN_OBS = 20


@lru_cache(maxsize=8)
def _load(path):
    if path is None:
        text = resources.files("ucimpact").joinpath("data/cvm_critvals.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    doc = json.loads(text)
    if doc.get("schema_version") != 1:
        raise ConfigurationError(f"unsupported critical-value schema {doc.get('schema_version')!r}")
    return doc


def load_critical_values(path=None):
    """Critical-value document; ``$UC_CF_CRITVALS`` overrides the bundled table."""
    return _load(path or os.environ.get(CRITVALS_ENV) or None)


def cvm_critical_values(df, level, kind="level", path=None):
    """Upper-tail critical value of the generalized Cramer-von Mises law.

    Parameters
    ----------
    df : int
        Degrees of freedom (number of cumulated processes).
    level : {0.10, 0.05, 0.01}
    kind : {'level', 'trend'}
        Demeaned (Brownian bridge) or detrended (second-level bridge) law.
    """
    key = f"{float(level):.2f}"
    if key not in ("0.10", "0.05", "0.01") or abs(float(level) - float(key)) > 1e-12:
        raise RangeError(f"unsupported significance level {level}; use 0.10, 0.05 or 0.01")
    table = load_critical_values(path)["tables"].get(kind)
    if table is None:
        raise RangeError(f"no critical-value table of kind {kind!r}")
    row = table["values"].get(str(int(df)))
    if row is None or int(df) < 1:
        raise RangeError(f"df={df} outside the tabulated range 1..{len(table['values'])}")
    return float(row[key])


def stars(statistic, crit):
    """Significance stars: * 10%, ** 5%, *** 1%."""
    if statistic > crit[0.01]:
        return "***"
    if statistic > crit[0.05]:
        return "**"
    if statistic > crit[0.10]:
        return "*"
    return ""


@dataclass(frozen=True)
class TestResult:
    name: str
    statistic: float
    df: int
    critical_values: dict
    residual_source: str
    lags: int = 0
    members: tuple = ()

    __test__ = False  # keep pytest from collecting this class

    def reject(self, level=0.05):
        return self.statistic > self.critical_values[level]

    @property
    def decision(self):
        return "reject" if self.reject(0.05) else "fail to reject"

    @property
    def stars(self):
        return stars(self.statistic, self.critical_values)

    def to_dict(self):
        return {
            "name": self.name,
            "statistic": self.statistic,
            "df": self.df,
            "critical_values": {f"{k:.2f}": v for k, v in self.critical_values.items()},
            "decision_5pct": self.decision,
            "stars": self.stars,
            "residual_source": self.residual_source,
            "lags": self.lags,
            "members": list(self.members),
        }


def newey_west_lags(n):
    return int(math.floor(4.0 * (n / 100.0) ** (2.0 / 9.0)))


def _values(ts):
    if hasattr(ts, "values") and hasattr(ts, "scale"):
        y = np.asarray(ts.values, dtype=float)
        month0 = ts.start.month - 1
    else:
        y = np.asarray(ts, dtype=float).reshape(-1)
        month0 = 0
    return y, month0


def _design(n, trend, period, month0):
    cols = [np.ones(n)]
    t = np.arange(1, n + 1, dtype=float)
    if trend == "ct":
        cols.append(t / n)
    elif trend != "c":
        raise ConfigurationError(f"trend must be 'c' or 'ct', got {trend!r}")
    if period:
        season = (np.arange(n) + month0) % period
        for k in range(1, period):
            cols.append((season == k).astype(float))
    return np.column_stack(cols)


def _null_residuals(y, month0, trend, period):
    """OLS residuals of the non-missing observations plus their positions."""
    mask = ~np.isnan(y)
    n = int(mask.sum())
    if n < MIN_OBS:
        raise InsufficientDataError(f"need at least {MIN_OBS} non-missing observations, got {n}")
    X = _design(y.size, trend, period, month0)[mask]
    beta, *_ = np.linalg.lstsq(X, y[mask], rcond=None)
    e = y[mask] - X @ beta
    return e, np.flatnonzero(mask)


def _long_run_cov(u, lags):
    """Bartlett-weighted long-run covariance of the rows of ``u`` (n, k)."""
    n = u.shape[0]
    omega = u.T @ u / n
    for j in range(1, lags + 1):
        w = 1.0 - j / (lags + 1.0)
        g = u[j:].T @ u[:-j] / n
        omega = omega + w * (g + g.T)
    return omega


def _resolve_lags(lags, n):
    if lags is None or lags == "auto":
        return newey_west_lags(n)
    lags = int(lags)
    if lags < 0:
        raise ConfigurationError("lags must be >= 0")
    return lags


def _cumulated_stat(e, lags):
    n = e.size
    s2 = float(_long_run_cov(e[:, None], lags)[0, 0])
    if not s2 > 0:
        return 0.0
    S = np.cumsum(e)
    return float(np.sum(S * S) / (n * n * s2))


def _crit(df, kind, path=None):
    return {lv: cvm_critical_values(df, lv, kind, path) for lv in LEVELS}


def level_test(ts, seasonal_period=None, trend="c", lags="auto", critvals=None):
    """Test H0: the level disturbance variance is zero.

    Residuals come from OLS of the series on a constant (plus a linear trend
    when ``trend='ct'``) and, if ``seasonal_period`` is given, seasonal dummies.
    """
    y, month0 = _values(ts)
    e, _ = _null_residuals(y, month0, trend, seasonal_period)
    L = _resolve_lags(lags, e.size)
    stat = _cumulated_stat(e, L)
    src = "OLS residuals on constant" + (" + trend" if trend == "ct" else "")
    if seasonal_period:
        src += f" + {seasonal_period - 1} seasonal dummies"
    return TestResult("level", stat, 1, _crit(1, "level" if trend == "c" else "trend", critvals), src, L)


def slope_test(ts, seasonal_period=None, lags="auto", critvals=None):
    """Test H0: the slope disturbance variance is zero (random walk plus drift).

    The level statistic applied to first differences with the drift (and
    seasonal means, if requested) removed.
    """
    y, month0 = _values(ts)
    dy = np.diff(y)
    e, _ = _null_residuals(dy, (month0 + 1) % (seasonal_period or 1), "c", seasonal_period)
    L = _resolve_lags(lags, e.size)
    stat = _cumulated_stat(e, L)
    src = "OLS residuals of first differences on constant"
    if seasonal_period:
        src += f" + {seasonal_period - 1} seasonal dummies"
    return TestResult("slope", stat, 1, _crit(1, "level", critvals), src, L)


def _harmonic_stat(e, pos, j, period, month0, lags):
    lam = 2.0 * math.pi * j / period
    t = pos + month0
    if 2 * j == period:
        f = np.cos(math.pi * t)[:, None]
    else:
        f = np.column_stack([np.cos(lam * t), np.sin(lam * t)])
    u = f * e[:, None]
    omega = _long_run_cov(u, lags)
    Fc = np.cumsum(u, axis=0)
    n = e.size
    try:
        W = np.linalg.solve(omega, Fc.T)
    except np.linalg.LinAlgError:
        return 0.0, f.shape[1]
    return float(np.sum(Fc.T * W) / (n * n)), f.shape[1]


def seasonal_test(ts, target="all", period=12, differences=0, trend="c", lags="auto", critvals=None):
    """Seasonal stability test at one harmonic, a group of harmonics, or all.

    Parameters
    ----------
    ts : TimeSeries or array_like
    target : int, iterable of int, or 'all'
        Harmonic ``j`` (frequency ``2 pi j / period``), a group, or every
        harmonic ``1..period // 2``.
    period : int
    differences : {0, 1}
        Apply the test to first differences (for integrated series).
    trend : {'c', 'ct'}
        Deterministic terms beside the seasonal dummies.

    Returns
    -------
    TestResult
        ``statistic`` is the sum of the member statistics and ``df`` the sum
        of their degrees of freedom.
    """
    period = int(period)
    top = period // 2
    if isinstance(target, str):
        if target != "all":
            raise SpecError(f"target must be a harmonic, a group or 'all', got {target!r}")
        members = tuple(range(1, top + 1))
        name = "seasonal: all"
    elif np.isscalar(target):
        members = (int(target),)
        name = f"seasonal: frequency {int(target)}"
    else:
        members = tuple(sorted({int(j) for j in target}))
        name = "seasonal: group " + ",".join(str(j) for j in members)
    bad = [j for j in members if not 1 <= j <= top]
    if bad or not members:
        raise SpecError(f"harmonics {bad} outside 1..{top}")

    y, month0 = _values(ts)
    for _ in range(int(differences)):
        y = np.diff(y)
        month0 += 1
    month0 %= period
    e, pos = _null_residuals(y, month0, trend, period)
    L = _resolve_lags(lags, e.size)
    total, df = 0.0, 0
    for j in members:
        stat, k = _harmonic_stat(e, pos, j, period, month0, L)
        total += stat
        df += k
    src = ("first differences, " if differences else "") + (
        f"OLS residuals on constant{' + trend' if trend == 'ct' else ''} + {period - 1} seasonal dummies"
    )
    return TestResult(name, total, df, _crit(df, "level", critvals), src, L, members)


@dataclass(frozen=True)
class VarianceTestReport:
    rows: tuple
    notes: tuple = ()

    def to_dict(self):
        return {"rows": [r.to_dict() for r in self.rows], "notes": list(self.notes)}

    def to_text(self):
        lines = [f"{'test':<34}{'statistic':>12}  {'':<3}{'df':>4}"]
        lines.append("-" * len(lines[0]))
        for r in self.rows:
            lines.append(f"{r.name:<34}{r.statistic:>12.3f}  {r.stars:<3}{r.df:>4}")
        lines.append("* 10%, ** 5%, *** 1% (generalized Cramer-von Mises critical values)")
        lines.extend(self.notes)
        return "\n".join(lines) + "\n"


def run_battery(ts, period=12, groups=None, seasonal_differences=1, lags="auto", critvals=None):
    """Level, slope and seasonal tests laid out like a variance-test table.

    ``groups`` is a list of harmonic groups reported in addition to every
    individual harmonic and the joint test.
    """
    rows = [
        level_test(ts, seasonal_period=period, lags=lags, critvals=critvals),
        slope_test(ts, seasonal_period=period, lags=lags, critvals=critvals),
    ]
    for j in range(1, period // 2 + 1):
        rows.append(seasonal_test(ts, j, period, seasonal_differences, lags=lags, critvals=critvals))
    for g in groups or ():
        rows.append(seasonal_test(ts, tuple(g), period, seasonal_differences, lags=lags, critvals=critvals))
    rows.append(seasonal_test(ts, "all", period, seasonal_differences, lags=lags, critvals=critvals))
    notes = (
        f"level test: {rows[0].residual_source}",
        f"slope test: {rows[1].residual_source}",
        f"seasonal tests: {rows[-1].residual_source}",
    )
    return VarianceTestReport(tuple(rows), notes)
