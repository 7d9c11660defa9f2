"""Counterfactual event studies on monthly market capitalization.

A model is fitted to the log series over a pre-event training window and
forecast through the post-event window. The forecast, mapped back to levels,
is the counterfactual; the gap between observed and counterfactual values
gives the loss tables, and the first sustained re-entry of the observed
path into the forecast band gives the recovery month.
"""
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import ConfigurationError, DataError
from .series import MonthIndex, TimeSeries, log_transform, slice_series

__all__ = [
    "EventStudyConfig",
    "LossRow",
    "Recovery",
    "Baseline",
    "ImpactReport",
    "EventStudyResult",
    "PartialBaselineWarning",
    "loss_table",
    "recovery_month",
    "prebreak_baseline",
    "level_forecast",
    "run_event_study",
]

MEAN_CORRECTIONS = ("median", "lognormal_mean")


class PartialBaselineWarning(UserWarning):
    """Fewer than 12 pre-event months were available for the baseline."""


def _month(value, name):
    if isinstance(value, MonthIndex):
        return value
    if isinstance(value, str):
        try:
            return MonthIndex.parse(value)
        except (ValueError, TypeError) as exc:
            raise ConfigurationError(f"{name}: {exc}") from None
    raise ConfigurationError(f"{name} must be a month 'YYYY-MM', got {value!r}")


@dataclass(frozen=True)
class EventStudyConfig:
    """Windows and options of an event study.

    The forecast starts the month after ``train_end``; losses and recovery
    are measured over ``horizon`` months starting at ``event_month``.
    ``discount_rate`` is a per-month rate applied as ``(1 + r)^-h``.
    """

    train_start: MonthIndex
    train_end: MonthIndex
    event_month: MonthIndex
    horizon: int = 60
    band_level: float = 0.95
    persistence: int = 3
    discount_rate: float = 0.0
    mean_correction: str = "median"
    windows: tuple = (1, 2, 3, 5)

    def __post_init__(self):
        for name in ("train_start", "train_end", "event_month"):
            object.__setattr__(self, name, _month(getattr(self, name), name))
        object.__setattr__(self, "windows", tuple(int(w) for w in self.windows))
        if not self.train_start <= self.train_end:
            raise ConfigurationError(f"train_start ({self.train_start}) must not follow train_end ({self.train_end})")
        if not self.train_end < self.event_month:
            raise ConfigurationError(
                f"train_end ({self.train_end}) must precede event_month ({self.event_month})"
            )
        if int(self.horizon) != self.horizon or self.horizon < 12:
            raise ConfigurationError(f"horizon must be an integer >= 12 months, got {self.horizon}")
        if not 0.0 < self.band_level < 1.0:
            raise ConfigurationError(f"band_level must lie in (0, 1), got {self.band_level}")
        if int(self.persistence) != self.persistence or self.persistence < 1:
            raise ConfigurationError(f"persistence must be an integer >= 1, got {self.persistence}")
        if not (self.discount_rate >= 0.0 and math.isfinite(self.discount_rate)):
            raise ConfigurationError(f"discount_rate must be finite and >= 0, got {self.discount_rate}")
        if self.mean_correction not in MEAN_CORRECTIONS:
            raise ConfigurationError(
                f"mean_correction must be one of {MEAN_CORRECTIONS}, got {self.mean_correction!r}"
            )
        if not self.windows or min(self.windows) < 1:
            raise ConfigurationError("windows must be positive whole years")

    @property
    def lead(self):
        """Months between the end of training and the event month."""
        return (self.event_month - self.train_end) - 1

    @property
    def steps(self):
        return self.lead + int(self.horizon)

    def to_dict(self):
        d = asdict(self)
        for name in ("train_start", "train_end", "event_month"):
            d[name] = str(getattr(self, name))
        d["windows"] = list(self.windows)
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown event-study fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class LossRow:
    window: int
    months: int
    n_used: int
    avg_loss: float
    pct_loss: float
    partial: bool

    def to_dict(self):
        return asdict(self)


def _aligned(observed, cf):
    a = np.asarray(getattr(observed, "values", observed), dtype=float)
    b = np.asarray(getattr(cf, "values", cf), dtype=float)
    if isinstance(observed, TimeSeries) and isinstance(cf, TimeSeries) and observed.start != cf.start:
        raise DataError(f"observed starts {observed.start} but counterfactual starts {cf.start}")
    return a, b


def loss_table(observed, cf, windows=(1, 2, 3, 5), discount_rate=0.0):
    """Average gaps between observed and counterfactual levels.

    For window ``w`` years the first ``12 w`` post-event months are used:
    ``avg_loss = sum_h (1 + r)^-h (obs_h - cf_h) / N`` with ``h = 1..N`` and
    ``pct_loss = 100 * mean((obs_h - cf_h) / cf_h)``. Months with a missing
    observation are skipped. A window longer than the aligned data is kept
    and flagged ``partial``.
    """
    obs, cfv = _aligned(observed, cf)
    if discount_rate < 0:
        raise ConfigurationError("discount_rate must be >= 0")
    n = min(obs.size, cfv.size)
    rows = []
    for w in windows:
        months = 12 * int(w)
        use = min(months, n)
        o, c = obs[:use], cfv[:use]
        ok = ~(np.isnan(o) | np.isnan(c))
        h = np.arange(1, use + 1)[ok]
        gap = (o - c)[ok]
        disc = (1.0 + discount_rate) ** (-h.astype(float))
        N = int(ok.sum())
        avg = math.fsum(disc * gap) / N if N else float("nan")
        pct = 100.0 * math.fsum(gap / c[ok]) / N if N else float("nan")
        rows.append(LossRow(int(w), months, N, avg, pct, bool(use < months or N < months)))
    return tuple(rows)


@dataclass(frozen=True)
class Recovery:
    month: MonthIndex
    offset: int
    excluded_months: tuple

    def to_dict(self):
        return {
            "month": None if self.month is None else str(self.month),
            "offset": self.offset,
            "excluded_months": [str(m) for m in self.excluded_months],
        }


def recovery_month(observed, lower, upper, start=None, persistence=3):
    """First sustained entry of ``observed`` into ``[lower, upper]``.

    Recovery is the first month that opens a run of ``persistence``
    consecutive in-band months; a run cut short by the end of the data also
    counts. Later months outside the band are listed as excluded and do not
    reset the recovery. Missing observations break a run.

    Returns
    -------
    Recovery
        ``month`` and ``offset`` (0 for the first month) are ``None`` when
        the series never recovers.
    """
    obs = np.asarray(getattr(observed, "values", observed), dtype=float)
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    if not obs.size == lo.size == hi.size:
        raise DataError("observed series and bands must have equal length")
    if start is None:
        start = observed.start if isinstance(observed, TimeSeries) else None
    persistence = int(persistence)
    with np.errstate(invalid="ignore"):
        inside = (obs >= lo) & (obs <= hi)
    first = None
    run = 0
    for i, flag in enumerate(inside):
        run = run + 1 if flag else 0
        if run == persistence or (flag and i == obs.size - 1):
            first = i - run + 1
            break
    if first is None:
        return Recovery(None, None, ())
    excl = [i for i in range(first, obs.size) if not inside[i] and not np.isnan(obs[i])]
    month = None if start is None else start + first
    excluded = tuple(start + i for i in excl) if start is not None else tuple(excl)
    return Recovery(month, first, excluded)


@dataclass(frozen=True)
class Baseline:
    value: float
    n_months: int

    @property
    def partial(self):
        return self.n_months < 12


def prebreak_baseline(ts_level, event_month):
    """Mean level over the 12 months preceding ``event_month``.

    Fewer available months give a :class:`PartialBaselineWarning` naming the
    count actually used.
    """
    event_month = _month(event_month, "event_month")
    lo = max(ts_level.start, event_month + (-12))
    hi = min(ts_level.end, event_month + (-1))
    vals = np.array([]) if hi < lo else slice_series(ts_level, lo, hi).values
    vals = vals[~np.isnan(vals)]
    if vals.size == 0:
        raise DataError(f"no observations in the 12 months before {event_month}")
    if vals.size < 12:
        warnings.warn(
            f"pre-event baseline uses {vals.size} of 12 months before {event_month}",
            PartialBaselineWarning,
            stacklevel=2,
        )
    return Baseline(math.fsum(vals) / vals.size, int(vals.size))


@dataclass(frozen=True)
class ImpactReport:
    rows: tuple
    recovery: Recovery
    baseline: Baseline
    prebreak_drop_pct: float
    config: dict
    units: str = "input currency units"

    @property
    def recovery_month(self):
        return self.recovery.month

    @property
    def excluded_months(self):
        return self.recovery.excluded_months

    def to_dict(self):
        return {
            "losses": [r.to_dict() for r in self.rows],
            "recovery": self.recovery.to_dict(),
            "baseline_prebreak_avg": self.baseline.value,
            "baseline_months": self.baseline.n_months,
            "prebreak_drop_pct": self.prebreak_drop_pct,
            "config": dict(self.config),
            "units": self.units,
        }

    def to_text(self):
        lines = [f"{'window':<28}{'avg loss':>24}{'% loss':>12}"]
        lines.append("-" * len(lines[0]))
        for r in self.rows:
            label = f"{r.window}-yr-Average after event" + (" (partial)" if r.partial else "")
            lines.append(f"{label:<28}{r.avg_loss:>24,.2f}{r.pct_loss:>11.2f}%")
        rec = self.recovery
        lines.append(f"recovery month: {rec.month if rec.month is not None else 'not within horizon'}")
        if rec.excluded_months:
            lines.append("excluded months: " + ", ".join(str(m) for m in rec.excluded_months))
        lines.append(
            f"pre-event 12-month average: {self.baseline.value:,.2f} "
            f"({self.baseline.n_months} months); first-year drop {self.prebreak_drop_pct:.2f}%"
        )
        lines.append(f"units: {self.units}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class EventStudyResult:
    forecast: object  # log-scale ForecastResult over config.steps months
    counterfactual: TimeSeries
    lower: np.ndarray
    upper: np.ndarray
    observed: TimeSeries
    report: ImpactReport
    fit: object


def level_forecast(fc, mean_correction="median"):
    """Map a log-scale forecast to levels: ``(mean, lower, upper)``.

    ``median`` uses ``exp(m)``; ``lognormal_mean`` uses ``exp(m + v / 2)``.
    Bands are ``exp`` of the log bands in both cases.
    """
    if mean_correction == "median":
        mean = np.exp(fc.mean)
    elif mean_correction == "lognormal_mean":
        mean = np.exp(fc.mean + 0.5 * fc.variance)
    else:
        raise ConfigurationError(f"unknown mean_correction {mean_correction!r}")
    return mean, np.exp(fc.lower), np.exp(fc.upper)


def run_event_study(ts_level, spec, config, fit_options=None):
    """Fit on the log training window, forecast, and measure the impact.

    Parameters
    ----------
    ts_level : TimeSeries
        Market capitalization in levels.
    spec : ModelSpec
    config : EventStudyConfig
    fit_options : dict, optional
        Keyword arguments for :func:`ucimpact.estimation.fit`.

    Returns
    -------
    EventStudyResult
    """
    from .estimation import fit as fit_model
    from .kalman import forecast, kalman_filter

    if ts_level.scale != "level":
        raise DataError("run_event_study expects a level-scale series")
    if config.train_start < ts_level.start or config.train_end > ts_level.end:
        raise ConfigurationError(
            f"training window {config.train_start}..{config.train_end} outside data "
            f"{ts_level.start}..{ts_level.end}"
        )
    post_end = config.event_month + (config.horizon - 1)
    if config.event_month > ts_level.end:
        raise ConfigurationError(f"no observations on or after event_month {config.event_month}")
    train = log_transform(slice_series(ts_level, config.train_start, config.train_end))
    res = fit_model(spec, train, **(fit_options or {}))
    system = res.system
    fo = kalman_filter(system, train.values)
    fc = forecast(system, fo, config.steps, alpha=1.0 - config.band_level)
    mean, lower, upper = level_forecast(fc, config.mean_correction)
    lead = config.lead
    cf = TimeSeries(config.event_month, mean[lead:], "level", "counterfactual")
    lo, hi = lower[lead:], upper[lead:]

    obs_vals = np.full(config.horizon, np.nan)
    avail_end = min(post_end, ts_level.end)
    seg = slice_series(ts_level, config.event_month, avail_end).values
    obs_vals[: seg.size] = seg
    if np.all(np.isnan(obs_vals)):
        raise ConfigurationError(f"post-event window {config.event_month}..{post_end} has no observations")
    observed = TimeSeries(config.event_month, obs_vals, "level", ts_level.label)

    rows = loss_table(observed, cf, config.windows, config.discount_rate)
    rec = recovery_month(observed, lo, hi, config.event_month, config.persistence)
    base = prebreak_baseline(ts_level, config.event_month)
    first_year = obs_vals[:12][~np.isnan(obs_vals[:12])]
    drop = 100.0 * (base.value - math.fsum(first_year) / first_year.size) / base.value if first_year.size else float("nan")
    report = ImpactReport(rows, rec, base, drop, config.to_dict())
    return EventStudyResult(fc, cf, lo, hi, observed, report, res)
