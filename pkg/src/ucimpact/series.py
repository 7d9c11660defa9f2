"""Monthly market-capitalization series.

Daily quotes (price and shares outstanding) are aggregated into monthly
averages of the daily market cap. Months without any trading day become
missing observations; they are never interpolated because the Kalman filter
treats them exactly.
"""
import csv
import datetime as _dt
import io
import math
from dataclasses import dataclass
from functools import total_ordering

import numpy as np

from .exceptions import ConfigurationError, DataError, DomainError, RangeError

__all__ = [
    "MonthIndex",
    "DailyQuote",
    "SkipRecord",
    "IngestResult",
    "TimeSeries",
    "ingest_daily_csv",
    "write_daily_csv",
    "to_monthly_market_cap",
    "log_transform",
    "exp_transform",
    "slice_series",
    "concat",
    "write_series_csv",
    "read_series_csv",
]


@total_ordering
@dataclass(frozen=True)
class MonthIndex:
    """A calendar month. ``MonthIndex(1984, 1) + 1 == MonthIndex(1984, 2)``."""

    year: int
    month: int

    def __post_init__(self):
        if not 1 <= int(self.month) <= 12:
            raise ValueError(f"month must be in 1..12, got {self.month}")
        object.__setattr__(self, "year", int(self.year))
        object.__setattr__(self, "month", int(self.month))

    @property
    def ordinal(self):
        return self.year * 12 + (self.month - 1)

    @classmethod
    def from_ordinal(cls, n):
        y, m = divmod(int(n), 12)
        return cls(y, m + 1)

    @classmethod
    def parse(cls, text):
        """Parse ``YYYY-MM`` (or ``YYYY-MM-DD``, day ignored)."""
        parts = str(text).strip().split("-")
        if len(parts) < 2:
            raise ValueError(f"cannot parse month {text!r}; expected YYYY-MM")
        return cls(int(parts[0]), int(parts[1]))

    @classmethod
    def of(cls, date):
        return cls(date.year, date.month)

    def __add__(self, months):
        if not isinstance(months, (int, np.integer)):
            return NotImplemented
        return MonthIndex.from_ordinal(self.ordinal + int(months))

    def __sub__(self, other):
        if isinstance(other, MonthIndex):
            return self.ordinal - other.ordinal
        if isinstance(other, (int, np.integer)):
            return MonthIndex.from_ordinal(self.ordinal - int(other))
        return NotImplemented

    def __lt__(self, other):
        if not isinstance(other, MonthIndex):
            return NotImplemented
        return self.ordinal < other.ordinal

    def __str__(self):
        return f"{self.year:04d}-{self.month:02d}"


@dataclass(frozen=True)
class DailyQuote:
    date: _dt.date
    price: float
    shares_outstanding: float

    def __post_init__(self):
        if not (self.price > 0 and self.shares_outstanding > 0):
            raise DomainError(
                f"{self.date}: price and shares must be strictly positive"
            )

    @property
    def market_cap(self):
        return self.price * self.shares_outstanding


@dataclass(frozen=True)
class SkipRecord:
    line: int
    reason: str
    raw: tuple


@dataclass(frozen=True)
class IngestResult:
    quotes: tuple
    skipped: tuple = ()

    def __len__(self):
        return len(self.quotes)

    def __iter__(self):
        return iter(self.quotes)


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Monthly series; missing months are stored as NaN.

    Parameters
    ----------
    start : MonthIndex
        Month of the first observation.
    values : array_like
        Observations, NaN for missing.
    scale : {'level', 'log'}
    label : str
    """

    start: MonthIndex
    values: np.ndarray
    scale: str = "level"
    label: str = ""

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(-1)
        if vals.size < 1:
            raise DataError("a TimeSeries needs at least one entry")
        if self.scale not in ("level", "log"):
            raise ConfigurationError(f"unknown scale {self.scale!r}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return self.values.size

    def __eq__(self, other):
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (
            self.start == other.start
            and self.scale == other.scale
            and self.label == other.label
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    __hash__ = None

    @property
    def end(self):
        return self.start + (len(self) - 1)

    @property
    def missing(self):
        return np.isnan(self.values)

    @property
    def n_observed(self):
        return int((~self.missing).sum())

    def months(self):
        return [self.start + i for i in range(len(self))]

    def position(self, month):
        """Zero-based position of ``month`` in the series."""
        pos = month - self.start
        if not 0 <= pos < len(self):
            raise RangeError(f"{month} outside series span {self.start}..{self.end}")
        return pos

    def __getitem__(self, month):
        return self.values[self.position(month)]

    def with_values(self, values, scale=None, label=None):
        return TimeSeries(
            self.start,
            values,
            self.scale if scale is None else scale,
            self.label if label is None else label,
        )


def _parse_date(text, mdy):
    text = text.strip()
    if mdy:
        m, d, y = text.split("/")
        return _dt.date(int(y), int(m), int(d))
    return _dt.date.fromisoformat(text)


def _parse_positive(text):
    text = text.strip()
    if not text:
        return None
    try:
        val = float(text)
    except ValueError:
        return None
    if not math.isfinite(val) or val <= 0:
        return None
    return val


def ingest_daily_csv(source, mapping=None, mdy=False):
    """Read daily quotes from a UTF-8 CSV with a header row.

    Parameters
    ----------
    source : bytes, str, or file-like
        Raw CSV content or an open binary/text stream.
    mapping : dict, optional
        Maps ``date``, ``price``, ``shares`` to column names. Defaults to
        identical names.
    mdy : bool
        Parse dates as ``M/D/Y`` instead of ISO-8601.

    Returns
    -------
    IngestResult
        Parsed quotes in file order plus one ``SkipRecord`` for every row
        whose price or share count could not be parsed.
    """
    mapping = {"date": "date", "price": "price", "shares": "shares", **(mapping or {})}
    if isinstance(source, (bytes, bytearray)):
        text = bytes(source).decode("utf-8-sig")
    elif isinstance(source, str):
        text = source
    else:
        raw = source.read()
        text = raw.decode("utf-8-sig") if isinstance(raw, (bytes, bytearray)) else raw

    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ConfigurationError("CSV is empty; a header row is required") from None
    cols = {}
    for key in ("date", "price", "shares"):
        name = mapping[key]
        if name not in header:
            raise ConfigurationError(
                f"mapped column {key}={name!r} not found in header {header}"
            )
        cols[key] = header.index(name)

    quotes, skipped, seen, dups = [], [], {}, []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        raw = tuple(row)
        try:
            date = _parse_date(row[cols["date"]], mdy)
        except (ValueError, IndexError):
            skipped.append(SkipRecord(lineno, "unparseable date", raw))
            continue
        price = _parse_positive(row[cols["price"]]) if cols["price"] < len(row) else None
        if price is None:
            skipped.append(SkipRecord(lineno, "unparseable price", raw))
            continue
        shares = _parse_positive(row[cols["shares"]]) if cols["shares"] < len(row) else None
        if shares is None:
            skipped.append(SkipRecord(lineno, "unparseable shares", raw))
            continue
        if date in seen:
            dups.append(date)
        seen[date] = True
        quotes.append(DailyQuote(date, price, shares))
    if dups:
        listed = ", ".join(sorted({d.isoformat() for d in dups}))
        raise DataError(f"duplicate dates: {listed}")
    return IngestResult(tuple(quotes), tuple(skipped))


def write_daily_csv(quotes, stream, mapping=None):
    """Write quotes in the layout accepted by :func:`ingest_daily_csv`."""
    mapping = {"date": "date", "price": "price", "shares": "shares", **(mapping or {})}
    w = csv.writer(stream, lineterminator="\n")
    w.writerow([mapping["date"], mapping["price"], mapping["shares"]])
    for q in quotes:
        w.writerow([q.date.isoformat(), repr(float(q.price)), repr(float(q.shares_outstanding))])


def to_monthly_market_cap(daily, label="market_cap"):
    """Average daily market cap (price x shares) within each calendar month."""
    quotes = list(daily)
    if not quotes:
        raise DataError("daily table is empty")
    buckets = {}
    for q in quotes:
        buckets.setdefault(MonthIndex.of(q.date).ordinal, []).append(q.market_cap)
    lo, hi = min(buckets), max(buckets)
    values = np.full(hi - lo + 1, np.nan)
    for k, caps in buckets.items():
        # fsum is exactly rounded, so the mean does not depend on row order
        values[k - lo] = math.fsum(caps) / len(caps)
    return TimeSeries(MonthIndex.from_ordinal(lo), values, "level", label)


def log_transform(ts):
    vals = ts.values
    bad = np.flatnonzero(~np.isnan(vals) & ~(vals > 0))
    if bad.size:
        i = int(bad[0])
        raise DomainError(
            f"log of non-positive value {vals[i]!r} at index {i} ({ts.start + i})", index=i
        )
    return ts.with_values(np.log(vals), scale="log")


def exp_transform(ts):
    return ts.with_values(np.exp(ts.values), scale="level")


def slice_series(ts, start, end):
    """Inclusive sub-series from ``start`` to ``end``."""
    if end < start:
        raise RangeError(f"slice end {end} precedes start {start}")
    if start < ts.start or end > ts.end:
        raise RangeError(f"slice {start}..{end} outside series span {ts.start}..{ts.end}")
    i = start - ts.start
    return TimeSeries(start, ts.values[i : i + (end - start) + 1].copy(), ts.scale, ts.label)


def concat(a, b):
    if b.start != a.end + 1:
        raise RangeError(f"series are not contiguous: {a.end} then {b.start}")
    return TimeSeries(a.start, np.concatenate([a.values, b.values]), a.scale, a.label)


def _fmt(x):
    return "" if np.isnan(x) else repr(float(x))


def write_series_csv(ts, stream, meta=None):
    """Write ``year,month,value`` rows; missing values are empty fields."""
    if meta:
        stream.write("# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["year", "month", "value"])
    for i, m in enumerate(ts.months()):
        w.writerow([m.year, m.month, _fmt(ts.values[i])])


def read_series_csv(stream, scale=None, label=None):
    """Read a series written by :func:`write_series_csv`.

    ``scale`` and ``label`` fall back to the ``# key=value`` header when present.
    """
    text = stream.read() if hasattr(stream, "read") else str(stream)
    meta, body = {}, []
    for line in text.splitlines():
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta[k] = v
        elif line.strip():
            body.append(line)
    rows = list(csv.reader(body))
    if not rows or [c.strip() for c in rows[0]] != ["year", "month", "value"]:
        raise ConfigurationError("series CSV must have header year,month,value")
    rows = rows[1:]
    if not rows:
        raise DataError("series CSV has no rows")
    months = [MonthIndex(int(r[0]), int(r[1])) for r in rows]
    for a, b in zip(months, months[1:]):
        if b - a != 1:
            raise DataError(f"series CSV is not contiguous between {a} and {b}")
    values = [float(r[2]) if len(r) > 2 and r[2].strip() else np.nan for r in rows]
    return TimeSeries(
        months[0],
        values,
        scale or meta.get("scale", "level"),
        label if label is not None else meta.get("label", ""),
    )
