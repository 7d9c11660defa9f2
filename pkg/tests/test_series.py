import datetime as dt
import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ucimpact.exceptions import ConfigurationError, DataError, DomainError, RangeError
from ucimpact.series import (
    DailyQuote,
    MonthIndex,
    TimeSeries,
    concat,
    exp_transform,
    ingest_daily_csv,
    log_transform,
    read_series_csv,
    slice_series,
    to_monthly_market_cap,
    write_daily_csv,
    write_series_csv,
)

months = st.builds(MonthIndex, st.integers(1900, 2100), st.integers(1, 12))


class TestMonthIndex:
    def test_arithmetic(self):
        assert MonthIndex(1983, 12) + 1 == MonthIndex(1984, 1)
        assert MonthIndex(1984, 1) - MonthIndex(1971, 1) == 156
        assert MonthIndex(1984, 1) - 13 == MonthIndex(1982, 12)
        assert str(MonthIndex(2015, 7)) == "2015-07"

    def test_parse(self):
        assert MonthIndex.parse("1984-01") == MonthIndex(1984, 1)
        assert MonthIndex.parse("1984-01-31") == MonthIndex(1984, 1)
        with pytest.raises(ValueError):
            MonthIndex.parse("1984")
        with pytest.raises(ValueError):
            MonthIndex(1984, 13)

    @given(months, months)
    def test_total_order_matches_difference(self, a, b):
        assert (a < b) == (b - a > 0)
        assert (a == b) == (a - b == 0)
        assert a + (b - a) == b

    @given(months, st.integers(-5000, 5000))
    def test_add_then_subtract(self, m, k):
        assert (m + k) - m == k


class TestIngest:
    def test_renamed_columns(self):
        text = "date,close,shares\n2020-01-02,10,5\n2020-01-03,11,5\n2020-01-06,12,5\n"
        res = ingest_daily_csv(text, {"price": "close"})
        assert len(res) == 3 and res.skipped == ()
        assert res.quotes[1] == DailyQuote(dt.date(2020, 1, 3), 11.0, 5.0)

    def test_blank_price_is_skipped(self):
        text = "date,price,shares\n2020-01-02,10,5\n2020-01-03,,5\n2020-01-06,12,5\n"
        res = ingest_daily_csv(text.encode())
        assert len(res) == 2
        assert len(res.skipped) == 1
        assert res.skipped[0].line == 3 and "price" in res.skipped[0].reason

    def test_missing_column(self):
        with pytest.raises(ConfigurationError, match="close"):
            ingest_daily_csv("date,price,shares\n2020-01-02,1,1\n", {"price": "close"})

    def test_duplicate_dates_listed(self):
        text = "date,price,shares\n2020-01-02,1,1\n2020-01-02,2,1\n2020-02-03,1,1\n2020-02-03,1,1\n"
        with pytest.raises(DataError, match="2020-01-02, 2020-02-03"):
            ingest_daily_csv(text)

    def test_mdy_flag(self):
        res = ingest_daily_csv("date,price,shares\n1/31/1984,2,3\n", mdy=True)
        assert res.quotes[0].date == dt.date(1984, 1, 31)
        assert len(ingest_daily_csv("date,price,shares\n1/31/1984,2,3\n").skipped) == 1

    def test_round_trip_1000_rows(self):
        rng = np.random.default_rng(3)
        day = dt.date(2000, 1, 1)
        quotes = []
        for i in range(1000):
            quotes.append(DailyQuote(day + dt.timedelta(days=i), float(rng.uniform(1, 100)),
                                     float(rng.integers(1, 10**9))))
        buf = io.StringIO()
        write_daily_csv(quotes, buf)
        back = ingest_daily_csv(buf.getvalue())
        assert back.quotes == tuple(quotes)

    def test_bom_and_binary_stream(self):
        raw = "﻿date,price,shares\n2020-01-02,1.5,2\n".encode("utf-8")
        res = ingest_daily_csv(io.BytesIO(raw))
        assert res.quotes[0].market_cap == 3.0


class TestMonthly:
    def test_mean_of_daily_caps(self):
        q = [DailyQuote(dt.date(2020, 1, 2), 10, 100), DailyQuote(dt.date(2020, 1, 3), 20, 100)]
        ts = to_monthly_market_cap(q)
        assert ts.values.tolist() == [1500.0] and ts.scale == "level"

    def test_gap_month_is_missing(self):
        q = [DailyQuote(dt.date(2020, 1, 2), 1, 1), DailyQuote(dt.date(2020, 3, 2), 2, 1)]
        ts = to_monthly_market_cap(q)
        assert len(ts) == 3 and math.isnan(ts.values[1]) and ts.start == MonthIndex(2020, 1)

    def test_gbm_matches_direct_recomputation(self):
        rng = np.random.default_rng(8)
        day = dt.date(2001, 1, 1)
        quotes, price = [], 30.0
        for i in range(700):
            price *= math.exp(0.02 * rng.standard_normal())
            quotes.append(DailyQuote(day + dt.timedelta(days=i), price, 1e6 + 1000 * (i // 90)))
        ts = to_monthly_market_cap(quotes)
        groups = {}
        for q in quotes:
            groups.setdefault((q.date.year, q.date.month), []).append(q.price * q.shares_outstanding)
        for k, (ym, caps) in enumerate(sorted(groups.items())):
            assert ts.values[k] == pytest.approx(sum(caps) / len(caps), rel=1e-12)

    @given(st.permutations(list(range(12))))
    def test_order_within_month_does_not_matter(self, perm):
        base = [DailyQuote(dt.date(2020, 5, 1 + i), 1.0 + 0.37 * i, 1e3 + i) for i in range(12)]
        a = to_monthly_market_cap(base).values
        b = to_monthly_market_cap([base[i] for i in perm]).values
        assert a.tobytes() == b.tobytes()

    def test_constant_daily_series(self):
        q = [DailyQuote(dt.date(2020, 1, 1) + dt.timedelta(days=i), 2.5, 4.0) for i in range(90)]
        assert np.all(to_monthly_market_cap(q).values == 10.0)


class TestTransforms:
    def test_exact_logs(self):
        ts = TimeSeries(MonthIndex(2000, 1), [1.0, math.e, math.e**2])
        np.testing.assert_allclose(log_transform(ts).values, [0, 1, 2], atol=1e-15)
        assert log_transform(ts).scale == "log"

    def test_non_positive_reports_index(self):
        ts = TimeSeries(MonthIndex(2000, 1), [1.0, np.nan, 0.0, 2.0])
        with pytest.raises(DomainError) as err:
            log_transform(ts)
        assert err.value.index == 2

    @given(st.lists(st.floats(1e-100, 1e100), min_size=1, max_size=50))
    def test_round_trip(self, xs):
        ts = TimeSeries(MonthIndex(2000, 1), xs)
        back = exp_transform(log_transform(ts)).values
        np.testing.assert_allclose(back, xs, rtol=1e-12)

    def test_values_are_read_only(self):
        ts = TimeSeries(MonthIndex(2000, 1), [1.0, 2.0])
        with pytest.raises(ValueError):
            ts.values[0] = 3.0


class TestSlice:
    ts = TimeSeries(MonthIndex(1999, 11), np.arange(30.0), label="x")

    def test_single_month(self):
        s = slice_series(self.ts, MonthIndex(2000, 2), MonthIndex(2000, 2))
        assert len(s) == 1 and s.values[0] == 3.0 and s.start == MonthIndex(2000, 2)

    def test_full_span_identity(self):
        assert slice_series(self.ts, self.ts.start, self.ts.end) == self.ts

    def test_out_of_span(self):
        with pytest.raises(RangeError):
            slice_series(self.ts, MonthIndex(1999, 10), MonthIndex(2000, 1))
        with pytest.raises(RangeError):
            slice_series(self.ts, MonthIndex(2000, 3), MonthIndex(2000, 1))

    @given(st.integers(0, 29), st.integers(0, 29), st.integers(0, 29))
    def test_partition(self, i, j, k):
        a, m, b = sorted((i, j, k))
        if m == b:
            return
        s = self.ts.start
        joined = concat(slice_series(self.ts, s + a, s + m), slice_series(self.ts, s + m + 1, s + b))
        assert joined == slice_series(self.ts, s + a, s + b)


def test_series_csv_round_trip():
    ts = TimeSeries(MonthIndex(1983, 11), [1.5, np.nan, 1e10 / 3], "log", "amx")
    buf = io.StringIO()
    write_series_csv(ts, buf, {"scale": ts.scale, "label": ts.label})
    text = buf.getvalue()
    assert "1983,12,\n" in text
    assert read_series_csv(io.StringIO(text)) == ts


def test_series_csv_rejects_gaps():
    with pytest.raises(DataError):
        read_series_csv("year,month,value\n2000,1,1\n2000,3,2\n")
