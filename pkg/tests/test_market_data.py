import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from esg_portfolio.market_data import (
    DateParseError,
    DuplicateTickerError,
    EmptyInputError,
    EmptyIntersectionError,
    EmptyResultError,
    EsgTable,
    InsufficientDataError,
    MissingColumnError,
    MissingFileError,
    PriceParseError,
    PriceTable,
    ScoreRangeError,
    compute_returns,
    join_universe,
    load_esg,
    load_prices,
    parse_window,
    write_esg,
    write_prices,
)


def _table(symbols, prices, start="2020-01-01"):
    prices = np.asarray(prices, dtype=float)
    dates = np.datetime64(start) + np.arange(prices.shape[1])
    return PriceTable(tuple(symbols), dates, prices)


class TestLoadPrices:
    def test_three_row_wide_file(self, csv_file):
        path = csv_file("""
date,AAA
2020-01-02,10
2020-01-03,11
2020-01-06,12
""")
        table = load_prices(path, window=None)
        assert table.shape == (1, 3)
        assert table.symbols == ("AAA",)
        assert table.prices.tolist() == [[10.0, 11.0, 12.0]]
        assert table.date_strings() == ["2020-01-02", "2020-01-03", "2020-01-06"]

    def test_yahoo_layout_uses_adjusted_close(self, csv_file):
        path = csv_file("""
Date,fund symbol,open,close,adjusted close,low,high,volume
2021-11-26,AAA,25.02,25.03,25.01,25.00,25.04,100
2021-11-29,AAA,25.03,25.05,25.02,25.01,25.06,120
2021-11-26,SPY,463.1,458.9,455.2,456.0,464.0,9000
2021-11-29,SPY,464.9,464.6,460.8,462.1,466.5,8000
""")
        table = load_prices(path)
        assert table.symbols == ("AAA", "SPY")
        np.testing.assert_array_equal(table.prices, [[25.01, 25.02], [455.2, 460.8]])

    def test_long_form_header(self, csv_file):
        path = csv_file("""
date,ticker,adj_close
2020-01-03,B,2.0
2020-01-02,A,1.0
2020-01-02,B,1.5
2020-01-03,A,1.1
""")
        table = load_prices(path, window=None)
        assert table.symbols == ("A", "B")
        np.testing.assert_array_equal(table.prices, [[1.0, 1.1], [1.5, 2.0]])

    def test_wide_rows_are_sorted_by_date(self, csv_file):
        path = csv_file("date,A\n2020-01-03,2\n2020-01-02,1\n")
        table = load_prices(path, window=None)
        assert table.prices.tolist() == [[1.0, 2.0]]

    def test_empty_file(self, csv_file):
        with pytest.raises(EmptyInputError, match="empty input"):
            load_prices(csv_file(""))

    def test_header_only(self, csv_file):
        with pytest.raises(EmptyInputError):
            load_prices(csv_file("date,A\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingFileError, match="nope.csv"):
            load_prices(tmp_path / "nope.csv")

    def test_bad_date(self, csv_file):
        with pytest.raises(DateParseError):
            load_prices(csv_file("date,A\n2020-13-01,1\n"), window=None)

    def test_non_numeric_price(self, csv_file):
        with pytest.raises(PriceParseError):
            load_prices(csv_file("date,A\n2020-01-02,abc\n"), window=None)

    def test_non_positive_price(self, csv_file):
        with pytest.raises(PriceParseError):
            load_prices(csv_file("date,A\n2020-01-02,0\n"), window=None)

    def test_duplicate_dates(self, csv_file):
        with pytest.raises(DateParseError):
            load_prices(csv_file("date,A\n2020-01-02,1\n2020-01-02,2\n"), window=None)

    def test_window_restricts_dates(self, csv_file):
        path = csv_file("""
date,A
2011-11-29,1
2011-11-30,2
2021-11-30,3
2021-12-01,4
""")
        table = load_prices(path)
        assert table.date_strings() == ["2011-11-30", "2021-11-30"]
        assert table.prices.tolist() == [[2.0, 3.0]]

    def test_window_with_no_dates(self, csv_file):
        with pytest.raises(EmptyResultError):
            load_prices(csv_file("date,A\n2000-01-03,1\n"))

    def test_coverage_filter_and_fill(self, csv_file):
        days = [str(np.datetime64("2020-01-01") + i) for i in range(20)]
        lines = ["date,FULL,ONE_GAP,TWO_GAPS"]
        for i, d in enumerate(days):
            one = "" if i == 0 else str(10 + i)
            two = "" if i in (5, 6) else str(20 + i)
            lines.append(f"{d},{1 + i},{one},{two}")
        table = load_prices(csv_file("\n".join(lines) + "\n"), window=None)
        # 19/20 = 95% survives, 18/20 does not
        assert table.symbols == ("FULL", "ONE_GAP")
        assert table.series("ONE_GAP")[0] == 11.0  # back-filled from day 1

    def test_forward_fill_inside_window(self, csv_file):
        path = csv_file("date,A\n2020-01-01,1\n2020-01-02,\n2020-01-03,3\n")
        table = load_prices(path, window=None, min_coverage=0.5)
        assert table.prices.tolist() == [[1.0, 1.0, 3.0]]

    def test_all_dropped(self, csv_file):
        path = csv_file("date,A\n2020-01-01,\n2020-01-02,\n2020-01-03,3\n")
        with pytest.raises(EmptyResultError):
            load_prices(path, window=None)


class TestLoadEsg:
    def test_reference_row(self, csv_file):
        esg = load_esg(csv_file("ticker,esg_score\nWBIG,9.38\n"))
        assert esg["WBIG"] == 9.38

    def test_extra_columns_ignored_and_zero_kept(self, csv_file):
        path = csv_file("ticker,environment,esg_score,governance\nSDP,1.0,0,2.0\nIVE,3,7.68,4\n")
        esg = load_esg(path)
        assert dict(esg.entries) == {"SDP": 0.0, "IVE": 7.68}

    def test_empty_file(self, csv_file):
        assert len(load_esg(csv_file(""))) == 0

    def test_out_of_range(self, csv_file):
        with pytest.raises(ScoreRangeError):
            load_esg(csv_file("ticker,esg_score\nX,11\n"))

    def test_negative(self, csv_file):
        with pytest.raises(ScoreRangeError):
            load_esg(csv_file("ticker,esg_score\nX,-0.1\n"))

    def test_duplicate(self, csv_file):
        with pytest.raises(DuplicateTickerError):
            load_esg(csv_file("ticker,esg_score\nX,1\nX,2\n"))

    def test_missing_score_column(self, csv_file):
        with pytest.raises(MissingColumnError):
            load_esg(csv_file("ticker,rating\nX,1\n"))

    def test_blank_score_means_no_record(self, csv_file):
        esg = load_esg(csv_file("ticker,esg_score\nX,\nY,4\n"))
        assert "X" not in esg and esg["Y"] == 4.0

    def test_table_validates(self):
        with pytest.raises(ScoreRangeError):
            EsgTable({"A": 10.5})


class TestJoinUniverse:
    def test_intersection(self):
        prices = _table("ABC", np.ones((3, 4)))
        esg = EsgTable({"B": 1.0, "C": 2.0, "D": 3.0})
        p, e = join_universe(prices, esg)
        assert p.symbols == ("B", "C")
        assert set(e.symbols) == {"B", "C"}

    def test_counts(self):
        prices = _table("ABCDE", np.ones((5, 4)))
        esg = EsgTable({"A": 1.0, "C": 0.0, "E": 9.0})
        p, e = join_universe(prices, esg)
        assert (len(p.symbols), len(e)) == (3, 3)

    def test_disjoint(self):
        with pytest.raises(EmptyIntersectionError):
            join_universe(_table("AB", np.ones((2, 3))), EsgTable({"Z": 1.0}))

    @given(
        priced=st.sets(st.sampled_from("ABCDEFGH"), min_size=1),
        scored=st.dictionaries(st.sampled_from("ABCDEFGHXY"), st.floats(0, 10), min_size=1),
    )
    def test_idempotent(self, priced, scored):
        priced = sorted(priced)
        if not set(priced) & set(scored):
            return
        prices = _table(priced, np.ones((len(priced), 3)))
        once = join_universe(prices, EsgTable(scored))
        twice = join_universe(*once)
        assert once[0].equals(twice[0])
        assert dict(once[1].entries) == dict(twice[1].entries)


class TestComputeReturns:
    def test_constant(self):
        panel = compute_returns(_table("A", [[5.0] * 6]))
        assert np.all(panel.returns == 0) and np.all(panel.cov_daily == 0)

    def test_single_return(self):
        panel = compute_returns(_table("A", [[100.0, 110.0]]))
        assert panel.returns.shape == (1, 1)
        assert panel.returns[0, 0] == pytest.approx(0.10, abs=1e-15)

    def test_exact_definition(self):
        prices = np.array([[3.0, 7.0, 5.0, 11.0]])
        panel = compute_returns(_table("A", prices))
        np.testing.assert_array_equal(panel.returns[0], prices[0, 1:] / prices[0, :-1] - 1)

    @pytest.mark.parametrize("n_returns", [2, 4, 10])
    def test_opposite_moves(self, n_returns):
        # alternating +-1% moves; mean return is 0 when n_returns is even
        up = np.array([0.01, -0.01] * (n_returns // 2))
        prices = np.vstack([100 * np.cumprod(np.r_[1, 1 + up]), 100 * np.cumprod(np.r_[1, 1 - up])])
        panel = compute_returns(_table("AB", prices))
        # hand value: sum of n products of -1e-4 over (n - 1)
        expected = -1e-4 * n_returns / (n_returns - 1)
        assert panel.cov_daily[0, 1] == pytest.approx(expected, rel=1e-9)
        corr = panel.cov_daily[0, 1] / np.sqrt(panel.cov_daily[0, 0] * panel.cov_daily[1, 1])
        assert corr == pytest.approx(-1.0, abs=1e-12)

    def test_too_short(self):
        with pytest.raises(InsufficientDataError):
            compute_returns(_table("A", [[1.0]]))

    @settings(max_examples=50, deadline=None)
    @given(st.data())
    def test_covariance_symmetric_psd(self, data):
        n = data.draw(st.integers(1, 6))
        t = data.draw(st.integers(2, 40))
        seed = data.draw(st.integers(0, 2**32 - 1))
        rng = np.random.default_rng(seed)
        prices = 50 * np.exp(np.cumsum(rng.normal(0, 0.02, (n, t)), axis=1))
        cov = compute_returns(_table([f"S{i}" for i in range(n)], prices)).cov_daily
        assert np.array_equal(cov, cov.T)
        assert np.linalg.eigvalsh(cov).min() >= -1e-10

    def test_dropping_an_etf_keeps_other_returns(self):
        rng = np.random.default_rng(3)
        prices = 20 * np.exp(np.cumsum(rng.normal(0, 0.01, (4, 30)), axis=1))
        full = compute_returns(_table("ABCD", prices))
        part = compute_returns(_table("ABCD", prices).select(["A", "C", "D"]))
        np.testing.assert_array_equal(full.returns[[0, 2, 3]], part.returns)
        np.testing.assert_array_equal(full.mean_daily[[0, 2, 3]], part.mean_daily)


class TestRoundTrip:
    @settings(max_examples=40, deadline=None)
    @given(
        values=st.lists(
            st.floats(min_value=1e-6, max_value=1e9, allow_nan=False, allow_infinity=False),
            min_size=2, max_size=30,
        ),
        n_symbols=st.integers(1, 3),
    )
    def test_prices_bit_exact(self, tmp_path_factory, values, n_symbols):
        k = len(values) // n_symbols
        if k == 0:
            return
        prices = np.array(values[: k * n_symbols]).reshape(n_symbols, k)
        table = _table([f"T{i}" for i in range(n_symbols)], prices)
        path = tmp_path_factory.mktemp("rt") / "prices.csv"
        write_prices(table, path)
        assert load_prices(path, window=None).equals(table)

    def test_esg(self, tmp_path):
        esg = EsgTable({"A": 0.0, "B": 9.38, "C": 1 / 3})
        write_esg(esg, tmp_path / "esg.csv")
        assert dict(load_esg(tmp_path / "esg.csv").entries) == dict(esg.entries)


def test_price_table_invariants():
    with pytest.raises(DuplicateTickerError):
        _table("AA", np.ones((2, 2)))
    with pytest.raises(PriceParseError):
        _table("A", [[1.0, -1.0]])
    with pytest.raises(DateParseError):
        PriceTable(("A",), np.array(["2020-01-02", "2020-01-01"], dtype="datetime64[D]"), [[1.0, 2.0]])


def test_parse_window():
    assert parse_window("2011-11-30:2021-11-30") == (dt.date(2011, 11, 30), dt.date(2021, 11, 30))
    with pytest.raises(ValueError):
        parse_window("2021-01-01")
