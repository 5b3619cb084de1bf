import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tmpp.log_model import (
    MONTH_RANGES, N_DAYS, ActionRecord, ActionType, Log, Month,
    format_date, load_log, month_of, parse_date, read_log, save_log, write_log,
)


@pytest.mark.parametrize("text, day", [("04-15", 0), ("08-15", 122), ("05-16", 31), ("05-01", 16)])
def test_parse_date(text, day):
    assert parse_date(text) == day


@pytest.mark.parametrize("bad", ["04-14", "08-16", "4-15", "04/15", "13-01", "", "ab-cd", "06-31"])
def test_parse_date_rejects(bad):
    with pytest.raises(ValueError):
        parse_date(bad)


def test_date_roundtrip_exhaustive():
    seen = set()
    for day in range(N_DAYS):
        text = format_date(day)
        assert parse_date(text) == day
        seen.add(text)
    assert len(seen) == N_DAYS


@pytest.mark.parametrize("text, month", [
    ("04-15", Month.APRIL), ("05-16", Month.APRIL), ("05-17", Month.MAY), ("06-20", Month.MAY),
    ("06-21", Month.JUNE), ("07-18", Month.JUNE), ("07-19", Month.JULY), ("08-15", Month.JULY),
])
def test_month_table_boundaries(text, month):
    assert month_of(parse_date(text)) is month


def test_month_ranges_partition_window():
    covered = [d for m in Month for d in m.days]
    assert covered == list(range(N_DAYS))
    transitions = [d for d in range(1, N_DAYS) if month_of(d) != month_of(d - 1)]
    assert transitions == [32, 67, 95]
    assert MONTH_RANGES[Month.JUNE] == (67, 94)


def test_month_of_out_of_window():
    with pytest.raises(ValueError):
        month_of(123)
    with pytest.raises(ValueError):
        month_of(-1)


def test_action_codes():
    assert [int(a) for a in (ActionType.CLICK, ActionType.BUY, ActionType.COLLECT, ActionType.CART)] == [0, 1, 2, 3]
    with pytest.raises(ValueError, match="unknown action code"):
        ActionType.parse("9")


def test_read_line(tmp_path):
    p = tmp_path / "log.tsv"
    p.write_text("12\t7\t1\t06-21\n")
    assert list(read_log(p)) == [ActionRecord(12, 7, ActionType.BUY, 67)]


def test_read_empty(tmp_path):
    p = tmp_path / "log.tsv"
    p.write_text("")
    assert list(read_log(p)) == []
    assert len(load_log(p)) == 0


@pytest.mark.parametrize("reader", [lambda p: list(read_log(p)), load_log])
def test_unknown_action_reports_line(tmp_path, reader):
    p = tmp_path / "log.tsv"
    p.write_text("1\t2\t0\t05-01\n12\t7\t9\t06-21\n")
    with pytest.raises(ValueError, match=r":2: unknown action code"):
        reader(p)


@pytest.mark.parametrize("line", ["1\t2\t0\n", "1\t2\t0\t09-01\n", "x\t2\t0\t05-01\n"])
def test_malformed_lines(tmp_path, line):
    p = tmp_path / "log.tsv"
    p.write_text("1\t2\t0\t05-01\n" + line)
    for reader in (lambda q: list(read_log(q)), load_log):
        with pytest.raises(ValueError, match=":2:"):
            reader(p)


records = st.lists(
    st.builds(
        ActionRecord,
        st.integers(0, 2**63 - 1),
        st.integers(0, 2**63 - 1),
        st.sampled_from(list(ActionType)),
        st.integers(0, N_DAYS - 1),
    ),
    max_size=40,
)


@settings(max_examples=60, deadline=None)
@given(records)
def test_write_read_roundtrip(tmp_path_factory, recs):
    p = tmp_path_factory.mktemp("rt") / "log.tsv"
    write_log(p, recs)
    assert list(read_log(p)) == recs
    assert load_log(p) == Log.from_records(recs)


def test_columnar_save_matches_line_format(tmp_path):
    log = Log.from_records([ActionRecord(3, 4, ActionType.CART, 122), ActionRecord(3, 4, ActionType.CART, 122)])
    save_log(tmp_path / "a.tsv", log)
    assert (tmp_path / "a.tsv").read_text() == "3\t4\t3\t08-15\n3\t4\t3\t08-15\n"
