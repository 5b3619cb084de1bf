"""Behavior-log records, the 4-month calendar and the TSV log format.

Dates are kept as day offsets from 04-15 (day 0) to 08-15 (day 122); the
year is unknown so no absolute calendar is involved.  Besides the
record-at-a-time API (:class:`ActionRecord`, :func:`read_log`,
:func:`write_log`) the pipeline works on :class:`Log`, a columnar view
backed by numpy arrays.
"""
from __future__ import annotations

import enum
import os
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple

import numpy as np
import pandas as pd

N_DAYS = 123
N_ACTIONS = 4

# (month number, first day-of-month in window, last day-of-month in window)
_CALENDAR = ((4, 15, 30), (5, 1, 31), (6, 1, 30), (7, 1, 31), (8, 1, 15))


class ActionType(enum.IntEnum):
    CLICK = 0
    BUY = 1
    COLLECT = 2
    CART = 3

    @classmethod
    def parse(cls, code) -> "ActionType":
        try:
            return cls(int(code))
        except (ValueError, TypeError):
            raise ValueError(f"unknown action code {code!r}") from None


class Month(enum.IntEnum):
    """Competition months; each spans roughly one calendar month."""

    APRIL = 0
    MAY = 1
    JUNE = 2
    JULY = 3

    @property
    def first_day(self) -> int:
        return MONTH_RANGES[self][0]

    @property
    def last_day(self) -> int:
        return MONTH_RANGES[self][1]

    @property
    def days(self) -> range:
        return range(self.first_day, self.last_day + 1)

    @property
    def label(self) -> str:
        return self.name.capitalize()


# inclusive day ranges: 04-15..05-16, 05-17..06-20, 06-21..07-18, 07-19..08-15
MONTH_RANGES = {
    Month.APRIL: (0, 31),
    Month.MAY: (32, 66),
    Month.JUNE: (67, 94),
    Month.JULY: (95, 122),
}

_DATES: list[str] = [
    f"{m:02d}-{d:02d}" for m, lo, hi in _CALENDAR for d in range(lo, hi + 1)
]
_DAY_OF: dict[str, int] = {text: i for i, text in enumerate(_DATES)}
_MONTH_OF_DAY = np.empty(N_DAYS, dtype=np.int8)
for _m, (_lo, _hi) in MONTH_RANGES.items():
    _MONTH_OF_DAY[_lo : _hi + 1] = _m


def parse_date(text: str) -> int:
    """Convert ``"MM-DD"`` to a day offset from 04-15."""
    if not isinstance(text, str) or len(text) != 5 or text[2] != "-":
        raise ValueError(f"malformed date {text!r}, expected MM-DD")
    if not (text[:2].isdigit() and text[3:].isdigit()):
        raise ValueError(f"malformed date {text!r}, expected MM-DD")
    try:
        return _DAY_OF[text]
    except KeyError:
        raise ValueError(f"date {text!r} outside window 04-15..08-15") from None


def format_date(day: int) -> str:
    if not 0 <= day < N_DAYS:
        raise ValueError(f"day {day} outside window 0..{N_DAYS - 1}")
    return _DATES[day]


def month_of(day: int) -> Month:
    if not 0 <= day < N_DAYS:
        raise ValueError(f"day {day} outside window 0..{N_DAYS - 1}")
    return Month(int(_MONTH_OF_DAY[day]))


def months_of(days: np.ndarray) -> np.ndarray:
    """Vectorized :func:`month_of`; returns int8 month codes."""
    return _MONTH_OF_DAY[np.asarray(days)]


class ActionRecord(NamedTuple):
    user_id: int
    brand_id: int
    action: ActionType
    day: int


@dataclass(frozen=True)
class Log:
    """Columnar behavior log.

    All four arrays share one length; row order is the event order of the
    source and duplicates are kept.
    """

    user: np.ndarray
    brand: np.ndarray
    action: np.ndarray
    day: np.ndarray

    def __post_init__(self):
        n = len(self.user)
        if not (len(self.brand) == len(self.action) == len(self.day) == n):
            raise ValueError("log columns differ in length")

    @classmethod
    def from_arrays(cls, user, brand, action, day) -> "Log":
        return cls(
            np.ascontiguousarray(user, dtype=np.int64),
            np.ascontiguousarray(brand, dtype=np.int64),
            np.ascontiguousarray(action, dtype=np.int8),
            np.ascontiguousarray(day, dtype=np.int16),
        )

    @classmethod
    def empty(cls) -> "Log":
        return cls.from_arrays([], [], [], [])

    @classmethod
    def from_records(cls, records: Iterable[ActionRecord]) -> "Log":
        rows = list(records)
        if not rows:
            return cls.empty()
        u, b, a, d = zip(*rows)
        return cls.from_arrays(u, b, [int(x) for x in a], d)

    def __len__(self) -> int:
        return len(self.user)

    def __iter__(self) -> Iterator[ActionRecord]:
        for u, b, a, d in zip(
            self.user.tolist(), self.brand.tolist(), self.action.tolist(), self.day.tolist()
        ):
            yield ActionRecord(u, b, ActionType(a), d)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Log):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("user", "brand", "action", "day")
        )

    def take(self, mask_or_index) -> "Log":
        return Log(
            self.user[mask_or_index],
            self.brand[mask_or_index],
            self.action[mask_or_index],
            self.day[mask_or_index],
        )

    def window(self, start: int, end: int) -> "Log":
        """Records with ``start <= day < end``."""
        return self.take((self.day >= start) & (self.day < end))

    def concat(self, other: "Log") -> "Log":
        return Log.from_arrays(
            np.concatenate([self.user, other.user]),
            np.concatenate([self.brand, other.brand]),
            np.concatenate([self.action, other.action]),
            np.concatenate([self.day, other.day]),
        )

    def sorted(self) -> "Log":
        """Canonical order: user, day, brand, action."""
        order = np.lexsort((self.action, self.brand, self.day, self.user))
        return self.take(order)

    @property
    def day_range(self) -> tuple[int, int]:
        """``(first, last + 1)`` of the days present, ``(0, 0)`` when empty."""
        if len(self) == 0:
            return (0, 0)
        return int(self.day.min()), int(self.day.max()) + 1


def read_log(path: str | os.PathLike) -> Iterator[ActionRecord]:
    """Stream records from a TSV log, validating every line."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
            try:
                yield ActionRecord(
                    int(parts[0]), int(parts[1]), ActionType.parse(parts[2]), parse_date(parts[3])
                )
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None


def write_log(path: str | os.PathLike, records: Iterable[ActionRecord] | Log) -> None:
    if not isinstance(records, Log):
        records = Log.from_records(records)
    save_log(path, records)


def load_log(path: str | os.PathLike) -> Log:
    """Fast columnar reader for the TSV format used by :func:`read_log`."""
    try:
        df = pd.read_csv(
            path,
            sep="\t",
            header=None,
            names=["user", "brand", "action", "date"],
            dtype={"user": np.int64, "brand": np.int64, "action": np.int64, "date": str},
            na_filter=False,
            engine="c",
        )
    except pd.errors.EmptyDataError:
        return Log.empty()
    except (ValueError, pd.errors.ParserError):
        # fall back to the slow reader for a precise line number
        return Log.from_records(read_log(path))
    bad = ~df["action"].between(0, N_ACTIONS - 1)
    if bad.any():
        i = int(np.flatnonzero(bad.to_numpy())[0])
        raise ValueError(f"{path}:{i + 1}: unknown action code {df['action'].iat[i]!r}")
    day = df["date"].map(_DAY_OF)
    if day.isna().any():
        i = int(np.flatnonzero(day.isna().to_numpy())[0])
        text = df["date"].iat[i]
        try:
            parse_date(text)
        except ValueError as exc:
            raise ValueError(f"{path}:{i + 1}: {exc}") from None
    return Log.from_arrays(df["user"].to_numpy(), df["brand"].to_numpy(), df["action"].to_numpy(), day.to_numpy())


def save_log(path: str | os.PathLike, log: Log) -> None:
    dates = np.asarray(_DATES, dtype=object)[log.day]
    df = pd.DataFrame({"u": log.user, "b": log.brand, "a": log.action, "d": dates})
    df.to_csv(path, sep="\t", header=False, index=False, lineterminator="\n")
