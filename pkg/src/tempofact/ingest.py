"""Transaction-log parsing and binning into the activity tensor.

Input ledgers are comma-separated with a mandatory header row::

    timestamp,lender_id,borrower_id,amount_mEUR,proposer,maturity,lender_domestic,borrower_domestic

* ``timestamp``        ISO-8601 date-time (minute precision or finer), market-local clock
* ``lender_id`` /
  ``borrower_id``      opaque bank identifiers, must differ
* ``amount_mEUR``      positive traded volume in million EUR
* ``proposer``         "lender" or "borrower": which side posted the quote
* ``maturity``         maturity label; overnight trades are "ON" or "ONL"
* ``*_domestic``       true/false (also accepts 1/0, yes/no)

Binning covers the 08:00-18:00 trading window split into equal intervals of
``delta`` minutes, half-open on the right except that a trade stamped at
exactly 18:00 lands in the last interval.  Every trade adds its amount to
both the lender row and the borrower row of the same (interval, day) fiber,
so total tensor mass is exactly twice the summed trade volume.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date, datetime, time

import numpy as np

from tempofact.tensor import DenseTensor3

LEDGER_COLUMNS = (
    "timestamp",
    "lender_id",
    "borrower_id",
    "amount_mEUR",
    "proposer",
    "maturity",
    "lender_domestic",
    "borrower_domestic",
)

OVERNIGHT_MATURITIES = frozenset({"ON", "ONL"})

WINDOW_OPEN = time(8, 0)
WINDOW_CLOSE = time(18, 0)
_WINDOW_OPEN_S = 8 * 3600
_WINDOW_CLOSE_S = 18 * 3600
_WINDOW_MINUTES = 600

_TRUE_WORDS = frozenset({"true", "1", "t", "yes", "y"})
_FALSE_WORDS = frozenset({"false", "0", "f", "no", "n"})


class LedgerFormatError(ValueError):
    """The ledger file as a whole does not match the documented schema."""


@dataclass(frozen=True)
class TransactionRecord:
    """One time-stamped bilateral trade."""

    timestamp: datetime
    lender_id: str
    borrower_id: str
    amount: float
    proposer: str
    maturity: str
    lender_domestic: bool
    borrower_domestic: bool

    def __post_init__(self) -> None:
        if not self.amount > 0:
            raise ValueError(f"amount must be positive, got {self.amount!r}")
        if self.lender_id == self.borrower_id:
            raise ValueError(f"lender and borrower coincide: {self.lender_id!r}")
        if self.proposer not in ("lender", "borrower"):
            raise ValueError(f"proposer must be 'lender' or 'borrower', got {self.proposer!r}")


@dataclass(frozen=True)
class RowIssue:
    """A rejected ledger row with its 1-based line number."""

    line: int
    message: str


@dataclass
class LoadResult:
    records: list = field(default_factory=list)
    issues: list = field(default_factory=list)


def _parse_bool(text: str) -> bool:
    word = text.strip().lower()
    if word in _TRUE_WORDS:
        return True
    if word in _FALSE_WORDS:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def load_transactions(source) -> LoadResult:
    """Parse a ledger CSV; malformed rows become issues, never silent drops.

    ``source`` is a path or an open text stream.  A missing or wrong header
    raises :class:`LedgerFormatError`; unreadable paths raise OSError.
    """
    if hasattr(source, "read"):
        return _parse_stream(source)
    with open(source, newline="", encoding="utf-8") as handle:
        return _parse_stream(handle)


def _parse_stream(handle) -> LoadResult:
    reader = csv.reader(handle)
    try:
        header = next(reader)
    except StopIteration:
        raise LedgerFormatError("empty file: missing header row") from None
    if [h.strip() for h in header] != list(LEDGER_COLUMNS):
        raise LedgerFormatError(
            f"bad header {header!r}; expected {','.join(LEDGER_COLUMNS)}"
        )
    out = LoadResult()
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(LEDGER_COLUMNS):
            out.issues.append(RowIssue(line_no, f"expected {len(LEDGER_COLUMNS)} fields, got {len(row)}"))
            continue
        raw = dict(zip(LEDGER_COLUMNS, (cell.strip() for cell in row)))
        try:
            record = TransactionRecord(
                timestamp=datetime.fromisoformat(raw["timestamp"]),
                lender_id=raw["lender_id"],
                borrower_id=raw["borrower_id"],
                amount=float(raw["amount_mEUR"]),
                proposer=raw["proposer"].lower(),
                maturity=raw["maturity"],
                lender_domestic=_parse_bool(raw["lender_domestic"]),
                borrower_domestic=_parse_bool(raw["borrower_domestic"]),
            )
        except ValueError as err:
            out.issues.append(RowIssue(line_no, str(err)))
            continue
        out.records.append(record)
    return out


def save_transactions(path, records) -> None:
    """Write records back out in the documented ledger schema."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(LEDGER_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.timestamp.isoformat(sep="T"),
                    r.lender_id,
                    r.borrower_id,
                    repr(float(r.amount)),
                    r.proposer,
                    r.maturity,
                    "true" if r.lender_domestic else "false",
                    "true" if r.borrower_domestic else "false",
                ]
            )


def filter_overnight(records) -> list:
    """Keep exactly the trades with overnight maturity labels (ON, ONL)."""
    return [r for r in records if r.maturity in OVERNIGHT_MATURITIES]


@dataclass(frozen=True)
class TensorIndex:
    """Maps tensor axes back to bank identifiers, dates and clock intervals."""

    bank_ids: tuple
    day_dates: tuple
    delta: int
    window: tuple = (WINDOW_OPEN, WINDOW_CLOSE)

    def __post_init__(self) -> None:
        if _WINDOW_MINUTES % self.delta != 0:
            raise ValueError(f"delta={self.delta} does not divide the {_WINDOW_MINUTES}-minute window")
        if len(set(self.bank_ids)) != len(self.bank_ids):
            raise ValueError("bank_ids contains duplicates")
        if any(b <= a for a, b in zip(self.day_dates, self.day_dates[1:])):
            raise ValueError("day_dates must be strictly increasing")
        object.__setattr__(self, "bank_ids", tuple(self.bank_ids))
        object.__setattr__(self, "day_dates", tuple(self.day_dates))

    @property
    def intervals(self) -> int:
        return _WINDOW_MINUTES // self.delta

    def interval_label(self, j: int) -> str:
        minutes = _WINDOW_OPEN_S // 60 + j * self.delta
        return f"{minutes // 60:02d}:{minutes % 60:02d}"

    def to_dict(self) -> dict:
        return {
            "bank_ids": list(self.bank_ids),
            "day_dates": [d.isoformat() for d in self.day_dates],
            "delta_minutes": self.delta,
            "window": [t.isoformat(timespec="minutes") for t in self.window],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TensorIndex":
        return cls(
            bank_ids=tuple(data["bank_ids"]),
            day_dates=tuple(date.fromisoformat(d) for d in data["day_dates"]),
            delta=int(data["delta_minutes"]),
            window=tuple(time.fromisoformat(t) for t in data["window"]),
        )


def _second_of_day(ts: datetime) -> int:
    return ts.hour * 3600 + ts.minute * 60 + ts.second


def build_tensor(records, delta: int):
    """Bin trades into a banks x intervals x days volume tensor.

    Returns ``(tensor, index, excluded)`` where ``excluded`` lists
    (record, reason) pairs for trades stamped outside the trading window.
    Banks and days enter the index only if they occur in the kept records,
    sorted lexicographically / chronologically.
    """
    if delta < 1 or _WINDOW_MINUTES % delta != 0:
        raise ValueError(f"delta must be a divisor of {_WINDOW_MINUTES}, got {delta}")
    kept = []
    excluded = []
    for r in records:
        sec = _second_of_day(r.timestamp)
        if sec < _WINDOW_OPEN_S or sec > _WINDOW_CLOSE_S:
            excluded.append((r, f"timestamp {r.timestamp.time()} outside 08:00-18:00 window"))
        else:
            kept.append(r)

    banks = sorted({r.lender_id for r in kept} | {r.borrower_id for r in kept})
    days = sorted({r.timestamp.date() for r in kept})
    bank_pos = {b: i for i, b in enumerate(banks)}
    day_pos = {d: i for i, d in enumerate(days)}
    t_count = _WINDOW_MINUTES // delta

    values = np.zeros((len(banks), t_count, len(days)))
    if kept:
        lender_rows = np.fromiter((bank_pos[r.lender_id] for r in kept), dtype=np.intp)
        borrower_rows = np.fromiter((bank_pos[r.borrower_id] for r in kept), dtype=np.intp)
        cols = np.fromiter(
            (min((_second_of_day(r.timestamp) - _WINDOW_OPEN_S) // (delta * 60), t_count - 1)
             for r in kept),
            dtype=np.intp,
        )
        slabs = np.fromiter((day_pos[r.timestamp.date()] for r in kept), dtype=np.intp)
        amounts = np.fromiter((r.amount for r in kept), dtype=np.float64)
        np.add.at(values, (lender_rows, cols, slabs), amounts)
        np.add.at(values, (borrower_rows, cols, slabs), amounts)

    index = TensorIndex(tuple(banks), tuple(days), delta)
    return DenseTensor3(values, "amount_meur"), index, excluded


def daily_series(records):
    """Per-day activity counts: (dates, distinct active banks, trade counts)."""
    by_day: dict = {}
    for r in records:
        day = r.timestamp.date()
        banks, trades = by_day.setdefault(day, (set(), [0]))
        banks.add(r.lender_id)
        banks.add(r.borrower_id)
        trades[0] += 1
    days = sorted(by_day)
    active = np.array([len(by_day[d][0]) for d in days], dtype=int)
    trades = np.array([by_day[d][1][0] for d in days], dtype=int)
    return days, active, trades


def moving_average(series, window: int = 20) -> np.ndarray:
    """Trailing mean over the most recent ``min(window, available)`` points."""
    if window < 1:
        raise ValueError("window must be >= 1")
    s = np.asarray(series, dtype=np.float64)
    out = np.empty_like(s)
    for i in range(len(s)):
        out[i] = s[max(0, i - window + 1): i + 1].mean()
    return out
