"""Daily rainfall records: fixed-width archive parsing, quality control,
declustering into independent events, and train/test block splitting.

Archive lines are 269 characters: station id (cols 1-11), year (12-15),
month (16-17), element (18-21), then 31 day groups of a 5-character value
and three flag characters (measurement, quality, source). PRCP values are
tenths of mm and -9999 marks a missing day.
"""
from __future__ import annotations

import calendar
import csv
import datetime as _dt
import io
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import DEFAULT_BLOCK_SIZE, WET_DAY_THRESHOLD, BlockData, Dataset

LINE_LENGTH = 269
MISSING = -9999
_HEAD = 21
_GROUP = 8


class IngestError(ValueError):
    """Malformed input or an impossible request."""


@dataclass
class StationRecord:
    """Daily values in mm (NaN = missing) with their 3-character flag strings."""

    station_id: str
    dates: np.ndarray  # datetime64[D], strictly increasing
    values: np.ndarray
    flags: np.ndarray  # str, "MQS"

    def __post_init__(self):
        self.dates = np.asarray(self.dates, dtype="datetime64[D]")
        self.values = np.asarray(self.values, dtype=float)
        self.flags = np.asarray(self.flags, dtype="<U3")
        if not (len(self.dates) == len(self.values) == len(self.flags)):
            raise IngestError("dates, values and flags must have equal length")
        if len(self.dates) > 1 and np.any(np.diff(self.dates).astype(int) <= 0):
            raise IngestError("dates must be strictly increasing")
        if np.any(self.values < 0):
            raise IngestError("daily values must be nonnegative or missing")

    @property
    def years(self):
        return self.dates.astype("datetime64[Y]").astype(int) + 1970

    @property
    def quality_flags(self):
        return np.array([f[1] if len(f) > 1 else " " for f in self.flags])

    def select(self, mask):
        return StationRecord(self.station_id, self.dates[mask], self.values[mask], self.flags[mask])

    def __eq__(self, other):
        if not isinstance(other, StationRecord):
            return NotImplemented
        return (self.station_id == other.station_id and np.array_equal(self.dates, other.dates)
                and np.array_equal(self.values, other.values, equal_nan=True)
                and np.array_equal(self.flags, other.flags))


# --------------------------------------------------------------------------
# fixed-width archive


def _read_text(source):
    if isinstance(source, (bytes, bytearray)):
        return bytes(source).decode("ascii")
    if hasattr(source, "read"):
        data = source.read()
        return data.decode("ascii") if isinstance(data, bytes) else data
    return Path(source).read_bytes().decode("ascii")


def parse_station_file(source, element="PRCP"):
    """Parse a fixed-width daily archive (path, bytes or file object)."""
    text = _read_text(source)
    station = None
    dates, values, flags = [], [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if len(line) != LINE_LENGTH:
            raise IngestError(f"line {lineno}: expected {LINE_LENGTH} characters, got {len(line)}")
        if line[17:21] != element:
            continue
        sid = line[0:11].strip()
        if station is None:
            station = sid
        elif sid != station:
            raise IngestError(f"line {lineno}: station {sid!r} differs from {station!r}")
        try:
            year, month = int(line[11:15]), int(line[15:17])
        except ValueError:
            raise IngestError(f"line {lineno}: bad year/month field {line[11:17]!r}") from None
        if not 1 <= month <= 12:
            raise IngestError(f"line {lineno}: month {month} out of range")
        ndays = calendar.monthrange(year, month)[1]
        for day in range(1, ndays + 1):
            start = _HEAD + (day - 1) * _GROUP
            raw = line[start:start + 5]
            try:
                v = int(raw)
            except ValueError:
                raise IngestError(f"line {lineno}: non-numeric value {raw!r} for day {day}") from None
            if v != MISSING and v < 0:
                raise IngestError(f"line {lineno}: negative precipitation {v} for day {day}")
            dates.append(_dt.date(year, month, day))
            values.append(np.nan if v == MISSING else v / 10.0)
            flags.append(line[start + 5:start + 8])
    if station is None:
        raise IngestError(f"no {element} rows found")
    order = np.argsort(np.array(dates, dtype="datetime64[D]"), kind="stable")
    rec = StationRecord(station, np.array(dates, dtype="datetime64[D]")[order],
                        np.array(values)[order], np.array(flags, dtype="<U3")[order])
    return rec


def format_station_file(record: StationRecord, element="PRCP"):
    """Serialise a record in the fixed-width layout (one line per month present)."""
    by_month = {}
    for d, v, f in zip(record.dates.astype(object), record.values, record.flags):
        by_month.setdefault((d.year, d.month), {})[d.day] = (v, f)
    out = []
    for (year, month) in sorted(by_month):
        days = by_month[(year, month)]
        parts = [f"{record.station_id:<11.11}{year:04d}{month:02d}{element:<4.4}"]
        for day in range(1, 32):
            if day in days:
                v, f = days[day]
                raw = MISSING if np.isnan(v) else int(round(v * 10.0))
                parts.append(f"{raw:5d}{f:<3.3}")
            else:
                parts.append(f"{MISSING:5d}   ")
        out.append("".join(parts))
    return "\n".join(out) + "\n"


def write_station_file(record: StationRecord, path, element="PRCP"):
    Path(path).write_text(format_station_file(record, element))


def read_csv_record(source, station_id="csv"):
    """Two-column CSV (ISO date, mm); blank, NA or negative values are missing."""
    text = _read_text(source)
    dates, values = [], []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or row[0].startswith("#"):
            continue
        try:
            d = np.datetime64(row[0].strip(), "D")
        except ValueError:
            if lineno == 1:
                continue  # header
            raise IngestError(f"line {lineno}: bad date {row[0]!r}") from None
        raw = row[1].strip() if len(row) > 1 else ""
        try:
            v = float(raw) if raw and raw.upper() not in ("NA", "NAN") else np.nan
        except ValueError:
            raise IngestError(f"line {lineno}: non-numeric value {raw!r}") from None
        dates.append(d)
        values.append(v if v >= 0 else np.nan)
    if not dates:
        raise IngestError("no data rows")
    dates = np.array(dates, dtype="datetime64[D]")
    order = np.argsort(dates, kind="stable")
    return StationRecord(station_id, dates[order], np.array(values)[order],
                         np.full(len(dates), "   ", dtype="<U3"))


# --------------------------------------------------------------------------
# quality control


@dataclass
class QcConfig:
    max_missing_days: int = 30
    min_years: int = 100
    wet_threshold: float = WET_DAY_THRESHOLD
    drop_flagged: bool = True

    def __post_init__(self):
        if self.max_missing_days < 0 or self.min_years < 0 or self.wet_threshold < 0:
            raise IngestError("QC thresholds must be nonnegative")


@dataclass
class QcResult:
    record: StationRecord
    accepted: bool
    reason: str
    dropped_years: dict = field(default_factory=dict)  # year -> missing days
    retained_years: list = field(default_factory=list)


def _days_in_year(y):
    return 366 if calendar.isleap(int(y)) else 365


def apply_qc(record: StationRecord, config: QcConfig | None = None) -> QcResult:
    """Blank flagged values, drop years with too many missing days, zero out
    sub-threshold values, and accept the station only with enough years left."""
    config = config or QcConfig()
    values = record.values.copy()
    if config.drop_flagged:
        values[record.quality_flags != " "] = np.nan
    with np.errstate(invalid="ignore"):
        values[values <= config.wet_threshold] = 0.0
    years = record.years
    dropped, kept = {}, []
    for y in np.unique(years):
        sel = years == y
        missing = _days_in_year(y) - int(np.sum(sel & ~np.isnan(values)))
        if missing > config.max_missing_days:
            dropped[int(y)] = missing
        else:
            kept.append(int(y))
    mask = np.isin(years, kept)
    out = StationRecord(record.station_id, record.dates[mask], values[mask], record.flags[mask])
    if len(kept) < config.min_years:
        return QcResult(out, False, f"only {len(kept)} years pass QC; at least {config.min_years} required",
                        dropped, kept)
    return QcResult(out, True, "", dropped, kept)


# --------------------------------------------------------------------------
# declustering


@dataclass
class DeclusterConfig:
    acf_cutoff: float = 0.1
    max_lag: int = 30
    window: int | None = None  # fixed half-window; skips the ACF search

    def __post_init__(self):
        if not 0 < self.acf_cutoff < 1:
            raise IngestError("ACF cutoff must lie in (0, 1)")
        if self.max_lag < 1:
            raise IngestError("max lag must be at least 1")
        if self.window is not None and self.window < 0:
            raise IngestError("window must be nonnegative")


def autocorrelation(x, max_lag):
    """Biased sample autocorrelation at lags 0..max_lag."""
    x = np.asarray(x, dtype=float)
    d = x - x.mean()
    denom = float(d @ d)
    if denom == 0:
        return np.concatenate([[1.0], np.zeros(max_lag)])
    return np.array([1.0] + [float(d[:-k] @ d[k:]) / denom if k < len(d) else 0.0
                             for k in range(1, max_lag + 1)])


def decorrelation_lag(acf, cutoff):
    """Smallest lag >= 1 with autocorrelation below ``cutoff``; None if none."""
    below = np.flatnonzero(np.asarray(acf[1:]) < cutoff)
    return int(below[0]) + 1 if below.size else None


def window_maxima(x, tau):
    """Mask of days that beat every earlier day within ``tau`` strictly and
    every later day within ``tau`` or tie it (the earliest of equal values wins).
    Only positive days can be selected."""
    x = np.asarray(x, dtype=float)
    keep = x > 0
    n = len(x)
    for k in range(1, min(tau, n - 1) + 1):
        keep[k:] &= x[k:] > x[:-k]
        keep[:-k] &= x[:-k] >= x[k:]
    return keep


def _year_series(record: StationRecord, year):
    # full calendar of one year, missing days as 0
    start = np.datetime64(f"{year:04d}-01-01")
    n = _days_in_year(year)
    out = np.zeros(n)
    sel = record.years == year
    idx = (record.dates[sel] - start).astype(int)
    out[idx] = np.nan_to_num(record.values[sel], nan=0.0)
    return out


@dataclass
class DeclusterResult:
    dataset: Dataset
    tau: int
    acf: np.ndarray
    wet_days: dict
    events: dict
    warning: str = ""


def decluster(record: StationRecord, config: DeclusterConfig | None = None,
              block_size=DEFAULT_BLOCK_SIZE) -> DeclusterResult:
    """Reduce each year's wet days to window maxima; one block per year.

    Windows do not cross year boundaries, so every annual maximum survives.
    """
    config = config or DeclusterConfig()
    years = [int(y) for y in np.unique(record.years)]
    if not years:
        raise IngestError("record has no days")
    series = {y: _year_series(record, y) for y in years}
    acf = autocorrelation(np.concatenate([series[y] for y in years]), config.max_lag)
    note = ""
    if config.window is not None:
        tau = int(config.window)
    else:
        tau = decorrelation_lag(acf, config.acf_cutoff)
        if tau is None:
            tau = config.max_lag
            note = f"autocorrelation stays above {config.acf_cutoff} up to lag {config.max_lag}"
            warnings.warn(note + "; using the max lag", RuntimeWarning)
    blocks, wet, events = [], {}, {}
    for y in years:
        x = series[y]
        keep = window_maxima(x, tau)
        blocks.append(BlockData(int(keep.sum()), x[keep]))
        wet[y] = int(np.sum(x > 0))
        events[y] = int(keep.sum())
    data = Dataset(blocks, block_size, [str(y) for y in years])
    return DeclusterResult(data, tau, acf, wet, events, note)


# --------------------------------------------------------------------------
# splitting


def split_train_test(dataset: Dataset, m_train, m_test=None, mode="first", rng=None):
    """Split blocks into disjoint training and test sets.

    ``first``: the first ``m_train`` blocks train; the test set is the next
    ``m_test`` blocks (all remaining ones by default). ``random``: a contiguous
    training window at a random start and ``m_test`` random other blocks.
    """
    J = dataset.J
    if m_train < 1:
        raise IngestError("need at least one training block")
    rest = J - m_train
    m_test = rest if m_test is None else int(m_test)
    if m_test < 1 or m_train + m_test > J:
        raise IngestError(f"cannot take {m_train} training and {m_test} test blocks from {J}")
    if mode == "first":
        train = np.arange(m_train)
        test = np.arange(m_train, m_train + m_test)
    elif mode == "random":
        if rng is None:
            raise IngestError("random split needs an rng")
        start = int(rng.integers(0, J - m_train + 1))
        train = np.arange(start, start + m_train)
        others = np.setdiff1d(np.arange(J), train)
        test = np.sort(rng.choice(others, size=m_test, replace=False))
    else:
        raise IngestError(f"unknown split mode {mode!r}")
    return dataset.subset(train), dataset.subset(test)


# --------------------------------------------------------------------------
# pipeline


def qc_report(qc: QcResult, dec: DeclusterResult | None):
    rep = {"station": qc.record.station_id, "accepted": qc.accepted, "reason": qc.reason,
           "dropped_years": {str(k): v for k, v in sorted(qc.dropped_years.items())},
           "retained_years": len(qc.retained_years)}
    if dec is not None:
        rep.update({"tau": dec.tau, "acf": [round(float(a), 12) for a in dec.acf[:dec.tau + 1]],
                    "events": {str(k): v for k, v in dec.events.items()},
                    "wet_days": {str(k): v for k, v in dec.wet_days.items()},
                    "warning": dec.warning})
    return rep


def process_station(record: StationRecord, qc: QcConfig | None = None,
                    dc: DeclusterConfig | None = None):
    """QC then decluster; returns (Dataset or None, report dict)."""
    res = apply_qc(record, qc)
    if not res.accepted:
        return None, qc_report(res, None)
    dec = decluster(res.record, dc)
    return dec.dataset, qc_report(res, dec)


def write_report(report, path):
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def synthetic_record(station_id, first_year, n_years, rng, wet_prob=(0.2, 0.6),
                     shape=0.75, scale=8.0, missing_rate=0.0, flag_rate=0.0):
    """Daily series with two-state Markov wet/dry occurrence and Weibull
    amounts (rounded to 0.1 mm), for tests and demonstrations.

    ``wet_prob`` = (P(wet | dry yesterday), P(wet | wet yesterday)).
    """
    start = np.datetime64(f"{first_year:04d}-01-01")
    end = np.datetime64(f"{first_year + n_years:04d}-01-01")
    dates = np.arange(start, end, dtype="datetime64[D]")
    n = len(dates)
    u = rng.random(n)
    wet = np.zeros(n, dtype=bool)
    for t in range(n):
        p = wet_prob[1] if t and wet[t - 1] else wet_prob[0]
        wet[t] = u[t] < p
    amount = np.round(scale * (-np.log1p(-rng.random(n))) ** (1.0 / shape), 1)
    values = np.where(wet, np.maximum(amount, 0.1), 0.0)
    flags = np.full(n, "   ", dtype="<U3")
    if missing_rate:
        values[rng.random(n) < missing_rate] = np.nan
    if flag_rate:
        hit = rng.random(n) < flag_rate
        flags[hit] = " X "
    return StationRecord(station_id, dates, values, flags)


__all__ = ["StationRecord", "IngestError", "parse_station_file", "format_station_file",
           "write_station_file", "read_csv_record", "QcConfig", "QcResult", "apply_qc",
           "DeclusterConfig", "DeclusterResult", "autocorrelation", "decorrelation_lag",
           "window_maxima", "decluster", "split_train_test", "qc_report", "process_station",
           "write_report", "synthetic_record"]
