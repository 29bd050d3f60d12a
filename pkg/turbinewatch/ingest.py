"""
CSV ingestion and export.

Dataset files look like

    timestamp,wind_speed,power,...
    2024-01-01T00:00:00+00:00,7.91,412.5,...

UTF-8, `.` decimal separator, ISO-8601 timestamps at a uniform step, empty
cells for missing values. Fault events live in a sidecar file

    fault_id,start,end
    fault-0,2024-01-03T10:00:00+00:00,2024-01-03T16:00:00+00:00

with `end` exclusive.
"""
from dataclasses import replace
from contextlib import contextmanager
from typing import BinaryIO, Iterator, List, Optional, TextIO, Tuple
import csv
import io
import logging

import numpy as np
import pandas as pd

from turbinewatch.dataset import FaultEvent, TimeSeriesDataset
from turbinewatch.exceptions import FormatException, ParsingException

DEFAULT_STEP_SECONDS = 600
EVENTS_HEADER = ["fault_id", "start", "end"]


@contextmanager
def _text(source: BinaryIO) -> Iterator[io.TextIOWrapper]:
    """Text view of a byte stream that leaves the stream open afterwards."""
    wrapper = io.TextIOWrapper(source, encoding="utf-8", newline="")
    try:
        yield wrapper
    finally:
        wrapper.detach()


def _parse_timestamps(cells: List[str], first_line: int) -> pd.DatetimeIndex:
    try:
        return pd.DatetimeIndex(pd.to_datetime(cells, utc=True))
    except (ValueError, TypeError) as e:
        raise FormatException(
            f"invalid timestamp in rows starting at line {first_line}: {e}"
        )


def _parse_value(cell: str, line: int) -> float:
    cell = cell.strip()
    if cell == "":
        return np.nan

    try:
        return float(cell)
    except ValueError:
        raise ParsingException(f"line {line}: {cell!r} is not a number")


def read_csv(
    source: BinaryIO, events_source: Optional[BinaryIO] = None
) -> TimeSeriesDataset:
    with _text(source) as text:
        channel_names, stamps, rows, lines = _read_table(csv.reader(text))

    timestamps = _parse_timestamps(stamps, lines[0])
    seconds = (timestamps - timestamps[0]).total_seconds().to_numpy()

    if len(rows) > 1:
        step = seconds[1] - seconds[0]
        deltas = np.diff(seconds)
        bad = np.nonzero(deltas != step)[0]
        if step <= 0 or len(bad) > 0:
            at = lines[bad[0] + 1] if len(bad) else lines[1]
            raise FormatException(f"line {at}: non-uniform sampling step")
    else:
        step = float(DEFAULT_STEP_SECONDS)

    ds = TimeSeriesDataset(
        start_time=timestamps[0],
        step=float(step),
        values=np.array(rows, dtype=np.float64),
        channel_names=channel_names,
    )

    if events_source is not None:
        ds = replace(ds, events=read_events(events_source, ds))

    return ds


def _read_table(reader) -> Tuple[List[str], List[str], List[List[float]], List[int]]:
    try:
        header = next(reader)
    except StopIteration:
        raise ParsingException("line 1: missing header row")

    if not header or header[0].strip() != "timestamp":
        raise FormatException("line 1: first column must be 'timestamp'")

    channel_names = [name.strip() for name in header[1:]]
    if len(channel_names) == 0:
        raise FormatException("line 1: no channel columns")

    seen = set()
    for name in channel_names:
        if name in seen:
            raise FormatException(f"line 1: duplicate channel name {name!r}")
        seen.add(name)

    stamps = []
    rows = []
    lines = []
    for row in reader:
        if len(row) == 0:
            continue

        if len(row) != len(header):
            raise ParsingException(
                f"line {reader.line_num}: expected {len(header)} fields, got {len(row)}"
            )

        stamps.append(row[0].strip())
        rows.append([_parse_value(cell, reader.line_num) for cell in row[1:]])
        lines.append(reader.line_num)

    if len(rows) == 0:
        raise ParsingException("no data rows")

    return channel_names, stamps, rows, lines


def read_events(source: BinaryIO, ds: TimeSeriesDataset) -> List[FaultEvent]:
    """
    Maps the wall clock ranges of the sidecar file onto sample indices of
    `ds`. Events are clipped to the dataset, events outside it are dropped.
    """
    with _text(source) as text:
        return _read_events(csv.reader(text), ds)


def _read_events(reader, ds: TimeSeriesDataset) -> List[FaultEvent]:
    events = []

    for row in reader:
        if len(row) == 0:
            continue

        if [cell.strip() for cell in row] == EVENTS_HEADER:
            continue

        if len(row) != 3:
            raise ParsingException(
                f"line {reader.line_num}: expected 3 fields, got {len(row)}"
            )

        fault_id, start, end = [cell.strip() for cell in row]
        bounds = _parse_timestamps([start, end], reader.line_num)
        offsets = (bounds - ds.start_time).total_seconds().to_numpy() / ds.step

        if np.any(offsets != np.round(offsets)):
            raise FormatException(
                f"line {reader.line_num}: event bounds are not on the sampling grid"
            )

        lo, hi = int(max(offsets[0], 0)), int(min(offsets[1], ds.n))
        if lo >= hi:
            logging.warning(f"event={fault_id} outside dataset, dropped")
            continue

        events.append(FaultEvent(lo, hi, fault_id))

    return events


def write_csv(ds: TimeSeriesDataset, sink: TextIO):
    frame = pd.DataFrame(ds.values, columns=ds.channel_names)
    frame.insert(0, "timestamp", [t.isoformat() for t in ds.timestamps()])
    frame.to_csv(sink, index=False, na_rep="", lineterminator="\n")


def write_events(ds: TimeSeriesDataset, sink: TextIO):
    stamps = ds.timestamps()
    end_of_data = stamps[-1] + pd.Timedelta(seconds=ds.step)

    def at(index: int) -> str:
        if index >= ds.n:
            return end_of_data.isoformat()
        return stamps[index].isoformat()

    frame = pd.DataFrame(
        [[e.fault_id, at(e.start_index), at(e.end_index)] for e in ds.events],
        columns=EVENTS_HEADER,
    )
    frame.to_csv(sink, index=False, lineterminator="\n")
