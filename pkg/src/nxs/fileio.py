"""Recording replay and file sinks.

The Reader node loads a recording up front (.xdf or .vhdr) and replays it
against pipeline time: every update emits the samples and markers whose
rebased stamp (original minus recording start, divided by the rate factor)
has been reached, in chunks of at most 32 ms to mimic acquisition cadence.
Values are never resampled, so the concatenation of the emitted chunks is
bit-identical to the loaded table.

ToCsv appends rows of full-precision decimals (``time,<ch...>``); markers go
to a sibling ``*_markers.csv``. BinLog writes the NXL1 chunked binary layout:

    magic "NXL1", u16 version, u16 channel count, f64 fs, f64 start time,
    per channel a u16 length and UTF-8 name; then fixed records of one f64
    timestamp and one f32 per channel, little-endian throughout.
"""
from __future__ import annotations

import csv
import io
import struct
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .brainvision import read_brainvision
from .data import Chunk, FeatureVector, MarkerEvent, PortType
from .errors import FileFormatError, SchemaChanged, Truncated, BadMagic
from .graph import Context, Node, slot
from .recording import Recording, StreamData
from .registry import register
from .xdf import read_xdf

CHUNK_SECONDS = 0.032

BINLOG_MAGIC = b"NXL1"
BINLOG_VERSION = 1
_BINLOG_FIXED = struct.Struct("<HHdd")  # version, channels, fs, start time


def load_recording(path) -> Recording:
    ext = Path(path).suffix.lower()
    if ext == ".xdf":
        return read_xdf(path)
    if ext == ".vhdr":
        return read_brainvision(path)
    raise FileFormatError(f"cannot read {ext or 'extensionless'} recordings "
                          "(.xdf and .vhdr are supported)")


class _SignalReplay:
    def __init__(self, stream: StreamData, rate: float, t0: float):
        self.stream = stream
        self.names = stream.channel_names
        self.out_ts = (stream.timestamps - t0) / rate
        self.out_fs = stream.fs * rate if stream.fs > 0 else None
        if self.out_fs:
            self.max_samples = max(1, int(round(CHUNK_SECONDS * self.out_fs)))
        else:
            self.max_samples = None
        self.cursor = 0

    @property
    def finished(self) -> bool:
        return self.cursor >= len(self.out_ts)

    def due(self, clock: float) -> list:
        stop = int(np.searchsorted(self.out_ts, clock, side="right"))
        chunks = []
        while self.cursor < stop:
            end = stop
            if self.max_samples is not None:
                end = min(stop, self.cursor + self.max_samples)
            chunks.append(Chunk(self.out_ts[self.cursor:end],
                                self.names,
                                self.stream.samples[self.cursor:end],
                                self.out_fs))
            self.cursor = end
        return chunks


class _MarkerReplay:
    def __init__(self, stream: StreamData, rate: float, t0: float):
        self.stream = stream
        self.out_ts = (stream.timestamps - t0) / rate
        self.cursor = 0

    @property
    def finished(self) -> bool:
        return self.cursor >= len(self.out_ts)

    def due(self, clock: float) -> list:
        stop = int(np.searchsorted(self.out_ts, clock, side="right"))
        events = []
        for i in range(self.cursor, stop):
            events.append(MarkerEvent(self.out_ts[i], self.stream.labels[i],
                                      self.stream.codes[i]))
        self.cursor = stop
        return events


@register
class Reader(Node):
    """Replay a recorded file (.xdf or .vhdr) in pipeline time.

    The first signal stream drives the main output; further signal streams
    get ports named after the stream. All marker streams merge into the
    `markers` port. `rate` scales playback speed (2.0 = twice real time)
    and the emitted sampling rate accordingly.
    """

    kind = "Reader"
    input_slots = ()
    output_type = PortType.SIGNAL

    def __init__(self, name: str, *, file, rate: float = 1.0):
        super().__init__(name)
        self.file = str(file)
        self.rate = float(rate)
        if self.rate <= 0:
            raise ValueError("rate must be positive")
        self.recording = load_recording(self.file)
        t0 = self.recording.start_time
        self._signals = []
        for i, stream in enumerate(self.recording.signal_streams):
            if i == 0:
                port = self.out
            else:
                port_name = stream.name if stream.name not in ("markers", "out", "") \
                    else f"signal{i + 1}"
                if port_name in self.extra_outputs:
                    port_name = f"signal{i + 1}"
                port = self.add_output(port_name, PortType.SIGNAL)
            self._signals.append((_SignalReplay(stream, self.rate, t0), port))
        self.add_output("markers", PortType.MARKER)
        self._markers = [_MarkerReplay(s, self.rate, t0)
                         for s in self.recording.marker_streams]

    @property
    def finished(self) -> bool:
        return (all(r.finished for r, _ in self._signals)
                and all(r.finished for r in self._markers))

    def update(self, ctx: Context) -> None:
        for replay, port in self._signals:
            for chunk in replay.due(ctx.now):
                port.push(chunk)
        marker_port = self.extra_outputs["markers"]
        for replay in self._markers:
            for event in replay.due(ctx.now):
                marker_port.push(event)


def _format_cell(value: float) -> str:
    return repr(float(value))


@register
class ToCsv(Node):
    """Log signal chunks, feature vectors and markers to CSV files.

    Rows carry full round-trip precision. The header is fixed by the first
    item; a later channel-set change raises. Markers go to a sibling file
    named `<stem>_markers.csv` with columns time,label,code.
    """

    kind = "ToCsv"
    input_slots = (slot("in", PortType.SIGNAL, PortType.VECTOR, PortType.MARKER),)
    variadic = True
    output_type = None

    def __init__(self, name: str, *, file):
        super().__init__(name)
        self.file = Path(file)
        self._handle: Optional[io.TextIOBase] = None
        self._writer = None
        self._header: Optional[tuple] = None
        self._with_label = False
        self._marker_handle = None
        self._marker_writer = None

    def _open_main(self, names: tuple, with_label: bool) -> None:
        self._handle = open(self.file, "w", newline="")
        self._writer = csv.writer(self._handle)
        self._header = tuple(names)
        self._with_label = with_label
        row = ["time", *names]
        if with_label:
            row.append("label")
        self._writer.writerow(row)

    def _marker_sink(self):
        if self._marker_writer is None:
            path = self.file.with_name(self.file.stem + "_markers.csv")
            self._marker_handle = open(path, "w", newline="")
            self._marker_writer = csv.writer(self._marker_handle)
            self._marker_writer.writerow(["time", "label", "code"])
        return self._marker_writer

    def _append(self, item) -> None:
        if isinstance(item, MarkerEvent):
            sink = self._marker_sink()
            code = "" if item.code is None else item.code
            sink.writerow([_format_cell(item.timestamp), item.label, code])
            self.counters["markers"] += 1
            return
        if isinstance(item, FeatureVector):
            names = item.names or tuple(f"f{i + 1}" for i in range(len(item.values)))
            if self._header is None:
                self._open_main(names, with_label=True)
            elif self._header != tuple(names) or not self._with_label:
                raise SchemaChanged(f"vector names {names} differ from header {self._header}")
            row = [_format_cell(item.timestamp)]
            row.extend(_format_cell(v) for v in item.values)
            row.append("" if item.label is None else item.label)
            self._writer.writerow(row)
            self.counters["rows"] += 1
            return
        if self._header is None:
            self._open_main(item.channel_names, with_label=False)
        elif self._header != tuple(item.channel_names) or self._with_label:
            raise SchemaChanged(f"channels {item.channel_names} differ from "
                                f"header {self._header}")
        for t, row in zip(item.timestamps, item.data):
            self._writer.writerow([_format_cell(t), *(_format_cell(v) for v in row)])
        self.counters["rows"] += item.n_samples

    def update(self, ctx: Context) -> None:
        for port in self.inputs:
            for item in port:
                self._append(item)
        if self._handle is not None:
            self._handle.flush()
        if self._marker_handle is not None:
            self._marker_handle.flush()

    def terminate(self) -> None:
        for handle in (self._handle, self._marker_handle):
            if handle is not None:
                handle.close()
        self._handle = self._marker_handle = None
        self._writer = self._marker_writer = None


@register
class BinLog(Node):
    """Log signal chunks to the NXL1 chunked binary layout.

    Fixed-size records (f64 timestamp + f32 per channel) after a header
    carrying the channel names, rate and start time. Flushed at least once
    per second.
    """

    kind = "BinLog"
    input_slots = (slot("in", PortType.SIGNAL),)
    output_type = None

    def __init__(self, name: str, *, file):
        super().__init__(name)
        self.file = Path(file)
        self._handle = None
        self._names: Optional[tuple] = None
        self._record: Optional[struct.Struct] = None
        self._last_flush = 0.0

    def _open(self, chunk: Chunk) -> None:
        self._names = tuple(chunk.channel_names)
        self._handle = open(self.file, "wb")
        fs = chunk.sampling_rate or 0.0
        start = float(chunk.timestamps[0]) if chunk.n_samples else 0.0
        self._handle.write(BINLOG_MAGIC)
        self._handle.write(_BINLOG_FIXED.pack(BINLOG_VERSION, len(self._names), fs, start))
        for name in self._names:
            encoded = name.encode("utf-8")
            self._handle.write(struct.pack("<H", len(encoded)))
            self._handle.write(encoded)
        self._record = struct.Struct(f"<d{len(self._names)}f")
        self._last_flush = time.monotonic()

    def update(self, ctx: Context) -> None:
        for chunk in self.inputs[0]:
            if chunk.n_samples == 0:
                continue
            if self._handle is None:
                self._open(chunk)
            elif self._names != tuple(chunk.channel_names):
                raise SchemaChanged(f"channels {chunk.channel_names} differ from "
                                    f"header {self._names}")
            values = chunk.data.astype("<f4")
            for t, row in zip(chunk.timestamps, values):
                self._handle.write(self._record.pack(t, *row))
            self.counters["records"] += chunk.n_samples
        now = time.monotonic()
        if self._handle is not None and now - self._last_flush >= 1.0:
            self._handle.flush()
            self._last_flush = now

    def terminate(self) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None


@dataclass(frozen=True)
class BinLogData:
    channel_names: tuple
    fs: float
    start_time: float
    timestamps: np.ndarray
    data: np.ndarray  # float32 precision, widened to float64


def read_binlog(path) -> BinLogData:
    raw = Path(path).read_bytes()
    if raw[:4] != BINLOG_MAGIC:
        raise BadMagic(f"expected {BINLOG_MAGIC!r} at the start of {path}")
    if len(raw) < 4 + _BINLOG_FIXED.size:
        raise Truncated(4 + _BINLOG_FIXED.size, len(raw))
    version, count, fs, start = _BINLOG_FIXED.unpack_from(raw, 4)
    if version != BINLOG_VERSION:
        raise FileFormatError(f"binlog version {version} not supported")
    pos = 4 + _BINLOG_FIXED.size
    names = []
    for _ in range(count):
        if pos + 2 > len(raw):
            raise Truncated(pos + 2, len(raw))
        (length,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        if pos + length > len(raw):
            raise Truncated(pos + length, len(raw))
        names.append(raw[pos:pos + length].decode("utf-8"))
        pos += length
    record = struct.Struct(f"<d{count}f")
    body = raw[pos:]
    if len(body) % record.size != 0:
        raise Truncated(pos + (len(body) // record.size + 1) * record.size, len(raw))
    n = len(body) // record.size
    timestamps = np.empty(n, dtype=np.float64)
    data = np.empty((n, count), dtype=np.float64)
    for i in range(n):
        fields = record.unpack_from(body, i * record.size)
        timestamps[i] = fields[0]
        data[i] = fields[1:]
    return BinLogData(tuple(names), fs, start, timestamps, data)


def read_csv_table(path) -> tuple:
    """Parse a CSV written by ToCsv: (times, names, data, labels or None)."""
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    if not rows:
        raise FileFormatError(f"{path} is empty")
    header = rows[0]
    if not header or header[0] != "time":
        raise FileFormatError(f"{path} does not start with a time column")
    with_label = bool(header) and header[-1] == "label"
    names = tuple(header[1:-1] if with_label else header[1:])
    times = []
    data = []
    labels = [] if with_label else None
    for row in rows[1:]:
        if not row:
            continue
        times.append(float(row[0]))
        if with_label:
            data.append([float(v) for v in row[1:-1]])
            labels.append(row[-1])
        else:
            data.append([float(v) for v in row[1:]])
    table = np.array(data, dtype=np.float64) if data else np.empty((0, len(names)))
    return np.array(times, dtype=np.float64), names, table, labels
