"""Reader for XDF recordings.

Layout: the 4-byte magic ``XDF:`` followed by chunks. Each chunk starts with
one byte giving the size of the length field (1, 4 or 8), the little-endian
length itself (covering tag and content), and a u16 tag:

    1 FileHeader    XML
    2 StreamHeader  u32 stream id + XML (name, type, channel_count,
                    nominal_srate, channel_format, channel labels)
    3 Samples       u32 stream id, variable-length sample count, then per
                    sample a u8 timestamp size (0 or 8), the optional f64
                    stamp and the values
    4 ClockOffset   u32 stream id + f64 collection time + f64 offset
    5 Boundary      ignored
    6 StreamFooter  u32 stream id + XML, ignored

Numeric values must be float32 or double64; ``string`` streams become marker
streams. A missing per-sample stamp continues from the previous one at the
nominal rate. Clock offsets are added to the stamps through piecewise-linear
interpolation over collection time.
"""
from __future__ import annotations

import struct
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np

from .errors import BadMagic, CorruptChunk, UnsupportedSampleFormat
from .recording import Recording, StreamData

XDF_MAGIC = b"XDF:"

TAG_FILE_HEADER = 1
TAG_STREAM_HEADER = 2
TAG_SAMPLES = 3
TAG_CLOCK_OFFSET = 4
TAG_BOUNDARY = 5
TAG_STREAM_FOOTER = 6

_NUMERIC_FORMATS = {"float32": ("<f4", 4), "double64": ("<f8", 8)}


class _Cursor:
    """Byte walker with absolute offsets for error reporting."""

    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    @property
    def done(self) -> bool:
        return self.pos >= len(self.data)

    def take(self, count: int, what: str) -> bytes:
        if self.pos + count > len(self.data):
            raise CorruptChunk(f"truncated {what}", self.pos)
        out = self.data[self.pos:self.pos + count]
        self.pos += count
        return out

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def f64(self, what: str) -> float:
        return struct.unpack("<d", self.take(8, what))[0]

    def varlen(self, what: str) -> int:
        at = self.pos
        nbytes = self.u8(what)
        if nbytes not in (1, 4, 8):
            raise CorruptChunk(f"{what} size {nbytes} not one of 1, 4, 8", at)
        return int.from_bytes(self.take(nbytes, what), "little")


class _XdfStream:
    def __init__(self, header_xml: ET.Element, offset: int):
        info = header_xml
        self.name = _xml_text(info, "name", "stream")
        self.type = _xml_text(info, "type", "")
        try:
            self.channel_count = int(_xml_text(info, "channel_count", "1"))
            self.fs = float(_xml_text(info, "nominal_srate", "0"))
        except ValueError:
            raise CorruptChunk("non-numeric stream header fields", offset) from None
        self.format = _xml_text(info, "channel_format", "")
        if self.format not in _NUMERIC_FORMATS and self.format != "string":
            raise UnsupportedSampleFormat(
                f"channel_format {self.format!r} (only float32, double64, string)")
        labels = [el.findtext("label") for el in info.iter("channel")]
        if len(labels) == self.channel_count and all(labels):
            self.channel_names = tuple(labels)
        else:
            self.channel_names = tuple(f"ch{i + 1}" for i in range(self.channel_count))
        self.rows: list = []
        self.labels: list = []
        self.stamps: list = []
        self.offsets: list = []


def _xml_text(root: ET.Element, tag: str, default: str) -> str:
    text = root.findtext(tag)
    return text.strip() if text and text.strip() else default


def _parse_xml(raw: bytes, offset: int) -> ET.Element:
    try:
        return ET.fromstring(raw.decode("utf-8", "replace"))
    except ET.ParseError as exc:
        raise CorruptChunk(f"bad XML header: {exc}", offset) from None


def _parse_samples(cur: _Cursor, end: int, stream: _XdfStream) -> None:
    count = cur.varlen("sample count")
    for _ in range(count):
        at = cur.pos
        ts_bytes = cur.u8("timestamp size")
        if ts_bytes == 8:
            stamp = cur.f64("timestamp")
        elif ts_bytes == 0:
            stamp = None
        else:
            raise CorruptChunk(f"timestamp size {ts_bytes} not 0 or 8", at)
        if stream.format == "string":
            length = cur.varlen("string length")
            stream.labels.append(cur.take(length, "string value").decode("utf-8", "replace"))
        else:
            dtype, size = _NUMERIC_FORMATS[stream.format]
            raw = cur.take(size * stream.channel_count, "sample values")
            stream.rows.append(np.frombuffer(raw, dtype=dtype).astype(np.float64))
        stream.stamps.append(stamp)
        if cur.pos > end:
            raise CorruptChunk("samples overrun their chunk", at)


def _fill_stamps(stamps: list, fs: float) -> np.ndarray:
    out = np.empty(len(stamps), dtype=np.float64)
    step = 1.0 / fs if fs > 0 else 0.0
    prev = None
    for i, stamp in enumerate(stamps):
        if stamp is None:
            stamp = 0.0 if prev is None else prev + step
        out[i] = stamp
        prev = stamp
    return out


def _apply_offsets(ts: np.ndarray, offsets: list) -> np.ndarray:
    if not offsets or not len(ts):
        return ts
    times = np.array([t for t, _ in offsets], dtype=np.float64)
    values = np.array([v for _, v in offsets], dtype=np.float64)
    order = np.argsort(times)
    return ts + np.interp(ts, times[order], values[order])


def read_xdf(path) -> Recording:
    """Parse an XDF file into a Recording (fully loaded, streaming parse)."""
    data = Path(path).read_bytes()
    if data[:4] != XDF_MAGIC:
        raise BadMagic(f"expected {XDF_MAGIC!r} at the start of {path}")
    cur = _Cursor(data, 4)
    streams: dict = {}
    order: list = []
    while not cur.done:
        chunk_at = cur.pos
        length = cur.varlen("chunk length")
        if length < 2:
            raise CorruptChunk(f"chunk length {length} below tag size", chunk_at)
        end = cur.pos + length
        if end > len(data):
            raise CorruptChunk("chunk extends past end of file", chunk_at)
        tag = cur.u16("chunk tag")
        if tag == TAG_STREAM_HEADER:
            stream_id = cur.u32("stream id")
            xml = _parse_xml(data[cur.pos:end], cur.pos)
            if stream_id in streams:
                raise CorruptChunk(f"duplicate header for stream {stream_id}", chunk_at)
            streams[stream_id] = _XdfStream(xml, chunk_at)
            order.append(stream_id)
        elif tag == TAG_SAMPLES:
            stream_id = cur.u32("stream id")
            if stream_id not in streams:
                raise CorruptChunk(f"samples for unknown stream {stream_id}", chunk_at)
            _parse_samples(cur, end, streams[stream_id])
        elif tag == TAG_CLOCK_OFFSET:
            stream_id = cur.u32("stream id")
            time = cur.f64("offset time")
            value = cur.f64("offset value")
            if stream_id in streams:
                streams[stream_id].offsets.append((time, value))
        elif tag not in (TAG_FILE_HEADER, TAG_BOUNDARY, TAG_STREAM_FOOTER):
            pass  # unknown tags are skipped, per the format's forward compatibility
        cur.pos = end

    out = []
    for stream_id in order:
        s = streams[stream_id]
        ts = _apply_offsets(_fill_stamps(s.stamps, s.fs), s.offsets)
        if s.format == "string":
            codes = tuple(_literal_code(label) for label in s.labels)
            out.append(StreamData(s.name, "marker", (), 0.0,
                                  np.empty((0, 0)), ts, tuple(s.labels), codes))
        else:
            table = (np.vstack(s.rows) if s.rows
                     else np.empty((0, s.channel_count)))
            fs = s.fs if s.fs > 0 else _estimate_rate(ts)
            out.append(StreamData(s.name, "signal", s.channel_names, fs, table, ts))
    return Recording(out, "xdf")


def _literal_code(label: str):
    """Markers whose label is an integer literal keep it as the code too."""
    try:
        return int(label.strip())
    except ValueError:
        return None


def _estimate_rate(ts: np.ndarray) -> float:
    """Median-spacing fallback for numeric streams declared irregular."""
    if len(ts) < 2:
        return 1.0
    spacing = float(np.median(np.diff(ts)))
    return 1.0 / spacing if spacing > 0 else 1.0
