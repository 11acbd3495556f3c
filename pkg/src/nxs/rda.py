"""Client for the Brain Products Remote Data Access (RDA) protocol.

Message layout (little-endian): a 24-byte header of 16-byte GUID, u32 total
size (header included) and u32 type, followed by the body. Types handled:

    1 Start  u32 channel count, f64 sampling interval (microseconds),
             f64 resolution per channel, zero-terminated channel names
    4 Data   u32 block number, u32 points, u32 marker count,
             float32 samples (points x channels, sample rows), then markers:
             u32 size (field included), i32 position (relative to block),
             u32 points, i32 channel, zero-terminated type and description
    3 Stop   empty body

Other types are skipped (counted). Resolutions scale the raw values.
Timestamps are sample counts over fs from the session start, so a gap-free
block sequence yields gap-free stamps. The receiver thread pushes decoded
items into a bounded drop-oldest queue owned by the node.
"""
from __future__ import annotations

import logging
import re
import socket
import struct
import threading
import time
from binascii import unhexlify
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .data import Chunk, MarkerEvent, PortType
from .errors import BadGuid, ConnectFailed, InconsistentHeader, ProtocolError, Truncated
from .graph import Context, Node
from .registry import register

log = logging.getLogger("nxs.rda")

RDA_GUID = unhexlify("8E45584396C9864CAF4A98BBF6C91450")
RDA_HEADER = struct.Struct("<16sLL")
RDA_PORT_FLOAT32 = 51244
RDA_PORT_INT16 = 51234

TYPE_START = 1
TYPE_STOP = 3
TYPE_DATA32 = 4

_MAX_MESSAGE = 64 * 1024 * 1024


@dataclass(frozen=True)
class RdaStart:
    channel_count: int
    sampling_interval_us: float
    resolutions: np.ndarray
    channel_names: tuple

    @property
    def fs(self) -> float:
        return 1e6 / self.sampling_interval_us


@dataclass(frozen=True)
class RdaMarker:
    position: int        # sample index relative to the block start
    points: int
    channel: int         # -1 = all channels
    type: str
    description: str


@dataclass(frozen=True)
class RdaData:
    block: int
    samples: np.ndarray  # points x channels, resolutions not yet applied
    markers: tuple


@dataclass(frozen=True)
class RdaStop:
    pass


RdaMessage = Union[RdaStart, RdaData, RdaStop, None]


def _split_names(raw: bytes, count: int) -> list[str]:
    parts = raw.split(b"\x00")
    if len(parts) < count:
        raise InconsistentHeader(f"expected {count} channel names, found {len(parts) - 1}")
    return [p.decode("latin-1") for p in parts[:count]]


def rda_decode(message: bytes) -> RdaMessage:
    """Decode one complete RDA message (header + body); None for unknown types."""
    if len(message) < RDA_HEADER.size:
        raise Truncated(RDA_HEADER.size, len(message))
    guid, size, mtype = RDA_HEADER.unpack_from(message)
    if guid != RDA_GUID:
        raise BadGuid(f"GUID {guid.hex()} does not match the RDA constant")
    if size != len(message):
        raise Truncated(size, len(message))
    body = message[RDA_HEADER.size:]

    if mtype == TYPE_START:
        if len(body) < 12:
            raise Truncated(RDA_HEADER.size + 12, len(message))
        channel_count, interval = struct.unpack_from("<Ld", body)
        if interval <= 0:
            raise InconsistentHeader(f"sampling interval {interval} must be positive")
        res_end = 12 + 8 * channel_count
        if len(body) < res_end:
            raise Truncated(RDA_HEADER.size + res_end, len(message))
        resolutions = np.frombuffer(body, dtype="<f8", count=channel_count, offset=12)
        names = _split_names(body[res_end:], channel_count)
        return RdaStart(channel_count, interval, resolutions.copy(), tuple(names))

    if mtype == TYPE_DATA32:
        if len(body) < 12:
            raise Truncated(RDA_HEADER.size + 12, len(message))
        block, points, marker_count = struct.unpack_from("<LLL", body)
        return _decode_data_body(body, block, points, marker_count)

    if mtype == TYPE_STOP:
        return RdaStop()
    return None


def _decode_data_body(body: bytes, block: int, points: int, marker_count: int,
                      channels: Optional[int] = None) -> RdaData:
    if channels is None:
        channels = _infer_channels(body, points, marker_count)
    sample_bytes = 4 * points * channels
    end = 12 + sample_bytes
    if len(body) < end:
        raise Truncated(end + RDA_HEADER.size, len(body) + RDA_HEADER.size)
    raw = np.frombuffer(body, dtype="<f4", count=points * channels, offset=12)
    samples = raw.reshape(points, channels).astype(np.float64)
    markers = []
    index = end
    for _ in range(marker_count):
        if len(body) < index + 16:
            raise Truncated(index + 16, len(body))
        (msize,) = struct.unpack_from("<L", body, index)
        if msize < 16 or index + msize > len(body):
            raise InconsistentHeader(f"marker size {msize} exceeds the message")
        position, mpoints, channel = struct.unpack_from("<lLl", body, index + 4)
        strings = body[index + 16:index + msize].split(b"\x00")
        mtype_s = strings[0].decode("utf-8", "replace") if strings else ""
        desc = strings[1].decode("utf-8", "replace") if len(strings) > 1 else ""
        markers.append(RdaMarker(position, mpoints, channel, mtype_s, desc))
        index += msize
    return RdaData(block, samples, tuple(markers))


def _infer_channels(body: bytes, points: int, marker_count: int) -> int:
    """Channel count from the body length when no Start context is at hand."""
    if points == 0:
        return 0
    space = len(body) - 12
    if marker_count == 0:
        if space % (4 * points) != 0:
            raise InconsistentHeader(
                f"{space} data bytes not divisible by {points} points")
        return space // (4 * points)
    # walk candidate channel counts; marker blocks self-describe their size
    for channels in range(space // (4 * points), -1, -1):
        index = 12 + 4 * points * channels
        remaining_markers = marker_count
        pos = index
        ok = True
        while remaining_markers and pos + 4 <= len(body):
            (msize,) = struct.unpack_from("<L", body, pos)
            if msize < 16 or pos + msize > len(body):
                ok = False
                break
            pos += msize
            remaining_markers -= 1
        if ok and remaining_markers == 0 and pos == len(body):
            return channels
    raise InconsistentHeader("could not reconcile data block layout")


def marker_code(description: str) -> Optional[int]:
    """Trailing integer of a marker description ('S  12' -> 12), if any."""
    m = re.search(r"(-?\d+)\s*$", description)
    return int(m.group(1)) if m else None


def connect_with_retry(address: tuple, max_retries: int, backoff: float) -> socket.socket:
    """TCP connect with exponential backoff; raises ConnectFailed when exhausted."""
    delay = backoff
    last_error = None
    for attempt in range(max_retries + 1):
        try:
            return socket.create_connection(address, timeout=5.0)
        except OSError as exc:
            last_error = exc
            if attempt < max_retries:
                time.sleep(delay)
                delay *= 2
    raise ConnectFailed(f"could not connect to {address[0]}:{address[1]}: {last_error}")


def read_message(sock: socket.socket) -> Optional[bytes]:
    """Read one complete RDA message; None on clean EOF."""
    header = _recv_exact(sock, RDA_HEADER.size)
    if header is None:
        return None
    guid, size, mtype = RDA_HEADER.unpack(header)
    if guid != RDA_GUID:
        raise BadGuid(f"GUID {guid.hex()} does not match the RDA constant")
    if size < RDA_HEADER.size or size > _MAX_MESSAGE:
        raise InconsistentHeader(f"message size {size} out of range")
    body = _recv_exact(sock, size - RDA_HEADER.size)
    if body is None and size > RDA_HEADER.size:
        return None
    return header + (body or b"")


def _recv_exact(sock: socket.socket, count: int) -> Optional[bytes]:
    buf = b""
    while len(buf) < count:
        piece = sock.recv(count - len(buf))
        if not piece:
            return None
        buf += piece
    return buf


class RdaSession(threading.Thread):
    """Background reader converting an RDA stream into chunks and markers.

    Emitted timestamps are seconds since the session's first sample. On
    disconnection without a Stop message the session reconnects (bounded
    retries); the cumulative sample counter keeps stamps monotonic.
    """

    def __init__(self, host: str, port: int, queue, *, max_retries: int = 3,
                 backoff: float = 0.2, name: str = "rda"):
        super().__init__(daemon=True, name=f"{name}-reader")
        self.address = (host, port)
        self.queue = queue
        self.max_retries = int(max_retries)
        self.backoff = float(backoff)
        self.error: Optional[Exception] = None
        self.unknown_messages = 0
        self.stopped = threading.Event()
        self._halt = threading.Event()
        self._start_msg: Optional[RdaStart] = None
        self._sample_counter = 0

    def halt(self) -> None:
        self._halt.set()

    def run(self) -> None:
        attempts_left = self.max_retries
        try:
            sock = connect_with_retry(self.address, self.max_retries, self.backoff)
        except ConnectFailed as exc:
            self.error = exc
            self.stopped.set()
            return
        try:
            while not self._halt.is_set():
                try:
                    message = read_message(sock)
                except (BadGuid, InconsistentHeader, Truncated) as exc:
                    self.error = ProtocolError(str(exc))
                    return
                except OSError:
                    message = None
                if message is None:
                    # dropped connection: retry unless told to stop
                    sock.close()
                    if self._halt.is_set() or attempts_left <= 0:
                        return
                    attempts_left -= 1
                    try:
                        sock = connect_with_retry(self.address, 0, self.backoff)
                    except ConnectFailed:
                        return
                    continue
                if not self._consume(message):
                    return
        finally:
            try:
                sock.close()
            except OSError:
                pass
            self.stopped.set()

    def _consume(self, message: bytes) -> bool:
        guid, size, mtype = RDA_HEADER.unpack_from(message)
        body = message[RDA_HEADER.size:]
        if mtype == TYPE_START:
            try:
                self._start_msg = rda_decode(message)
            except (BadGuid, InconsistentHeader, Truncated) as exc:
                self.error = ProtocolError(str(exc))
                return False
            return True
        if mtype == TYPE_STOP:
            return False  # clean end of session
        if mtype == TYPE_DATA32:
            if self._start_msg is None:
                self.error = ProtocolError("Data message before Start")
                return False
            start = self._start_msg
            try:
                block, points, marker_count = struct.unpack_from("<LLL", body)
                data = _decode_data_body(body, block, points, marker_count,
                                         channels=start.channel_count)
            except (InconsistentHeader, Truncated, struct.error) as exc:
                self.error = ProtocolError(str(exc))
                return False
            fs = start.fs
            first = self._sample_counter
            ts = (first + np.arange(points, dtype=np.float64)) / fs
            values = data.samples * start.resolutions[None, :]
            if points:
                self.queue.put(Chunk(ts, start.channel_names, values, fs))
            for m in data.markers:
                label = m.description or m.type or "marker"
                stamp = (first + m.position) / fs
                self.queue.put(MarkerEvent(stamp, label, marker_code(m.description)))
            self._sample_counter += points
            return True
        self.unknown_messages += 1
        return True


@register
class RdaReceive(Node):
    """Receive live signal and markers from an RDA server (TCP).

    `offset` seconds are subtracted from all emitted timestamps
    (latency compensation). Pipeline timestamps place the session's first
    sample at the arrival step's pipeline time.
    """

    kind = "RdaReceive"
    input_slots = ()
    output_type = PortType.SIGNAL

    def __init__(self, name: str, *, host: str = "127.0.0.1",
                 port: int = RDA_PORT_FLOAT32, offset: float = 0.0,
                 max_retries: int = 3, queue_capacity: int = 256):
        super().__init__(name)
        from .frames import BoundedQueue
        self.host = str(host)
        self.port = int(port)
        self.offset = float(offset)
        self.max_retries = int(max_retries)
        self.queue = BoundedQueue(queue_capacity)
        self.add_output("markers", PortType.MARKER)
        self._session: Optional[RdaSession] = None
        self._origin: Optional[float] = None

    def setup(self) -> None:
        self._session = RdaSession(self.host, self.port, self.queue,
                                   max_retries=self.max_retries, name=self.name)
        self._session.start()

    def update(self, ctx: Context) -> None:
        if self._session.error is not None:
            raise self._session.error
        items = self.queue.drain()
        if not items:
            return
        if self._origin is None:
            self._origin = ctx.now
        shift = self._origin - self.offset
        for item in items:
            if isinstance(item, Chunk):
                self.out.push(Chunk(item.timestamps + shift, item.channel_names,
                                    item.data, item.sampling_rate))
            else:
                self.extra_outputs["markers"].push(
                    MarkerEvent(item.timestamp + shift, item.label, item.code))
        self.counters["queue_dropped"] = self.queue.dropped
        self.counters["unknown_messages"] = self._session.unknown_messages

    def terminate(self) -> None:
        if self._session is not None:
            self._session.halt()
            self._session.join(timeout=2.0)
            self._session = None
