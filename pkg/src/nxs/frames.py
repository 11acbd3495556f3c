"""Native framed chunk protocol over UDP and TCP.

Frame layout (little-endian throughout):

    magic     4 bytes  "NXS1"
    stream_id 16 bytes
    seq       u64      per-sender frame counter
    kind      u8       1 = signal, 2 = marker
    timestamp f64      seconds (first sample time / marker time)

    signal payload: channels u16, samples u16, then samples*channels
    float32 values row-major (sample rows).
    marker payload: label length u16, UTF-8 label bytes, code i32
    (INT32_MIN encodes "no code").

The frame carries no sampling rate or channel names; receivers are
configured with those out of band. UDP datagrams stay <= 1400 bytes: the
sender splits chunks. TCP prefixes each frame with a u32 length.

Receivers run a background reader thread and hand frames to the node
through a bounded drop-oldest queue; sequence gaps per stream feed a drop
counter.
"""
from __future__ import annotations

import hashlib
import logging
import socket
import struct
import threading
from collections import deque
from typing import Optional, Sequence, Union

import numpy as np

from .data import Chunk, MarkerEvent, PortType
from .errors import BadMagic, InconsistentHeader, Oversize, Truncated
from .graph import Context, Node, slot
from .registry import register

log = logging.getLogger("nxs.frames")

MAGIC = b"NXS1"
HEADER = struct.Struct("<4s16sQBd")
KIND_SIGNAL = 1
KIND_MARKER = 2
CODE_NONE = -(2 ** 31)
UDP_MAX = 1400
_U16_MAX = 0xFFFF


def stream_id_for(name: str) -> bytes:
    """Deterministic 16-byte stream identifier derived from a node name."""
    return hashlib.md5(name.encode("utf-8")).digest()


def frame_encode(item: Union[Chunk, MarkerEvent], stream_id: bytes, seq: int) -> bytes:
    if len(stream_id) != 16:
        raise ValueError("stream_id must be 16 bytes")
    if isinstance(item, Chunk):
        if item.n_samples == 0:
            raise ValueError("cannot encode an empty chunk")
        if item.n_samples > _U16_MAX or item.n_channels > _U16_MAX:
            raise Oversize(
                f"chunk {item.n_samples}x{item.n_channels} exceeds u16 count fields")
        head = HEADER.pack(MAGIC, stream_id, seq, KIND_SIGNAL,
                           float(item.timestamps[0]))
        body = struct.pack("<HH", item.n_channels, item.n_samples)
        return head + body + item.data.astype("<f4").tobytes()
    label = item.label.encode("utf-8")
    if len(label) > _U16_MAX:
        raise Oversize(f"marker label of {len(label)} bytes exceeds the u16 field")
    if item.code is None:
        code = CODE_NONE
    else:
        code = int(item.code)
        # CODE_NONE itself is reserved for the no-code sentinel
        if not -(2 ** 31) < code < 2 ** 31:
            raise Oversize(f"marker code {code} does not fit in i32")
    head = HEADER.pack(MAGIC, stream_id, seq, KIND_MARKER, float(item.timestamp))
    return head + struct.pack("<H", len(label)) + label + struct.pack("<i", code)


def frame_decode(data: bytes, *, fs: Optional[float] = None,
                 channel_names: Optional[Sequence[str]] = None
                 ) -> tuple[Union[Chunk, MarkerEvent], bytes, int]:
    """Decode one frame -> (item, stream_id, seq).

    Signal frames need `fs` to reconstruct the per-sample timestamps
    (t0 + k/fs); channel names default to ch1..chN when not configured.
    """
    if len(data) < HEADER.size:
        raise Truncated(HEADER.size, len(data))
    magic, stream_id, seq, kind, timestamp = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"unknown frame magic {magic!r}")
    body = data[HEADER.size:]
    if kind == KIND_SIGNAL:
        if len(body) < 4:
            raise Truncated(HEADER.size + 4, len(data))
        channels, samples = struct.unpack_from("<HH", body)
        expected = HEADER.size + 4 + 4 * channels * samples
        if len(data) < expected:
            raise Truncated(expected, len(data))
        if len(data) > expected:
            raise InconsistentHeader(
                f"{len(data)} bytes for declared {samples}x{channels} payload")
        if fs is None:
            raise ValueError("fs is required to decode signal frames")
        values = np.frombuffer(body, dtype="<f4", count=samples * channels, offset=4)
        table = values.reshape(samples, channels).astype(np.float64)
        if channel_names is None:
            names = tuple(f"ch{i + 1}" for i in range(channels))
        else:
            names = tuple(channel_names)
            if len(names) != channels:
                raise InconsistentHeader(
                    f"configured {len(names)} channel names, frame has {channels}")
        ts = timestamp + np.arange(samples, dtype=np.float64) / fs
        return Chunk(ts, names, table, fs), stream_id, seq
    if kind == KIND_MARKER:
        if len(body) < 2:
            raise Truncated(HEADER.size + 2, len(data))
        (label_len,) = struct.unpack_from("<H", body)
        expected = HEADER.size + 2 + label_len + 4
        if len(data) < expected:
            raise Truncated(expected, len(data))
        if len(data) > expected:
            raise InconsistentHeader(f"{len(data)} bytes for a {label_len}-byte label")
        label = body[2:2 + label_len].decode("utf-8")
        (code,) = struct.unpack_from("<i", body, 2 + label_len)
        return MarkerEvent(timestamp, label, None if code == CODE_NONE else code), \
            stream_id, seq
    raise InconsistentHeader(f"unknown frame kind {kind}")


def split_chunk(chunk: Chunk, max_bytes: int = UDP_MAX) -> list[Chunk]:
    """Split a chunk so every encoded piece fits in max_bytes."""
    budget = max_bytes - HEADER.size - 4
    per_sample = 4 * chunk.n_channels
    max_samples = min(budget // per_sample, _U16_MAX)
    if max_samples < 1:
        raise Oversize(
            f"{chunk.n_channels} channels cannot fit one sample in {max_bytes} bytes")
    if chunk.n_samples <= max_samples:
        return [chunk]
    out = []
    for lo in range(0, chunk.n_samples, max_samples):
        hi = min(lo + max_samples, chunk.n_samples)
        out.append(Chunk(chunk.timestamps[lo:hi], chunk.channel_names,
                         chunk.data[lo:hi], chunk.sampling_rate))
    return out


class BoundedQueue:
    """Thread-safe bounded buffer; a full queue drops its oldest item."""

    def __init__(self, capacity: int = 256):
        self.capacity = int(capacity)
        self._items: deque = deque()
        self._lock = threading.Lock()
        self.dropped = 0

    def put(self, item) -> None:
        with self._lock:
            if len(self._items) >= self.capacity:
                self._items.popleft()
                self.dropped += 1
            self._items.append(item)

    def drain(self) -> list:
        with self._lock:
            items = list(self._items)
            self._items.clear()
        return items

    def __len__(self) -> int:
        with self._lock:
            return len(self._items)


class SeqTracker:
    """Counts sequence gaps (lost frames) per stream id."""

    def __init__(self):
        self._last: dict[bytes, int] = {}
        self.lost = 0
        self.out_of_order = 0

    def observe(self, stream_id: bytes, seq: int) -> None:
        last = self._last.get(stream_id)
        if last is not None:
            if seq > last + 1:
                self.lost += seq - last - 1
            elif seq <= last:
                self.out_of_order += 1
        self._last[stream_id] = max(seq, last) if last is not None else seq


# -- nodes ---------------------------------------------------------------------


@register
class UdpSend(Node):
    """Send incoming chunks and markers as UDP datagrams (native framing)."""

    kind = "UdpSend"
    input_slots = (slot("in", PortType.SIGNAL, PortType.MARKER),)
    variadic = True
    output_type = None

    def __init__(self, name: str, *, host: str = "127.0.0.1", port: int = 9560):
        super().__init__(name)
        self.address = (str(host), int(port))
        self.stream_id = stream_id_for(name)
        self._seq = 0
        self._sock: Optional[socket.socket] = None

    def setup(self) -> None:
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)

    def _send(self, item) -> None:
        frame = frame_encode(item, self.stream_id, self._seq)
        self._seq += 1
        try:
            self._sock.sendto(frame, self.address)
            self.counters["frames_sent"] += 1
        except OSError as exc:
            self.counters["send_errors"] += 1
            log.debug("UDP send to %s failed: %s", self.address, exc)

    def update(self, ctx: Context) -> None:
        for port in self.inputs:
            for item in port:
                if isinstance(item, Chunk):
                    for piece in split_chunk(item):
                        self._send(piece)
                else:
                    self._send(item)

    def terminate(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None


class _ReceiverMixin:
    """Shared drain-and-publish logic for framed receivers."""

    def _init_receiver(self, fs, names, queue_capacity):
        self.fs = None if fs is None else float(fs)
        self.names = None if names is None else [str(n) for n in names]
        self.queue = BoundedQueue(queue_capacity)
        self.tracker = SeqTracker()
        self._thread: Optional[threading.Thread] = None
        self._stop = threading.Event()
        self._error: Optional[Exception] = None

    def _handle_datagram(self, payload: bytes) -> None:
        try:
            item, stream_id, seq = frame_decode(payload, fs=self.fs,
                                                channel_names=self.names)
        except (BadMagic, Truncated, InconsistentHeader, ValueError) as exc:
            self.counters["bad_frames"] += 1
            log.debug("discarded frame: %s", exc)
            return
        self.tracker.observe(stream_id, seq)
        self.queue.put(item)

    def _publish(self) -> None:
        if self._error is not None:
            raise self._error
        for item in self.queue.drain():
            if isinstance(item, Chunk):
                self.out.push(item)
            else:
                self.extra_outputs["markers"].push(item)
        self.counters["frames_lost"] = self.tracker.lost
        self.counters["queue_dropped"] = self.queue.dropped


@register
class UdpReceive(Node, _ReceiverMixin):
    """Receive natively framed chunks/markers from a UDP port.

    The sampling rate (and optionally channel names) must be configured
    here; the wire format does not carry them.
    """

    kind = "UdpReceive"
    input_slots = ()
    output_type = PortType.SIGNAL

    def __init__(self, name: str, *, port: int, fs: float,
                 names: Optional[list] = None, queue_capacity: int = 256):
        super().__init__(name)
        self._init_receiver(fs, names, queue_capacity)
        self.port = int(port)
        self.add_output("markers", PortType.MARKER)
        self._sock: Optional[socket.socket] = None

    def setup(self) -> None:
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind(("0.0.0.0", self.port))
        self.port = self._sock.getsockname()[1]
        self._thread = threading.Thread(target=self._reader, daemon=True,
                                        name=f"{self.name}-udp")
        self._thread.start()

    def _reader(self) -> None:
        while not self._stop.is_set():
            try:
                payload, _ = self._sock.recvfrom(65536)
            except OSError:
                break
            self._handle_datagram(payload)

    def update(self, ctx: Context) -> None:
        self._publish()

    def terminate(self) -> None:
        self._stop.set()
        if self._sock is not None:
            self._sock.close()
            self._sock = None
        if self._thread is not None:
            self._thread.join(timeout=2.0)


@register
class TcpSend(Node):
    """Send frames over a TCP connection, each prefixed with a u32 length."""

    kind = "TcpSend"
    input_slots = (slot("in", PortType.SIGNAL, PortType.MARKER),)
    variadic = True
    output_type = None

    def __init__(self, name: str, *, host: str = "127.0.0.1", port: int = 9561,
                 max_retries: int = 3, retry_backoff: float = 0.2):
        super().__init__(name)
        self.address = (str(host), int(port))
        self.max_retries = int(max_retries)
        self.retry_backoff = float(retry_backoff)
        self.stream_id = stream_id_for(name)
        self._seq = 0
        self._sock: Optional[socket.socket] = None

    def setup(self) -> None:
        from .rda import connect_with_retry  # shared backoff helper
        self._sock = connect_with_retry(self.address, self.max_retries,
                                        self.retry_backoff)

    def update(self, ctx: Context) -> None:
        for port in self.inputs:
            for item in port:
                frame = frame_encode(item, self.stream_id, self._seq)
                self._seq += 1
                self._sock.sendall(struct.pack("<L", len(frame)) + frame)
                self.counters["frames_sent"] += 1

    def terminate(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None


@register
class TcpReceive(Node, _ReceiverMixin):
    """Accept one TCP sender and receive length-prefixed frames."""

    kind = "TcpReceive"
    input_slots = ()
    output_type = PortType.SIGNAL

    def __init__(self, name: str, *, port: int, fs: float,
                 names: Optional[list] = None, queue_capacity: int = 256):
        super().__init__(name)
        self._init_receiver(fs, names, queue_capacity)
        self.port = int(port)
        self.add_output("markers", PortType.MARKER)
        self._server: Optional[socket.socket] = None

    def setup(self) -> None:
        self._server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._server.bind(("0.0.0.0", self.port))
        self.port = self._server.getsockname()[1]
        self._server.listen(1)
        self._thread = threading.Thread(target=self._reader, daemon=True,
                                        name=f"{self.name}-tcp")
        self._thread.start()

    def _reader(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._server.accept()
            except OSError:
                break
            with conn:
                while not self._stop.is_set():
                    head = _read_exact(conn, 4)
                    if head is None:
                        break
                    (length,) = struct.unpack("<L", head)
                    if length > 64 * 1024 * 1024:
                        log.warning("oversized frame length %d, closing", length)
                        break
                    payload = _read_exact(conn, length)
                    if payload is None:
                        break
                    self._handle_datagram(payload)

    def update(self, ctx: Context) -> None:
        self._publish()

    def terminate(self) -> None:
        self._stop.set()
        if self._server is not None:
            self._server.close()
            self._server = None
        if self._thread is not None:
            self._thread.join(timeout=2.0)


def _read_exact(conn: socket.socket, count: int) -> Optional[bytes]:
    """Read exactly count bytes, or None on EOF/reset."""
    buf = b""
    while len(buf) < count:
        try:
            piece = conn.recv(count - len(buf))
        except OSError:
            return None
        if not piece:
            return None
        buf += piece
    return buf
