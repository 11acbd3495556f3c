"""Wire formats and network nodes: native frames, UDP/TCP loopback, RDA."""
import socket
import struct
import threading
import time

import numpy as np
import pytest

from nxs.data import Chunk, MarkerEvent, PortType
from nxs.errors import (BadGuid, BadMagic, ConnectFailed, InconsistentHeader,
                        Oversize, ProtocolError, Truncated)
from nxs.frames import (CODE_NONE, HEADER, MAGIC, BoundedQueue, SeqTracker,
                        TcpReceive, TcpSend, UdpReceive, UdpSend, frame_decode,
                        frame_encode, split_chunk, stream_id_for)
from nxs.generate import Generator
from nxs.graph import Context, Pipeline, Probe, run
from nxs.rda import (RDA_GUID, RDA_HEADER, TYPE_DATA32, TYPE_START, TYPE_STOP,
                     RdaReceive, RdaStart, RdaStop, connect_with_retry,
                     marker_code, rda_decode)

SID = bytes(range(16))


def free_port(kind=socket.SOCK_DGRAM):
    s = socket.socket(socket.AF_INET, kind)
    if kind == socket.SOCK_STREAM:
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


def grid_chunk(n, ch, fs, first=0, names=None):
    data = np.arange(first * ch, (first + n) * ch, dtype=np.float64).reshape(n, ch)
    ts = (first + np.arange(n, dtype=np.float64)) / fs
    names = names or tuple(f"ch{i + 1}" for i in range(ch))
    return Chunk(ts, names, data, fs)


# -- frame encoding -----------------------------------------------------------------

def test_signal_frame_golden_bytes():
    fs = 100.0
    ts = 0.5 + np.arange(2) / fs
    chunk = Chunk(ts, ("only",), np.array([[1.5], [-2.0]]), fs)
    frame = frame_encode(chunk, SID, 7)
    expected = (b"NXS1" + SID
                + b"\x07\x00\x00\x00\x00\x00\x00\x00"          # seq u64
                + b"\x01"                                      # kind: signal
                + b"\x00\x00\x00\x00\x00\x00\xe0\x3f"          # t0 = 0.5
                + b"\x01\x00" + b"\x02\x00"                    # 1 ch, 2 samples
                + b"\x00\x00\xc0\x3f"                          # 1.5f
                + b"\x00\x00\x00\xc0")                         # -2.0f
    assert frame == expected
    item, sid, seq = frame_decode(frame, fs=fs)
    assert sid == SID and seq == 7
    assert np.array_equal(item.data, chunk.data)
    assert np.array_equal(item.timestamps, ts)


def test_marker_frame_golden_bytes():
    frame = frame_encode(MarkerEvent(1.0, "go", 7), SID, 1)
    expected = (b"NXS1" + SID
                + b"\x01\x00\x00\x00\x00\x00\x00\x00"
                + b"\x02"                                      # kind: marker
                + b"\x00\x00\x00\x00\x00\x00\xf0\x3f"          # t = 1.0
                + b"\x02\x00" + b"go"
                + b"\x07\x00\x00\x00")
    assert frame == expected
    item, _, _ = frame_decode(frame)
    assert item == MarkerEvent(1.0, "go", 7)


def test_marker_without_code_uses_the_sentinel():
    frame = frame_encode(MarkerEvent(0.0, "x"), SID, 0)
    assert frame.endswith(b"\x00\x00\x00\x80")  # INT32_MIN
    item, _, _ = frame_decode(frame)
    assert item.code is None
    # the sentinel value itself cannot be sent as a real code
    with pytest.raises(Oversize):
        frame_encode(MarkerEvent(0.0, "x", CODE_NONE), SID, 0)
    with pytest.raises(Oversize):
        frame_encode(MarkerEvent(0.0, "x", 2 ** 31), SID, 0)


def test_ten_thousand_round_trips_are_bit_exact():
    rng = np.random.default_rng(404)
    labels = ["go", "stop", "épreuve", "試行", "a" * 40]
    for i in range(10_000):
        sid = rng.bytes(16)
        seq = int(rng.integers(0, 2 ** 63))
        if i % 2 == 0:
            n = int(rng.integers(1, 9))
            ch = int(rng.integers(1, 4))
            fs = float(rng.choice([250.0, 512.0, 1000.0]))
            t0 = float(np.float64(rng.uniform(0, 1e4)))
            data = rng.standard_normal((n, ch)).astype(np.float32).astype(np.float64)
            sent = Chunk(t0 + np.arange(n) / fs,
                         tuple(f"c{k}" for k in range(ch)), data, fs)
            got, rsid, rseq = frame_decode(frame_encode(sent, sid, seq), fs=fs,
                                           channel_names=sent.channel_names)
            assert np.array_equal(got.data, sent.data)
            assert np.array_equal(got.timestamps, sent.timestamps)
            assert got.channel_names == sent.channel_names
        else:
            code = None if i % 3 else int(rng.integers(-2 ** 31 + 1, 2 ** 31))
            sent = MarkerEvent(float(rng.uniform(0, 1e4)),
                               labels[i % len(labels)], code)
            got, rsid, rseq = frame_decode(frame_encode(sent, sid, seq))
            assert got == sent
        assert rsid == sid and rseq == seq


def test_frame_decode_errors():
    frame = frame_encode(grid_chunk(4, 2, 250.0), SID, 0)
    with pytest.raises(BadMagic):
        frame_decode(b"XXXX" + frame[4:], fs=250.0)
    with pytest.raises(Truncated) as info:
        frame_decode(frame[:20], fs=250.0)
    assert info.value.expected == HEADER.size and info.value.got == 20
    with pytest.raises(Truncated):
        frame_decode(frame[:-1], fs=250.0)
    with pytest.raises(InconsistentHeader):
        frame_decode(frame + b"\x00", fs=250.0)
    with pytest.raises(ValueError):
        frame_decode(frame)  # fs not configured
    with pytest.raises(InconsistentHeader):
        frame_decode(frame, fs=250.0, channel_names=["a", "b", "c"])
    bad_kind = frame[:28] + b"\x09" + frame[29:]  # kind byte follows magic+id+seq
    with pytest.raises(InconsistentHeader):
        frame_decode(bad_kind, fs=250.0)
    with pytest.raises(ValueError):
        frame_encode(Chunk(np.empty(0), ("a",), np.empty((0, 1)), 250.0), SID, 0)


def test_split_chunk_respects_the_datagram_budget():
    chunk = grid_chunk(2000, 8, 512.0)
    parts = split_chunk(chunk)
    assert len(parts) == 48
    for part in parts:
        assert len(frame_encode(part, SID, 0)) <= 1400
    assert np.array_equal(np.vstack([p.data for p in parts]), chunk.data)
    assert np.array_equal(np.concatenate([p.timestamps for p in parts]),
                          chunk.timestamps)
    small = grid_chunk(10, 1, 250.0)
    assert split_chunk(small) == [small]
    with pytest.raises(Oversize):
        split_chunk(grid_chunk(1, 340, 250.0))  # one sample won't fit


def test_bounded_queue_drops_oldest():
    q = BoundedQueue(4)
    for i in range(6):
        q.put(i)
    assert q.drain() == [2, 3, 4, 5]
    assert q.dropped == 2
    assert q.drain() == []
    assert len(q) == 0


def test_seq_tracker_counts_gaps_per_stream():
    t = SeqTracker()
    for seq in (0, 1, 2):
        t.observe(b"a" * 16, seq)
    assert t.lost == 0
    t.observe(b"a" * 16, 5)
    assert t.lost == 2
    t.observe(b"a" * 16, 4)
    assert t.out_of_order == 1
    t.observe(b"a" * 16, 6)
    assert t.lost == 2
    t.observe(b"b" * 16, 10)  # first sighting of a new stream: no loss
    assert t.lost == 2


def test_stream_id_is_stable_and_distinct():
    assert stream_id_for("alpha") == stream_id_for("alpha")
    assert stream_id_for("alpha") != stream_id_for("beta")
    assert len(stream_id_for("x")) == 16


# -- UDP ------------------------------------------------------------------------------

def test_udp_receive_ports_and_bad_frames():
    rx = UdpReceive("rx", port=0, fs=250.0, names=["a", "b"])
    rx.setup()
    try:
        assert rx.port != 0  # rebound to the real ephemeral port
        sender = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        chunk = grid_chunk(5, 2, 250.0, names=("a", "b"))
        sender.sendto(frame_encode(chunk, SID, 0), ("127.0.0.1", rx.port))
        sender.sendto(frame_encode(MarkerEvent(0.3, "ping", 5), SID, 1),
                      ("127.0.0.1", rx.port))
        sender.sendto(b"garbage", ("127.0.0.1", rx.port))
        sender.close()
        deadline = time.time() + 2.0
        while time.time() < deadline and (len(rx.queue) < 2
                                          or rx.counters["bad_frames"] < 1):
            time.sleep(0.01)
        rx.out.clear()
        rx.extra_outputs["markers"].clear()
        rx.update(Context(now=0.0, step=0))
        chunks = list(rx.out)
        markers = list(rx.extra_outputs["markers"])
        assert len(chunks) == 1
        assert np.array_equal(chunks[0].data, chunk.data)
        assert chunks[0].channel_names == ("a", "b")
        assert markers == [MarkerEvent(0.3, "ping", 5)]
        assert rx.counters["bad_frames"] == 1
    finally:
        rx.terminate()


def test_udp_pipeline_loopback():
    port = free_port(socket.SOCK_DGRAM)
    p = Pipeline()
    rx = p.add(UdpReceive("rx", port=port, fs=250.0))
    src = p.add(Generator("src", mode="random", channels=3, fs=250.0, seed=99))
    src_probe = p.add(Probe("src_probe"), inputs=src)
    p.add(UdpSend("tx", host="127.0.0.1", port=port), inputs=src)
    rx_probe = p.add(Probe("rx_probe"), inputs=rx)
    report = run(p, duration=0.5, paced=True)
    assert report.ok
    sent = np.vstack([c.data for c in src_probe.chunks()])
    got = np.vstack([c.data for c in rx_probe.chunks()])
    assert got.shape[0] >= 50
    assert report.node_counters["rx"]["frames_lost"] == 0
    want = sent[:got.shape[0]].astype(np.float32).astype(np.float64)
    assert np.array_equal(got, want)


# -- TCP -----------------------------------------------------------------------------

def test_tcp_pipeline_loopback_delivers_everything_in_order():
    port = free_port(socket.SOCK_STREAM)
    p = Pipeline()
    rx = p.add(TcpReceive("rx", port=port, fs=250.0))
    src = p.add(Generator("src", mode="random", channels=2, fs=250.0, seed=7))
    src_probe = p.add(Probe("src_probe"), inputs=src)
    p.add(TcpSend("tx", host="127.0.0.1", port=port), inputs=src)
    rx_probe = p.add(Probe("rx_probe"), inputs=rx)
    report = run(p, duration=0.5, paced=True)
    assert report.ok
    assert report.node_counters["rx"]["frames_lost"] == 0
    assert report.node_counters["rx"]["queue_dropped"] == 0
    sent = np.vstack([c.data for c in src_probe.chunks()])
    got = np.vstack([c.data for c in rx_probe.chunks()])
    assert got.shape[0] >= 50
    assert np.array_equal(got, sent[:got.shape[0]].astype(np.float32).astype(np.float64))


def test_tcp_send_fails_fast_when_nobody_listens():
    port = free_port(socket.SOCK_STREAM)
    p = Pipeline()
    src = p.add(Generator("src", mode="random", fs=250.0))
    p.add(TcpSend("tx", host="127.0.0.1", port=port, max_retries=0,
                  retry_backoff=0.01), inputs=src)
    with pytest.raises(ConnectFailed):
        run(p, max_steps=5, paced=False)


def test_connect_with_retry_backs_off_then_raises():
    port = free_port(socket.SOCK_STREAM)
    t0 = time.perf_counter()
    with pytest.raises(ConnectFailed):
        connect_with_retry(("127.0.0.1", port), 2, 0.05)
    elapsed = time.perf_counter() - t0
    assert elapsed >= 0.14  # 0.05 + 0.10 between the three attempts


# -- RDA -----------------------------------------------------------------------------

def rda_message(mtype, body):
    return RDA_HEADER.pack(RDA_GUID, RDA_HEADER.size + len(body), mtype) + body


def start_message(names, fs, resolutions):
    body = struct.pack("<Ld", len(names), 1e6 / fs)
    body += np.asarray(resolutions, dtype="<f8").tobytes()
    body += b"".join(n.encode("latin-1") + b"\x00" for n in names)
    return rda_message(TYPE_START, body)


def data_message(block, samples, markers=()):
    samples = np.asarray(samples, dtype="<f4")
    body = struct.pack("<LLL", block, samples.shape[0], len(markers))
    body += samples.tobytes()
    for position, type_s, desc in markers:
        strings = type_s.encode() + b"\x00" + desc.encode() + b"\x00"
        body += struct.pack("<LlLl", 16 + len(strings), position, 1, -1) + strings
    return rda_message(TYPE_DATA32, body)


def test_rda_start_decoding():
    msg = start_message(["Fp1", "Fp2"], 500.0, [0.1, 0.5])
    start = rda_decode(msg)
    assert isinstance(start, RdaStart)
    assert start.channel_count == 2
    assert start.channel_names == ("Fp1", "Fp2")
    assert start.fs == 500.0
    assert np.array_equal(start.resolutions, [0.1, 0.5])


def test_rda_data_decoding_infers_channels():
    table = np.arange(12.0).reshape(6, 2)
    msg = data_message(3, table, markers=[(4, "Stimulus", "S  7")])
    data = rda_decode(msg)
    assert data.block == 3
    assert data.samples.shape == (6, 2)
    assert np.array_equal(data.samples, table)
    assert len(data.markers) == 1
    m = data.markers[0]
    assert (m.position, m.type, m.description) == (4, "Stimulus", "S  7")


def test_rda_stop_and_unknown_types():
    assert isinstance(rda_decode(rda_message(TYPE_STOP, b"")), RdaStop)
    assert rda_decode(rda_message(99, b"anything")) is None


def test_rda_corrupted_messages():
    msg = start_message(["a"], 250.0, [1.0])
    with pytest.raises(BadGuid):
        rda_decode(b"\x00" * 16 + msg[16:])
    with pytest.raises(Truncated):
        rda_decode(msg[:10])
    with pytest.raises(Truncated):
        rda_decode(msg[:-4])  # size field no longer matches
    bad_interval = start_message(["a"], 250.0, [1.0])
    # zero the sampling interval double in place
    patched = bytearray(bad_interval)
    patched[RDA_HEADER.size + 4:RDA_HEADER.size + 12] = b"\x00" * 8
    with pytest.raises(InconsistentHeader):
        rda_decode(bytes(patched))
    with pytest.raises(InconsistentHeader):
        # marker count says 1 but no marker bytes follow
        table = np.zeros((4, 1), dtype="<f4")
        body = struct.pack("<LLL", 0, 4, 1) + table.tobytes()
        rda_decode(rda_message(TYPE_DATA32, body))


def test_marker_code_extraction():
    assert marker_code("S  7") == 7
    assert marker_code("S 12 ") == 12
    assert marker_code("R128") == 128
    assert marker_code("T -3") == -3
    assert marker_code("Sync On") is None
    assert marker_code("") is None


class MockRdaServer(threading.Thread):
    def __init__(self, messages):
        super().__init__(daemon=True)
        self.messages = messages
        self._server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._server.bind(("127.0.0.1", 0))
        self._server.listen(1)
        self.port = self._server.getsockname()[1]

    def run(self):
        try:
            conn, _ = self._server.accept()
        except OSError:
            return
        with conn:
            for message in self.messages:
                try:
                    conn.sendall(message)
                except OSError:
                    return
                time.sleep(0.005)

    def close(self):
        self._server.close()


def test_rda_session_end_to_end():
    fs = 250.0
    resolutions = [0.5, 2.0]
    blocks = []
    for b in range(10):
        base = b * 1000
        table = (base + np.arange(400)).reshape(200, 2)
        blocks.append(table)
    messages = [start_message(["C3", "C4"], fs, resolutions)]
    for b, table in enumerate(blocks):
        markers = [(83, "Stimulus", "S  7")] if b == 3 else []
        messages.append(data_message(b, table, markers))
    messages.append(rda_message(TYPE_STOP, b""))

    server = MockRdaServer(messages)
    server.start()
    try:
        p = Pipeline()
        rda = p.add(RdaReceive("rda", host="127.0.0.1", port=server.port))
        probe = p.add(Probe("probe"), inputs=[rda, "rda.markers"])
        report = run(p, duration=0.8, paced=True)
        assert report.ok

        chunks = probe.chunks()
        assert len(chunks) == 10
        got = np.vstack([c.data for c in chunks])
        want = np.vstack(blocks) * np.array(resolutions)[None, :]
        assert np.array_equal(got, want)  # integer f32 values scale exactly
        assert chunks[0].channel_names == ("C3", "C4")
        assert chunks[0].sampling_rate == fs

        ts = np.concatenate([c.timestamps for c in chunks])
        assert np.allclose(np.diff(ts), 1.0 / fs, atol=1e-9)  # gap-free

        markers = probe.markers()
        assert len(markers) == 1
        assert markers[0].label == "S  7"
        assert markers[0].code == 7
        relative = markers[0].timestamp - chunks[0].timestamps[0]
        assert relative == pytest.approx((600 + 83) / fs, abs=1e-9)
    finally:
        server.close()


def test_rda_receive_surfaces_protocol_errors():
    bad = b"\xde\xad" * 8 + struct.pack("<LL", 24, TYPE_START)
    server = MockRdaServer([bad])
    server.start()
    try:
        p = Pipeline()
        p.add(RdaReceive("rda", host="127.0.0.1", port=server.port))
        report = run(p, duration=1.0, paced=True)
        assert report.failure is not None
        assert isinstance(report.failure.cause, ProtocolError)
    finally:
        server.close()


def test_rda_receive_fails_when_server_is_absent():
    port = free_port(socket.SOCK_STREAM)
    p = Pipeline()
    p.add(RdaReceive("rda", host="127.0.0.1", port=port, max_retries=0))
    report = run(p, duration=2.0, paced=True)
    assert report.failure is not None
    assert isinstance(report.failure.cause, ConnectFailed)
