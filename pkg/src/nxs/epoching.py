"""Cutting continuous signal into fixed-length epochs.

One Epocher services all three trigger policies (periodic, any marker,
specific code). It keeps a bounded buffer of recent samples plus a list of
pending onsets waiting for enough future data; epochs come out with exactly
round(duration * fs) rows, bit-identical to the corresponding slice of the
un-chunked stream, however the input was chunked.
"""
from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from .data import Chunk, Epoch, MarkerEvent, PortType
from .errors import ChannelCountChanged
from .graph import Context, Node, slot
from .registry import register

log = logging.getLogger("nxs.epoching")


class Epocher:
    """Buffer + pending-trigger bookkeeping shared by the epoching nodes."""

    def __init__(self, duration: float, offset: float = 0.0):
        if duration <= 0:
            raise ValueError(f"duration must be positive, got {duration}")
        if offset < 0:
            raise ValueError(f"offset must be >= 0, got {offset}")
        self.duration = float(duration)
        self.offset = float(offset)
        self._data: Optional[np.ndarray] = None
        self._ts: Optional[np.ndarray] = None
        self._names: tuple = ()
        self._fs: Optional[float] = None
        self._rows = 0            # epoch length in samples
        self._capacity = 0
        self._trimmed = False     # buffer no longer reaches back to the stream start
        self._pending: list[tuple[float, Optional[MarkerEvent]]] = []
        self.skipped = 0          # triggers dropped (too old or overflow)

    @property
    def sampling_rate(self) -> Optional[float]:
        return self._fs

    @property
    def first_time(self) -> Optional[float]:
        if self._ts is None or (len(self._ts) == 0 and not self._trimmed):
            return None
        return self._t0

    def add_trigger(self, onset: float, trigger: Optional[MarkerEvent] = None) -> None:
        self._pending.append((float(onset), trigger))
        self._pending.sort(key=lambda p: p[0])

    def push(self, chunk: Chunk) -> list[Epoch]:
        if chunk.sampling_rate is None:
            raise ValueError("epoching needs a regular signal with a sampling rate")
        if self._data is None:
            self._fs = chunk.sampling_rate
            self._names = chunk.channel_names
            self._rows = int(round(self.duration * self._fs))
            span = 2.0 * (self.duration + self.offset)
            self._capacity = max(int(round(span * self._fs)), int(round(self._fs)))
            self._data = chunk.data.copy()
            self._ts = chunk.timestamps.copy()
            self._t0 = float(chunk.timestamps[0]) if chunk.n_samples else None
        else:
            if chunk.channel_names != self._names:
                raise ChannelCountChanged(
                    f"channel set changed from {self._names} to {chunk.channel_names}")
            if chunk.sampling_rate != self._fs:
                raise ChannelCountChanged(
                    f"sampling rate changed mid-stream: {self._fs} -> {chunk.sampling_rate}")
            if self._t0 is None and chunk.n_samples:
                self._t0 = float(chunk.timestamps[0])
            self._data = np.concatenate([self._data, chunk.data], axis=0)
            self._ts = np.concatenate([self._ts, chunk.timestamps])
        return self._drain()

    def _drain(self) -> list[Epoch]:
        out = []
        still_waiting = []
        for onset, trigger in self._pending:
            if self._trimmed and len(self._ts) and onset < self._ts[0]:
                self.skipped += 1
                log.warning("trigger at %.4f s points before the retained buffer, skipped", onset)
                continue
            idx = int(np.searchsorted(self._ts, onset, side="left"))
            if idx + self._rows <= len(self._ts):
                out.append(Epoch(onset, self._data[idx:idx + self._rows].copy(),
                                 self._names, self._fs, trigger=trigger,
                                 timestamps=self._ts[idx:idx + self._rows].copy()))
            else:
                still_waiting.append((onset, trigger))
        self._pending = still_waiting

        overflow = len(self._ts) - self._capacity
        if overflow > 0:
            self._data = self._data[overflow:]
            self._ts = self._ts[overflow:]
            self._trimmed = True
            while self._pending and self._pending[0][0] < self._ts[0]:
                onset, _ = self._pending.pop(0)
                self.skipped += 1
                log.warning("buffer overflow dropped pending trigger at %.4f s", onset)
        return out


def match_code(marker: MarkerEvent, code) -> bool:
    """A stimulation selector matches by integer code or by exact label."""
    if isinstance(code, bool):
        return False
    if isinstance(code, (int, np.integer)):
        return marker.code == int(code)
    return marker.label == str(code)


@register
class TimeBasedEpoching(Node):
    """Periodic epochs: onsets every `interval` seconds from the first sample."""

    kind = "TimeBasedEpoching"
    input_slots = (slot("in", PortType.SIGNAL),)
    output_type = PortType.EPOCH

    def __init__(self, name: str, *, duration: float, interval: float):
        super().__init__(name)
        if interval <= 0:
            raise ValueError(f"interval must be positive, got {interval}")
        self.interval = float(interval)
        self.epocher = Epocher(duration)
        self._k = 0  # onsets scheduled so far

    def update(self, ctx: Context) -> None:
        for chunk in self.inputs[0]:
            if chunk.n_samples == 0:
                continue
            t0 = self.epocher.first_time
            if t0 is None:
                t0 = float(chunk.timestamps[0])
            newest = float(chunk.timestamps[-1])
            while t0 + self._k * self.interval <= newest:
                self.epocher.add_trigger(t0 + self._k * self.interval)
                self._k += 1
            for epoch in self.epocher.push(chunk):
                self.out.push(epoch)
        self.counters["skipped_triggers"] = self.epocher.skipped


@register
class MarkerBasedEpoching(Node):
    """One epoch per incoming marker, onset at the marker time."""

    kind = "MarkerBasedEpoching"
    input_slots = (slot("in", PortType.SIGNAL), slot("markers", PortType.MARKER))
    output_type = PortType.EPOCH

    def __init__(self, name: str, *, duration: float):
        super().__init__(name)
        self.epocher = Epocher(duration)

    def update(self, ctx: Context) -> None:
        for marker in self.inputs[1]:
            self.epocher.add_trigger(marker.timestamp, marker)
        for chunk in self.inputs[0]:
            for epoch in self.epocher.push(chunk):
                self.out.push(epoch)
        self.counters["skipped_triggers"] = self.epocher.skipped


@register
class StimulationBasedEpoching(Node):
    """Epochs only for markers matching one stimulation code (or label).

    The epoch starts `offset` seconds after the matching marker.
    """

    kind = "StimulationBasedEpoching"
    input_slots = (slot("in", PortType.SIGNAL), slot("markers", PortType.MARKER))
    output_type = PortType.EPOCH

    def __init__(self, name: str, *, code, duration: float, offset: float = 0.0):
        super().__init__(name)
        self.code = code
        self.offset = float(offset)
        self.epocher = Epocher(duration, offset=self.offset)

    def update(self, ctx: Context) -> None:
        for marker in self.inputs[1]:
            if match_code(marker, self.code):
                self.epocher.add_trigger(marker.timestamp + self.offset, marker)
        for chunk in self.inputs[0]:
            for epoch in self.epocher.push(chunk):
                self.out.push(epoch)
        self.counters["skipped_triggers"] = self.epocher.skipped
