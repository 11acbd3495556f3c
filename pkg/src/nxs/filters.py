"""Streaming temporal filters: Butterworth band-pass, notch, downsampling.

Designs come from scipy (analog prototype + bilinear transform with
pre-warping) and are factored into second-order sections. Application is
direct-form-II-transposed per channel with float64 state carried across
chunk boundaries, so processing is invariant to how the stream is chunked.
Initial state is zero: the start-up transient is part of the output, as it
would be in a live session.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from scipy import signal as sig

from .data import Chunk, PortType
from .errors import ChannelCountChanged, InvalidBand, UnstableDesign
from .graph import Context, Node, slot
from .registry import register

MAX_ORDER = 16


def assert_stable(sos: np.ndarray) -> None:
    """Raise UnstableDesign unless every section's poles are inside the unit circle."""
    for section in sos:
        poles = np.roots(section[3:])
        if np.any(np.abs(poles) >= 1.0):
            raise UnstableDesign(
                f"pole magnitude {np.max(np.abs(poles)):.6f} >= 1")


def design_butter_bandpass(lowcut: float, highcut: float, order: int, fs: float) -> np.ndarray:
    """Butterworth band-pass as second-order sections (n_sections, 6)."""
    if not (isinstance(order, (int, np.integer)) and 1 <= order <= MAX_ORDER):
        raise InvalidBand(f"order must be an integer in [1, {MAX_ORDER}], got {order!r}")
    if not (0 < lowcut < highcut < fs / 2):
        raise InvalidBand(
            f"need 0 < lowcut < highcut < fs/2, got ({lowcut}, {highcut}) at fs={fs}")
    sos = sig.butter(order, [lowcut, highcut], btype="bandpass", fs=fs, output="sos")
    assert_stable(sos)
    return sos


def design_notch(freq: float, q: float, fs: float) -> np.ndarray:
    """Single-biquad notch with unity gain at DC and Nyquist."""
    if not (0 < freq < fs / 2):
        raise InvalidBand(f"notch frequency {freq} outside (0, {fs / 2})")
    if q <= 0:
        raise InvalidBand(f"quality factor must be positive, got {q}")
    b, a = sig.iirnotch(freq, q, fs=fs)
    sos = sig.tf2sos(b, a)
    assert_stable(sos)
    return sos


def design_lowpass(cutoff: float, order: int, fs: float) -> np.ndarray:
    if not (0 < cutoff < fs / 2):
        raise InvalidBand(f"cutoff {cutoff} outside (0, {fs / 2})")
    sos = sig.butter(order, cutoff, btype="lowpass", fs=fs, output="sos")
    assert_stable(sos)
    return sos


def sos_gain(sos: np.ndarray, freq: float, fs: float) -> float:
    """Steady-state gain magnitude of a cascade at one frequency."""
    z = np.exp(2j * np.pi * freq / fs)
    h = 1.0 + 0j
    for b0, b1, b2, a0, a1, a2 in sos:
        h *= (b0 + b1 / z + b2 / z ** 2) / (a0 + a1 / z + a2 / z ** 2)
    return float(np.abs(h))


class SosStream:
    """A second-order-section cascade with per-channel streaming state.

    State is lazily allocated (all zeros) on the first chunk; subsequent
    chunks must keep the channel count.
    """

    def __init__(self, sos: np.ndarray):
        self.sos = np.asarray(sos, dtype=np.float64)
        self.zi: Optional[np.ndarray] = None

    def process(self, data: np.ndarray) -> np.ndarray:
        data = np.asarray(data, dtype=np.float64)
        n_channels = data.shape[1]
        if self.zi is None:
            self.zi = np.zeros((self.sos.shape[0], 2, n_channels))
        elif self.zi.shape[2] != n_channels:
            raise ChannelCountChanged(
                f"filter state holds {self.zi.shape[2]} channels, chunk has {n_channels}")
        if data.shape[0] == 0:
            return data.copy()
        out, self.zi = sig.sosfilt(self.sos, data, axis=0, zi=self.zi)
        return out


class Decimator:
    """Anti-aliased integer-factor downsampler with cross-chunk phase."""

    AA_ORDER = 8

    def __init__(self, factor: int, fs: float):
        if not (isinstance(factor, (int, np.integer)) and factor >= 2):
            raise InvalidBand(f"decimation factor must be an integer >= 2, got {factor!r}")
        self.factor = int(factor)
        self.fs = float(fs)
        self.out_rate = self.fs / self.factor
        cutoff = 0.8 * (self.fs / (2 * self.factor))
        self._stream = SosStream(design_lowpass(cutoff, self.AA_ORDER, self.fs))
        self._seen = 0  # global input sample counter, sets the pick phase

    def process(self, chunk: Chunk) -> Chunk:
        smoothed = self._stream.process(chunk.data)
        idx = np.arange(chunk.n_samples) + self._seen
        self._seen += chunk.n_samples
        keep = (idx % self.factor) == 0
        return Chunk(chunk.timestamps[keep], chunk.channel_names,
                     smoothed[keep], self.out_rate)


def _require_rate(chunk: Chunk, who: str) -> float:
    if chunk.sampling_rate is None:
        raise ValueError(f"{who} needs a regular signal with a sampling rate")
    return chunk.sampling_rate


@register
class ButterFilter(Node):
    """Streaming Butterworth band-pass between two cutoff frequencies."""

    kind = "ButterFilter"
    input_slots = (slot("in", PortType.SIGNAL),)
    output_type = PortType.SIGNAL

    def __init__(self, name: str, *, lowcut: float, highcut: float, order: int = 4):
        super().__init__(name)
        if not (isinstance(order, (int, np.integer)) and 1 <= order <= MAX_ORDER):
            raise InvalidBand(f"order must be an integer in [1, {MAX_ORDER}], got {order!r}")
        if not (0 < lowcut < highcut):
            raise InvalidBand(f"need 0 < lowcut < highcut, got ({lowcut}, {highcut})")
        self.lowcut = float(lowcut)
        self.highcut = float(highcut)
        self.order = int(order)
        self._stream: Optional[SosStream] = None
        self._rate: Optional[float] = None

    def update(self, ctx: Context) -> None:
        for chunk in self.inputs[0]:
            fs = _require_rate(chunk, self.kind)
            if self._stream is None:
                self._rate = fs
                self._stream = SosStream(
                    design_butter_bandpass(self.lowcut, self.highcut, self.order, fs))
            elif fs != self._rate:
                raise ChannelCountChanged(
                    f"sampling rate changed mid-stream: {self._rate} -> {fs}")
            self.out.push(chunk.with_data(self._stream.process(chunk.data)))


@register
class NotchFilter(Node):
    """Streaming narrow-band rejection around one frequency."""

    kind = "NotchFilter"
    input_slots = (slot("in", PortType.SIGNAL),)
    output_type = PortType.SIGNAL

    def __init__(self, name: str, *, freq: float, q: float = 30.0):
        super().__init__(name)
        if freq <= 0:
            raise InvalidBand(f"notch frequency must be positive, got {freq}")
        if q <= 0:
            raise InvalidBand(f"quality factor must be positive, got {q}")
        self.freq = float(freq)
        self.q = float(q)
        self._stream: Optional[SosStream] = None
        self._rate: Optional[float] = None

    def update(self, ctx: Context) -> None:
        for chunk in self.inputs[0]:
            fs = _require_rate(chunk, self.kind)
            if self._stream is None:
                self._rate = fs
                self._stream = SosStream(design_notch(self.freq, self.q, fs))
            elif fs != self._rate:
                raise ChannelCountChanged(
                    f"sampling rate changed mid-stream: {self._rate} -> {fs}")
            self.out.push(chunk.with_data(self._stream.process(chunk.data)))


@register
class DownSample(Node):
    """Integer-factor sample rate reduction with an anti-alias low-pass."""

    kind = "DownSample"
    input_slots = (slot("in", PortType.SIGNAL),)
    output_type = PortType.SIGNAL

    def __init__(self, name: str, *, factor: int):
        super().__init__(name)
        if not (isinstance(factor, (int, np.integer)) and factor >= 2):
            raise InvalidBand(f"decimation factor must be an integer >= 2, got {factor!r}")
        self.factor = int(factor)
        self._decimator: Optional[Decimator] = None

    def update(self, ctx: Context) -> None:
        for chunk in self.inputs[0]:
            fs = _require_rate(chunk, self.kind)
            if self._decimator is None:
                self._decimator = Decimator(self.factor, fs)
            elif fs != self._decimator.fs:
                raise ChannelCountChanged(
                    f"sampling rate changed mid-stream: {self._decimator.fs} -> {fs}")
            out = self._decimator.process(chunk)
            if out.n_samples:
                self.out.push(out)
