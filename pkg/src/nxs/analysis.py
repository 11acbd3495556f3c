"""Spectral and statistical analysis: FFT magnitude, Welch PSD, analytic
signal, window functions and per-channel statistics.

The FFT/Welch cores work on plain sample tables (rows = samples); the
public operations wrap them for epochs. Window functions are computed
explicitly from their defining formulas (symmetric variants).
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from .data import Chunk, Epoch, FeatureVector, PortType, Scaling, SpectrumFrame
from .errors import EmptyEpoch, TooShort
from .graph import Context, Node, slot
from .registry import register

WINDOW_KINDS = ("blackman", "hanning", "hamming", "triangular")
STAT_KINDS = ("mean", "median", "min", "max", "range", "std", "quantile", "iqr")


# -- window functions -------------------------------------------------------------


def make_window(kind: str, n: int) -> np.ndarray:
    """Symmetric window of length n. Kinds: blackman, hanning, hamming, triangular."""
    if kind not in WINDOW_KINDS:
        raise ValueError(f"unknown window {kind!r}, expected one of {WINDOW_KINDS}")
    if n < 1:
        raise ValueError("window length must be >= 1")
    if n == 1:
        return np.ones(1)
    m = np.arange(n, dtype=np.float64)
    if kind == "hanning":
        return 0.5 - 0.5 * np.cos(2 * np.pi * m / (n - 1))
    if kind == "hamming":
        return 0.54 - 0.46 * np.cos(2 * np.pi * m / (n - 1))
    if kind == "blackman":
        return (0.42 - 0.5 * np.cos(2 * np.pi * m / (n - 1))
                + 0.08 * np.cos(4 * np.pi * m / (n - 1)))
    # triangular with non-zero endpoints
    k = np.arange(1, (n + 1) // 2 + 1, dtype=np.float64)
    if n % 2 == 0:
        half = (2 * k - 1) / n
        return np.concatenate([half, half[::-1]])
    half = 2 * k / (n + 1)
    return np.concatenate([half, half[-2::-1]])


# -- transforms -----------------------------------------------------------------


def fft_magnitude_array(data: np.ndarray, fs: float) -> tuple[np.ndarray, np.ndarray]:
    """(frequencies, magnitudes channels x bins) of the one-sided raw DFT."""
    data = np.asarray(data, dtype=np.float64)
    n = data.shape[0]
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    mags = np.abs(np.fft.rfft(data, axis=0))
    return freqs, mags.T


def fft_magnitude(epoch: Epoch) -> SpectrumFrame:
    """One-sided DFT magnitude per channel; timestamp = epoch onset."""
    if epoch.n_samples < 2:
        raise EmptyEpoch(f"need at least 2 samples, got {epoch.n_samples}")
    freqs, mags = fft_magnitude_array(epoch.data, epoch.sampling_rate)
    return SpectrumFrame(epoch.onset, freqs, mags, Scaling.MAGNITUDE,
                         epoch.channel_names)


def welch_psd_array(data: np.ndarray, fs: float, segment_length: int = 256,
                    overlap: float = 0.5, window: str = "hanning"
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Averaged modified periodograms, density scaling (units^2/Hz).

    Segments hop by segment_length*(1-overlap); each is windowed, transformed,
    and the one-sided power densities are averaged. No detrending.
    """
    data = np.asarray(data, dtype=np.float64)
    seg = int(segment_length)
    if seg < 8:
        raise ValueError(f"segment_length must be >= 8, got {segment_length}")
    if not 0 <= overlap < 1:
        raise ValueError(f"overlap must be in [0, 1), got {overlap}")
    n = data.shape[0]
    if n < seg:
        raise TooShort(n, seg)
    w = make_window(window, seg)
    hop = seg - int(seg * overlap)
    n_segments = 1 + (n - seg) // hop
    acc = np.zeros((seg // 2 + 1, data.shape[1]))
    for s in range(n_segments):
        block = data[s * hop:s * hop + seg] * w[:, None]
        acc += np.abs(np.fft.rfft(block, axis=0)) ** 2
    psd = acc / (n_segments * fs * np.sum(w ** 2))
    psd[1:] *= 2.0              # fold negative frequencies in
    if seg % 2 == 0:
        psd[-1] /= 2.0          # except the Nyquist bin
    freqs = np.fft.rfftfreq(seg, 1.0 / fs)
    return freqs, psd.T


def welch_psd(epoch: Epoch, segment_length: int = 256, overlap: float = 0.5,
              window: str = "hanning") -> SpectrumFrame:
    freqs, psd = welch_psd_array(epoch.data, epoch.sampling_rate,
                                 segment_length, overlap, window)
    return SpectrumFrame(epoch.onset, freqs, psd, Scaling.DENSITY,
                         epoch.channel_names)


def analytic_signal(data: np.ndarray) -> np.ndarray:
    """Complex analytic signal via the frequency-domain method, per column."""
    data = np.asarray(data, dtype=np.float64)
    n = data.shape[0]
    spec = np.fft.fft(data, axis=0)
    h = np.zeros(n)
    if n % 2 == 0:
        h[0] = 1.0
        h[n // 2] = 1.0
        h[1:n // 2] = 2.0
    else:
        h[0] = 1.0
        h[1:(n + 1) // 2] = 2.0
    return np.fft.ifft(spec * h[:, None], axis=0)


def hilbert_analytic(epoch: Epoch) -> tuple[Epoch, Epoch]:
    """(envelope, instantaneous phase) epochs of the analytic signal."""
    if epoch.n_samples < 8:
        raise EmptyEpoch(f"need at least 8 samples, got {epoch.n_samples}")
    analytic = analytic_signal(epoch.data)
    return epoch.with_data(np.abs(analytic)), epoch.with_data(np.angle(analytic))


def apply_window(epoch: Epoch, kind: str) -> Epoch:
    if epoch.n_samples < 1:
        raise EmptyEpoch("cannot window an empty epoch")
    w = make_window(kind, epoch.n_samples)
    return epoch.with_data(epoch.data * w[:, None])


# -- statistics ----------------------------------------------------------------------


def univariate_stat(epoch: Epoch, stat: str, p: Optional[float] = None) -> FeatureVector:
    """One statistic per channel over the epoch's time axis.

    quantile(p) interpolates linearly between order statistics; std divides
    by N (population convention).
    """
    if stat not in STAT_KINDS:
        raise ValueError(f"unknown statistic {stat!r}, expected one of {STAT_KINDS}")
    if epoch.n_samples < 1:
        raise EmptyEpoch("statistic of an empty epoch")
    data = epoch.data
    if stat == "mean":
        values = np.mean(data, axis=0)
    elif stat == "median":
        values = np.median(data, axis=0)
    elif stat == "min":
        values = np.min(data, axis=0)
    elif stat == "max":
        values = np.max(data, axis=0)
    elif stat == "range":
        values = np.max(data, axis=0) - np.min(data, axis=0)
    elif stat == "std":
        values = np.std(data, axis=0)
    elif stat == "quantile":
        if p is None or not 0 <= p <= 1:
            raise ValueError(f"quantile needs p in [0, 1], got {p!r}")
        values = np.quantile(data, p, axis=0)
    else:  # iqr
        values = (np.quantile(data, 0.75, axis=0)
                  - np.quantile(data, 0.25, axis=0))
    return FeatureVector(epoch.onset, values, names=epoch.channel_names)


# -- nodes -----------------------------------------------------------------------------


@register
class Fft(Node):
    """One-sided DFT magnitude of each incoming epoch."""

    kind = "Fft"
    input_slots = (slot("in", PortType.EPOCH),)
    output_type = PortType.SPECTRUM

    def update(self, ctx: Context) -> None:
        for epoch in self.inputs[0]:
            self.out.push(fft_magnitude(epoch))


@register
class PsdWelch(Node):
    """Power spectral density by Welch's method.

    Fed epochs, it emits one spectrum per epoch. Fed continuous signal, it
    accumulates a trailing window of 4x segment_length samples and emits a
    spectrum every segment_length new samples (timestamp = newest sample).
    """

    kind = "PsdWelch"
    input_slots = (slot("in", PortType.SIGNAL, PortType.EPOCH),)
    output_type = PortType.SPECTRUM

    def __init__(self, name: str, *, segment_length: int = 256,
                 overlap: float = 0.5, window: str = "hanning"):
        super().__init__(name)
        if int(segment_length) < 8:
            raise ValueError(f"segment_length must be >= 8, got {segment_length}")
        if not 0 <= overlap < 1:
            raise ValueError(f"overlap must be in [0, 1), got {overlap}")
        make_window(window, 8)  # validates the kind
        self.segment_length = int(segment_length)
        self.overlap = float(overlap)
        self.window = window
        self._buf: Optional[np.ndarray] = None
        self._ts: Optional[np.ndarray] = None
        self._start = 0          # global index of _buf[0]
        self._next_emit = self.segment_length
        self._names: tuple = ()
        self._rate: Optional[float] = None

    def _emit_continuous(self, chunk: Chunk) -> None:
        if self._buf is None:
            self._buf = chunk.data.copy()
            self._ts = chunk.timestamps.copy()
            self._names = chunk.channel_names
            self._rate = chunk.sampling_rate
        else:
            self._buf = np.concatenate([self._buf, chunk.data], axis=0)
            self._ts = np.concatenate([self._ts, chunk.timestamps])
        span = 4 * self.segment_length
        total = self._start + self._buf.shape[0]
        while self._next_emit <= total:
            boundary = self._next_emit
            lo = max(0, boundary - span)
            block = self._buf[lo - self._start:boundary - self._start]
            freqs, psd = welch_psd_array(block, self._rate, self.segment_length,
                                         self.overlap, self.window)
            stamp = float(self._ts[boundary - 1 - self._start])
            self.out.push(SpectrumFrame(stamp, freqs, psd, Scaling.DENSITY,
                                        self._names))
            self._next_emit += self.segment_length
        keep_from = max(self._start, self._next_emit - span)
        if keep_from > self._start:
            cut = keep_from - self._start
            self._buf = self._buf[cut:]
            self._ts = self._ts[cut:]
            self._start = keep_from

    def update(self, ctx: Context) -> None:
        for item in self.inputs[0]:
            if isinstance(item, Epoch):
                self.out.push(welch_psd(item, self.segment_length,
                                        self.overlap, self.window))
            else:
                self._emit_continuous(item)


@register
class HilbertTransform(Node):
    """Envelope or instantaneous phase of the analytic signal of each epoch."""

    kind = "HilbertTransform"
    input_slots = (slot("in", PortType.EPOCH),)
    output_type = PortType.EPOCH

    def __init__(self, name: str, *, output: str = "envelope"):
        super().__init__(name)
        if output not in ("envelope", "phase"):
            raise ValueError(f"output must be 'envelope' or 'phase', got {output!r}")
        self.output = output

    def update(self, ctx: Context) -> None:
        for epoch in self.inputs[0]:
            envelope, phase = hilbert_analytic(epoch)
            self.out.push(envelope if self.output == "envelope" else phase)


@register
class Windowing(Node):
    """Samplewise multiplication of each epoch by a window function."""

    kind = "Windowing"
    input_slots = (slot("in", PortType.EPOCH),)
    output_type = PortType.EPOCH

    def __init__(self, name: str, *, window: str = "hanning"):
        super().__init__(name)
        make_window(window, 8)
        self.window = window

    def update(self, ctx: Context) -> None:
        for epoch in self.inputs[0]:
            self.out.push(apply_window(epoch, self.window))


@register
class UnivariateStat(Node):
    """Per-channel statistic of each epoch, emitted as a feature vector."""

    kind = "UnivariateStat"
    input_slots = (slot("in", PortType.EPOCH),)
    output_type = PortType.VECTOR

    def __init__(self, name: str, *, stat: str = "mean", p: Optional[float] = None):
        super().__init__(name)
        if stat not in STAT_KINDS:
            raise ValueError(f"unknown statistic {stat!r}, expected one of {STAT_KINDS}")
        if stat == "quantile" and (p is None or not 0 <= p <= 1):
            raise ValueError(f"quantile needs p in [0, 1], got {p!r}")
        self.stat = stat
        self.p = p

    def update(self, ctx: Context) -> None:
        for epoch in self.inputs[0]:
            self.out.push(univariate_stat(epoch, self.stat, self.p))
