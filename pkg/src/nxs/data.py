"""Data model shared by all nodes: chunks, markers, epochs, spectra, vectors.

All payloads are immutable by convention once pushed to a port: nodes must not
mutate arrays they received, only arrays they created. Sample tables are
float64 (samples x channels); timestamps are seconds on the pipeline clock.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class PortType(enum.Enum):
    SIGNAL = "signal"      # 1 iteration = 1 chunk of the continuous signal
    EPOCH = "epoch"        # 1 iteration = 1 epoch
    MARKER = "marker"      # 1 iteration = 1 marker
    SPECTRUM = "spectrum"  # 1 iteration = 1 spectrum computed at one timestamp
    VECTOR = "vector"      # 1 iteration = 1 vector


class Scaling(enum.Enum):
    DENSITY = "density"      # units^2 / Hz
    MAGNITUDE = "magnitude"  # linear DFT magnitude


def _as_2d(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"sample table must be 2-D, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class Chunk:
    """A timestamped block of multichannel samples.

    rows = samples, columns = channels. ``sampling_rate`` is None for
    irregular streams (e.g. marker-derived); regular streams must have
    strictly increasing timestamps.
    """

    timestamps: np.ndarray
    channel_names: tuple[str, ...]
    data: np.ndarray
    sampling_rate: Optional[float]

    def __init__(self, timestamps, channel_names, data, sampling_rate):
        data = _as_2d(data)
        ts = np.asarray(timestamps, dtype=np.float64)
        names = tuple(str(n) for n in channel_names)
        if ts.ndim != 1:
            raise ValueError("timestamps must be 1-D")
        if len(ts) != data.shape[0]:
            raise ValueError(f"{len(ts)} timestamps for {data.shape[0]} sample rows")
        if len(names) != data.shape[1]:
            raise ValueError(f"{len(names)} channel names for {data.shape[1]} columns")
        if len(set(names)) != len(names):
            raise ValueError("channel names must be unique")
        if sampling_rate is not None:
            if sampling_rate <= 0:
                raise ValueError("sampling_rate must be positive (or None for irregular)")
            if len(ts) > 1 and not np.all(np.diff(ts) > 0):
                raise ValueError("timestamps must be strictly increasing on a regular stream")
        elif len(ts) > 1 and not np.all(np.diff(ts) >= 0):
            raise ValueError("timestamps must be non-decreasing")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "channel_names", names)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "sampling_rate", None if sampling_rate is None else float(sampling_rate))

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    def with_data(self, data, channel_names=None) -> "Chunk":
        """Same timestamps/rate, new sample values (and optionally names)."""
        return Chunk(self.timestamps,
                     self.channel_names if channel_names is None else channel_names,
                     data, self.sampling_rate)


@dataclass(frozen=True)
class MarkerEvent:
    """A timestamped label on a marker stream, with an optional numeric code."""

    timestamp: float
    label: str
    code: Optional[int] = None

    def __post_init__(self):
        if not self.label:
            raise ValueError("marker label must be non-empty")


@dataclass(frozen=True)
class Epoch:
    """A fixed-length window cut from the continuous signal."""

    onset: float
    data: np.ndarray
    channel_names: tuple[str, ...]
    sampling_rate: float
    trigger: Optional[MarkerEvent] = None
    timestamps: Optional[np.ndarray] = None  # per-row stamps from the source stream

    def __init__(self, onset, data, channel_names, sampling_rate,
                 trigger=None, timestamps=None):
        data = _as_2d(data)
        names = tuple(str(n) for n in channel_names)
        if len(names) != data.shape[1]:
            raise ValueError(f"{len(names)} channel names for {data.shape[1]} columns")
        if sampling_rate <= 0:
            raise ValueError("sampling_rate must be positive")
        if timestamps is not None:
            timestamps = np.asarray(timestamps, dtype=np.float64)
            if len(timestamps) != data.shape[0]:
                raise ValueError("timestamps length must match rows")
        object.__setattr__(self, "onset", float(onset))
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "channel_names", names)
        object.__setattr__(self, "sampling_rate", float(sampling_rate))
        object.__setattr__(self, "trigger", trigger)
        object.__setattr__(self, "timestamps", timestamps)

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    def with_data(self, data) -> "Epoch":
        return Epoch(self.onset, data, self.channel_names, self.sampling_rate,
                     trigger=self.trigger, timestamps=self.timestamps)


@dataclass(frozen=True)
class SpectrumFrame:
    """Per-channel frequency-domain values computed at one timestamp."""

    timestamp: float
    frequencies: np.ndarray      # Hz, strictly increasing, all >= 0
    values: np.ndarray           # channels x bins
    scaling: Scaling
    channel_names: tuple[str, ...] = ()

    def __init__(self, timestamp, frequencies, values, scaling, channel_names=()):
        freqs = np.asarray(frequencies, dtype=np.float64)
        vals = np.asarray(values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals[None, :]
        if vals.ndim != 2 or vals.shape[1] != len(freqs):
            raise ValueError(f"values shape {vals.shape} does not match {len(freqs)} bins")
        if len(freqs) and (np.any(freqs < 0) or np.any(np.diff(freqs) <= 0)):
            raise ValueError("frequencies must be non-negative and strictly increasing")
        names = tuple(str(n) for n in channel_names)
        if names and len(names) != vals.shape[0]:
            raise ValueError(f"{len(names)} channel names for {vals.shape[0]} rows")
        object.__setattr__(self, "timestamp", float(timestamp))
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "scaling", scaling)
        object.__setattr__(self, "channel_names", names)

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class FeatureVector:
    """A flattened feature row with an optional class label.

    ``names`` records the feature ordering (one entry per value) so that the
    composition of a vector stays auditable after aggregation.
    """

    timestamp: float
    values: np.ndarray
    label: Optional[str] = None
    names: tuple[str, ...] = ()

    def __init__(self, timestamp, values, label=None, names=()):
        vals = np.asarray(values, dtype=np.float64).ravel()
        if vals.size == 0:
            raise ValueError("feature vector must be non-empty")
        names = tuple(str(n) for n in names)
        if names and len(names) != vals.size:
            raise ValueError(f"{len(names)} names for {vals.size} values")
        object.__setattr__(self, "timestamp", float(timestamp))
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "label", label)
        object.__setattr__(self, "names", names)


def concat_chunks(chunks: Sequence[Chunk]) -> Chunk:
    """Concatenate chunks of the same stream into one (test/analysis helper)."""
    chunks = list(chunks)
    if not chunks:
        raise ValueError("no chunks to concatenate")
    first = chunks[0]
    for c in chunks[1:]:
        if c.channel_names != first.channel_names:
            raise ValueError("cannot concatenate chunks with different channels")
    return Chunk(
        np.concatenate([c.timestamps for c in chunks]),
        first.channel_names,
        np.concatenate([c.data for c in chunks], axis=0),
        first.sampling_rate,
    )
