"""In-memory representation of a loaded recording (any source format)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class StreamData:
    """One stream of a recording: a signal table or a marker sequence."""

    name: str
    kind: str                       # "signal" or "marker"
    channel_names: tuple
    fs: float                       # 0.0 when irregular
    samples: np.ndarray             # n x channels (empty for marker streams)
    timestamps: np.ndarray          # seconds, one per row/label
    labels: tuple = ()              # marker labels (marker streams only)
    codes: tuple = ()               # marker codes, None entries allowed

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim == 1:
            self.samples = self.samples.reshape(-1, max(1, len(self.channel_names)))
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        n = len(self.labels) if self.kind == "marker" else self.samples.shape[0]
        if len(self.timestamps) != n:
            raise ValueError(f"{len(self.timestamps)} timestamps for {n} items")
        if self.kind == "marker" and not self.codes:
            self.codes = (None,) * len(self.labels)
        if self.kind == "signal" and not self.fs > 0:
            raise ValueError("signal streams need a positive sampling rate")


@dataclass
class Recording:
    """All streams parsed from one file, plus the source format tag."""

    streams: list
    source_format: str

    @property
    def signal_streams(self) -> list:
        return [s for s in self.streams if s.kind == "signal"]

    @property
    def marker_streams(self) -> list:
        return [s for s in self.streams if s.kind == "marker"]

    @property
    def start_time(self) -> float:
        stamps = [s.timestamps[0] for s in self.streams if len(s.timestamps)]
        return min(stamps) if stamps else 0.0
