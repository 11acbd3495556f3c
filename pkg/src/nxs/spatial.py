"""Channel selection, linear spatial filtering and re-referencing.

All operations are pure per-chunk transforms: timestamps and row counts pass
through unchanged. Channel selectors are names or zero-based indices.
"""
from __future__ import annotations

from typing import Sequence, Union

import numpy as np

from .data import Chunk, PortType
from .errors import (DimensionMismatch, IndexOutOfRange, TooFewChannels,
                     UnknownChannel)
from .graph import Context, Node, slot
from .registry import register

Selector = Union[str, int]


def resolve_selector(sel: Selector, channel_names: Sequence[str]) -> int:
    if isinstance(sel, bool):
        raise UnknownChannel(sel)
    if isinstance(sel, (int, np.integer)):
        if not 0 <= sel < len(channel_names):
            raise IndexOutOfRange(int(sel), len(channel_names))
        return int(sel)
    try:
        return channel_names.index(sel) if isinstance(channel_names, list) \
            else list(channel_names).index(sel)
    except ValueError:
        raise UnknownChannel(sel) from None


def select_channels(chunk: Chunk, spec: Sequence[Selector]) -> Chunk:
    """Project onto the chosen channels, output columns in spec order."""
    names = list(chunk.channel_names)
    idx = [resolve_selector(s, names) for s in spec]
    if len(set(idx)) != len(idx):
        raise ValueError(f"selection {list(spec)!r} names a channel twice")
    return Chunk(chunk.timestamps, tuple(names[i] for i in idx),
                 chunk.data[:, idx], chunk.sampling_rate)


def spatial_filter(chunk: Chunk, matrix, out_names: Sequence[str]) -> Chunk:
    """Replace every sample row v by matrix @ v (M inputs -> N outputs)."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionMismatch(f"matrix must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DimensionMismatch("matrix coefficients must be finite")
    if m.shape[1] != chunk.n_channels:
        raise DimensionMismatch(
            f"matrix expects {m.shape[1]} input channels, chunk has {chunk.n_channels}")
    names = tuple(str(n) for n in out_names)
    if len(names) != m.shape[0]:
        raise DimensionMismatch(
            f"{len(names)} output names for {m.shape[0]} matrix rows")
    return Chunk(chunk.timestamps, names, chunk.data @ m.T, chunk.sampling_rate)


def rereference(chunk: Chunk, ref: Selector) -> Chunk:
    """Subtract the reference channel from every channel (itself included)."""
    i = resolve_selector(ref, list(chunk.channel_names))
    return chunk.with_data(chunk.data - chunk.data[:, i:i + 1])


def common_average(chunk: Chunk) -> Chunk:
    """Subtract the cross-channel mean from every channel, per time point."""
    if chunk.n_channels < 2:
        raise TooFewChannels(
            f"common average needs at least 2 channels, got {chunk.n_channels}")
    return chunk.with_data(chunk.data - chunk.data.mean(axis=1, keepdims=True))


@register
class ChannelSelector(Node):
    """Keep a subset of channels, in the order given."""

    kind = "ChannelSelector"
    input_slots = (slot("in", PortType.SIGNAL),)
    output_type = PortType.SIGNAL

    def __init__(self, name: str, *, channels: list):
        super().__init__(name)
        if not channels:
            raise ValueError("channels list must be non-empty")
        self.channels = list(channels)

    def update(self, ctx: Context) -> None:
        for chunk in self.inputs[0]:
            self.out.push(select_channels(chunk, self.channels))


@register
class SpatialFilter(Node):
    """Linear map of input channels to output channels via a coefficient matrix."""

    kind = "SpatialFilter"
    input_slots = (slot("in", PortType.SIGNAL),)
    output_type = PortType.SIGNAL

    def __init__(self, name: str, *, matrix: list, names: list):
        super().__init__(name)
        self.matrix = np.asarray(matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise DimensionMismatch(f"matrix must be 2-D, got shape {self.matrix.shape}")
        if not np.all(np.isfinite(self.matrix)):
            raise DimensionMismatch("matrix coefficients must be finite")
        self.names = [str(n) for n in names]
        if len(self.names) != self.matrix.shape[0]:
            raise DimensionMismatch(
                f"{len(self.names)} output names for {self.matrix.shape[0]} matrix rows")

    def update(self, ctx: Context) -> None:
        for chunk in self.inputs[0]:
            self.out.push(spatial_filter(chunk, self.matrix, self.names))


@register
class ReferenceChannel(Node):
    """Subtract one channel from all channels; the reference becomes zeros."""

    kind = "ReferenceChannel"
    input_slots = (slot("in", PortType.SIGNAL),)
    output_type = PortType.SIGNAL

    def __init__(self, name: str, *, ref):
        super().__init__(name)
        self.ref = ref

    def update(self, ctx: Context) -> None:
        for chunk in self.inputs[0]:
            self.out.push(rereference(chunk, self.ref))


@register
class CommonAverageReference(Node):
    """Subtract the instantaneous average of all channels from each channel."""

    kind = "CommonAverageReference"
    input_slots = (slot("in", PortType.SIGNAL),)
    output_type = PortType.SIGNAL

    def update(self, ctx: Context) -> None:
        for chunk in self.inputs[0]:
            self.out.push(common_average(chunk))
