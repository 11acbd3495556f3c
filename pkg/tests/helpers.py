"""Shared helpers for driving nodes outside a full pipeline run."""
import numpy as np

from nxs.data import Chunk, PortType
from nxs.graph import Context, Node, Port


class Feed(Node):
    """A do-nothing producer whose output port tests push into by hand."""

    kind = "Feed"

    def __init__(self, name="feed", dtype=PortType.SIGNAL):
        super().__init__(name)
        self.out = Port(dtype, self, "out")

    def update(self, ctx):
        pass


def drive(node, per_step, *, dtype=PortType.SIGNAL, period=0.01, start=0.0,
          terminate=True):
    """Run a single-input node step by step; return everything it pushed.

    per_step is a sequence where each element is the item (or list of items)
    arriving on the node's input during that step. Ports are cleared between
    steps exactly like the scheduler does.
    """
    feed = Feed("feed", dtype)
    node.inputs = [feed.out]
    node.setup()
    collected = []
    try:
        for i, items in enumerate(per_step):
            feed.out.clear()
            for port in node.output_ports():
                port.clear()
            if not isinstance(items, (list, tuple)):
                items = [items]
            for item in items:
                feed.out.push(item)
            node.update(Context(now=start + i * period, step=i, period=period))
            if node.out is not None:
                collected.extend(node.out)
    finally:
        if terminate:
            node.terminate()
    return collected


def drive_multi(node, dtypes, steps, *, period=0.01, start=0.0, terminate=True):
    """Like drive() for nodes with several inputs.

    steps is a sequence of per-step entries; each entry is a tuple with one
    item list per input port.
    """
    feeds = [Feed(f"feed{i}", t) for i, t in enumerate(dtypes)]
    node.inputs = [f.out for f in feeds]
    node.setup()
    collected = []
    try:
        for i, entry in enumerate(steps):
            for feed in feeds:
                feed.out.clear()
            for port in node.output_ports():
                port.clear()
            for feed, items in zip(feeds, entry):
                for item in items:
                    feed.out.push(item)
            node.update(Context(now=start + i * period, step=i, period=period))
            if node.out is not None:
                collected.extend(node.out)
    finally:
        if terminate:
            node.terminate()
    return collected


def make_chunk(data, fs, *, t0=0.0, names=None, first_index=0):
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    if names is None:
        names = tuple(f"ch{i + 1}" for i in range(data.shape[1]))
    ts = t0 + (first_index + np.arange(data.shape[0])) / fs
    return Chunk(ts, names, data, fs)


def split_into_chunks(data, fs, sizes, *, t0=0.0, names=None):
    """Cut one sample table into consecutive chunks of the given sizes."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    total = sum(sizes)
    assert total == data.shape[0], f"sizes {total} != rows {data.shape[0]}"
    chunks = []
    at = 0
    for size in sizes:
        chunks.append(make_chunk(data[at:at + size], fs, t0=t0,
                                 names=names, first_index=at))
        at += size
    return chunks


def random_sizes(total, rng, lo=1, hi=64):
    sizes = []
    left = total
    while left > 0:
        take = min(left, int(rng.integers(lo, hi + 1)))
        sizes.append(take)
        left -= take
    return sizes


def sine(freq, fs, seconds, *, amplitude=1.0, phase=0.0):
    t = np.arange(int(round(seconds * fs))) / fs
    return amplitude * np.sin(2 * np.pi * freq * t + phase)


def rms(x):
    return float(np.sqrt(np.mean(np.square(np.asarray(x, dtype=np.float64)))))
