"""Reader for BrainVision recordings (.vhdr header, .eeg data, .vmrk markers).

The header is INI-style text. [Common Infos] gives the data and marker file
names, channel count and SamplingInterval in microseconds (fs = 1e6 over
the interval). [Channel Infos] lines are ``Ch<n>=<name>,<reference>,
<resolution>,<unit>`` with resolution defaulting to 1.0. The binary file is
decoded per BinaryFormat (IEEE_FLOAT_32 or INT_16, multiplexed rows), each
channel scaled by its resolution. Marker lines ``Mk<n>=<type>,<description>,
<position>,...`` become events at position over fs, with any trailing
integer in the description kept as the code.
"""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .errors import (FileSizeMismatch, MissingSection, UnsupportedBinaryFormat)
from .recording import Recording, StreamData

_SECTION_RE = re.compile(r"^\[(?P<name>[^\]]+)\]\s*$")
_CHANNEL_KEY_RE = re.compile(r"^Ch(\d+)$")
_MARKER_KEY_RE = re.compile(r"^Mk(\d+)$")
_TRAILING_INT_RE = re.compile(r"(-?\d+)\s*$")

_FORMATS = {"IEEE_FLOAT_32": "<f4", "INT_16": "<i2"}


def _parse_ini(text: str) -> dict:
    """Tolerant INI parse: sections of key=value lines, everything else ignored.

    BrainVision headers hold free-text sections (the comment block) that
    standard INI parsers reject, so this keeps only well-formed pairs and
    remembers insertion order within each section.
    """
    sections: dict = {}
    current = None
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith(";"):
            continue
        m = _SECTION_RE.match(line)
        if m:
            current = m.group("name")
            sections.setdefault(current, {})
            continue
        if current is None or "=" not in line:
            continue
        key, _, value = line.partition("=")
        sections[current][key.strip()] = value.strip()
    return sections


def _section(sections: dict, name: str) -> dict:
    if name not in sections:
        raise MissingSection(name)
    return sections[name]


def _split_commas(value: str) -> list:
    r"""Split on commas, honoring the \1 escape the format uses for literal commas."""
    parts = value.split(",")
    return [p.replace("\\1", ",") for p in parts]


def _channel_table(infos: dict, count: int) -> tuple:
    names = []
    resolutions = []
    for i in range(1, count + 1):
        raw = None
        for key, value in infos.items():
            m = _CHANNEL_KEY_RE.match(key)
            if m and int(m.group(1)) == i:
                raw = value
                break
        if raw is None:
            names.append(f"ch{i}")
            resolutions.append(1.0)
            continue
        fields = _split_commas(raw)
        names.append(fields[0] if fields and fields[0] else f"ch{i}")
        res = 1.0
        if len(fields) > 2 and fields[2]:
            res = float(fields[2])
        resolutions.append(res)
    return tuple(names), np.array(resolutions, dtype=np.float64)


def _read_markers(path: Path, fs: float) -> tuple:
    sections = _parse_ini(path.read_text(encoding="utf-8", errors="replace"))
    infos = _section(sections, "Marker Infos")
    entries = []
    for key, value in infos.items():
        m = _MARKER_KEY_RE.match(key)
        if not m:
            continue
        fields = _split_commas(value)
        if len(fields) < 3:
            continue
        mtype, description = fields[0], fields[1]
        try:
            position = int(fields[2])
        except ValueError:
            continue
        label = description if description else mtype
        code_match = _TRAILING_INT_RE.search(description)
        code = int(code_match.group(1)) if code_match else None
        entries.append((int(m.group(1)), position / fs, label, code))
    entries.sort()
    stamps = np.array([e[1] for e in entries], dtype=np.float64)
    labels = tuple(e[2] for e in entries)
    codes = tuple(e[3] for e in entries)
    return stamps, labels, codes


def read_brainvision(path) -> Recording:
    """Parse a .vhdr recording (with its .eeg and .vmrk) into a Recording."""
    vhdr = Path(path)
    sections = _parse_ini(vhdr.read_text(encoding="utf-8", errors="replace"))
    common = _section(sections, "Common Infos")
    channels = _section(sections, "Channel Infos")

    try:
        count = int(common["NumberOfChannels"])
        interval = float(common["SamplingInterval"])
    except (KeyError, ValueError) as exc:
        raise MissingSection("Common Infos") from exc
    if interval <= 0:
        raise UnsupportedBinaryFormat(f"sampling interval {interval} not positive")
    fs = 1e6 / interval

    orientation = common.get("DataOrientation", "MULTIPLEXED").upper()
    if orientation != "MULTIPLEXED":
        raise UnsupportedBinaryFormat(f"data orientation {orientation}")
    binary = _section(sections, "Binary Infos")
    fmt = binary.get("BinaryFormat", "")
    if fmt not in _FORMATS:
        raise UnsupportedBinaryFormat(fmt or "missing BinaryFormat")
    dtype = np.dtype(_FORMATS[fmt])

    names, resolutions = _channel_table(channels, count)

    data_file = vhdr.parent / common.get("DataFile", vhdr.with_suffix(".eeg").name)
    raw = data_file.read_bytes()
    record = dtype.itemsize * count
    if record == 0 or len(raw) % record != 0:
        expected = (len(raw) // record) * record if record else 0
        raise FileSizeMismatch(expected, len(raw))
    table = np.frombuffer(raw, dtype=dtype).reshape(-1, count).astype(np.float64)
    table = table * resolutions[None, :]
    n = table.shape[0]
    timestamps = np.arange(n, dtype=np.float64) / fs

    streams = [StreamData(vhdr.stem, "signal", names, fs, table, timestamps)]

    marker_name = common.get("MarkerFile", "")
    marker_path = vhdr.parent / marker_name if marker_name else vhdr.with_suffix(".vmrk")
    if marker_path.exists():
        stamps, labels, codes = _read_markers(marker_path, fs)
        if len(labels):
            streams.append(StreamData(f"{vhdr.stem} markers", "marker", (), 0.0,
                                      np.empty((0, 0)), stamps, labels, codes))
    return Recording(streams, "brainvision")
