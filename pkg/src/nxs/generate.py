"""Signal sources and the experiment stimulator.

Samples live on the global grid t = n/fs, so generation is continuous: the
chunks produced over [0, T) concatenate bit-for-bit to a single [0, T) call,
however the interval is split. Random modes draw from a seeded PCG64 stream
sequentially, which keeps that property for noise as well.

Simulated EEG is pink (1/f) noise, normalized to unit RMS, plus a 10 Hz
alpha sinusoid of RMS 2 on every channel. The pink noise comes from Kellet's
three-branch one-pole filter cascade over white noise; the coefficients are
fixed below so runs are reproducible.
"""
from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import signal as sig

from .data import Chunk, MarkerEvent, PortType
from .errors import InvalidDuration, SchemaError, XmlSyntaxError
from .graph import Context, Node
from .registry import register

GENERATOR_MODES = ("random", "oscillator", "simulation")

# Kellet's pink noise approximation: three one-pole branches plus a direct
# term, summed. (pole, input gain) per branch, then the direct gain.
_PINK_BRANCHES = ((0.99765, 0.0990460), (0.96300, 0.2965164), (0.57000, 1.0526913))
_PINK_DIRECT = 0.1848


def _pink_rms() -> float:
    """Steady-state RMS of the Kellet sum for unit-variance white input.

    With branches b_i[n] = a_i b_i[n-1] + g_i w[n] and direct term d w[n],
    E[b_i b_j] = g_i g_j / (1 - a_i a_j) and E[b_i d w] = g_i d.
    """
    var = _PINK_DIRECT ** 2
    for a_i, g_i in _PINK_BRANCHES:
        var += 2.0 * g_i * _PINK_DIRECT
        for a_j, g_j in _PINK_BRANCHES:
            var += g_i * g_j / (1.0 - a_i * a_j)
    return float(np.sqrt(var))


PINK_RMS = _pink_rms()

ALPHA_FREQ = 10.0        # Hz
ALPHA_AMPLITUDE = 2.0 * np.sqrt(2.0)  # RMS 2 for unit-RMS noise


@dataclass(frozen=True)
class GeneratorConfig:
    mode: str
    channels: int = 1
    fs: float = 250.0
    seed: int = 0
    freq: float = 10.0       # oscillator only
    amplitude: float = 1.0   # oscillator only

    def __post_init__(self):
        if self.mode not in GENERATOR_MODES:
            raise ValueError(f"mode must be one of {GENERATOR_MODES}, got {self.mode!r}")
        if self.fs <= 0:
            raise ValueError(f"fs must be positive, got {self.fs}")
        if self.channels < 1:
            raise ValueError(f"channels must be >= 1, got {self.channels}")


def grid_start(t: float, fs: float) -> int:
    """Smallest integer n with n/fs >= t, robust to float rounding."""
    n = int(np.ceil(t * fs))
    while n / fs < t:
        n += 1
    while n >= 1 and (n - 1) / fs >= t:
        n -= 1
    return max(n, 0) if t >= 0 else n


class SignalGenerator:
    """Stateful source producing successive grid samples for one config."""

    def __init__(self, config: GeneratorConfig):
        self.config = config
        self.names = tuple(f"ch{i + 1}" for i in range(config.channels))
        self._n = 0  # next grid index to emit
        self._rng = np.random.default_rng(config.seed)
        if config.mode == "simulation":
            self._branches = []
            for pole, gain in _PINK_BRANCHES:
                sos = np.array([[gain, 0.0, 0.0, 1.0, -pole, 0.0]])
                zi = np.zeros((1, 2, config.channels))
                self._branches.append((sos, zi))

    @property
    def next_time(self) -> float:
        return self._n / self.config.fs

    def _render(self, n0: int, n1: int) -> np.ndarray:
        cfg = self.config
        count = n1 - n0
        t = np.arange(n0, n1, dtype=np.float64) / cfg.fs
        if cfg.mode == "oscillator":
            wave = cfg.amplitude * np.sin(2 * np.pi * cfg.freq * t)
            return np.repeat(wave[:, None], cfg.channels, axis=1)
        white = self._rng.standard_normal((count, cfg.channels))
        if cfg.mode == "random":
            return white
        pink = _PINK_DIRECT * white
        for i, (sos, zi) in enumerate(self._branches):
            out, new_zi = sig.sosfilt(sos, white, axis=0, zi=zi)
            self._branches[i] = (sos, new_zi)
            pink += out
        alpha = ALPHA_AMPLITUDE * np.sin(2 * np.pi * ALPHA_FREQ * t)
        return pink / PINK_RMS + alpha[:, None]

    def generate(self, to_t: float) -> Chunk:
        """All grid samples from the internal cursor up to (excluding) to_t."""
        cfg = self.config
        n1 = grid_start(to_t, cfg.fs)
        n0 = self._n
        if n1 <= n0:
            return Chunk(np.empty(0), self.names,
                         np.empty((0, cfg.channels)), cfg.fs)
        data = self._render(n0, n1)
        self._n = n1
        ts = np.arange(n0, n1, dtype=np.float64) / cfg.fs
        return Chunk(ts, self.names, data, cfg.fs)


def generate(config: GeneratorConfig, from_t: float, to_t: float) -> Chunk:
    """Grid samples of a fresh seeded stream within [from_t, to_t)."""
    if to_t <= from_t:
        raise ValueError(f"need to_t > from_t, got [{from_t}, {to_t})")
    gen = SignalGenerator(config)
    n0 = grid_start(from_t, config.fs)
    if n0 > 0 and config.mode in ("random", "simulation"):
        gen._render(0, n0)  # advance the noise stream to the grid position
    gen._n = n0
    return gen.generate(to_t)


@register
class Generator(Node):
    """Signal source: seeded noise, a sine oscillator, or simulated EEG.

    Each step emits the grid samples covering the upcoming loop interval,
    so downstream nodes in the same step see data through now + period.
    """

    kind = "Generator"
    input_slots = ()
    output_type = PortType.SIGNAL

    def __init__(self, name: str, *, mode: str, channels: int = 1, fs: float = 250.0,
                 seed: int = 0, freq: float = 10.0, amplitude: float = 1.0):
        super().__init__(name)
        self.config = GeneratorConfig(mode, int(channels), float(fs), int(seed),
                                      float(freq), float(amplitude))
        self._gen: Optional[SignalGenerator] = None

    def setup(self) -> None:
        self._gen = SignalGenerator(self.config)

    def update(self, ctx: Context) -> None:
        chunk = self._gen.generate(ctx.now + ctx.period)
        if chunk.n_samples:
            self.out.push(chunk)


# -- stimulator --------------------------------------------------------------------

#: cue codes used when the configuration does not assign one
GRAZ_CODES = {"left": 769, "right": 770}


@dataclass(frozen=True)
class StimSchedule:
    """Markers to emit, as (time offset, label, code), offsets non-decreasing."""

    entries: tuple
    duration: float


def _duration_attr(elem, attr: str, *, required: bool = True, default: float = 0.0) -> float:
    raw = elem.get(attr)
    if raw is None:
        if required:
            raise SchemaError(f"<{elem.tag}> is missing the {attr!r} attribute")
        return default
    try:
        value = float(raw)
    except ValueError:
        raise InvalidDuration(f"<{elem.tag} {attr}={raw!r}> is not a number") from None
    if value < 0 or not np.isfinite(value):
        raise InvalidDuration(f"<{elem.tag} {attr}={raw!r}> must be >= 0")
    return value


def parse_stim_config(xml_text: str) -> StimSchedule:
    """Build the marker schedule from an experiment configuration document.

    Schema: root <experiment> containing <classes> (one or more
    <class label="..." code="..."/>), <trial cue="s" task="s" rest="s"
    per_class="n"/>, optional <baseline duration="s"/> and <seed>n</seed>.
    Trials are balanced across classes and shuffled by the seed; cue codes
    default to the common motor-imagery convention (left=769, right=770).
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        line = exc.position[0] if getattr(exc, "position", None) else None
        raise XmlSyntaxError(str(exc), line=line) from None
    if root.tag != "experiment":
        raise SchemaError(f"root element must be <experiment>, got <{root.tag}>")

    classes_elem = root.find("classes")
    if classes_elem is None:
        raise SchemaError("missing required section [classes]")
    classes = []
    for cls in classes_elem.findall("class"):
        label = cls.get("label")
        if not label:
            raise SchemaError("<class> is missing the 'label' attribute")
        code_raw = cls.get("code")
        if code_raw is None:
            code = GRAZ_CODES.get(label)
        else:
            try:
                code = int(code_raw)
            except ValueError:
                raise SchemaError(f"<class code={code_raw!r}> is not an integer") from None
        classes.append((label, code))
    if not classes:
        raise SchemaError("<classes> must declare at least one <class>")
    if len({label for label, _ in classes}) != len(classes):
        raise SchemaError("class labels must be unique")

    trial = root.find("trial")
    if trial is None:
        raise SchemaError("missing required section [trial]")
    cue = _duration_attr(trial, "cue")
    task = _duration_attr(trial, "task")
    rest = _duration_attr(trial, "rest")
    per_class_raw = trial.get("per_class")
    if per_class_raw is None:
        raise SchemaError("<trial> is missing the 'per_class' attribute")
    try:
        per_class = int(per_class_raw)
    except ValueError:
        raise SchemaError(f"<trial per_class={per_class_raw!r}> is not an integer") from None
    if per_class < 0:
        raise SchemaError(f"per_class must be >= 0, got {per_class}")

    baseline_elem = root.find("baseline")
    baseline = _duration_attr(baseline_elem, "duration") if baseline_elem is not None else 0.0

    seed_elem = root.find("seed")
    try:
        seed = int(seed_elem.text.strip()) if seed_elem is not None else 0
    except (ValueError, AttributeError):
        raise SchemaError("<seed> must contain an integer") from None

    order = np.repeat(np.arange(len(classes)), per_class)
    order = np.random.default_rng(seed).permutation(order)

    entries = [(0.0, "session_start", None)]
    t = 0.0
    trial_len = baseline + cue + task + rest
    for class_idx in order:
        label, code = classes[class_idx]
        if baseline > 0:
            entries.append((t, "baseline", None))
        entries.append((t + baseline, label, code))
        entries.append((t + baseline + cue, "task", None))
        entries.append((t + baseline + cue + task, "rest", None))
        t += trial_len
    entries.append((t, "session_end", None))
    return StimSchedule(tuple(entries), t)


class ScheduleEmitter:
    """Hands out schedule entries exactly once as the clock passes them."""

    def __init__(self, schedule: StimSchedule):
        self.schedule = schedule
        self._i = 0

    @property
    def exhausted(self) -> bool:
        return self._i >= len(self.schedule.entries)

    def emit_due_markers(self, clock: float) -> list[MarkerEvent]:
        out = []
        entries = self.schedule.entries
        while self._i < len(entries) and entries[self._i][0] <= clock:
            offset, label, code = entries[self._i]
            out.append(MarkerEvent(offset, label, code))
            self._i += 1
        return out


def emit_due_markers(emitter: ScheduleEmitter, clock: float) -> list[MarkerEvent]:
    return emitter.emit_due_markers(clock)


@register
class Stimulator(Node):
    """Marker source following an experiment schedule parsed from XML."""

    kind = "Stimulator"
    input_slots = ()
    output_type = PortType.MARKER

    def __init__(self, name: str, *, file: str):
        super().__init__(name)
        self.file = str(file)
        with open(self.file, "r", encoding="utf-8") as fh:
            self.schedule = parse_stim_config(fh.read())
        self._emitter: Optional[ScheduleEmitter] = None

    def setup(self) -> None:
        self._emitter = ScheduleEmitter(self.schedule)

    def update(self, ctx: Context) -> None:
        for marker in self._emitter.emit_due_markers(ctx.now):
            self.out.push(marker)
