"""Node graph, typed ports, validation and the sequential scheduler loop.

The execution model is deliberately simple: one logical thread, nodes updated
once per loop in instantiation order, ports cleared at the start of every
step. A producer earlier in the order is therefore always visible to its
consumers within the same step. Network receivers are the only components
with their own threads; they hand data over through bounded queues owned by
their nodes.
"""
from __future__ import annotations

import logging
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence, Union

from .data import Chunk, Epoch, FeatureVector, MarkerEvent, PortType, SpectrumFrame
from .errors import GraphError, NodeFailure

log = logging.getLogger("nxs.graph")

#: loop period used when a pipeline does not specify one (100 Hz comfortably
#: exceeds typical EEG chunk cadence)
DEFAULT_LOOP_PERIOD = 0.01


class Port:
    """A typed edge endpoint holding the items produced in the current step.

    Iterating a port yields the items pushed since the last clear; the
    scheduler clears every port at the start of each step, so an item can
    never be observed in two different steps.
    """

    def __init__(self, dtype: PortType, owner: "Node", name: str = "out"):
        self.dtype = dtype
        self.owner = owner
        self.name = name
        self._items: list = []
        self.pushed_items = 0    # cumulative over the run
        self.pushed_samples = 0  # cumulative sample rows (chunks/epochs)

    def push(self, item) -> None:
        self._items.append(item)
        self.pushed_items += 1
        if isinstance(item, (Chunk, Epoch)):
            self.pushed_samples += item.n_samples

    def extend(self, items: Iterable) -> None:
        for item in items:
            self.push(item)

    def clear(self) -> None:
        self._items.clear()

    def __iter__(self) -> Iterator:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    @property
    def ref(self) -> str:
        return f"{self.owner.name}.{self.name}"


@dataclass(frozen=True)
class Slot:
    """Declared input position of a node kind."""

    name: str
    types: frozenset
    required: bool = True

    def accepts(self, dtype: PortType) -> bool:
        return dtype in self.types


def slot(name: str, *types: PortType, required: bool = True) -> Slot:
    return Slot(name, frozenset(types), required)


@dataclass
class Context:
    """Per-step view handed to every node update."""

    now: float   # pipeline time, seconds (0 at run start)
    step: int
    period: float = DEFAULT_LOOP_PERIOD  # the pipeline's loop period


class Node:
    """Base class of every pipeline node.

    Lifecycle: ``__init__`` (configuration) -> ``setup`` (once, before the
    first step, after wiring) -> ``update`` (once per step) -> ``terminate``
    (once, on shutdown). Subclasses declare their port contract through
    ``input_slots`` / ``variadic`` / ``output_type``.
    """

    kind: Optional[str] = None
    input_slots: tuple = ()
    variadic: bool = False          # the last slot may repeat
    output_type: Optional[PortType] = None

    def __init__(self, name: str):
        self.name = str(name)
        self.inputs: list[Port] = []
        self.out: Optional[Port] = (
            Port(self.output_type, self) if self.output_type is not None else None
        )
        self.extra_outputs: dict[str, Port] = {}
        self.counters: Counter = Counter()
        self.log = logging.getLogger(f"nxs.node.{self.name}")

    # -- wiring helpers -----------------------------------------------------

    def output_ports(self) -> list[Port]:
        ports = [self.out] if self.out is not None else []
        ports.extend(self.extra_outputs.values())
        return ports

    def output(self, name: str) -> Optional[Port]:
        """Look up an output port by name ('out' or '' is the main one)."""
        if name in ("out", "") and self.out is not None:
            return self.out
        return self.extra_outputs.get(name)

    def add_output(self, name: str, dtype: PortType) -> Port:
        p = Port(dtype, self, name)
        self.extra_outputs[name] = p
        return p

    # -- type checking --------------------------------------------------------

    def check_input_types(self, types: Sequence[PortType]) -> list[tuple[str, str]]:
        """Return (code, message) problems for the given input port types."""
        issues = []
        slots = list(self.input_slots)
        n_required = sum(1 for s in slots if s.required)
        if len(types) < n_required:
            missing = slots[len(types):]
            for s in missing:
                if s.required:
                    issues.append(("DanglingInput",
                                   f"node {self.name!r} is missing input '{s.name}'"))
        for i, dtype in enumerate(types):
            if i < len(slots):
                s = slots[i]
            elif self.variadic and slots:
                s = slots[-1]
            else:
                issues.append(("TypeMismatch",
                               f"node {self.name!r} takes at most {len(slots)} inputs"))
                continue
            if not s.accepts(dtype):
                if (PortType.EPOCH in s.types and PortType.SIGNAL not in s.types
                        and dtype is PortType.SIGNAL):
                    issues.append((
                        "EpochContextViolation",
                        f"node {self.name!r} processes epoched data only; "
                        f"feed it from an epoching node, not a continuous signal",
                    ))
                else:
                    want = "/".join(sorted(t.value for t in s.types))
                    issues.append((
                        "TypeMismatch",
                        f"input '{s.name}' of node {self.name!r} expects {want}, "
                        f"got {dtype.value}",
                    ))
        return issues

    # -- lifecycle ---------------------------------------------------------------

    def setup(self) -> None:
        pass

    def update(self, ctx: Context) -> None:
        raise NotImplementedError

    def terminate(self) -> None:
        pass


PortRef = Union[Port, Node, str]


class Pipeline:
    """An ordered collection of nodes plus their wiring.

    Update order is instantiation (``add``) order; the wiring declaration
    order carries no meaning. Input references may be ports, nodes (their
    primary output) or strings ``"name"`` / ``"name.portname"`` resolved when
    the pipeline is validated.
    """

    def __init__(self, loop_period: float = DEFAULT_LOOP_PERIOD):
        if loop_period <= 0:
            raise ValueError("loop_period must be positive")
        self.loop_period = float(loop_period)
        self.nodes: list[Node] = []
        self._by_name: dict[str, Node] = {}
        self._input_specs: dict[str, list[PortRef]] = {}
        self._resolved = False
        self._setup_done = False
        self._shutdown_done = False

    def add(self, node: Node, inputs: Sequence[PortRef] = ()) -> Node:
        if node.name in self._by_name:
            raise GraphError(f"node name {node.name!r} already in pipeline")
        if isinstance(inputs, (Node, Port, str)):
            inputs = (inputs,)
        self.nodes.append(node)
        self._by_name[node.name] = node
        self._input_specs[node.name] = list(inputs)
        self._resolved = False
        return node

    def node(self, name: str) -> Node:
        return self._by_name[name]

    # -- resolution ------------------------------------------------------------

    def _resolve_ref(self, ref: PortRef) -> Optional[Port]:
        if isinstance(ref, Port):
            return ref
        if isinstance(ref, Node):
            return ref.out
        name, _, port_name = str(ref).partition(".")
        producer = self._by_name.get(name)
        if producer is None:
            return None
        return producer.output(port_name or "out")

    def resolve(self) -> list[tuple[str, str]]:
        """Wire every node's inputs; return DanglingInput issues."""
        issues = []
        for node in self.nodes:
            ports = []
            for ref in self._input_specs[node.name]:
                port = self._resolve_ref(ref)
                if port is None:
                    issues.append(("DanglingInput",
                                   f"node {node.name!r} references unknown input {ref!r}"))
                else:
                    ports.append(port)
            node.inputs = ports
        self._resolved = True
        return issues

    def edges(self) -> list[tuple[Node, Node, Port]]:
        out = []
        for node in self.nodes:
            for port in node.inputs:
                out.append((port.owner, node, port))
        return out

    # -- lifecycle ----------------------------------------------------------------

    def setup_all(self) -> None:
        if not self._resolved:
            self.resolve()
        if self._setup_done:
            raise GraphError("pipeline already ran; build a fresh one to run again")
        for node in self.nodes:
            node.setup()
        self._setup_done = True

    def shutdown(self) -> None:
        if self._shutdown_done:
            return
        self._shutdown_done = True
        for node in reversed(self.nodes):
            try:
                node.terminate()
            except Exception:
                log.exception("terminate failed for node %r", node.name)

    def all_ports(self) -> list[Port]:
        ports = []
        for node in self.nodes:
            ports.extend(node.output_ports())
        return ports


# -- validation -------------------------------------------------------------------


@dataclass(frozen=True)
class Issue:
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


@dataclass
class ValidationReport:
    errors: list[Issue] = field(default_factory=list)
    warnings: list[Issue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def _find_cycle(pipeline: Pipeline) -> Optional[list[str]]:
    adjacency: dict[str, set[str]] = {n.name: set() for n in pipeline.nodes}
    for producer, consumer, _ in pipeline.edges():
        adjacency[producer.name].add(consumer.name)
    WHITE, GREY, BLACK = 0, 1, 2
    color = {name: WHITE for name in adjacency}
    stack: list[str] = []

    def visit(name: str) -> Optional[list[str]]:
        color[name] = GREY
        stack.append(name)
        for succ in sorted(adjacency[name]):
            if color[succ] == GREY:
                return stack[stack.index(succ):] + [succ]
            if color[succ] == WHITE:
                found = visit(succ)
                if found:
                    return found
        stack.pop()
        color[name] = BLACK
        return None

    for name in adjacency:
        if color[name] == WHITE:
            found = visit(name)
            if found:
                return found
    return None


def validate_pipeline(pipeline: Pipeline) -> ValidationReport:
    """Check wiring before running: types, cycles, epoch context, references."""
    report = ValidationReport()
    for code, msg in pipeline.resolve():
        report.errors.append(Issue(code, msg))

    order = {node.name: i for i, node in enumerate(pipeline.nodes)}
    for producer, consumer, port in pipeline.edges():
        if order[producer.name] > order[consumer.name]:
            report.warnings.append(Issue(
                "UpdateOrderShadowing",
                f"edge {port.ref} -> {consumer.name!r} runs against update order; "
                f"ports are cleared every step, so {consumer.name!r} will never see its data",
            ))

    for node in pipeline.nodes:
        types = [p.dtype for p in node.inputs]
        for code, msg in node.check_input_types(types):
            report.errors.append(Issue(code, msg))

    cycle = _find_cycle(pipeline)
    if cycle:
        report.errors.append(Issue("CycleDetected", "cycle: " + " -> ".join(cycle)))
    return report


# -- execution ------------------------------------------------------------------------


@dataclass
class StepReport:
    now: float
    node_durations: dict[str, float] = field(default_factory=dict)


def step(pipeline: Pipeline, now: float, step_index: int = 0) -> StepReport:
    """Clear all ports, then update every node once in instantiation order.

    A raising node aborts the step: terminate is triggered on all nodes and
    NodeFailure propagates to the caller.
    """
    report = StepReport(now=now)
    for port in pipeline.all_ports():
        port.clear()
    ctx = Context(now=now, step=step_index, period=pipeline.loop_period)
    for node in pipeline.nodes:
        t0 = time.perf_counter()
        try:
            node.update(ctx)
        except Exception as exc:
            log.error("node %r failed on step %d: %r", node.name, step_index, exc)
            pipeline.shutdown()
            raise NodeFailure(node.name, exc) from exc
        report.node_durations[node.name] = time.perf_counter() - t0
    return report


@dataclass
class RunReport:
    step_count: int = 0
    overruns: int = 0
    elapsed_wall: float = 0.0
    pipeline_time: float = 0.0
    step_durations: list[float] = field(default_factory=list)
    node_time: dict[str, float] = field(default_factory=dict)
    node_counters: dict[str, dict[str, int]] = field(default_factory=dict)
    failure: Optional[NodeFailure] = None
    interrupted: bool = False

    @property
    def ok(self) -> bool:
        return self.failure is None

    @property
    def mean_step(self) -> float:
        return sum(self.step_durations) / len(self.step_durations) if self.step_durations else 0.0

    @property
    def max_step(self) -> float:
        return max(self.step_durations) if self.step_durations else 0.0

    def percentile_step(self, q: float) -> float:
        if not self.step_durations:
            return 0.0
        ordered = sorted(self.step_durations)
        idx = min(len(ordered) - 1, int(round(q / 100.0 * (len(ordered) - 1))))
        return ordered[idx]

    @property
    def overrun_rate(self) -> float:
        return self.overruns / self.step_count if self.step_count else 0.0


def run(pipeline: Pipeline, *, duration: Optional[float] = None,
        max_steps: Optional[int] = None, paced: bool = True) -> RunReport:
    """Run the loop until a termination condition or interrupt.

    paced=True sleeps out the remainder of each loop period against absolute
    deadlines (a step longer than the period counts as an overrun and the
    next step starts immediately). paced=False is the accelerated mode: the
    clock is virtual (step_index * loop_period) and the loop never sleeps.

    ``duration`` is pipeline time in seconds; with pacing it coincides with
    wall time. Ctrl-C (SIGINT) terminates cleanly with interrupted=True.
    """
    issues = validate_pipeline(pipeline)
    if not issues.ok:
        raise GraphError("; ".join(str(e) for e in issues.errors))
    pipeline.setup_all()

    period = pipeline.loop_period
    report = RunReport()
    origin = time.perf_counter()
    deadline = origin  # absolute start time of the next step
    step_index = 0
    try:
        while True:
            if max_steps is not None and step_index >= max_steps:
                break
            now = (time.perf_counter() - origin) if paced else step_index * period
            if duration is not None and now >= duration:
                break
            t0 = time.perf_counter()
            step_report = step(pipeline, now, step_index)
            dt = time.perf_counter() - t0
            report.step_durations.append(dt)
            for name, d in step_report.node_durations.items():
                report.node_time[name] = report.node_time.get(name, 0.0) + d
            step_index += 1
            report.pipeline_time = now
            if dt > period:
                report.overruns += 1
                deadline = time.perf_counter()  # start the next step immediately
            elif paced:
                deadline += period
                remaining = deadline - time.perf_counter()
                if remaining > 0:
                    time.sleep(remaining)
    except NodeFailure as failure:
        report.failure = failure
    except KeyboardInterrupt:
        report.interrupted = True
        log.info("interrupted, shutting down")
    finally:
        pipeline.shutdown()

    report.step_count = step_index
    report.elapsed_wall = time.perf_counter() - origin
    for node in pipeline.nodes:
        counters = dict(node.counters)
        for port in node.output_ports():
            counters[f"{port.name}.items"] = port.pushed_items
            counters[f"{port.name}.samples"] = port.pushed_samples
        report.node_counters[node.name] = counters
    return report


# -- generic terminal node ------------------------------------------------------------


class Probe(Node):
    """Debug sink collecting everything it receives (any port type)."""

    kind = "Probe"
    input_slots = (slot("in", *PortType),)
    variadic = True
    output_type = None

    def __init__(self, name: str, *, max_items: int = 0):
        super().__init__(name)
        self.max_items = int(max_items)
        self.items: list = []

    def update(self, ctx: Context) -> None:
        for port in self.inputs:
            for item in port:
                if self.max_items and len(self.items) >= self.max_items:
                    return
                self.items.append(item)

    def chunks(self) -> list[Chunk]:
        return [i for i in self.items if isinstance(i, Chunk)]

    def epochs(self) -> list[Epoch]:
        return [i for i in self.items if isinstance(i, Epoch)]

    def markers(self) -> list[MarkerEvent]:
        return [i for i in self.items if isinstance(i, MarkerEvent)]

    def vectors(self) -> list[FeatureVector]:
        return [i for i in self.items if isinstance(i, FeatureVector)]

    def spectra(self) -> list[SpectrumFrame]:
        return [i for i in self.items if isinstance(i, SpectrumFrame)]
