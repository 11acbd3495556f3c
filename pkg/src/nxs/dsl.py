"""Declarative pipeline files.

A pipeline file is TOML. The reserved ``[pipeline]`` table carries engine
settings (currently ``loop_period``). Every other declaration is a
``[node.<name>]`` table with a ``kind`` key, an optional ``input`` (a node
name, ``name.port``, or a list of either) and kind-specific parameters:

    [pipeline]
    loop_period = 0.01

    [node.source]
    kind = "Generator"
    mode = "oscillator"
    channels = 4

    [node.band]
    kind = "ButterFilter"
    input = "source"
    lowcut = 8.0
    highcut = 12.0

Declaration order fixes instantiation (and therefore update) order.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:                      # Python 3.10
    import tomli as tomllib

from .errors import DuplicateNodeName, PipelineFileError
from .graph import DEFAULT_LOOP_PERIOD, Pipeline
from . import registry

log = logging.getLogger("nxs.dsl")

_NODE_TABLE_RE = re.compile(r"^\s*\[node\.(?P<name>[^\]\s]+)\]\s*(?:[#;].*)?$",
                            re.MULTILINE)


@dataclass(frozen=True)
class NodeDecl:
    name: str
    kind: str
    inputs: tuple
    params: dict


@dataclass(frozen=True)
class PipelineSpec:
    loop_period: float
    nodes: tuple
    warnings: tuple = ()


def _scan_duplicates(text: str) -> None:
    # TOML itself rejects repeated tables, but with a generic parse error;
    # scan first so the report names the offending node
    seen = set()
    for match in _NODE_TABLE_RE.finditer(text):
        name = match.group("name").strip("\"'")
        if name in seen:
            raise DuplicateNodeName(name)
        seen.add(name)


def _as_inputs(value, name: str) -> tuple:
    if value is None:
        return ()
    if isinstance(value, str):
        return (value,)
    if isinstance(value, list) and all(isinstance(v, str) for v in value):
        return tuple(value)
    raise PipelineFileError(f"node {name!r}: input must be a string or list "
                            f"of strings, got {value!r}")


def parse_pipeline(text: str) -> PipelineSpec:
    """Parse pipeline file contents into an ordered spec (no nodes built)."""
    _scan_duplicates(text)
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise PipelineFileError(f"pipeline file is not valid TOML: {exc}") from None

    warnings = []
    settings = doc.get("pipeline", {})
    if not isinstance(settings, dict):
        raise PipelineFileError("[pipeline] must be a table")
    loop_period = settings.get("loop_period", DEFAULT_LOOP_PERIOD)
    if not isinstance(loop_period, (int, float)) or loop_period <= 0:
        raise PipelineFileError(f"loop_period must be a positive number, "
                                f"got {loop_period!r}")
    for key in settings:
        if key != "loop_period":
            warnings.append(f"[pipeline]: unknown key {key!r} ignored")

    nodes_table = doc.get("node", {})
    if not isinstance(nodes_table, dict):
        raise PipelineFileError("node declarations must be [node.<name>] tables")
    for key in doc:
        if key not in ("pipeline", "node"):
            warnings.append(f"top-level table {key!r} ignored")

    declarations = []
    for name, body in nodes_table.items():
        if not isinstance(body, dict):
            raise PipelineFileError(f"[node.{name}] must be a table")
        if "kind" not in body:
            raise PipelineFileError(f"node {name!r} has no kind")
        kind = body["kind"]
        if not isinstance(kind, str):
            raise PipelineFileError(f"node {name!r}: kind must be a string")
        inputs = _as_inputs(body.get("input"), name)
        params = {k: v for k, v in body.items() if k not in ("kind", "input")}
        declarations.append(NodeDecl(name, kind, inputs, params))
    if not declarations:
        raise PipelineFileError("no nodes declared")
    return PipelineSpec(float(loop_period), tuple(declarations), tuple(warnings))


def build_pipeline(spec: PipelineSpec) -> Pipeline:
    """Instantiate the declared nodes, in order, into a Pipeline."""
    registry.ensure_builtin()
    pipeline = Pipeline(loop_period=spec.loop_period)
    for warning in spec.warnings:
        log.warning("%s", warning)
    for decl in spec.nodes:
        node, warnings = registry.create(decl.kind, decl.name, decl.params)
        for warning in warnings:
            log.warning("%s", warning)
        pipeline.add(node, inputs=decl.inputs)
    return pipeline


def load_pipeline(path) -> Pipeline:
    """Read, parse and build a pipeline file."""
    text = Path(path).read_text(encoding="utf-8")
    return build_pipeline(parse_pipeline(text))
