"""Registry mapping node kind names to their classes.

Node modules register themselves on import via the ``register`` decorator;
``ensure_builtin`` pulls all of them in. The pipeline file loader and the
CLI catalogue both go through here, so the registry is the single source of
truth for what kinds exist and which parameters they take.
"""
from __future__ import annotations

import difflib
import inspect
from dataclasses import dataclass
from typing import Any, Optional

from .errors import PipelineFileError, UnknownNodeKind
from .graph import Node

NODE_KINDS: dict[str, type] = {}

_REQUIRED = object()


def register(cls: type) -> type:
    if not cls.kind:
        raise ValueError(f"{cls.__name__} has no kind name")
    if cls.kind in NODE_KINDS:
        raise ValueError(f"node kind {cls.kind!r} registered twice")
    NODE_KINDS[cls.kind] = cls
    return cls


def ensure_builtin() -> None:
    """Import every module that defines built-in node kinds."""
    from . import graph  # noqa: F401  (Probe)
    from . import (  # noqa: F401
        analysis, brainvision, epoching, expr, fileio, filters, frames,
        generate, lda, rda, spatial, xdf,
    )
    if "Probe" not in NODE_KINDS:
        NODE_KINDS["Probe"] = graph.Probe


@dataclass(frozen=True)
class ParamInfo:
    name: str
    required: bool
    default: Any = None
    annotation: str = ""

    def describe(self) -> str:
        if self.required:
            return f"{self.name} (required)"
        return f"{self.name}={self.default!r}"


def node_parameters(cls: type) -> list[ParamInfo]:
    """Introspect the constructor parameters of a node class (name excluded)."""
    sig = inspect.signature(cls.__init__)
    out = []
    for param in list(sig.parameters.values())[1:]:  # drop self
        if param.name == "name" or param.kind in (
                inspect.Parameter.VAR_POSITIONAL, inspect.Parameter.VAR_KEYWORD):
            continue
        required = param.default is inspect.Parameter.empty
        ann = ""
        if param.annotation is not inspect.Parameter.empty:
            ann = getattr(param.annotation, "__name__", str(param.annotation))
        out.append(ParamInfo(param.name, required,
                             None if required else param.default, ann))
    return out


def lookup(kind: str) -> type:
    ensure_builtin()
    cls = NODE_KINDS.get(kind)
    if cls is None:
        close = difflib.get_close_matches(kind, NODE_KINDS, n=1)
        raise UnknownNodeKind(kind, hint=close[0] if close else None)
    return cls


def create(kind: str, name: str, params: dict) -> tuple[Node, list[str]]:
    """Instantiate a node kind from a parameter mapping.

    Unknown parameter keys are dropped and reported back as warnings;
    missing required parameters raise PipelineFileError.
    """
    cls = lookup(kind)
    infos = {p.name: p for p in node_parameters(cls)}
    warnings = []
    accepted = {}
    for key, value in params.items():
        if key in infos:
            accepted[key] = value
        else:
            warnings.append(f"node {name!r}: unknown parameter {key!r} for {kind} (ignored)")
    missing = [p.name for p in infos.values() if p.required and p.name not in accepted]
    if missing:
        raise PipelineFileError(
            f"node {name!r} ({kind}) is missing required parameter(s): "
            + ", ".join(missing))
    node = cls(name, **accepted)
    return node, warnings


def catalogue() -> list[tuple[str, str, list[ParamInfo]]]:
    """(kind, first docstring line, parameters) for every registered kind."""
    ensure_builtin()
    rows = []
    for kind in sorted(NODE_KINDS):
        cls = NODE_KINDS[kind]
        doc = inspect.getdoc(cls) or ""
        first = doc.splitlines()[0] if doc else ""
        rows.append((kind, first, node_parameters(cls)))
    return rows
