"""Feature aggregation and linear discriminant analysis.

The model keeps one discriminant per class, g_k(x) = w_k . x + b_k, with
w_k solved from the pooled within-class covariance (plus a small ridge on
the diagonal, EEG feature sets are near-singular) and
b_k = -mu_k . w_k / 2 + log prior_k. Class prediction is the argmax with
ties broken by label order; probabilities come from a softmax over the
discriminants. Models serialize to a versioned JSON document.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import FeatureVector, MarkerEvent, PortType
from .errors import (DimensionMismatch, MisalignedInputs, SchemaError,
                     SingularCovariance, TooFewSamples, VersionMismatch)
from .graph import Context, Node, Port, slot
from .registry import register

log = logging.getLogger("nxs.lda")

MODEL_VERSION = 1
DEFAULT_RIDGE = 1e-6


def aggregate_features(vectors: Sequence[FeatureVector], *, label=None,
                       tolerance: float = 0.0) -> FeatureVector:
    """Concatenate aligned vectors in the given order (then channel order).

    All inputs must agree on the timestamp within `tolerance` seconds.
    The output is stamped with the first input's time; `label` overrides
    any label carried by the inputs.
    """
    if not vectors:
        raise ValueError("nothing to aggregate")
    t0 = vectors[0].timestamp
    spread = max(abs(v.timestamp - t0) for v in vectors)
    if spread > tolerance:
        raise MisalignedInputs(f"timestamps spread over {spread:.6g} s "
                               f"(tolerance {tolerance:.6g})")
    values = np.concatenate([v.values for v in vectors])
    names = []
    for i, v in enumerate(vectors):
        vnames = v.names or tuple(f"f{j + 1}" for j in range(v.values.size))
        names.extend(vnames if len(vectors) == 1 else (f"{i + 1}:{n}" for n in vnames))
    if label is None:
        carried = [v.label for v in vectors if v.label is not None]
        label = carried[0] if carried else None
    return FeatureVector(t0, values, label, tuple(names))


@register
class FeatureAggregator(Node):
    """Combine per-channel stat vectors into one feature vector.

    Vector inputs are queued per source and joined once every queue holds a
    value; the join checks that the stamps agree within `tolerance` seconds.
    An optional marker input provides the class label: each emitted vector
    carries the label of the last marker seen at or before its timestamp.
    """

    kind = "FeatureAggregator"
    input_slots = (slot("in", PortType.VECTOR, PortType.MARKER),)
    variadic = True
    output_type = PortType.VECTOR

    def __init__(self, name: str, *, tolerance: float = 1e-6):
        super().__init__(name)
        self.tolerance = float(tolerance)
        self._queues: Optional[list] = None
        self._vector_idx: Optional[list] = None
        self._marker_idx: Optional[int] = None
        self._label: Optional[str] = None
        self._label_time = -np.inf
        self._pending_markers: list = []

    def check_input_types(self, types):
        issues = super().check_input_types(types)
        markers = sum(1 for t in types if t == PortType.MARKER)
        if markers > 1:
            issues.append(("TypeMismatch",
                           f"{self.name}: at most one marker (label) input, got {markers}"))
        if sum(1 for t in types if t == PortType.VECTOR) == 0:
            issues.append(("DanglingInput",
                           f"{self.name}: needs at least one vector input"))
        return issues

    def _classify_inputs(self) -> None:
        self._vector_idx = [i for i, p in enumerate(self.inputs)
                            if p.dtype == PortType.VECTOR]
        marker = [i for i, p in enumerate(self.inputs) if p.dtype == PortType.MARKER]
        self._marker_idx = marker[0] if marker else None
        self._queues = [[] for _ in self._vector_idx]

    def update(self, ctx: Context) -> None:
        if self._queues is None:
            self._classify_inputs()
        if self._marker_idx is not None:
            for event in self.inputs[self._marker_idx]:
                self._pending_markers.append(event)
            self._pending_markers.sort(key=lambda e: e.timestamp)
        for queue, idx in zip(self._queues, self._vector_idx):
            for vector in self.inputs[idx]:
                queue.append(vector)
        while all(self._queues):
            heads = [q.pop(0) for q in self._queues]
            stamp = heads[0].timestamp
            while self._pending_markers and self._pending_markers[0].timestamp <= stamp:
                event = self._pending_markers.pop(0)
                self._label = event.label
                self._label_time = event.timestamp
            combined = aggregate_features(heads, label=self._label,
                                          tolerance=self.tolerance)
            self.out.push(combined)


@dataclass(frozen=True)
class LdaModel:
    """Per-class linear discriminants over a fixed feature ordering."""

    labels: tuple
    weights: np.ndarray       # classes x dim
    biases: np.ndarray        # classes
    ridge: float
    feature_order: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        object.__setattr__(self, "biases", np.asarray(self.biases, dtype=np.float64))
        if self.weights.ndim != 2 or self.weights.shape[0] != len(self.labels):
            raise ValueError(f"weights shape {self.weights.shape} does not match "
                             f"{len(self.labels)} labels")
        if self.biases.shape != (len(self.labels),):
            raise ValueError("one bias per class required")
        if len(self.labels) < 2:
            raise ValueError("a model needs at least two classes")

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def discriminants(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).ravel()
        if x.size != self.dim:
            raise DimensionMismatch(f"vector has {x.size} features, model has {self.dim}")
        # exactly-rounded dot products rather than BLAS: matmul kernels
        # branch on buffer alignment, which would break the save/load
        # bit-for-bit prediction guarantee
        products = self.weights * x[None, :]
        return np.array([math.fsum(row) for row in products]) + self.biases


def lda_fit(rows: Sequence, labels: Optional[Sequence] = None, *,
            ridge: float = DEFAULT_RIDGE,
            feature_order: Sequence = ()) -> LdaModel:
    """Fit discriminants from labeled rows.

    `rows` is either a sequence of FeatureVectors (labels taken from them
    unless `labels` is given) or an n x d array with `labels` alongside.
    Class order is first-appearance order, which also fixes tie-breaking.
    """
    if labels is None:
        vectors = list(rows)
        labels = [v.label for v in vectors]
        if any(lbl is None for lbl in labels):
            raise TooFewSamples("unlabeled rows in the training set")
        data = np.vstack([v.values for v in vectors])
        if not feature_order and vectors and vectors[0].names:
            feature_order = vectors[0].names
    else:
        data = np.asarray(rows, dtype=np.float64)
        labels = list(labels)
    if data.ndim != 2 or data.shape[0] != len(labels):
        raise ValueError(f"{data.shape} rows for {len(labels)} labels")

    order = []
    for lbl in labels:
        key = str(lbl)
        if key not in order:
            order.append(key)
    if len(order) < 2:
        raise TooFewSamples(f"need two distinct classes, got {len(order)}")

    n, dim = data.shape
    k = len(order)
    means = np.empty((k, dim))
    counts = np.empty(k)
    scatter = np.zeros((dim, dim))
    for i, cls in enumerate(order):
        rows_k = data[[str(lbl) == cls for lbl in labels]]
        counts[i] = rows_k.shape[0]
        means[i] = rows_k.mean(axis=0)
        centered = rows_k - means[i]
        scatter += centered.T @ centered
        if rows_k.shape[0] < dim + 1:
            log.warning("class %s has %d rows for %d features; "
                        "covariance may be poorly conditioned",
                        cls, rows_k.shape[0], dim)
    cov = scatter / max(n - k, 1)
    if ridge:
        cov = cov + ridge * np.eye(dim)
    try:
        weights = np.linalg.solve(cov, means.T).T
    except np.linalg.LinAlgError:
        raise SingularCovariance(
            "pooled covariance is singular; enable the ridge term") from None
    priors = counts / n
    biases = -0.5 * np.einsum("kd,kd->k", means, weights) + np.log(priors)
    return LdaModel(tuple(order), weights, biases, float(ridge), tuple(feature_order))


def lda_predict(model: LdaModel, x, mode: str = "class"):
    """Predict a label (`class` mode) or per-class probabilities (`probability`)."""
    scores = model.discriminants(x)
    if mode == "class":
        best = np.flatnonzero(scores == scores.max())[0]
        return model.labels[int(best)]
    if mode == "probability":
        shifted = scores - scores.max()
        weights = np.exp(shifted)
        return weights / weights.sum()
    raise ValueError(f"mode must be 'class' or 'probability', got {mode!r}")


def model_save(model: LdaModel, path=None) -> str:
    document = json.dumps({
        "version": MODEL_VERSION,
        "labels": list(model.labels),
        "dim": model.dim,
        "weights": model.weights.tolist(),
        "biases": model.biases.tolist(),
        "ridge": model.ridge,
        "feature_order": list(model.feature_order),
    }, indent=2)
    if path is not None:
        Path(path).write_text(document + "\n")
    return document


def model_load(text_or_path) -> LdaModel:
    text = str(text_or_path)
    if not text.lstrip().startswith("{"):
        text = Path(text).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"model document is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise SchemaError("model document must be a JSON object")
    version = raw.get("version")
    if version != MODEL_VERSION:
        raise VersionMismatch(version, MODEL_VERSION)
    try:
        model = LdaModel(tuple(str(l) for l in raw["labels"]),
                         np.array(raw["weights"], dtype=np.float64),
                         np.array(raw["biases"], dtype=np.float64),
                         float(raw.get("ridge", 0.0)),
                         tuple(raw.get("feature_order", ())))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"model document malformed: {exc}") from None
    if model.dim != int(raw.get("dim", model.dim)):
        raise SchemaError(f"declared dim {raw['dim']} does not match weights")
    return model


@register
class Classify(Node):
    """Apply a trained discriminant model to incoming feature vectors.

    `class` mode emits a marker per vector (label = predicted class);
    `probability` mode emits a vector of per-class probabilities.
    """

    kind = "Classify"
    input_slots = (slot("in", PortType.VECTOR),)
    output_type = PortType.MARKER

    def __init__(self, name: str, *, model_file, mode: str = "class"):
        super().__init__(name)
        if mode not in ("class", "probability"):
            raise ValueError(f"mode must be 'class' or 'probability', got {mode!r}")
        self.mode = mode
        self.model = model_load(Path(model_file).read_text())
        if mode == "probability":
            self.out = Port(PortType.VECTOR, self, "out")

    def update(self, ctx: Context) -> None:
        for vector in self.inputs[0]:
            if self.mode == "class":
                label = lda_predict(self.model, vector.values, "class")
                self.out.push(MarkerEvent(vector.timestamp, label))
            else:
                probs = lda_predict(self.model, vector.values, "probability")
                names = tuple(f"p({lbl})" for lbl in self.model.labels)
                self.out.push(FeatureVector(vector.timestamp, probs, None, names))
            self.counters["predictions"] += 1
