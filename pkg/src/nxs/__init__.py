"""nxs: a real-time biosignal processing engine.

Pipelines are graphs of nodes exchanging typed items (signal chunks,
epochs, markers, spectra, feature vectors) through ports, driven by a
fixed-period loop that either paces itself against the wall clock or runs
accelerated on a virtual clock. Nodes cover filtering, spectral analysis,
epoching, channel selection and re-referencing, signal generation,
stimulation scheduling, classification, file replay and logging, and
network transport.

Typical use:

    from nxs import Pipeline, run
    from nxs.generate import Generator
    from nxs.filters import ButterFilter

    p = Pipeline()
    src = Generator("src", mode="oscillator", freq=10.0, channels=4)
    band = ButterFilter("band", lowcut=8.0, highcut=12.0)
    p.add(src)
    p.add(band, inputs=src)
    report = run(p, duration=5.0)

Pipelines can equally be described in a TOML file and executed with the
``nxs`` command-line tool.
"""

from .data import (Chunk, Epoch, FeatureVector, MarkerEvent, PortType, Scaling,
                   SpectrumFrame, concat_chunks)
from .errors import NxsError, NodeFailure, GraphError, PipelineFileError
from .graph import (DEFAULT_LOOP_PERIOD, Context, Node, Pipeline, Port, Probe,
                    RunReport, ValidationReport, run, step, validate_pipeline)
from .dsl import build_pipeline, load_pipeline, parse_pipeline
from . import registry

__version__ = "0.1.0"

__all__ = [
    "Chunk", "Epoch", "FeatureVector", "MarkerEvent", "PortType", "Scaling",
    "SpectrumFrame", "concat_chunks",
    "NxsError", "NodeFailure", "GraphError", "PipelineFileError",
    "DEFAULT_LOOP_PERIOD", "Context", "Node", "Pipeline", "Port", "Probe",
    "RunReport", "ValidationReport", "run", "step", "validate_pipeline",
    "build_pipeline", "load_pipeline", "parse_pipeline",
    "registry", "__version__",
]
