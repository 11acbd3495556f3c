"""Exception hierarchy for the nxs engine.

Every error raised by the library derives from :class:`NxsError` so callers
can catch engine failures without catching unrelated bugs.
"""


class NxsError(Exception):
    """Base class for all nxs errors."""


# -- pipeline description / DSL ------------------------------------------

class PipelineFileError(NxsError):
    """The pipeline description file could not be parsed."""


class UnknownNodeKind(PipelineFileError):
    def __init__(self, kind, hint=None):
        msg = f"unknown node kind {kind!r}"
        if hint:
            msg += f" (did you mean {hint!r}?)"
        super().__init__(msg)
        self.kind = kind
        self.hint = hint


class DuplicateNodeName(PipelineFileError):
    def __init__(self, name):
        super().__init__(f"node name {name!r} declared twice")
        self.name = name


class ExprSyntaxError(NxsError):
    """Malformed expression string."""

    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class DomainError(NxsError):
    """Math domain violation (log of non-positive, sqrt of negative)."""

    def __init__(self, func, sample_position):
        super().__init__(f"{func} domain violation at sample {sample_position}")
        self.func = func
        self.sample_position = sample_position


# -- graph / runtime -------------------------------------------------------

class GraphError(NxsError):
    """Pipeline graph cannot run (validation failed or misuse)."""


class NodeFailure(NxsError):
    """A node's update raised; the run is aborted."""

    def __init__(self, node_name, cause):
        super().__init__(f"node {node_name!r} failed: {cause!r}")
        self.node_name = node_name
        self.cause = cause


# -- dsp -------------------------------------------------------------------

class InvalidBand(NxsError):
    """Filter cutoffs outside the valid range."""


class UnstableDesign(NxsError):
    """Designed filter has poles on or outside the unit circle."""


class ChannelCountChanged(NxsError):
    """A stateful node received a chunk whose channel count changed mid-stream."""


class EmptyEpoch(NxsError):
    """Operation requires a non-empty (or long-enough) epoch."""


class TooShort(NxsError):
    def __init__(self, got, needed):
        super().__init__(f"input of {got} samples is shorter than required {needed}")
        self.got = got
        self.needed = needed


# -- channel selection -------------------------------------------------------

class UnknownChannel(NxsError):
    def __init__(self, name):
        super().__init__(f"unknown channel {name!r}")
        self.channel = name


class IndexOutOfRange(NxsError):
    def __init__(self, index, count):
        super().__init__(f"channel index {index} out of range for {count} channels")
        self.index = index


class DimensionMismatch(NxsError):
    """Matrix/vector dimensions incompatible with the data."""


class TooFewChannels(NxsError):
    """Operation needs more channels than the chunk has."""


# -- epoching ---------------------------------------------------------------

class MarkerBeforeBuffer(NxsError):
    """Marker refers to samples older than the retained buffer."""


# -- synthesis / stimulator ---------------------------------------------------

class XmlSyntaxError(NxsError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.line = line


class SchemaError(NxsError):
    """A structured document is missing required elements or fields."""


class InvalidDuration(NxsError):
    """A duration in a configuration file is not a positive number."""


# -- wire protocols -----------------------------------------------------------

class WireError(NxsError):
    """Base for network decoding errors."""


class BadGuid(WireError):
    """RDA message GUID does not match the protocol constant."""


class BadMagic(WireError):
    """Frame or file magic bytes not recognized."""


class Truncated(WireError):
    def __init__(self, expected, got):
        super().__init__(f"truncated message: expected {expected} bytes, got {got}")
        self.expected = expected
        self.got = got


class InconsistentHeader(WireError):
    """Declared sizes/counts do not match the payload."""


class Oversize(WireError):
    """Item too large for the wire format's fixed-width count fields."""


class ConnectFailed(NxsError):
    """Could not (re)connect to a network endpoint after retries."""


class ProtocolError(NxsError):
    """Peer sent data violating the protocol; not recoverable by retry."""


# -- file formats --------------------------------------------------------------

class FileFormatError(NxsError):
    """Base for recording parser errors."""


class CorruptChunk(FileFormatError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (file offset {offset})")
        self.offset = offset


class UnsupportedSampleFormat(FileFormatError):
    pass


class MissingSection(FileFormatError):
    def __init__(self, name):
        super().__init__(f"missing required section [{name}]")
        self.section = name


class UnsupportedBinaryFormat(FileFormatError):
    pass


class FileSizeMismatch(FileFormatError):
    def __init__(self, expected_bytes, actual_bytes):
        super().__init__(
            f"data file size {actual_bytes} is not a whole number of records "
            f"(record size {expected_bytes})"
        )


class SchemaChanged(NxsError):
    """A sink received data whose channel set differs from the file header."""


# -- ml ------------------------------------------------------------------------

class MisalignedInputs(NxsError):
    """Feature inputs carry timestamps that do not belong to the same window."""


class SingularCovariance(NxsError):
    """Pooled covariance not invertible and ridge disabled."""


class TooFewSamples(NxsError):
    """Training set too small or degenerate (fewer than two classes)."""


class VersionMismatch(NxsError):
    def __init__(self, got, supported):
        super().__init__(f"model file version {got} not supported (expected {supported})")
        self.got = got
