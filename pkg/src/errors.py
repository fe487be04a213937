"""
Exception hierarchy for irisbench

Every error raised by the toolkit derives from ``IrisBenchError`` so the
command line can map failures to exit codes in one place.
"""


class IrisBenchError(Exception):
    """Base class for all toolkit errors"""


class ImageIOError(IrisBenchError):
    """Image could not be read, decoded or written"""


class GeometryError(IrisBenchError):
    """Circle fitting, delineation or geometric preconditions failed"""


class ConfigError(IrisBenchError):
    """Invalid configuration, manifest structure or command-line options"""


class EmbeddingFormatError(IrisBenchError):
    """Malformed embedding file or inconsistent embedding set"""


class ProtocolError(IrisBenchError):
    """Pair protocol cannot be built or scored"""


class MetricError(IrisBenchError):
    """Distance or statistic is undefined for the given input"""


class StageError(IrisBenchError):
    """Failure inside a pipeline stage, labelled with the stage name"""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")
