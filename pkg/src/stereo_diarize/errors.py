"""Exception hierarchy shared by every pipeline stage."""


class PipelineError(Exception):
    """Base class for all errors raised by stereo_diarize."""


class DecodeError(PipelineError, ValueError):
    """Malformed RIFF/WAVE data."""


class ChannelError(PipelineError, ValueError):
    """Audio does not have exactly two channels."""


class UnsupportedFormat(PipelineError, ValueError):
    """WAVE format tag or bit depth we cannot decode."""


class ManifestError(PipelineError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class RangeError(PipelineError, ValueError):
    """An utterance span extends past the end of the signal."""


class EmbedError(PipelineError, ValueError):
    pass


class EmbeddingImportError(PipelineError, ValueError):
    """Invalid embedding file (named to avoid shadowing the builtin ImportError)."""


class FitError(PipelineError, ValueError):
    pass


class ScoreError(PipelineError, ValueError):
    pass


class SplitError(PipelineError, ValueError):
    pass


class ExperimentError(PipelineError, ValueError):
    pass


class EvalError(PipelineError, ValueError):
    pass


class ZeroVarianceError(EvalError):
    pass


class DegenerateError(EvalError):
    """All observations in a rank test are identical."""


class ConfigError(PipelineError, ValueError):
    pass
