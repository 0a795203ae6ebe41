"""Exception hierarchy shared by all pipeline stages."""


class VQTTSError(Exception):
    """Base class for every error raised by this package."""


# corpus
class MalformedRecord(VQTTSError, ValueError):
    def __init__(self, line_no, reason=""):
        self.line_no = line_no
        super().__init__(f"malformed manifest record at line {line_no}: {reason}")


class DuplicateUttId(VQTTSError, ValueError):
    pass


class UnknownSpeaker(VQTTSError, KeyError):
    pass


class InconsistentRegistry(VQTTSError, ValueError):
    pass


class TranscriptError(VQTTSError, ValueError):
    def __init__(self, position, reason):
        self.position = position
        super().__init__(f"{reason} at position {position}")


class DigitOutsideBraces(TranscriptError):
    def __init__(self, position):
        super().__init__(position, "digit outside braces")


class DigitInBraces(TranscriptError):
    def __init__(self, position):
        super().__init__(position, "digit inside a braced pronunciation")


class UnbalancedBraces(TranscriptError):
    def __init__(self, position):
        super().__init__(position, "unbalanced brace")


class AudioFormatError(VQTTSError, ValueError):
    pass


class FeatureFileError(VQTTSError, ValueError):
    pass


# alignment
class InfeasibleAlignment(VQTTSError, ValueError):
    pass


class NotRowStochastic(VQTTSError, ValueError):
    pass


# data selection
class EmptyReference(VQTTSError, ValueError):
    pass


# text frontend
class EmptyText(VQTTSError, ValueError):
    pass


class MissingAlignment(VQTTSError, KeyError):
    pass


class NoBoundaries(VQTTSError, ValueError):
    pass


class AlreadyHasSil(VQTTSError, ValueError):
    pass


# features
class TooShort(VQTTSError, ValueError):
    pass


class InsufficientData(VQTTSError, ValueError):
    pass


class DegenerateEmbedding(VQTTSError, ValueError):
    pass


class NoVoicedFrames(VQTTSError, ValueError):
    pass


# models
class UnknownLanguage(VQTTSError, KeyError):
    pass


class EmptyTokens(VQTTSError, ValueError):
    pass


class AllZeroDurations(VQTTSError, ValueError):
    pass


class ShapeMismatch(VQTTSError, ValueError):
    pass


class IndexOutOfRange(VQTTSError, IndexError):
    pass


class EmptyInput(VQTTSError, ValueError):
    pass


class LengthMismatch(VQTTSError, ValueError):
    pass


class CheckpointError(VQTTSError, RuntimeError):
    pass


# synthesis
class MissingStats(VQTTSError, ValueError):
    pass


class NoNativeSpeaker(VQTTSError, LookupError):
    pass


class StageError(VQTTSError, RuntimeError):
    """A pipeline stage failed; carries the stage name for the CLI exit message."""

    def __init__(self, stage, message):
        self.stage = stage
        self.message = message
        super().__init__(f"[{stage}] {message}")

    def __reduce__(self):
        return type(self), (self.stage, self.message)
