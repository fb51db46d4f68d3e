"""Exception hierarchy shared by every stage of the pipeline.

Each class carries a stable ``code`` used in machine-readable error output
(CLI stderr, service failure reasons).
"""


class GardenTrackError(Exception):
    code = "Error"


# -- NMEA parsing ------------------------------------------------------------

class MalformedSentence(GardenTrackError):
    code = "MalformedSentence"


class ChecksumMismatch(GardenTrackError):
    code = "ChecksumMismatch"

    def __init__(self, computed, declared, line=None):
        self.computed = computed
        self.declared = declared
        self.line = line
        super().__init__(
            f"checksum mismatch: computed {computed:02X}, declared {declared:02X}"
        )


class MalformedCoordinate(GardenTrackError):
    code = "MalformedCoordinate"


class EmptyStream(GardenTrackError):
    code = "EmptyStream"

    def __init__(self, report=None, message="stream contains no accepted fixes"):
        self.report = report
        super().__init__(message)


# -- geodesy -----------------------------------------------------------------

class OutOfZone(GardenTrackError):
    code = "OutOfZone"


class UnknownProjection(GardenTrackError):
    code = "UnknownProjection"


# -- track model / statistics ------------------------------------------------

class MalformedGeometry(GardenTrackError):
    code = "MalformedGeometry"


class TooFewVertices(MalformedGeometry):
    code = "TooFewVertices"


class EmptySeries(GardenTrackError):
    code = "EmptySeries"


class InsufficientData(GardenTrackError):
    code = "InsufficientData"


class SurveyTooShort(GardenTrackError):
    code = "SurveyTooShort"


class IrregularSampling(GardenTrackError):
    code = "IrregularSampling"


class SeriesTooShort(GardenTrackError):
    code = "SeriesTooShort"


class DegenerateSeries(SeriesTooShort):
    """Zero-variance input; the autocorrelation is undefined."""

    code = "DegenerateSeries"


# -- behaviour ---------------------------------------------------------------

class TooFewFixes(GardenTrackError):
    code = "TooFewFixes"


class WindowTooLarge(GardenTrackError):
    code = "WindowTooLarge"


# -- simulation --------------------------------------------------------------

class InvalidScenario(GardenTrackError):
    code = "InvalidScenario"


# -- service / cli -----------------------------------------------------------

class UnreadableFile(GardenTrackError):
    code = "UnreadableFile"


class DuplicateUpload(GardenTrackError):
    code = "DuplicateUpload"

    def __init__(self, record):
        self.record = record
        super().__init__(f"file already submitted as {record.survey_id}")


class UnknownSurvey(GardenTrackError):
    code = "UnknownSurvey"


class NoAnalyzedSurveys(GardenTrackError):
    code = "NoAnalyzedSurveys"


class ConfigError(GardenTrackError):
    code = "ConfigError"
