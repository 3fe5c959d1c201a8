class OdometryError(Exception):
    pass


# --- scans ---

class ScanError(OdometryError):
    pass


class MalformedRow(ScanError):
    pass


class NonMonotoneTimestamps(ScanError):
    pass


class EmptyScan(ScanError):
    pass


class InvalidScan(ScanError):
    pass


class ParseError(OdometryError):
    """ Text input could not be parsed. `line` is 1-based, or None when the problem is not tied to a line. """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = "line {}: {}".format(line, message)
        super().__init__(message)


# --- configuration ---

class ConfigError(OdometryError):
    pass


class UnknownPreset(ConfigError):
    pass


class UnknownScenario(ConfigError):
    pass


# --- registration ---

class RegistrationError(OdometryError):
    pass


class RadiusExceedsCell(RegistrationError):
    pass


class DegenerateRegistration(RegistrationError):
    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


# --- evaluation ---

class EvaluationError(OdometryError):
    pass


class TooShort(EvaluationError):
    pass


class NoTimeOverlap(EvaluationError):
    pass
