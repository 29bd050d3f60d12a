class ConfigurationException(Exception):
    pass


class DataException(Exception):
    pass


class ParsingException(DataException):
    pass


class FormatException(DataException):
    pass


class SizeException(DataException):
    pass


class UsageException(Exception):
    pass


class StateException(Exception):
    pass


class CompatibilityException(Exception):
    pass


class CalibrationException(Exception):
    pass


class UndefinedMetricException(Exception):
    pass


class NotFoundException(Exception):
    pass


class MissingArtifactException(NotFoundException):
    pass


class NumericException(Exception):
    pass


class TrainingException(NumericException):
    pass
