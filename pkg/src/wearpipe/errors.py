"""Exception hierarchy shared by all pipeline stages.

Every error carries an ``exit_code`` so the CLI can map module failures to
distinct process exit statuses.
"""

from __future__ import annotations


class WearPipeError(Exception):
    exit_code = 1


class ConfigError(WearPipeError):
    exit_code = 2


class InvalidConfig(ConfigError):
    exit_code = 3


class MissingColumn(WearPipeError):
    exit_code = 10

    def __init__(self, column: str):
        super().__init__(f"missing column: {column}")
        self.column = column


class LabelNotInVocabulary(WearPipeError):
    exit_code = 11

    def __init__(self, label: str):
        super().__init__(f"label not in vocabulary: {label!r}")
        self.label = label


class EmptyRecording(WearPipeError):
    exit_code = 12


class NotRawConfig(WearPipeError):
    exit_code = 20


class InconsistentVariants(WearPipeError):
    exit_code = 21


class SchemaMismatch(WearPipeError):
    exit_code = 30


class SingleClass(WearPipeError):
    exit_code = 31


class EmptyLabels(WearPipeError):
    exit_code = 32


class MisalignedFolds(WearPipeError):
    exit_code = 40


class EmptyPredictions(WearPipeError):
    exit_code = 41


class TooFewSubjects(WearPipeError):
    exit_code = 50


class LengthMismatch(WearPipeError):
    exit_code = 51
