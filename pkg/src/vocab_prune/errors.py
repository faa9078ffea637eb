"""Exception hierarchy.

Every error carries the process exit code the CLI maps it to:
2 for malformed input, 3 for invariant violations, 4 for I/O and resource problems.
"""

from __future__ import annotations


class VocabPruneError(Exception):
    exit_code = 3


class FormatError(VocabPruneError):
    exit_code = 2


class ParseError(FormatError):
    pass


class UnsupportedModel(ParseError):
    pass


class MalformedSurface(FormatError):
    pass


class CorruptHeader(FormatError):
    pass


class OverlappingTensors(FormatError):
    pass


class SizeMismatch(FormatError):
    pass


class NoWords(FormatError):
    pass


class InvariantError(VocabPruneError):
    pass


class NotMergeClosed(InvariantError):
    pass


class EmptyKeepSet(InvariantError):
    pass


class AxisMismatch(InvariantError):
    pass


class MissingTensor(InvariantError):
    pass


class PreconditionViolation(InvariantError):
    pass


class EncodingGap(VocabPruneError):
    pass


class NumericsMismatch(VocabPruneError):
    pass


class AllocationFailure(VocabPruneError):
    exit_code = 4


class OutputExists(VocabPruneError):
    exit_code = 4
