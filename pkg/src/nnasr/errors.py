"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class NnasrError(Exception):
    exit_code = 2


class UsageError(NnasrError, ValueError):
    """Bad arguments or a request that cannot be satisfied as posed."""

    exit_code = 1


class FormatError(NnasrError, ValueError):
    """Malformed input file or an in-memory structure violating its invariants."""

    exit_code = 2


class PhoneLookupError(NnasrError, KeyError):
    exit_code = 2

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class AlignmentInfeasibleError(NnasrError):
    """No complete path exists through the decoding graph."""

    exit_code = 3


class EstimationError(NnasrError, ArithmeticError):
    exit_code = 3
