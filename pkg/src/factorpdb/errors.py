"""Exception hierarchy shared across the engine."""


class PdbError(Exception):
    """Base class for all engine errors."""


class DomainError(PdbError, ValueError):
    """A value lies outside the domain declared for its field."""


class UnknownVariableError(PdbError, KeyError):
    pass


class CorruptionError(PdbError):
    """A delta or answer update does not match the state it is applied to."""


class ContractViolation(PdbError):
    """A proposer modified something other than hidden fields."""


class StateSpaceTooLarge(PdbError):
    """Brute-force enumeration refused because the joint domain exceeds the cap."""


class FormatError(PdbError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None, source=None):
        self.message = message
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class CorpusFormatError(FormatError):
    pass


class ModelFormatError(FormatError):
    pass


class SnapshotFormatError(FormatError):
    pass


class QueryError(PdbError, ValueError):
    pass


class ParseError(QueryError):
    """Query text could not be parsed; ``position`` is a 0-based character offset."""

    def __init__(self, message, text="", position=0):
        self.position = position
        self.text = text
        caret = ""
        if text:
            caret = f"\n  {text}\n  {' ' * position}^"
        super().__init__(f"{message} (at position {position}){caret}")


class QueryValidationError(QueryError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
