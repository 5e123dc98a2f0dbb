"""Exception hierarchy shared by all engines and the CLI."""


class MLNError(Exception):
    """Base class for model errors (bad input, invalid knowledge base)."""


class ParseError(MLNError):
    """Syntax or validation error in a knowledge-base or evidence file."""

    def __init__(self, message, line=None, column=None):
        self.message = message
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "")
            where += ": "
        super().__init__(where + message)


class EvidenceError(MLNError):
    """Evidence that is unknown, non-ground or self-contradictory."""


class ResourceLimitError(MLNError):
    """A configured size limit (atoms, worlds, branches) would be exceeded."""
