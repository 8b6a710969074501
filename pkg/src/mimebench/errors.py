"""Exception hierarchy shared across the toolkit.

InputError subclasses map to CLI exit code 2, NumericalError to exit code 3.
"""


class MimebenchError(Exception):
    pass


class InputError(MimebenchError):
    """Bad files, bad arguments, bad configuration."""


class ParseError(InputError):
    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc += f"{path}"
        if line is not None:
            loc += f":{line}"
        super().__init__(f"{loc}: {message}" if loc else message)
        self.path = path
        self.line = line


class SchemaError(InputError):
    """Structurally valid file whose contents violate the declared schema."""


class TaxonomyError(InputError):
    """Class label or superclass mapping inconsistency."""


class NumericalError(MimebenchError):
    """Non-finite values or diverged optimization."""


class TrainingDivergedError(NumericalError):
    pass
