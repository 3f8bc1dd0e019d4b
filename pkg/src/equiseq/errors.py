"""Exception hierarchy shared across equiseq."""


class EquiseqError(Exception):
    """Base class for all library errors."""


class ShapeError(EquiseqError, ValueError):
    pass


class DegenerateInputError(EquiseqError, ValueError):
    pass


class InvalidInputError(EquiseqError, ValueError):
    pass


class IllConditionedError(EquiseqError, ValueError):
    pass


class FiniteInformationError(EquiseqError, ValueError):
    """A coefficient map would need parameters whose shape depends on n."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class SchemaError(EquiseqError, ValueError):
    """A JSON document does not match the expected schema.

    ``path`` locates the offending field (e.g. ``layers[1].heads[0].wq``).
    """

    def __init__(self, message, path="", line=None):
        self.path = path
        self.line = line
        where = path or "<root>"
        if line is not None:
            where = f"line {line}: {where}"
        super().__init__(f"{where}: {message}")


class TapeError(EquiseqError, RuntimeError):
    pass
