"""Exception types shared across the package."""


class ParseError(ValueError):
    """Malformed input file. ``line`` is 1-based, or None when not line specific."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class InvalidStateError(RuntimeError):
    pass


class DegenerateGeometryError(RuntimeError):
    """The normal equations cannot pin down the hand-eye transform.

    Typical causes are too few motions or motions without independent
    rotation axes.
    """


class EmptyViewError(RuntimeError):
    pass


class NumericError(ArithmeticError):
    pass
