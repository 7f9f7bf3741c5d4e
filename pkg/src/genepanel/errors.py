"""Exception types shared across the package."""


class GenePanelError(Exception):
    """Base class for all package errors."""


class ParseError(GenePanelError, ValueError):
    """Malformed input file. ``line``/``column`` are 1-based when known."""

    def __init__(self, message, path=None, line=None, column=None):
        self.path = path
        self.line = line
        self.column = column
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class DimensionMismatch(GenePanelError, ValueError):
    pass


class DegenerateInput(GenePanelError, ValueError):
    """Input is valid but too small or too uniform for the requested operation."""


class NumericBlowup(GenePanelError, ArithmeticError):
    pass


class BudgetExceeded(GenePanelError):
    pass
