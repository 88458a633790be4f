"""Exception hierarchy shared by every module."""


class ThegcnError(Exception):
    pass


class ContractError(ThegcnError, ValueError):
    """A precondition of an operation was violated by the caller."""


class ShapeError(ContractError):
    pass


class DataError(ThegcnError):
    """Base class for problems with input files or graph contents."""


class ParseError(DataError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class IntegrityError(DataError):
    pass


class SchemaError(DataError):
    pass


class CoverageError(DataError):
    """A metric needed a label that the graph does not provide."""

    def __init__(self, message, nodes=()):
        self.nodes = sorted(set(int(n) for n in nodes))
        if self.nodes:
            shown = ", ".join(str(n) for n in self.nodes[:20])
            more = "" if len(self.nodes) <= 20 else f" (+{len(self.nodes) - 20} more)"
            message = f"{message}: nodes [{shown}]{more}"
        super().__init__(message)


class TrainingDivergence(ThegcnError, RuntimeError):
    pass
