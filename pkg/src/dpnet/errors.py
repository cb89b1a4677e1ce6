"""Exception hierarchy shared by the inference engine."""


class DpnError(Exception):
    """Base class for all errors raised by dpnet."""


class ModelError(DpnError, ValueError):
    """A model, slice specification or evidence item is ill-formed."""


class CycleError(DpnError, ValueError):
    """A directed graph that must be acyclic contains a cycle."""


class GraphError(DpnError, ValueError):
    """Bad graph input: unknown vertex, blocks that do not partition, non-perfect order."""


class DomainError(DpnError, ValueError):
    """Potential-table domains are incompatible with the requested operation."""


class DivisionByZeroError(DpnError, ArithmeticError):
    """A positive entry was divided by zero during table division."""


class ZeroMassError(DpnError, ArithmeticError):
    """Total mass vanished: the entered evidence contradicts the model."""


class JunctionTreeError(DpnError, ValueError):
    """A clique set admits no junction tree, or a query is not covered by one clique."""


class NotCalibratedError(DpnError, RuntimeError):
    """The operation needs a calibrated junction tree."""


class ResourceLimitError(DpnError, RuntimeError):
    """Exact computation would exceed the configured table-cell cap."""


class SeriesFormatError(DpnError, ValueError):
    """A saved model series is corrupt, truncated or has an unsupported version."""
