"""Exception hierarchy shared by all typetree modules.

CLI exit-code mapping: usage errors exit 1 (argparse), ModelError and its
subclasses exit 2, NumericalError exits 3.
"""


class TypetreeError(Exception):
    """Base class for all typetree errors."""


class ModelError(TypetreeError):
    """Model, parameter, or precondition violations (CLI exit code 2)."""


class ParameterError(ModelError):
    """Invalid model parameters (row sums, negative rates, bad shapes)."""


class ConditionError(ModelError):
    """A formula's validity condition does not hold for these parameters."""


class IrreducibilityError(ConditionError):
    """A required irreducibility / reachability condition fails."""


class DegenerateTypeError(ConditionError):
    """A type is almost surely extinct, so conditioned rates are undefined."""


class StateError(ModelError):
    """Simulation state is invalid (for example an empty urn)."""


class TreeStructureError(ModelError):
    """Malformed tree: bad arity, multiple roots, cycles, decreasing times."""


class NewickParseError(TreeStructureError):
    """Newick text could not be parsed; carries line and column."""

    def __init__(self, message, line=1, column=0):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class InferenceError(ModelError):
    """Inference cannot proceed (zero cherry block, vanishing denominator)."""


class ResourceError(ModelError):
    """A configured resource guard tripped (population cap)."""


class NumericalError(TypetreeError):
    """A numerical kernel failed to meet its contract (CLI exit code 3)."""
