"""Exception hierarchy shared across the package."""


class AsymptError(Exception):
    """Base class for all package errors."""


class InputError(AsymptError):
    """Invalid user input: malformed scenario, bad flag value, unsupported request."""


class GradingError(AsymptError):
    """An order-of-magnitude invariant failed (lattice membership, grade floor, split shape)."""


class RigorError(AsymptError):
    """A rigorous step cannot be certified (norm premise violated, refinement stalled)."""
