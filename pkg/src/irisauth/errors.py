"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An argument or state violated a documented precondition."""


class GradientError(RuntimeError):
    """A non-finite gradient reached an optimizer step."""


class ManifestError(ValueError):
    """A dataset manifest is malformed or references missing files."""


class CheckpointError(ValueError):
    """A checkpoint file is malformed or inconsistent with expectations."""
