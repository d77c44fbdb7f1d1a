"""Exception taxonomy shared across the package.

Every failure raised deliberately by this package derives from
:class:`EffiSegNetError` so callers can catch one base type. The four
subclasses that map to CLI exit codes are :class:`ConfigurationError`,
:class:`DataError`, :class:`ResourceError` and :class:`NumericalError`.
"""

from __future__ import annotations


class EffiSegNetError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(EffiSegNetError):
    """Invalid configuration value, unknown key, or malformed config file."""


class DataError(EffiSegNetError):
    """Dataset ingestion failure: missing files, orphans, bad formats."""


class ResourceError(EffiSegNetError):
    """The host cannot satisfy a resource requirement (e.g. batch of 1 OOMs)."""


class NumericalError(EffiSegNetError):
    """A non-finite value surfaced where a finite one is required."""


class ContractError(EffiSegNetError):
    """A caller violated a documented precondition."""


class ShapeError(ContractError):
    """Tensor shape or channel count does not match what a module expects."""


class WeightLoadError(EffiSegNetError):
    """Pretrained backbone weights could not be resolved or loaded."""


class CheckpointError(EffiSegNetError):
    """Checkpoint file or its manifest is missing, corrupt, or mismatched."""
