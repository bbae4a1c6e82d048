"""Exception hierarchy shared across the package."""

from __future__ import annotations


class OODKitError(Exception):
    """Base class for every error raised by oodkit."""


class SchemaError(OODKitError):
    pass


class DataLoadError(OODKitError):
    """A CSV row or cell failed validation against the schema."""


class EncodingError(OODKitError):
    pass


class PredicateError(OODKitError):
    """Predicate text could not be parsed or references an unknown feature."""


class GroupError(OODKitError):
    """An OOD group selection is empty or otherwise degenerate."""


class TapeError(OODKitError):
    """A forward tape was replayed after its parameters changed."""


class FitError(OODKitError):
    pass


class SingularCoalitionError(OODKitError):
    """KernelSHAP regression lacks enough distinct coalitions to be solved."""


class ConfigError(OODKitError):
    pass
