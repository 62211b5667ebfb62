"""Exception types shared across the framework."""


class SfanetError(Exception):
    """Base class for all framework errors."""


class InvalidInputError(SfanetError):
    """A value violates an operation's input contract (e.g. non-finite pixels)."""


class ConfigurationError(SfanetError):
    """Dimensions, grids, presets, or run configuration are inconsistent."""


class IngestionError(SfanetError):
    """A manifest or artifact file is missing or cannot be parsed."""


class ConsistencyError(SfanetError):
    """Two inputs that must describe the same data disagree."""


class StateError(SfanetError):
    """An operation ran against an object in the wrong state (e.g. unloaded weights)."""


class PipelineError(SfanetError):
    """A model inside a multi-model pipeline failed; the message names the bundle."""
