"""Exception taxonomy for placekit.

Two broad families matter to callers:

* :class:`SchemaError` subclasses — malformed *artifacts* (files, CLI
  arguments, config).  The CLI maps these to exit code 2.
* :class:`PlacekitError` subclasses that are not schema errors — domain
  failures discovered while computing (invalid layouts, numerical blowups,
  provider faults).  The CLI maps these to exit code 1.
"""

from __future__ import annotations


class PlacekitError(Exception):
    """Base class for every error raised by this package."""


class SchemaError(PlacekitError):
    """A file or argument does not match its documented schema."""


# --------------------------------------------------------------------------
# Parsing / validation of model output and layouts
# --------------------------------------------------------------------------


class CaptionParseError(PlacekitError):
    """A caption string does not match the two-object grammar."""


class LayoutParseError(PlacekitError):
    """A layout response string could not be parsed into objects."""


class LayoutValidationError(PlacekitError):
    """A layout failed validation; carries the individual violations."""

    def __init__(self, violations):
        self.violations = list(violations)
        names = ", ".join(v.name if hasattr(v, "name") else str(v) for v in self.violations)
        super().__init__(f"layout validation failed: {names or 'no violations given'}")


class ArityError(PlacekitError):
    """An operation that needs exactly two objects got some other count."""


class NARelationError(PlacekitError):
    """A spatial relation was required but the pair has none (tied centers)."""


# --------------------------------------------------------------------------
# Numerics
# --------------------------------------------------------------------------


class ShapeMismatchError(PlacekitError):
    """Array arguments disagree on shape."""


class StepOutOfRangeError(PlacekitError):
    """A diffusion timestep lies outside the schedule."""


class MaskOverlapError(PlacekitError):
    """Composition masks overlap where they must be disjoint."""


class RangeError(PlacekitError):
    """A scalar parameter lies outside its documented range."""


class NonfiniteGradientError(PlacekitError):
    """A gradient contained NaN or infinity."""


class NonfiniteValueError(PlacekitError):
    """A computed value contained NaN or infinity."""


class EmptySupportError(PlacekitError):
    """A sampling distribution has no mass (no eligible pairs)."""


class TripletInvariantError(PlacekitError):
    """A training-triplet record violates the dataset record invariants."""


class YieldBelowMinimumError(PlacekitError):
    """Dataset generation produced fewer records than the configured minimum."""


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------


class MissingLabelError(PlacekitError):
    """An evaluation case references a label absent from the vocabulary."""


class MissingRecordError(PlacekitError):
    """An evaluation case references an image id with no detection record."""


class IdMismatchError(PlacekitError):
    """Two artifacts that must share ids do not."""


class UnknownCategoryError(PlacekitError):
    """A categorical field holds a value outside its enum."""


class InvalidInputError(SchemaError):
    """A CLI or library argument is malformed."""


# --------------------------------------------------------------------------
# External text-model provider
# --------------------------------------------------------------------------


class ProviderError(PlacekitError):
    """Base class for chat-provider failures."""


class TransportError(ProviderError):
    """Network-level failure talking to the provider."""


class AuthError(ProviderError):
    """The provider rejected our credentials (HTTP 401/403)."""


class RateLimitedError(ProviderError):
    """The provider rate limited us and retries were exhausted (HTTP 429)."""

    def __init__(self, message: str, retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


class EmptyResponseError(ProviderError):
    """The provider returned no usable text."""
