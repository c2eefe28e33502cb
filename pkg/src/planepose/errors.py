"""Exception types raised across the toolkit.

Every domain error derives from PlanePoseError so callers (and the CLI)
can distinguish domain failures from genuine bugs.
"""


class PlanePoseError(Exception):
    """Base class for all domain errors."""


class DegenerateInput(PlanePoseError):
    """A 6D rotation vector whose columns cannot be orthonormalized."""


class InvalidRotation(PlanePoseError):
    """A matrix that is not a rotation within tolerance."""


class NotUnit(PlanePoseError):
    """A quaternion whose norm deviates too far from 1."""


class EmptySet(PlanePoseError):
    """A statistic was requested over an empty collection."""


class FormatError(PlanePoseError):
    """A file does not conform to the expected on-disk format."""


class DimensionMismatch(FormatError):
    """Raw payload size disagrees with the dimensions in the header."""


class BadDims(PlanePoseError):
    """Requested grid dimensions are out of the supported range."""


class BadStrength(PlanePoseError):
    """Augmentation strength outside [0, 1]."""


class TooFewPoints(PlanePoseError):
    """Fewer matched landmark pairs than the fit requires."""


class Collinear(PlanePoseError):
    """Landmark configuration is collinear, the fit is ambiguous."""


class EmptyMask(PlanePoseError):
    """A registration mask with no true voxels."""


class LabelMismatch(PlanePoseError):
    """Landmark sets share no labels to match on."""


class FlatImage(PlanePoseError):
    """Zero-variance image; normalized correlation is undefined."""


class UnknownVolume(PlanePoseError):
    """Volume id not registered with the annotation service."""


class SessionGone(PlanePoseError):
    """Annotation session id does not exist (or was lost on restart)."""


class StorageError(PlanePoseError):
    """The annotation store could not be written."""
