"""Plane-pose toolkit: synthesize, recover, and score oriented slice poses
in 3D volumes, with a small HTTP service for manual annotation."""

from .errors import PlanePoseError

__version__ = "0.1.0"

__all__ = ["PlanePoseError", "__version__"]
