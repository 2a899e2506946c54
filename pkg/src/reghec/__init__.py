"""Hand-eye calibration by multi-view point cloud registration."""

from .geom import RigidTransform, pack, unpack
from .reg import CalibrationProblem, Mode

__version__ = "0.1.0"
__all__ = ["CalibrationProblem", "Mode", "RigidTransform", "pack", "unpack"]
