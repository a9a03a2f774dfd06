"""Learned calibration of a simulated cable-driven surgical arm.

Sphere-fiducial pose estimation, a hysteresis/coupling plant, sequence
models of the commanded -> physical map, controllers built on them and the
studies that benchmark the whole loop.
"""
__version__ = "0.1.0"

from .errors import CablecalError
from .kinematics import JointConfig, KinematicParams, forward_kinematics
from .plant import Plant, PlantConfig

__all__ = ["CablecalError", "JointConfig", "KinematicParams", "Plant", "PlantConfig", "__version__",
           "forward_kinematics"]
