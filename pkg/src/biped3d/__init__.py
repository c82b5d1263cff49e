"""Gait synthesis and stability analysis for a five-link 3D biped with point feet."""
from .constraints import GaitDesign
from .errors import Biped3DError
from .params import RobotParams, load_params

__version__ = "0.1.0"

__all__ = ["GaitDesign", "Biped3DError", "RobotParams", "load_params", "__version__"]
