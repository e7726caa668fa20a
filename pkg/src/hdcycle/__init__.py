"""Simple heterodimensional cycles: affine model, central IFS, stabilization and blenders."""
from .model import CycleSpec, build_model, oracle_periodic
from .ifs import compose_return, fixed_points
from .dictionary import build_report, cross_check
from .stabilizer import classify, detwist, stabilize, verify_certificate
from .blender import BlenderModel, split_saddle_node, verify_robust, verify_superposition

__version__ = "0.1.0"
