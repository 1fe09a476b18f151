"""Differentiable airfoil and CFD-mesh parameterization with neural deformation fields."""

from .geometry import AirfoilCurve, load_dat, naca_generate, save_dat
from .mesh import CfdMesh, mesh_quality, o_mesh, read_su2_mesh, sample_template, write_su2_mesh
from .net import ActivationBlend, DeformationNet

__version__ = "0.1.0"

__all__ = [
    "ActivationBlend",
    "AirfoilCurve",
    "CfdMesh",
    "DeformationNet",
    "load_dat",
    "mesh_quality",
    "naca_generate",
    "o_mesh",
    "read_su2_mesh",
    "sample_template",
    "save_dat",
    "write_su2_mesh",
]
