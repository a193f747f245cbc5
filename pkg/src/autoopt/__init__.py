"""Instruction-driven multi-objective optimization of 3D UI layouts."""

__version__ = "0.1.0"
