"""Sparse-sampling teacher-student distillation for 2D-to-3D pose lifting."""

__version__ = "0.1.0"
