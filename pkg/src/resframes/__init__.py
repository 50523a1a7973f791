"""Residual-frame motion representation for 3D ConvNets."""
__version__ = "0.1.0"
