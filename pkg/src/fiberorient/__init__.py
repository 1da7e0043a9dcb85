"""Fiber orientation analysis of 3D cardiac images via the structure tensor."""

__version__ = "0.1.0"
