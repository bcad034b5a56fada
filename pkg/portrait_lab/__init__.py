"""
Portrait Lab
3D-aware portrait inversion and attribute editing on a procedural face world
"""

__version__ = "0.1.0"
