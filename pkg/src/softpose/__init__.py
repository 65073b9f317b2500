"""softpose - Probabilistic orientation estimation by soft classification over an SO(3) grid."""

__version__ = "1.0.0"
