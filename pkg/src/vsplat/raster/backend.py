"""Kernel backend selection: compiled extension when built, numpy otherwise."""

try:
    from . import _kernels as kernels

    COMPILED = True
except ImportError:  # extension not built
    from . import kernels_py as kernels

    COMPILED = False
