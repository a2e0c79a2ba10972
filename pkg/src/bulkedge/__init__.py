"""Numerical bulk-edge correspondence: bulk, edge and kernel-bundle indices
for 2D tight-binding Hamiltonians.

Submodules are imported lazily so the CLI can cap BLAS thread pools before
numpy loads.
"""

__version__ = "0.1.0"

_SUBMODULES = ("model", "spectral", "bulk", "edge", "grafporta", "cli", "errors")


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
