"""Superquadric recovery from single-view range images.

Submodules:
    geometry    implicit function, parameters, scaling, surface sampling
    rendering   isometric depth renderer and range-image file formats
    dataset     seeded synthetic dataset generation, manifests, splits
    net         NumPy neural-network primitives (ops, layers, Adam, weights)
    regressor   CNN architectures, training protocol, prediction
    fitter      iterative least-squares baseline
    evalbench   MAE, error distributions, timing, comparison reports
    cli         command-line pipeline driver

Importing the top-level package stays lightweight on purpose: the command
line sets threading environment variables before any numerical library
loads, so heavy submodules are imported lazily.
"""

__version__ = "0.1.0"

_SUBMODULES = ("geometry", "rendering", "dataset", "net", "regressor",
               "fitter", "evalbench", "cli")


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
