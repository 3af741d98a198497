"""microforge: microstructure synthesis and characterization toolkit.

Pipeline: cut patches from an exemplar image, train a style-based GAN on
them, synthesize new patches, quilt them into large samples, binarize, and
score the result with Minkowski functionals and effective elastic constants.

Submodules are imported lazily so that thread-limit environment variables
set by the CLI take effect before numpy loads.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "errors",
    "rng",
    "images",
    "quilt",
    "tensorcore",
    "stylenet",
    "trainloop",
    "postproc",
    "metrology",
    "homog",
    "synthetic",
    "pipeline",
)


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        module = importlib.import_module(f".{name}", __name__)
        globals()[name] = module
        return module
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
