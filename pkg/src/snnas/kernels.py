"""Kernel backend selection.

The compiled extension is used when it was built; otherwise the numpy
fallback is loaded. Set ``SNNAS_BACKEND=python`` to force the fallback.
"""
import importlib
import logging
import os

logger = logging.getLogger(__name__)

_NAMES = (
    "dwconv_forward",
    "dwconv_backward",
    "maxpool_forward",
    "maxpool_backward",
    "avgpool_forward",
    "avgpool_backward",
    "lif_forward",
    "lif_backward",
)


def load_backend(name=None):
    """Return ``(backend_name, module)`` for ``'compiled'`` or ``'python'``."""
    if name is None:
        name = os.environ.get("SNNAS_BACKEND", "auto")
    if name in ("auto", "compiled"):
        try:
            return "compiled", importlib.import_module("snnas._kernels")
        except ImportError:
            if name == "compiled":
                raise
            logger.debug("compiled kernels unavailable, using numpy fallback")
    elif name != "python":
        raise ValueError(f"unknown kernel backend {name!r}")
    return "python", importlib.import_module("snnas._fallback")


BACKEND, _impl = load_backend()


def use_backend(name):
    """Switch the active backend at runtime (used by benchmarks and tests)."""
    global BACKEND, _impl
    BACKEND, _impl = load_backend(name)
    for fn in _NAMES:
        globals()[fn] = getattr(_impl, fn)
    return BACKEND


for _fn in _NAMES:
    globals()[_fn] = getattr(_impl, _fn)
