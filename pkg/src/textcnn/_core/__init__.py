"""Hot convolution kernels.

``conv_pool`` and ``conv_backward`` run once per kernel bank per sample and
dominate training time. The compiled module ``_ckernels`` is used when it
was built; otherwise the numpy implementation in ``_pykernels`` is used.
Both expose the same two functions with identical semantics.
"""

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["compiled"] = _ckernels

_active = _ckernels if _ckernels is not None else _pykernels


def available_backends():
    return sorted(BACKENDS)


def backend_name():
    return "compiled" if _active is _ckernels and _ckernels is not None else "python"


def use_backend(name):
    """Select the kernel backend for subsequent calls; returns the previous name."""
    global _active
    if name not in BACKENDS:
        raise ValueError(f"unknown or unavailable backend {name!r}; have {available_backends()}")
    previous = backend_name()
    _active = BACKENDS[name]
    return previous


def conv_pool(X, W, b):
    return _active.conv_pool(X, W, b)


def conv_backward(X, W, argmax, grad_pre, dW, db, dX):
    return _active.conv_backward(X, W, argmax, grad_pre, dW, db, dX)
