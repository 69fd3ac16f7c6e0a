"""Kernel backend selection.

The hot inner loops (soft rasterization forward/backward, point-to-mesh
closest queries, ray-parity containment) exist twice: a compiled Cython
extension (``_core``) and a pure-numpy fallback (``_fallback``) with
identical semantics.  The compiled module is preferred when importable;
set HOIPOSE_PURE_PYTHON=1 to force the fallback.
"""

import os

from . import _fallback

_impl = _fallback
_backend = "fallback"

if not os.environ.get("HOIPOSE_PURE_PYTHON"):
    try:
        from . import _core

        _impl = _core
        _backend = "compiled"
    except ImportError:
        pass


def backend_name():
    return _backend


def get_backend(name=None):
    """Return the kernel module for `name` ('compiled', 'fallback' or None=active)."""
    if name is None:
        return _impl
    if name == "fallback":
        return _fallback
    if name == "compiled":
        from . import _core

        return _core
    raise ValueError(f"unknown kernel backend: {name!r}")


def build_candidates(*args, **kwargs):
    return _impl.build_candidates(*args, **kwargs)


def raster_forward(*args, **kwargs):
    return _impl.raster_forward(*args, **kwargs)


def raster_backward(*args, **kwargs):
    return _impl.raster_backward(*args, **kwargs)


def raster_nearest(*args, **kwargs):
    return _impl.raster_nearest(*args, **kwargs)


def mesh_closest_points(*args, **kwargs):
    return _impl.mesh_closest_points(*args, **kwargs)


def mesh_contains(*args, **kwargs):
    return _impl.mesh_contains(*args, **kwargs)
