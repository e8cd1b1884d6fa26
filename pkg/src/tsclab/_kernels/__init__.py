"""Sampling-kernel backend selection.

Tries the compiled Cython core first and falls back to the pure-NumPy
implementation. Both expose the same functions with the same stream
arithmetic; ``BACKEND`` names the one in use and ``COMPILED`` says whether
the extension loaded. Set ``TSCLAB_FORCE_NUMPY=1`` to skip the extension.
"""

import os
import warnings

if os.environ.get("TSCLAB_FORCE_NUMPY"):
    from . import _numpycore as _impl
else:
    try:
        from . import _fastcore as _impl
    except ImportError:
        warnings.warn(
            "compiled sampling kernel unavailable, using the NumPy fallback "
            "(build the extension with `pip install -e .` for faster rollouts)",
            stacklevel=2,
        )
        from . import _numpycore as _impl

from . import _numpycore as numpy_backend

BACKEND = _impl.BACKEND
COMPILED = BACKEND == "cython"

derive_key = _impl.derive_key
uniforms_from_key = _impl.uniforms_from_key
sample_responses = _impl.sample_responses


def get_backend(name=None):
    """Return the module for ``name`` ("cython"/"numpy"); default: active."""
    if name in (None, BACKEND):
        return _impl
    if name == "numpy":
        return numpy_backend
    if name == "cython":
        from . import _fastcore

        return _fastcore
    raise ValueError(f"unknown backend {name!r}")


__all__ = [
    "BACKEND",
    "COMPILED",
    "derive_key",
    "uniforms_from_key",
    "sample_responses",
    "get_backend",
]
