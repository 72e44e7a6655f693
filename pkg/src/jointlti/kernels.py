"""Backend selection for the hot loops.

The compiled extension ``jointlti._kernels`` is used when it was built;
otherwise the numpy fallback in ``jointlti._kernels_py`` is used. Set
``JOINTLTI_KERNELS=python`` to force the fallback or ``=compiled`` to make a
missing extension an import error.
"""

import os

from . import _kernels_py

_choice = os.environ.get("JOINTLTI_KERNELS", "auto").lower()
if _choice not in ("auto", "compiled", "python"):
    raise ImportError(f"JOINTLTI_KERNELS must be auto, compiled or python, got {_choice!r}")

_compiled = None
if _choice != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:
        if _choice == "compiled":
            raise

if _compiled is not None:
    BACKEND = "compiled"
    var_recursion = _compiled.var_recursion
    max_sign_vertex = _compiled.max_sign_vertex
else:
    BACKEND = "python"
    var_recursion = _kernels_py.var_recursion
    max_sign_vertex = _kernels_py.max_sign_vertex


def compiled_available():
    return _compiled is not None


def get_backend(name):
    """Return a namespace with the kernels of one specific backend."""
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels were not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
