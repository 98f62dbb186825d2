"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``MEMPATE_PURE_PYTHON`` is set to a non-empty value
other than ``0``, the numpy reference kernels are used.
"""

import os

from . import _pykernels

python_kernels = _pykernels

try:
    from . import _kernels as compiled_kernels
except ImportError:  # extension not built
    compiled_kernels = None

_force_python = os.environ.get("MEMPATE_PURE_PYTHON", "") not in ("", "0")

kernels = python_kernels if (_force_python or compiled_kernels is None) else compiled_kernels
NAME = "python" if kernels is python_kernels else "compiled"


def get(name=None):
    """Return the kernel module ``name`` ('compiled' / 'python'), or the active one."""
    if name is None:
        return kernels
    if name == "python":
        return python_kernels
    if name == "compiled":
        if compiled_kernels is None:
            raise ImportError("compiled tree kernels are not available; build the extension")
        return compiled_kernels
    raise ValueError(f"unknown backend {name!r}")
