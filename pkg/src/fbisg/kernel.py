"""Pick the Gibbs kernel: compiled extension if importable, numpy otherwise.

Set ``FBISG_BACKEND=python`` to force the numpy version.
"""
from __future__ import annotations

import os

from . import _gibbs_py

python_run_chains = _gibbs_py.run_chains

try:
    from ._gibbs import run_chains as compiled_run_chains
except ImportError:  # extension not built
    compiled_run_chains = None

if compiled_run_chains is not None and os.environ.get("FBISG_BACKEND", "").lower() != "python":
    BACKEND = "compiled"
    run_chains = compiled_run_chains
else:
    BACKEND = "python"
    run_chains = python_run_chains


def get_run_chains(backend: str | None = None):
    """Kernel for `backend` ("compiled", "python"), or the import-time default."""
    if backend is None:
        return run_chains
    if backend == "python":
        return python_run_chains
    if backend == "compiled":
        if compiled_run_chains is None:
            raise RuntimeError("compiled Gibbs kernel is not available; build the extension")
        return compiled_run_chains
    raise ValueError(f"unknown backend {backend!r}")
