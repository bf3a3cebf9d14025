"""Kernel backend selection.

The hot recovery kernels (prefix split tree, dynamic-forest acyclify) exist
twice: a compiled Cython extension (`_fast`) and a pure-Python reference
(`_reference`).  The reference doubles as the correctness oracle required by
the tests; selection happens once at import.  Set GEOTRANSPORT_BACKEND=python
to force the pure-Python kernels.
"""

import importlib
import os

from . import _reference

BACKEND = "python"
_fast = None

if os.environ.get("GEOTRANSPORT_BACKEND", "").lower() not in ("python", "pure", "py"):
    try:
        _fast = importlib.import_module("geotransport._kernels._fast")
        BACKEND = "cython"
    except ImportError:
        _fast = None

if BACKEND == "cython":
    PrefixSplitTree = _fast.PrefixSplitTree
    acyclify_core = _fast.acyclify_core
    extract_core = _fast.extract_core
else:
    PrefixSplitTree = _reference.NaivePrefixSplitTree
    acyclify_core = _reference.acyclify_core
    extract_core = _reference.extract_core

# reference implementations stay importable for cross-checks
NaivePrefixSplitTree = _reference.NaivePrefixSplitTree
acyclify_reference = _reference.acyclify_core
extract_reference = _reference.extract_core
