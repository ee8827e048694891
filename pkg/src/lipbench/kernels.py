"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy twins in
``_kernels_py`` take over. Set ``LIPBENCH_PURE=1`` to force the fallback.
"""
import os

from . import _kernels_py

_pure = _kernels_py

if os.environ.get("LIPBENCH_PURE"):
    _compiled = None
else:
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _pure


def backends():
    """Available kernel modules keyed by name, for benchmarking and cross-checks."""
    out = {"python": _pure}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out


def jacobi_eigh(S, tol=1e-12, max_sweeps=100):
    return _impl.jacobi_eigh(S, tol, max_sweeps)


def nn_query(train, labels, queries, metric, n_classes):
    return _impl.nn_query(train, labels, queries, metric, n_classes)
