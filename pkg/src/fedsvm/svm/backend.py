"""Sweep-kernel backend selection.

The compiled kernel is preferred when the extension built; the
pure-numpy fallback is always available. ``FEDSVM_SVM_BACKEND`` forces
the choice: ``c`` (fail if missing), ``python``, or ``auto`` (default).
"""

import os


def _load():
    choice = os.environ.get("FEDSVM_SVM_BACKEND", "auto").lower()
    if choice not in ("auto", "c", "python"):
        raise ValueError(f"FEDSVM_SVM_BACKEND must be auto|c|python, got {choice!r}")
    if choice in ("auto", "c"):
        try:
            from . import _smo
            return _smo.sweep, "c"
        except ImportError:
            if choice == "c":
                raise
    from . import _smo_py
    return _smo_py.sweep, "python"


sweep, BACKEND_NAME = _load()


def get_sweep(name: str):
    """Fetch a specific backend's sweep function (used by the benchmark
    and the cross-backend agreement test)."""
    if name == "python":
        from . import _smo_py
        return _smo_py.sweep
    if name == "c":
        from . import _smo
        return _smo.sweep
    raise ValueError(f"unknown backend {name!r}")
