"""Kernel backend selection.

Hot numeric kernels (counter-based random generation, the branching-diffusion
estimator) exist twice: a numba @njit version and a vectorized pure-numpy
fallback. The active backend is chosen once from the ACPDE_BACKEND environment
variable:

    ACPDE_BACKEND=auto   use numba when importable (default)
    ACPDE_BACKEND=numba  require numba, fail loudly if missing
    ACPDE_BACKEND=numpy  force the pure-numpy path

Within one backend, results are deterministic for a fixed seed. The two
backends agree bitwise on the integer stream and to ~1e-15 on float outputs
(they share every arithmetic step; only libm rounding can differ).
"""

import os

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        # signature-compatible no-op decorator
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap


_VALID = ("auto", "numba", "numpy")


def _resolve(name: str) -> bool:
    if name not in _VALID:
        raise ValueError(f"ACPDE_BACKEND must be one of {_VALID}, got {name!r}")
    if name == "numpy":
        return False
    if name == "numba":
        if not NUMBA_AVAILABLE:
            raise RuntimeError("ACPDE_BACKEND=numba but numba is not importable")
        return True
    return NUMBA_AVAILABLE


_use_numba = _resolve(os.environ.get("ACPDE_BACKEND", "auto"))


def use_numba() -> bool:
    """True when numba kernels are the active backend."""
    return _use_numba


def backend_name() -> str:
    return "numba" if _use_numba else "numpy"


def set_backend(name: str) -> str:
    """Switch backends at runtime (tests and benchmarks). Returns the old name."""
    global _use_numba
    old = backend_name()
    _use_numba = _resolve(name)
    return old
