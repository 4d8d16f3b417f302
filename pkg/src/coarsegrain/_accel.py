"""Backend switch for the compiled kernels.

Every hot loop in :mod:`coarsegrain.kernels` exists twice: a numba-compiled
version and a pure-numpy version. The compiled one is used whenever numba
imports cleanly, unless ``COARSEGRAIN_DISABLE_NUMBA`` is set to a truthy value
before the package is imported.
"""

import os

ENV_FLAG = "COARSEGRAIN_DISABLE_NUMBA"

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def _disabled_by_env() -> bool:
    return os.environ.get(ENV_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


USE_NUMBA = HAVE_NUMBA and not _disabled_by_env()


def jit(fn):
    """Compile ``fn`` with numba when available, otherwise return it untouched."""
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
