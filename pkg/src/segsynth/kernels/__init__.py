"""Hot loops: retrieval scan, bilinear sampling, Jacobi sweeps.

The compiled ``_fast`` extension is used when it is importable; otherwise
the numpy versions in ``_pure`` are. Set ``SEGSYNTH_PURE_PYTHON=1`` to force
the fallback.
"""

import os

from . import _pure

if os.environ.get("SEGSYNTH_PURE_PYTHON"):
    _impl = _pure
else:
    try:
        from . import _fast as _impl
    except ImportError:
        _impl = _pure

BACKEND = _impl.NAME
scan_topk = _impl.scan_topk
bilinear_sample = _impl.bilinear_sample
jacobi = _impl.jacobi


def available_backends():
    out = {"python": _pure}
    try:
        from . import _fast
        out["cython"] = _fast
    except ImportError:
        pass
    return out
