"""Stepping-kernel backend selection.

The compiled extension is preferred when importable; the pure-Python twin is
the fallback.  Both produce bit-identical output, so the choice only affects
speed.  Set FOODCHAIN_BACKEND=pure or =compiled to force one (forcing
`compiled` raises if the extension is missing).
"""

import os

_requested = os.environ.get("FOODCHAIN_BACKEND", "").strip().lower()

if _requested == "pure":
    from . import _kernel_py as kernel

    BACKEND = "pure"
elif _requested in ("compiled", "cython"):
    from . import _kernel as kernel  # type: ignore[no-redef]

    BACKEND = "compiled"
else:
    try:
        from . import _kernel as kernel  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        from . import _kernel_py as kernel  # type: ignore[no-redef]

        BACKEND = "pure"

step_chunk = kernel.step_chunk
