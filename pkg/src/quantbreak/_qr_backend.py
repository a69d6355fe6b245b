"""Backend selection for the quantile-regression core.

Prefers the compiled extension and falls back to the numpy implementation.
Set ``QUANTBREAK_BACKEND`` to ``compiled`` or ``python`` to force a choice.
"""

from __future__ import annotations

import os

_forced = os.environ.get("QUANTBREAK_BACKEND", "").strip().lower()
if _forced not in ("", "compiled", "python"):
    raise ImportError(
        "QUANTBREAK_BACKEND must be 'compiled' or 'python', got %r" % _forced
    )

if _forced == "python":
    from . import _qr_numpy as _impl

    BACKEND = "python"
else:
    try:
        from . import _qr_core as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _forced == "compiled":
            raise
        from . import _qr_numpy as _impl  # type: ignore[no-redef]

        BACKEND = "python"

solve = _impl.solve
