"""Hot-kernel backend selection.

The compiled extension is used when it was built; otherwise, or when the
environment variable ``SPIKECAPS_PURE_PYTHON`` is set, the numpy fallback
is used. Both backends expose ``im2col``, ``col2im``, ``lif_forward`` and
``lif_backward`` with identical semantics.
"""

from __future__ import annotations

import os

from . import _fallback

fallback = _fallback

native = None
if not os.environ.get("SPIKECAPS_PURE_PYTHON"):
    try:
        from . import _native as native  # type: ignore[no-redef]
    except ImportError:
        native = None

backend = native if native is not None else fallback
BACKEND = "native" if native is not None else "python"

im2col = backend.im2col
col2im = backend.col2im
lif_forward = backend.lif_forward
lif_backward = backend.lif_backward

__all__ = ["BACKEND", "fallback", "native", "im2col", "col2im", "lif_forward", "lif_backward"]
