"""Select the forward-kernel implementation at import time.

The compiled extension is preferred; the numpy implementation is a
functional fallback with identical semantics (results may differ in the
last few ulps because summation order differs).  Set TENSCHED_BACKEND=numpy
to force the fallback.
"""

from __future__ import annotations

import os

from . import _recurrent_np

lstm_forward_cached = _recurrent_np.lstm_forward_cached
lstm_backward = _recurrent_np.lstm_backward

if os.environ.get("TENSCHED_BACKEND") == "numpy":
    BACKEND = "numpy"
    lstm_forward = _recurrent_np.lstm_forward
else:
    try:
        from . import _recurrent_cy

        BACKEND = "cython"
        lstm_forward = _recurrent_cy.lstm_forward
    except ImportError:
        BACKEND = "numpy"
        lstm_forward = _recurrent_np.lstm_forward
