"""Numerical kernel selection: compiled extension with pure-numpy fallback.

The compiled module is preferred when importable; set NOISESEARCH_PURE_PYTHON=1
to force the numpy implementation (used by the kernel benchmark and tests).
`BACKEND` names the selection and is recorded in experiment manifests.
"""

from __future__ import annotations

import os

from . import _gmm_np

if os.environ.get("NOISESEARCH_PURE_PYTHON", "").strip() not in ("", "0"):
    _impl = _gmm_np
    BACKEND = "numpy"
else:
    try:
        from . import _gmm_cy as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _gmm_np
        BACKEND = "numpy"

gmm_score_batch = _impl.gmm_score_batch
heun_denoise_batch = _impl.heun_denoise_batch
alpha_bar = _gmm_np.alpha_bar
beta = _gmm_np.beta
