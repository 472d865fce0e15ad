"""Training kernel backends.

The compiled Cython kernels are used when available; the pure numpy
implementation is the fallback.  FEDSIM_BACKEND=python|cython forces a
backend (forcing cython fails loudly if the extension is missing).
"""

from __future__ import annotations

import os

from fedsim.kernels import pure
from fedsim.kernels.pure import PROB_CLIP, param_count, param_views

try:
    from fedsim.kernels import _speedups as _compiled
except ImportError:
    _compiled = None

_BACKENDS = {"python": pure, "pure": pure}
if _compiled is not None:
    _BACKENDS["cython"] = _compiled
    _BACKENDS["compiled"] = _compiled


def get_backend(name: str | None = None):
    """Kernel module by name; default is the active one."""
    if name is None:
        return _active
    try:
        return _BACKENDS[name.lower()]
    except KeyError:
        raise ImportError(
            f"kernel backend {name!r} not available "
            f"(choices: {sorted(set(_BACKENDS))})"
        ) from None


_forced = os.environ.get("FEDSIM_BACKEND", "").strip().lower()
if _forced:
    _active = get_backend(_forced)
elif _compiled is not None:
    _active = _compiled
else:
    _active = pure

BACKEND_NAME = _active.name
HAVE_COMPILED = _compiled is not None

predict_proba = _active.predict_proba
batch_gradient = _active.batch_gradient
train_epochs = _active.train_epochs
