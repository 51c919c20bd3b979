"""Backend selection for the hot loops.

The compiled extension is used when it was built; otherwise (or when the
environment variable ``MWM_PURE_PYTHON`` is set to a non-empty value other
than ``0``) the numpy fallback is used.  Both expose ``lattice_means`` and
``simulate_cycles`` with identical signatures.
"""

import os

from mwm import _fallback

fallback = _fallback

if os.environ.get("MWM_PURE_PYTHON", "") not in ("", "0"):
    compiled = None
else:
    try:
        from mwm import _kernels as compiled
    except ImportError:  # extension not built
        compiled = None

backend = compiled if compiled is not None else fallback
BACKEND_NAME = "compiled" if compiled is not None else "python"

lattice_means = backend.lattice_means
simulate_cycles = backend.simulate_cycles


def available_backends():
    """Mapping of backend name to module, compiled first when present."""
    out = {}
    if compiled is not None:
        out["compiled"] = compiled
    out["python"] = fallback
    return out
