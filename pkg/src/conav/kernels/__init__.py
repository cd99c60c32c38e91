"""Backend dispatch for the planner's hot loops.

Two interchangeable implementations of ``HorizonKernels`` exist: the
vectorized numpy one (always available) and a compiled twin built from
``_speedups.pyx`` at install time.  Selection order:

* ``CONAV_KERNELS=numpy`` or ``CONAV_KERNELS=compiled`` forces a backend
  (``compiled`` raises if the extension is missing);
* otherwise the compiled backend is used when present, numpy if not.
"""

from __future__ import annotations

import os

from . import numpy_backend

_FORCED = os.environ.get("CONAV_KERNELS", "").strip().lower()

try:
    from . import _speedups  # type: ignore[attr-defined]
    _HAVE_COMPILED = True
except ImportError:
    _speedups = None
    _HAVE_COMPILED = False

if _FORCED == "numpy":
    _active = numpy_backend
elif _FORCED == "compiled":
    if not _HAVE_COMPILED:
        raise ImportError(
            "CONAV_KERNELS=compiled but the _speedups extension is not built"
        )
    _active = _speedups
elif _FORCED in ("", "auto"):
    _active = _speedups if _HAVE_COMPILED else numpy_backend
else:
    raise ImportError(f"unknown CONAV_KERNELS value {_FORCED!r}")


def backend_name() -> str:
    return "compiled" if _active is _speedups else "numpy"


def get_kernels_class():
    return _active.HorizonKernels


def available_backends() -> tuple:
    return ("numpy", "compiled") if _HAVE_COMPILED else ("numpy",)


def step_fraction(v, dv) -> float:
    """Largest t with v + t*dv >= 0; dispatched like HorizonKernels."""
    return _active.step_fraction(v, dv)


# Band-storage constants are layout facts shared by both backends.
KL = numpy_backend.KL
KU = numpy_backend.KU
LDAB = numpy_backend.LDAB
STAGE = numpy_backend.STAGE
