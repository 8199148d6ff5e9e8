"""Backend selection for the hot loops.

Import order: the compiled ``mvts._kernels`` if it was built, otherwise the
numpy twin ``mvts._kernels_py``. Set ``MVTS_PURE_PYTHON=1`` to force the
numpy path (used by the test-suite to exercise both).
"""
import os

from . import _kernels_py as numpy_backend

compiled_backend = None
if not os.environ.get("MVTS_PURE_PYTHON"):
    try:
        from . import _kernels as compiled_backend  # type: ignore[no-redef]
    except ImportError:
        compiled_backend = None

_active = compiled_backend if compiled_backend is not None else numpy_backend

BACKEND = _active.BACKEND
bin_indices = _active.bin_indices
encode = _active.encode
column_index = _active.column_index
argmax_columns = _active.argmax_columns
midpoints = _active.midpoints
roundtrip_abs_error = _active.roundtrip_abs_error
w1_columns = _active.w1_columns
emd_loss_grad = _active.emd_loss_grad


def available_backends():
    """Mapping of backend name to module, compiled first when present."""
    out = {}
    if compiled_backend is not None:
        out[compiled_backend.BACKEND] = compiled_backend
    out[numpy_backend.BACKEND] = numpy_backend
    return out
