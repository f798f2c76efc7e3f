"""Backend selection for the per-example kernels.

The compiled module is used when it imports; ``ROBUSTDMB_PURE=1`` forces the
pure-Python twin. Both expose the same functions and agree bit for bit.
"""
import os

if os.environ.get("ROBUSTDMB_PURE", "") not in ("", "0"):
    from . import _pure as _impl

    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        from . import _pure as _impl

        BACKEND = "python"

QUADRATIC = _impl.QUADRATIC
LOGISTIC = _impl.LOGISTIC
loss = _impl.loss
add_gradient = _impl.add_gradient
serve = _impl.serve
project = _impl.project
pg_step = _impl.pg_step
da_point = _impl.da_point
mean_of = _impl.mean_of
run_serial = _impl.run_serial

__all__ = [
    "BACKEND", "QUADRATIC", "LOGISTIC", "loss", "add_gradient", "serve",
    "project", "pg_step", "da_point", "mean_of", "run_serial",
]
