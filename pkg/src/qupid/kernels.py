"""Backend selection for the hot kernels.

The compiled extension is preferred. Set ``QUPID_PURE_PYTHON=1`` to force
the numpy fallback (useful for debugging and for the benchmark).
"""

import os

from qupid import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("QUPID_PURE_PYTHON"):
    try:
        from qupid import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"

first_divided_differences = _impl.first_divided_differences
second_divided_differences = _impl.second_divided_differences
contract_second = _impl.contract_second
#: above this dimension the batched BLAS products of the numpy version win
COMPILED_EXPM_MAX_DIM = 3


def expm_action(b, psi, *args, **kwargs):
    """Batched ``exp(b[s]) @ psi[s]``; the per-dimension crossover picks the backend."""
    impl = _impl if b.shape[-1] <= COMPILED_EXPM_MAX_DIM else _kernels_py
    return impl.expm_action(b, psi, *args, **kwargs)


def backends():
    """Return the available kernel modules keyed by name."""
    found = {"python": _kernels_py}
    try:
        from qupid import _kernels as compiled
    except ImportError:
        return found
    found["compiled"] = compiled
    return found
