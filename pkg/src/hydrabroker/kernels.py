"""Hot-loop kernels, compiled when the extension is built.

``BACKEND`` is ``"compiled"`` or ``"python"``. Set ``HYDRABROKER_PURE_PYTHON=1``
to force the fallback (used by the benchmark and the equivalence tests).
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

if os.environ.get("HYDRABROKER_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _kernels_py
        BACKEND = "python"


def _demand_matrix(demand) -> np.ndarray:
    arr = np.ascontiguousarray(demand, dtype=np.int64)
    if arr.size == 0:
        return arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"demand must have shape (n, 3), got {arr.shape}")
    return arr


def first_fit_pack(demand, capacity, max_per_pod: int = 0, impl=None) -> np.ndarray:
    """Assign each row of ``demand`` (cpus, gpus, memory_mb) to a pod index.

    Rows are placed in order into the first open pod with room on all three
    dimensions; a new pod is opened otherwise. Callers guarantee each row fits
    ``capacity`` on its own. ``max_per_pod`` of 0 means unlimited.
    """
    impl = impl or _impl
    arr = _demand_matrix(demand)
    cap_cpu, cap_gpu, cap_mem = (int(x) for x in capacity)
    return impl.first_fit_pack(arr, cap_cpu, cap_gpu, cap_mem, int(max_per_pod))


def place_first_fit(free: np.ndarray, demand, order, impl=None) -> np.ndarray:
    """Place ``demand[order[j]]`` rows onto nodes, first fit by node index.

    ``free`` (nodes x 3, int64, C-contiguous) is decremented in place. Returns
    the node index per entry of ``order``, -1 where nothing fits.
    """
    impl = impl or _impl
    if free.dtype != np.int64 or not free.flags.c_contiguous:
        raise ValueError("free must be a C-contiguous int64 array")
    arr = _demand_matrix(demand)
    idx = np.ascontiguousarray(order, dtype=np.int64)
    return impl.place_first_fit(free, arr, idx)
