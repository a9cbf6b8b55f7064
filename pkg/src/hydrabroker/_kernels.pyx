# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled first-fit kernels.

Both functions release the GIL for their inner loops. Semantics are pinned by
``_kernels_py``; the two implementations must agree element for element.
"""

import numpy as np
cimport numpy as cnp

ctypedef cnp.int64_t i64


def first_fit_pack(const i64[:, ::1] demand, i64 cap_cpu, i64 cap_gpu,
                   i64 cap_mem, i64 max_per_pod=0):
    cdef Py_ssize_t n = demand.shape[0]
    out = np.empty(n, dtype=np.int64)
    used_arr = np.zeros((max(n, 1), 3), dtype=np.int64)
    count_arr = np.zeros(max(n, 1), dtype=np.int64)
    cdef i64[::1] pod = out
    cdef i64[:, ::1] used = used_arr
    cdef i64[::1] count = count_arr
    cdef Py_ssize_t i, p, npods = 0, head = 0
    cdef i64 c, g, m
    cdef bint placed
    with nogil:
        for i in range(n):
            c = demand[i, 0]
            g = demand[i, 1]
            m = demand[i, 2]
            placed = False
            for p in range(head, npods):
                if max_per_pod > 0 and count[p] >= max_per_pod:
                    continue
                if (used[p, 0] + c <= cap_cpu and used[p, 1] + g <= cap_gpu
                        and used[p, 2] + m <= cap_mem):
                    placed = True
                    break
            if not placed:
                p = npods
                npods += 1
            used[p, 0] += c
            used[p, 1] += g
            used[p, 2] += m
            count[p] += 1
            pod[i] = p
            # every task needs >= 1 cpu and >= 1 MB, so a pod exhausted on
            # either dimension (or at its container limit) is closed for good
            while head < npods and (
                    used[head, 0] >= cap_cpu or used[head, 2] >= cap_mem
                    or (max_per_pod > 0 and count[head] >= max_per_pod)):
                head += 1
    return out


def place_first_fit(i64[:, ::1] free, const i64[:, ::1] demand,
                    const i64[::1] order):
    cdef Py_ssize_t w = order.shape[0]
    cdef Py_ssize_t nodes = free.shape[0]
    out = np.full(w, -1, dtype=np.int64)
    cdef i64[::1] node = out
    cdef Py_ssize_t j, k, row
    cdef bint any_room
    with nogil:
        any_room = False
        for k in range(nodes):
            if free[k, 0] > 0 and free[k, 2] > 0:
                any_room = True
                break
        for j in range(w):
            if not any_room:
                break
            row = order[j]
            for k in range(nodes):
                if (demand[row, 0] <= free[k, 0] and demand[row, 1] <= free[k, 1]
                        and demand[row, 2] <= free[k, 2]):
                    free[k, 0] -= demand[row, 0]
                    free[k, 1] -= demand[row, 1]
                    free[k, 2] -= demand[row, 2]
                    node[j] = k
                    if free[k, 0] <= 0 or free[k, 2] <= 0:
                        any_room = False
                        for k in range(nodes):
                            if free[k, 0] > 0 and free[k, 2] > 0:
                                any_room = True
                                break
                    break
    return out
