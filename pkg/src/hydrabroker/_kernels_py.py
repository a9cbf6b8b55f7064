"""Pure-Python first-fit kernels (reference semantics and import fallback)."""

import numpy as np


def first_fit_pack(demand, cap_cpu, cap_gpu, cap_mem, max_per_pod=0):
    rows = demand.tolist()
    out = [0] * len(rows)
    used = []  # [cpu, gpu, mem, count] per pod
    head = 0
    for i, (c, g, m) in enumerate(rows):
        chosen = -1
        for p in range(head, len(used)):
            u = used[p]
            if max_per_pod > 0 and u[3] >= max_per_pod:
                continue
            if u[0] + c <= cap_cpu and u[1] + g <= cap_gpu and u[2] + m <= cap_mem:
                chosen = p
                break
        if chosen < 0:
            chosen = len(used)
            used.append([0, 0, 0, 0])
        u = used[chosen]
        u[0] += c
        u[1] += g
        u[2] += m
        u[3] += 1
        out[i] = chosen
        while head < len(used) and (
            used[head][0] >= cap_cpu
            or used[head][2] >= cap_mem
            or (max_per_pod > 0 and used[head][3] >= max_per_pod)
        ):
            head += 1
    return np.asarray(out, dtype=np.int64)


def _room(free):
    return any(f[0] > 0 and f[2] > 0 for f in free)


def place_first_fit(free, demand, order):
    rows = free.tolist()
    out = [-1] * len(order)
    room = _room(rows)
    for j, row in enumerate(order.tolist()):
        if not room:
            break
        c, g, m = demand[row].tolist()
        for k, f in enumerate(rows):
            if c <= f[0] and g <= f[1] and m <= f[2]:
                f[0] -= c
                f[1] -= g
                f[2] -= m
                out[j] = k
                if f[0] <= 0 or f[2] <= 0:
                    room = _room(rows)
                break
    free[:] = np.asarray(rows, dtype=np.int64).reshape(free.shape)
    return np.asarray(out, dtype=np.int64)
