"""Compiled inner loop of the stochastic gradient accumulation."""
import numba
import numpy as np


@numba.njit(cache=True)
def accumulate_batch(payload, grad, offsets, weights_abs, dims_tyx, spp,
                     centers, zs, thetas, starts, targets, dists):
    """Accumulate per-element sliced-transport gradients into grad.

    Elements are processed in batch order with plain sequential float
    accumulation, so results are independent of any scheduling. Returns the
    number of empty subsets encountered.
    """
    t, y, x = dims_tyx[0], dims_tyx[1], dims_tyx[2]
    batch = centers.shape[0]
    s_count = weights_abs.shape[0]
    d = thetas.shape[1]
    max_m = s_count * spp
    members = np.empty(max_m, dtype=np.int64)
    proj = np.empty(max_m)
    tproj = np.empty(max_m)
    empties = 0
    for e in range(batch):
        z = zs[e]
        ct, cy, cx = centers[e, 0], centers[e, 1], centers[e, 2]
        m = 0
        for s in range(s_count):
            if weights_abs[s] > z:
                lt = (ct - offsets[s, 0]) % t
                ly = (cy - offsets[s, 1]) % y
                lx = (cx - offsets[s, 2]) % x
                base = ((lt * y + ly) * x + lx) * spp
                for sp in range(spp):
                    members[m] = base + sp
                    m += 1
        if m == 0:
            empties += 1
            dists[e] = 0.0
            continue
        for i in range(m):
            acc = 0.0
            for j in range(d):
                acc += payload[members[i], j] * thetas[e, j]
            proj[i] = acc
        order = np.argsort(proj[:m], kind="mergesort")
        t0 = starts[e]
        for i in range(m):
            acc = 0.0
            for j in range(d):
                acc += targets[t0 + i, j] * thetas[e, j]
            tproj[i] = acc
        tsorted = np.sort(tproj[:m])
        scale = 2.0 / m
        sq = 0.0
        for r in range(m):
            mi = members[order[r]]
            diff = proj[order[r]] - tsorted[r]
            sq += diff * diff
            for j in range(d):
                grad[mi, j] += scale * diff * thetas[e, j]
        dists[e] = np.sqrt(sq / m)
    return empties
