"""Hot numeric kernels: assignment, radius graphs, segment sums, nearest distances.

Each kernel is compiled by numba when available (see ``_accel``). The
``*_numpy`` twins are vectorized reference paths used when numba is disabled
and as cross-checks in the test-suite and benchmarks.
"""
import numpy as np

from ._accel import USE_NUMBA, maybe_njit


@maybe_njit
def _hungarian_kernel(cost):
    # Shortest augmenting path with row/column potentials, O(n^3).
    n = cost.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=np.bool_)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    row_to_col = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        row_to_col[p[j] - 1] = j - 1
    return row_to_col


def linear_assignment(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost perfect matching on a square cost matrix.

    Returns ``col`` such that row ``i`` is assigned to column ``col[i]``.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {cost.shape}")
    if cost.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return _hungarian_kernel(cost)


@maybe_njit
def _radius_pairs_kernel(src, dst, cutoff, src_batch, dst_batch, exclude_self):
    n, m = src.shape[0], dst.shape[0]
    c2 = cutoff * cutoff
    count = 0
    for i in range(n):
        for j in range(m):
            if src_batch[i] != dst_batch[j] or (exclude_self and i == j):
                continue
            d2 = 0.0
            for k in range(3):
                diff = src[i, k] - dst[j, k]
                d2 += diff * diff
            if d2 <= c2:
                count += 1
    out = np.empty((count, 2), dtype=np.int64)
    e = 0
    for i in range(n):
        for j in range(m):
            if src_batch[i] != dst_batch[j] or (exclude_self and i == j):
                continue
            d2 = 0.0
            for k in range(3):
                diff = src[i, k] - dst[j, k]
                d2 += diff * diff
            if d2 <= c2:
                out[e, 0] = i
                out[e, 1] = j
                e += 1
    return out


def radius_pairs_numpy(src, dst, cutoff, src_batch, dst_batch, exclude_self):
    d2 = ((src[:, None, :] - dst[None, :, :]) ** 2).sum(-1)
    keep = (d2 <= cutoff * cutoff) & (src_batch[:, None] == dst_batch[None, :])
    if exclude_self:
        k = min(len(src), len(dst))
        keep[np.arange(k), np.arange(k)] = False
    i, j = np.nonzero(keep)
    return np.stack([i, j], axis=1).astype(np.int64).reshape(-1, 2)


def radius_pairs(src, dst, cutoff, src_batch=None, dst_batch=None, exclude_self=False):
    """All (i, j) with ``|src_i - dst_j| <= cutoff`` inside the same batch graph.

    Pairs come out sorted lexicographically by (i, j).
    """
    src = np.ascontiguousarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.ascontiguousarray(dst, dtype=np.float64).reshape(-1, 3)
    sb = np.zeros(len(src), np.int64) if src_batch is None else np.ascontiguousarray(src_batch, np.int64)
    db = np.zeros(len(dst), np.int64) if dst_batch is None else np.ascontiguousarray(dst_batch, np.int64)
    if len(src) == 0 or len(dst) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if USE_NUMBA:
        return _radius_pairs_kernel(src, dst, float(cutoff), sb, db, bool(exclude_self))
    return radius_pairs_numpy(src, dst, float(cutoff), sb, db, bool(exclude_self))


@maybe_njit
def _segment_sum_kernel(values, index, n):
    out = np.zeros((n, values.shape[1]))
    for e in range(values.shape[0]):
        r = index[e]
        for k in range(values.shape[1]):
            out[r, k] += values[e, k]
    return out


def segment_sum_numpy(values, index, n):
    out = np.zeros((n, values.shape[1]))
    np.add.at(out, index, values)
    return out


def segment_sum(values: np.ndarray, index: np.ndarray, n: int) -> np.ndarray:
    """Sum rows of ``values`` into ``n`` buckets given by ``index``; trailing dims are kept."""
    values = np.asarray(values, dtype=np.float64)
    tail = values.shape[1:]
    flat = np.ascontiguousarray(values.reshape(values.shape[0], -1))
    index = np.ascontiguousarray(index, dtype=np.int64)
    if USE_NUMBA:
        out = _segment_sum_kernel(flat, index, int(n))
    else:
        out = segment_sum_numpy(flat, index, int(n))
    return out.reshape((int(n),) + tail)


@maybe_njit
def _min_distances_kernel(points, ref):
    n = points.shape[0]
    out = np.full(n, np.inf)
    for i in range(n):
        best = np.inf
        for j in range(ref.shape[0]):
            d2 = 0.0
            for k in range(3):
                diff = points[i, k] - ref[j, k]
                d2 += diff * diff
            if d2 < best:
                best = d2
        out[i] = np.sqrt(best)
    return out


def min_distances_numpy(points, ref):
    if len(ref) == 0:
        return np.full(len(points), np.inf)
    return np.sqrt(((points[:, None, :] - ref[None, :, :]) ** 2).sum(-1)).min(axis=1)


def min_distances(points: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Distance from every point to its nearest reference point (inf if ``ref`` is empty)."""
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    ref = np.ascontiguousarray(ref, dtype=np.float64).reshape(-1, 3)
    if USE_NUMBA:
        return _min_distances_kernel(points, ref)
    return min_distances_numpy(points, ref)


@maybe_njit
def _adam_kernel(theta, grad, m, v, lr, beta1, beta2, eps, c1, c2):
    n = theta.shape[0]
    new_theta = np.empty(n)
    new_m = np.empty(n)
    new_v = np.empty(n)
    for i in range(n):
        g = grad[i]
        mi = beta1 * m[i] + (1 - beta1) * g
        vi = beta2 * v[i] + (1 - beta2) * g * g
        new_m[i] = mi
        new_v[i] = vi
        new_theta[i] = theta[i] - lr * (mi / c1) / (np.sqrt(vi / c2) + eps)
    return new_theta, new_m, new_v


def adam_numpy(theta, grad, m, v, lr, beta1, beta2, eps, c1, c2):
    new_m = beta1 * m + (1 - beta1) * grad
    new_v = beta2 * v + (1 - beta2) * grad * grad
    return theta - lr * (new_m / c1) / (np.sqrt(new_v / c2) + eps), new_m, new_v


def adam_step(theta, grad, m, v, lr, beta1, beta2, eps, step):
    """One fused bias-corrected Adam update on flat arrays; returns new (theta, m, v)."""
    c1, c2 = 1 - beta1 ** step, 1 - beta2 ** step
    args = [np.ascontiguousarray(a, dtype=np.float64) for a in (theta, grad, m, v)]
    if USE_NUMBA:
        return _adam_kernel(*args, float(lr), float(beta1), float(beta2), float(eps), c1, c2)
    return adam_numpy(*args, lr, beta1, beta2, eps, c1, c2)
