"""Hot numeric loops, each with a numba and a vectorised numpy implementation.

The public functions dispatch on :data:`lucoda._accel.USE_NUMBA`. Both paths
return identical results up to floating point rounding; ``tests/test_kernels.py``
runs them against each other.
"""
import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve_triangular

from ._accel import USE_NUMBA, njit

__all__ = [
    "fem_local",
    "locate_points",
    "points_in_ring",
    "selected_inverse_diag",
    "USE_NUMBA",
]

_BARY_TOL = 1e-10


# ---------------------------------------------------------------------------
# P1 finite elements
# ---------------------------------------------------------------------------

@njit
def _fem_local_nb(vx, vy, tri):
    nt = tri.shape[0]
    areas = np.empty(nt)
    rows = np.empty(9 * nt, dtype=np.int64)
    cols = np.empty(9 * nt, dtype=np.int64)
    vals = np.empty(9 * nt)
    ex = np.empty(3)
    ey = np.empty(3)
    for t in range(nt):
        a, b, c = tri[t, 0], tri[t, 1], tri[t, 2]
        # edge opposite each vertex
        ex[0] = vx[c] - vx[b]
        ey[0] = vy[c] - vy[b]
        ex[1] = vx[a] - vx[c]
        ey[1] = vy[a] - vy[c]
        ex[2] = vx[b] - vx[a]
        ey[2] = vy[b] - vy[a]
        area = 0.5 * (ex[2] * (-ey[1]) - ey[2] * (-ex[1]))
        areas[t] = area
        k = 9 * t
        for i in range(3):
            for j in range(3):
                rows[k] = tri[t, i]
                cols[k] = tri[t, j]
                vals[k] = (ex[i] * ex[j] + ey[i] * ey[j]) / (4.0 * area)
                k += 1
    return rows, cols, vals, areas


def _fem_local_np(vx, vy, tri):
    p = np.stack([vx[tri], vy[tri]], axis=-1)  # (nt, 3, 2)
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    areas = 0.5 * (e[:, 2, 0] * (-e[:, 1, 1]) - e[:, 2, 1] * (-e[:, 1, 0]))
    local = np.einsum("tik,tjk->tij", e, e) / (4.0 * areas)[:, None, None]
    rows = np.repeat(tri, 3, axis=1).ravel().astype(np.int64)
    cols = np.tile(tri, (1, 3)).ravel().astype(np.int64)
    return rows, cols, local.ravel(), areas


def fem_local(vertices, triangles):
    """Per-triangle stiffness triplets and signed areas.

    Returns ``(rows, cols, vals, areas)`` where the triplets sum (with
    duplicates) to the global P1 stiffness matrix.
    """
    v = np.ascontiguousarray(vertices, dtype=float)
    t = np.ascontiguousarray(triangles, dtype=np.int64)
    if USE_NUMBA:
        return _fem_local_nb(v[:, 0].copy(), v[:, 1].copy(), t)
    return _fem_local_np(v[:, 0], v[:, 1], t)


# ---------------------------------------------------------------------------
# point location on a triangulation
# ---------------------------------------------------------------------------

def _bucket_grid(vertices, triangles, n_cells):
    lo = vertices.min(axis=0)
    hi = vertices.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    nx = ny = max(1, int(n_cells))
    cw = span / np.array([nx, ny])
    tp = vertices[triangles]
    tmin = np.floor((tp.min(axis=1) - lo) / cw).astype(np.int64)
    tmax = np.floor((tp.max(axis=1) - lo) / cw).astype(np.int64)
    tmin = np.clip(tmin, 0, [nx - 1, ny - 1])
    tmax = np.clip(tmax, 0, [nx - 1, ny - 1])
    cells = []
    owners = []
    for t in range(len(triangles)):
        ii, jj = np.meshgrid(
            np.arange(tmin[t, 0], tmax[t, 0] + 1), np.arange(tmin[t, 1], tmax[t, 1] + 1)
        )
        c = (jj * nx + ii).ravel()
        cells.append(c)
        owners.append(np.full(c.size, t, dtype=np.int64))
    cells = np.concatenate(cells)
    owners = np.concatenate(owners)
    order = np.lexsort((owners, cells))
    cells = cells[order]
    owners = owners[order]
    ptr = np.zeros(nx * ny + 1, dtype=np.int64)
    np.add.at(ptr, cells + 1, 1)
    ptr = np.cumsum(ptr)
    return lo, cw, nx, ny, ptr, owners


@njit
def _locate_nb(px, py, vx, vy, tri, lo, cw, nx, ny, ptr, owners, tol):
    n = px.shape[0]
    found = np.full(n, -1, dtype=np.int64)
    w = np.zeros((n, 3))
    for p in range(n):
        ci = int(np.floor((px[p] - lo[0]) / cw[0]))
        cj = int(np.floor((py[p] - lo[1]) / cw[1]))
        # points on the upper bounding edge belong to the last cell
        if ci == nx and px[p] - lo[0] <= cw[0] * nx * (1 + 1e-12):
            ci = nx - 1
        if cj == ny and py[p] - lo[1] <= cw[1] * ny * (1 + 1e-12):
            cj = ny - 1
        if ci < 0 or cj < 0 or ci >= nx or cj >= ny:
            continue
        cell = cj * nx + ci
        for q in range(ptr[cell], ptr[cell + 1]):
            t = owners[q]
            a, b, c = tri[t, 0], tri[t, 1], tri[t, 2]
            det = (vy[b] - vy[c]) * (vx[a] - vx[c]) + (vx[c] - vx[b]) * (vy[a] - vy[c])
            l0 = ((vy[b] - vy[c]) * (px[p] - vx[c]) + (vx[c] - vx[b]) * (py[p] - vy[c])) / det
            l1 = ((vy[c] - vy[a]) * (px[p] - vx[c]) + (vx[a] - vx[c]) * (py[p] - vy[c])) / det
            l2 = 1.0 - l0 - l1
            if l0 >= -tol and l1 >= -tol and l2 >= -tol:
                found[p] = t
                w[p, 0] = l0
                w[p, 1] = l1
                w[p, 2] = l2
                break
    return found, w


def _locate_np(px, py, vx, vy, tri, tol, chunk=2048):
    n = px.shape[0]
    found = np.full(n, -1, dtype=np.int64)
    w = np.zeros((n, 3))
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    det = (vy[b] - vy[c]) * (vx[a] - vx[c]) + (vx[c] - vx[b]) * (vy[a] - vy[c])
    for s in range(0, n, chunk):
        X = px[s : s + chunk, None]
        Y = py[s : s + chunk, None]
        l0 = ((vy[b] - vy[c]) * (X - vx[c]) + (vx[c] - vx[b]) * (Y - vy[c])) / det
        l1 = ((vy[c] - vy[a]) * (X - vx[c]) + (vx[a] - vx[c]) * (Y - vy[c])) / det
        l2 = 1.0 - l0 - l1
        inside = (l0 >= -tol) & (l1 >= -tol) & (l2 >= -tol)
        hit = inside.any(axis=1)
        first = inside.argmax(axis=1)
        idx = np.nonzero(hit)[0]
        t = first[idx]
        found[s + idx] = t
        w[s + idx, 0] = l0[idx, t]
        w[s + idx, 1] = l1[idx, t]
        w[s + idx, 2] = l2[idx, t]
    return found, w


def locate_points(points, vertices, triangles, tol=_BARY_TOL):
    """Containing triangle and barycentric weights for each point.

    Points outside every triangle get triangle index ``-1`` and zero weights.
    When a point lies on a shared edge the lowest-numbered triangle wins.
    """
    pts = np.ascontiguousarray(points, dtype=float).reshape(-1, 2)
    v = np.ascontiguousarray(vertices, dtype=float)
    t = np.ascontiguousarray(triangles, dtype=np.int64)
    px, py = pts[:, 0].copy(), pts[:, 1].copy()
    vx, vy = v[:, 0].copy(), v[:, 1].copy()
    if USE_NUMBA:
        n_cells = int(np.clip(np.sqrt(len(t) / 2.0), 1, 512))
        lo, cw, nx, ny, ptr, owners = _bucket_grid(v, t, n_cells)
        return _locate_nb(px, py, vx, vy, t, lo, cw, nx, ny, ptr, owners, tol)
    return _locate_np(px, py, vx, vy, t, tol)


# ---------------------------------------------------------------------------
# point in polygon (even-odd rule on a single ring)
# ---------------------------------------------------------------------------

@njit
def _pip_nb(px, py, rx, ry):
    n = px.shape[0]
    m = rx.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    for p in range(n):
        x = px[p]
        y = py[p]
        inside = False
        j = m - 1
        for i in range(m):
            if (ry[i] > y) != (ry[j] > y):
                xc = rx[i] + (y - ry[i]) * (rx[j] - rx[i]) / (ry[j] - ry[i])
                if x < xc:
                    inside = not inside
            j = i
        out[p] = inside
    return out


def _pip_np(px, py, rx, ry):
    xi, yi = rx, ry
    xj, yj = np.roll(rx, 1), np.roll(ry, 1)
    X = px[:, None]
    Y = py[:, None]
    crosses = (yi > Y) != (yj > Y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xc = xi + (Y - yi) * (xj - xi) / (yj - yi)
    hits = crosses & (X < xc)
    return (hits.sum(axis=1) % 2) == 1


def points_in_ring(points, ring):
    """Even-odd containment test of ``points`` against one closed ring."""
    pts = np.ascontiguousarray(points, dtype=float).reshape(-1, 2)
    r = np.asarray(ring, dtype=float)
    if len(r) > 1 and np.allclose(r[0], r[-1]):
        r = r[:-1]
    px, py = pts[:, 0].copy(), pts[:, 1].copy()
    rx, ry = r[:, 0].copy(), r[:, 1].copy()
    if USE_NUMBA:
        return _pip_nb(px, py, rx, ry)
    return _pip_np(px, py, rx, ry)


# ---------------------------------------------------------------------------
# selected inversion (diagonal of Q^{-1} from its Cholesky factor)
# ---------------------------------------------------------------------------

@njit
def _lookup(Lp, Li, r, c):
    lo = Lp[c]
    hi = Lp[c + 1] - 1
    while lo <= hi:
        mid = (lo + hi) // 2
        v = Li[mid]
        if v == r:
            return mid
        if v < r:
            lo = mid + 1
        else:
            hi = mid - 1
    return -1


@njit
def _takahashi_nb(Lp, Li, Lx, n):
    Z = np.zeros(Lx.shape[0])
    for j in range(n - 1, -1, -1):
        p0 = Lp[j]
        p1 = Lp[j + 1]
        d = Lx[p0]
        for pi in range(p0 + 1, p1):
            i = Li[pi]
            s = 0.0
            for pk in range(p0 + 1, p1):
                k = Li[pk]
                if k >= i:
                    q = _lookup(Lp, Li, k, i)
                else:
                    q = _lookup(Lp, Li, i, k)
                if q < 0:
                    return Z, False
                s += Lx[pk] * Z[q]
            Z[pi] = -s / d
        s = 0.0
        for pk in range(p0 + 1, p1):
            s += Lx[pk] * Z[pk]
        Z[p0] = 1.0 / (d * d) - s / d
    return Z, True


def _diag_from_solves(L, block=256):
    n = L.shape[0]
    Lcsr = sp.csr_matrix(L)
    out = np.empty(n)
    for s in range(0, n, block):
        e = min(n, s + block)
        rhs = np.zeros((n, e - s))
        rhs[np.arange(s, e), np.arange(e - s)] = 1.0
        X = spsolve_triangular(Lcsr, rhs, lower=True)
        out[s:e] = np.einsum("ij,ij->j", X, X)
    return out


def selected_inverse_diag(L):
    """Diagonal of ``(L L^T)^{-1}`` for a sparse lower Cholesky factor ``L``.

    The numba path runs the Takahashi recursion on the pattern of ``L``;
    the fallback solves ``L X = I`` in column blocks.
    """
    L = sp.csc_matrix(L)
    L.sort_indices()
    n = L.shape[0]
    if USE_NUMBA:
        Lp = L.indptr.astype(np.int64)
        Li = L.indices.astype(np.int64)
        if np.all(Li[Lp[:-1]] == np.arange(n)):
            Z, ok = _takahashi_nb(Lp, Li, L.data.astype(float), n)
            if ok:
                return Z[Lp[:-1]]
    return _diag_from_solves(L)
