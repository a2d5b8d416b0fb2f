"""Area averages of a continuous latent field (change of support).

An areal value is approximated by the equal-weight mean of the field at
deterministic integration points inside the area, each point being a
barycentric combination of mesh nodes.
"""
from dataclasses import dataclass, field
import math

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, EmptyArea, OutsideMesh, UnmappedTime
from .geometry import Polygon
from .spde import projection

DEFAULT_MIN_POINTS = 25


@dataclass(frozen=True)
class AreaSupport:
    """Areal units valid over the inclusive time-index range ``period``."""

    areas: tuple
    period: tuple = (0, None)
    name: str = ""

    def __post_init__(self):
        areas = tuple(a if isinstance(a, Polygon) else Polygon(a) for a in self.areas)
        for k, a in enumerate(areas):
            if not a.area > 0:
                raise EmptyArea(f"area {k} has no extent")
        object.__setattr__(self, "areas", areas)

    @property
    def n_areas(self):
        return len(self.areas)

    @property
    def measures(self):
        return np.array([a.area for a in self.areas])

    def covers(self, t):
        lo, hi = self.period
        return t >= lo and (hi is None or t <= hi)


@dataclass(frozen=True)
class IntegrationScheme:
    points: tuple  # one (n_i, 2) array per area
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "counts", np.array([len(p) for p in self.points], dtype=int))

    @property
    def n_areas(self):
        return len(self.points)

    def stacked(self):
        """All points with their area index."""
        pts = np.concatenate(self.points)
        owner = np.repeat(np.arange(self.n_areas), self.counts)
        return pts, owner


N_OFFSETS = 4


def _grid_in_polygon(poly, h, offset=(0.0, 0.0)):
    x0, y0, x1, y1 = poly.bounds
    nx = max(1, math.ceil((x1 - x0) / h - 1e-9)) + 1
    ny = max(1, math.ceil((y1 - y0) / h - 1e-9)) + 1
    # centred on the bounding box, shifted by a fraction of a cell
    xs = 0.5 * (x0 + x1) + h * (np.arange(nx) - 0.5 * (nx - 1) + offset[0])
    ys = 0.5 * (y0 + y1) + h * (np.arange(ny) - 0.5 * (ny - 1) + offset[1])
    X, Y = np.meshgrid(xs, ys)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return pts[poly.contains(pts)]


def _best_grid(poly, h, min_count=1):
    """Grid among ``N_OFFSETS**2`` sub-cell shifts whose point mean is
    closest to the area centroid (ties go to the first shift)."""
    c = poly.centroid
    best, best_err = None, np.inf
    shifts = np.arange(N_OFFSETS) / N_OFFSETS - 0.5
    for dy in shifts:
        for dx in shifts:
            pts = _grid_in_polygon(poly, h, (dx, dy))
            if len(pts) < min_count:
                continue
            err = float(np.hypot(*(pts.mean(axis=0) - c)))
            if err < best_err - 1e-15:
                best, best_err = pts, err
    return best if best is not None else np.empty((0, 2))


def integration_points(support, mesh=None, density=None, min_points=DEFAULT_MIN_POINTS, max_refine=12):
    """Regular grid points inside each area.

    For every area the grid is tried at 16 sub-cell shifts and the one whose
    point mean lies closest to the area centroid is kept, so that averages
    of linear fields are nearly exact at modest point counts.

    Parameters
    ----------
    support : AreaSupport
    mesh : TriMesh, optional
        When given, points outside the mesh are reported as errors later by
        :func:`aggregation_matrix`; it is accepted here for symmetry.
    density : float, optional
        Points per unit area. The grid spacing is ``1 / sqrt(density)`` and
        no refinement takes place; an area expected to hold fewer than half
        a point is rejected with :class:`EmptyArea`.
    min_points : int
        Used when ``density`` is None: the grid is refined per area until at
        least this many points fall inside.
    """
    out = []
    for k, poly in enumerate(support.areas):
        if density is not None:
            if poly.area * density < 0.5:
                raise EmptyArea(
                    f"area {k} ({poly.name or 'unnamed'}) is below the resolution of density {density:g}"
                )
            pts = _best_grid(poly, 1.0 / math.sqrt(density))
        else:
            h = math.sqrt(poly.area / min_points)
            pts = _best_grid(poly, h, min_points)
            it = 0
            while len(pts) < min_points and it < max_refine:
                h /= math.sqrt(2.0)
                pts = _best_grid(poly, h, min_points)
                it += 1
        if len(pts) == 0:
            raise EmptyArea(f"no integration point falls inside area {k} ({poly.name or 'unnamed'})")
        out.append(pts)
    return IntegrationScheme(tuple(out))


@dataclass(frozen=True)
class AggregationMatrix:
    A: sp.csr_matrix

    @property
    def shape(self):
        return self.A.shape

    def __matmul__(self, x):
        return self.A @ x


def aggregation_matrix(scheme, mesh):
    """Row ``i`` is the mean of the projection rows of area ``i``'s points."""
    pts, owner = scheme.stacked()
    P = projection(mesh, pts)
    if not P.inside.all():
        bad = P.outside
        raise OutsideMesh(bad.tolist(), f"{bad.size} integration point(s) outside the mesh")
    W = sp.csr_matrix(
        (1.0 / scheme.counts[owner], (owner, np.arange(len(owner)))),
        shape=(scheme.n_areas, len(owner)),
    )
    return AggregationMatrix(sp.csr_matrix(W @ P.A))


@dataclass(frozen=True)
class StackedAggregation:
    """Aggregation over time of a space-major space-time latent vector."""

    A: sp.csr_matrix
    row_time: np.ndarray
    row_area: np.ndarray
    row_support: np.ndarray


def support_for_time(supports, t):
    hits = [k for k, s in enumerate(supports) if s.covers(t)]
    if len(hits) != 1:
        raise UnmappedTime(f"time index {t} maps to {len(hits)} supports")
    return hits[0]


def stacked_support_matrix(supports, mesh, time_knots, schemes=None, **kw):
    """Block operator from the space-time field to every area at every knot.

    Column ``node * n_t + t`` holds mesh node ``node`` at knot ``t``; rows
    are ordered by knot, then area.
    """
    time_knots = np.asarray(time_knots)
    nt = time_knots.size
    m = mesh.n_vertices
    if schemes is None:
        schemes = [integration_points(s, mesh, **kw) for s in supports]
    if len(schemes) != len(supports):
        raise DimensionMismatch("one integration scheme per support is required")
    mats = [aggregation_matrix(sc, mesh).A.tocoo() for sc in schemes]
    rows, cols, vals = [], [], []
    rt, ra, rs = [], [], []
    r0 = 0
    for t in range(nt):
        k = support_for_time(supports, int(time_knots[t]))
        M = mats[k]
        rows.append(M.row + r0)
        cols.append(M.col * nt + t)
        vals.append(M.data)
        rt.append(np.full(M.shape[0], t))
        ra.append(np.arange(M.shape[0]))
        rs.append(np.full(M.shape[0], k))
        r0 += M.shape[0]
    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(r0, m * nt)
    )
    return StackedAggregation(A, np.concatenate(rt), np.concatenate(ra), np.concatenate(rs))
