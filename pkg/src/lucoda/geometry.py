"""Planar polygons, Voronoi partitions of a box and shared-edge adjacency."""
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSeeds, MeshError
from .kernels import points_in_ring
from .precision import AdjacencyGraph


def ring_area(ring):
    """Signed shoelace area of a ring (positive when counter-clockwise)."""
    r = np.asarray(ring, dtype=float)
    x, y = r[:, 0], r[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _open_ring(ring):
    r = np.asarray(ring, dtype=float).reshape(-1, 2)
    if len(r) > 1 and np.allclose(r[0], r[-1]):
        r = r[:-1]
    if len(r) < 3:
        raise MeshError("a ring needs at least three distinct vertices")
    return r


@dataclass(frozen=True)
class Polygon:
    """Polygon given by an exterior ring and optional holes.

    Rings may be closed (first vertex repeated) or open; they are stored open.
    """

    exterior: np.ndarray
    holes: tuple = ()
    name: str = ""

    def __post_init__(self):
        ext = _open_ring(self.exterior)
        holes = tuple(_open_ring(h) for h in self.holes)
        object.__setattr__(self, "exterior", ext)
        object.__setattr__(self, "holes", holes)

    @property
    def rings(self):
        return (self.exterior, *self.holes)

    @property
    def area(self):
        return abs(ring_area(self.exterior)) - sum(abs(ring_area(h)) for h in self.holes)

    @property
    def bounds(self):
        lo = self.exterior.min(axis=0)
        hi = self.exterior.max(axis=0)
        return lo[0], lo[1], hi[0], hi[1]

    @property
    def centroid(self):
        """Area centroid, holes subtracted."""
        num, den = np.zeros(2), 0.0
        for k, r in enumerate(self.rings):
            x, y = r[:, 0], r[:, 1]
            xn, yn = np.roll(x, -1), np.roll(y, -1)
            cross = x * yn - xn * y
            a = cross.sum() / 2.0
            c = np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * a)
            w = abs(a) if k == 0 else -abs(a)
            num += w * c
            den += w
        return num / den

    def contains(self, points):
        """Even-odd containment over all rings."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        inside = points_in_ring(pts, self.exterior)
        for h in self.holes:
            inside ^= points_in_ring(pts, h)
        return inside


def _clip(poly, labels, a, b, label):
    """Keep the part of ``poly`` with ``a . x <= b``; edges carry labels.

    ``labels[k]`` identifies the edge from vertex ``k`` to ``k + 1``.
    """
    n = len(poly)
    out, out_lab = [], []
    s = poly @ a - b
    for k in range(n):
        p, q = poly[k], poly[(k + 1) % n]
        sp_, sq = s[k], s[(k + 1) % n]
        if sp_ <= 0:
            out.append(p)
            out_lab.append(labels[k])
            if sq > 0:
                t = sp_ / (sp_ - sq)
                out.append(p + t * (q - p))
                out_lab.append(label)
        elif sq <= 0:
            t = sp_ / (sp_ - sq)
            out.append(p + t * (q - p))
            out_lab.append(labels[k])
    return np.array(out).reshape(-1, 2), out_lab


def voronoi_cells(seeds, bbox):
    """Voronoi cells of ``seeds`` clipped to ``bbox = (x0, y0, x1, y1)``.

    Returns the list of :class:`Polygon` cells and the adjacency graph in
    which two cells are neighbours when they share an edge of positive
    length.
    """
    seeds = np.asarray(seeds, dtype=float).reshape(-1, 2)
    n = len(seeds)
    x0, y0, x1, y1 = map(float, bbox)
    if n < 2:
        raise DegenerateSeeds("need at least two seeds")
    key = np.round(seeds / 1e-9).astype(np.int64)
    if np.unique(key, axis=0).shape[0] != n:
        raise DegenerateSeeds("duplicate seeds")
    box = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    scale = max(x1 - x0, y1 - y0)
    cells, pairs = [], set()
    for i in range(n):
        poly, lab = box.copy(), [-1, -1, -1, -1]
        order = np.argsort(np.linalg.norm(seeds - seeds[i], axis=1))
        for j in order[1:]:
            a = seeds[j] - seeds[i]
            b = 0.5 * (seeds[j] @ seeds[j] - seeds[i] @ seeds[i])
            # skip bisectors that cannot touch the current cell
            if np.max(poly @ a - b) <= 0:
                continue
            poly, lab = _clip(poly, lab, a, b, int(j))
            if len(poly) < 3:
                raise DegenerateSeeds(f"cell {i} vanished")
        for k, lj in enumerate(lab):
            if lj >= 0:
                e = poly[(k + 1) % len(poly)] - poly[k]
                if np.hypot(*e) > 1e-9 * scale:
                    pairs.add((min(i, lj), max(i, lj)))
        cells.append(Polygon(poly, name=f"area{i + 1}"))
    graph = AdjacencyGraph.from_pairs(sorted(pairs), n)
    return cells, graph


def _cross(a, b):
    return a[0] * b[1] - a[1] * b[0]


def shared_edge_adjacency(polygons, tol=1e-9):
    """Adjacency of arbitrary polygons by collinear overlapping edges."""
    n = len(polygons)
    segs = []
    for i, p in enumerate(polygons):
        for ring in p.rings:
            r = ring
            for k in range(len(r)):
                segs.append((i, r[k], r[(k + 1) % len(r)]))
    pairs = set()
    for u in range(len(segs)):
        i, a0, a1 = segs[u]
        d = a1 - a0
        L = np.hypot(*d)
        if L == 0:
            continue
        t = d / L
        for v in range(u + 1, len(segs)):
            j, b0, b1 = segs[v]
            if j == i or (min(i, j), max(i, j)) in pairs:
                continue
            # both endpoints of b on the line of a
            if abs(_cross(t, b0 - a0)) > tol * max(L, 1) or abs(_cross(t, b1 - a0)) > tol * max(L, 1):
                continue
            s0, s1 = sorted((np.dot(b0 - a0, t), np.dot(b1 - a0, t)))
            if min(L, s1) - max(0.0, s0) > tol * max(L, 1):
                pairs.add((min(i, j), max(i, j)))
    return AdjacencyGraph.from_pairs(sorted(pairs), n)


def lattice_points(bbox, n):
    """``n x n`` cell-centred lattice over ``bbox``, ordered by y then x."""
    x0, y0, x1, y1 = bbox
    xs = x0 + (x1 - x0) * (np.arange(n) + 0.5) / n
    ys = y0 + (y1 - y0) * (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(xs, ys)
    return np.column_stack([X.ravel(), Y.ravel()])
