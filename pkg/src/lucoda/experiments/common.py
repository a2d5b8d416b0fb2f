"""Helpers shared by the simulation studies."""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..downscale import AreaSupport
from ..errors import DegenerateSeeds
from ..geometry import voronoi_cells

UNIT_BOX = (0.0, 0.0, 1.0, 1.0)


@dataclass(frozen=True)
class VoronoiSupportRequest:
    bbox: tuple = UNIT_BOX
    n_seeds: int = 40
    seed: int = 0
    min_separation: float = None

    def __post_init__(self):
        if self.n_seeds < 2:
            raise DegenerateSeeds("at least two seeds are required")


def draw_seeds(req):
    """Uniform seeds in the box, thinned so no two are closer than
    ``min_separation`` (default: a quarter of the mean spacing)."""
    rng = np.random.default_rng(req.seed)
    x0, y0, x1, y1 = req.bbox
    area = (x1 - x0) * (y1 - y0)
    sep = req.min_separation
    if sep is None:
        sep = 0.25 * np.sqrt(area / req.n_seeds)
    pts = []
    while len(pts) < req.n_seeds:
        p = rng.uniform((x0, y0), (x1, y1))
        if all(np.hypot(*(p - q)) >= sep for q in pts):
            pts.append(p)
    return np.array(pts)


def voronoi_support(req):
    """Voronoi tessellation of the box as an :class:`AreaSupport` plus the
    shared-edge adjacency graph and the seeds."""
    seeds = draw_seeds(req)
    cells, graph = voronoi_cells(seeds, req.bbox)
    return AreaSupport(tuple(cells)), graph, seeds


def nearest_seed(points, seeds):
    """Voronoi membership (lowest index on ties)."""
    d = ((points[:, None, :] - seeds[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d, axis=1)


def indicator(index, n_cols):
    """Sparse 0/1 matrix with a single one per row at ``index``."""
    index = np.asarray(index)
    return sp.csr_matrix((np.ones(index.size), (np.arange(index.size), index)), shape=(index.size, n_cols))


def rmse(a, b):
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))
