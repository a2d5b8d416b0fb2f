"""Reading and writing configs, tables, geometry, meshes and run outputs.

All tabular outputs are comma-separated text with a header line. Floats
are written with 17 significant digits so that re-reading them and
re-running from a manifest reproduces files byte for byte.
"""
from dataclasses import dataclass, field
import csv
import hashlib
import json
import os
import platform

import numpy as np
import scipy.sparse as sp
import yaml

from .coda import CompositionMatrix, LogratioMatrix
from .errors import ClosureViolation, LatticeOutsideMesh, SpecError
from .geometry import Polygon, lattice_points
from .precision import AdjacencyGraph
from .spde import TriMesh, projection

CONFIG_SECTIONS = ("data", "geometry", "model", "fit", "consensus")
COMMANDS = ("simulate", "fit", "consensus-fit", "stepwise", "report")
EXPERIMENTS = ("beta-hurdle", "coda-hurdle", "beta-downscale", "alr-downscale", "bigdata-consensus")
CLOSURE_TOL = 1e-6


def fmt(x):
    """Canonical text for a number (round-trips exactly)."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


# -- config -------------------------------------------------------------------
@dataclass
class RunConfig:
    """One batch run: command, seed, output directory and config sections."""

    command: str = "simulate"
    experiment: str = None
    seed: int = None
    out: str = "out"
    threads: int = 1
    verbosity: int = 0
    sections: dict = field(default_factory=lambda: {k: {} for k in CONFIG_SECTIONS})

    def validate(self, check_paths=True):
        if self.command not in COMMANDS:
            raise SpecError("command", f"unknown command {self.command!r}; expected one of {COMMANDS}")
        if self.experiment is not None and self.experiment not in EXPERIMENTS:
            raise SpecError("experiment", f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if self.command == "simulate" and self.seed is None:
            raise SpecError("seed", "a seed is required for simulate")
        if self.seed is not None and not (0 <= int(self.seed) < 2**64):
            raise SpecError("seed", "seed must be an unsigned 64-bit integer")
        if int(self.threads) < 1:
            raise SpecError("threads", "threads must be at least 1")
        for name in self.sections:
            if name not in CONFIG_SECTIONS:
                raise SpecError(name, f"unknown config section; expected {CONFIG_SECTIONS}")
        if check_paths:
            for sec, body in self.sections.items():
                for key, val in (body or {}).items():
                    if key.endswith("path") and val is not None and not os.path.exists(val):
                        raise SpecError(f"{sec}.{key}", f"file not found: {val}")
        return self

    def to_dict(self):
        d = {
            "command": self.command, "experiment": self.experiment, "seed": self.seed,
            "out": self.out, "threads": int(self.threads), "verbosity": int(self.verbosity),
        }
        for k in CONFIG_SECTIONS:
            d[k] = dict(self.sections.get(k) or {})
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        unknown = set(d) - set(CONFIG_SECTIONS) - {"command", "experiment", "seed", "out", "threads", "verbosity"}
        if unknown:
            raise SpecError(sorted(unknown)[0], "unknown top-level key")
        sections = {k: dict(d.get(k) or {}) for k in CONFIG_SECTIONS}
        for k in CONFIG_SECTIONS:
            if not isinstance(d.get(k) or {}, dict):
                raise SpecError(k, "section must be a mapping")
        return cls(
            command=d.get("command", "simulate"), experiment=d.get("experiment"), seed=d.get("seed"),
            out=d.get("out", "out"), threads=d.get("threads", 1), verbosity=d.get("verbosity", 0),
            sections=sections,
        )


def dump_config(cfg, path=None):
    text = yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=False)
    if path is not None:
        with open(path, "w") as f:
            f.write(text)
    return text


def load_config(path, check_paths=True, validate=True):
    """Read a YAML run config; ``validate=False`` defers checks to the caller."""
    with open(path) as f:
        try:
            d = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise SpecError("<root>", f"invalid config syntax: {e}") from e
    if d is not None and not isinstance(d, dict):
        raise SpecError("<root>", "config must be a mapping")
    cfg = RunConfig.from_dict(d)
    return cfg.validate(check_paths) if validate else cfg


def config_hash(cfg):
    """SHA-256 of the canonical serialisation of a run config."""
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()


# -- tables -------------------------------------------------------------------
def write_table(path, header, rows, comment=None):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as f:
        if comment:
            f.write(f"# {comment}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(x) for x in r])
    return path


def read_table(path):
    """Return ``(header, rows, comments)`` with cells as strings."""
    comments, lines = [], []
    with open(path, newline="") as f:
        for line in f:
            if line.startswith("#"):
                comments.append(line[1:].strip())
            elif line.strip():
                lines.append(line)
    rows = list(csv.reader(lines))
    if not rows:
        raise SpecError(path, "empty table")
    return rows[0], rows[1:], comments


def read_compositions(path, tol=CLOSURE_TOL):
    """Compositions with one column per part; rows must sum to 1."""
    header, rows, _ = read_table(path)
    Y = np.array([[float(x) for x in r] for r in rows], dtype=float).reshape(len(rows), len(header))
    s = Y.sum(axis=1)
    bad = np.flatnonzero(np.abs(s - 1.0) > tol)
    if bad.size:
        detail = ", ".join(f"row {i}: sum {s[i]:.6g}" for i in bad[:10])
        raise ClosureViolation(bad.tolist(), f"{bad.size} row(s) violate closure beyond {tol}: {detail}")
    return CompositionMatrix(Y, tuple(header))


def write_compositions(Y, path):
    Y = Y if isinstance(Y, CompositionMatrix) else CompositionMatrix(Y)
    labels = Y.labels or tuple(f"p{k + 1}" for k in range(Y.values.shape[1]))
    return write_table(path, labels, Y.values.tolist())


def write_logratios(L, path):
    D = L.values.shape[1]
    header = [f"{L.kind}{k + 1}" for k in range(D)]
    comment = f"kind={L.kind} reference={'none' if L.reference is None else L.reference}"
    return write_table(path, header, L.values.tolist(), comment=comment)


def read_logratios(path):
    header, rows, comments = read_table(path)
    meta = dict(tok.split("=", 1) for c in comments for tok in c.split() if "=" in tok)
    ref = meta.get("reference", "none")
    V = np.array([[float(x) for x in r] for r in rows]).reshape(len(rows), len(header))
    return LogratioMatrix(V, meta.get("kind", "alr"), None if ref == "none" else int(ref))


# -- geometry -----------------------------------------------------------------
def read_geometry(path):
    """Named polygons from ``{"polygons": [{"name", "rings": [...]}]}``.

    The first ring is the exterior; further rings are holes. A bare list
    of polygon objects is accepted as well.
    """
    with open(path) as f:
        doc = json.load(f)
    items = doc.get("polygons", doc) if isinstance(doc, dict) else doc
    out = []
    for k, item in enumerate(items):
        rings = item.get("rings")
        if not rings:
            raise SpecError(f"geometry.polygons[{k}]", "polygon needs at least one ring")
        out.append(Polygon(np.asarray(rings[0], float), tuple(np.asarray(r, float) for r in rings[1:]), item.get("name", str(k))))
    return out


def write_geometry(polygons, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    doc = {
        "polygons": [
            {"name": p.name, "rings": [np.asarray(p.exterior).tolist()] + [np.asarray(h).tolist() for h in p.holes]}
            for p in polygons
        ]
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
    return path


def read_pairs(path, n=None):
    """Adjacency graph from ``i,j`` lines (zero-based, header optional)."""
    pairs = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            a, b = line.replace(",", " ").split()[:2]
            if not a.lstrip("-").isdigit():
                continue
            pairs.append((int(a), int(b)))
    if n is None:
        n = 1 + max(max(p) for p in pairs)
    return AdjacencyGraph.from_pairs(pairs, n)


def write_pairs(graph, path):
    return write_table(path, ("i", "j"), graph.pairs())


# -- meshes -------------------------------------------------------------------
def write_mesh(mesh, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        f.write("vertices\n")
        for x, y in mesh.vertices:
            f.write(f"{fmt(x)} {fmt(y)}\n")
        f.write("triangles\n")
        for i, j, k in mesh.triangles:
            f.write(f"{int(i)} {int(j)} {int(k)}\n")
    return path


def read_mesh(path):
    """Mesh text with ``vertices`` (x y) and ``triangles`` (i j k, zero-based)."""
    sec, verts, tris = None, [], []
    with open(path) as f:
        for n, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line in ("vertices", "triangles"):
                sec = line
                continue
            tok = line.split()
            if sec == "vertices" and len(tok) == 2:
                verts.append([float(t) for t in tok])
            elif sec == "triangles" and len(tok) == 3:
                tris.append([int(t) for t in tok])
            else:
                raise SpecError(f"{path}:{n}", f"unexpected line in section {sec!r}")
    return TriMesh(np.array(verts), np.array(tris, dtype=int))


def write_field(values, path, name="value"):
    """Field realisation keyed by vertex index."""
    return write_table(path, ("vertex", name), [(i, v) for i, v in enumerate(np.asarray(values))])


def write_sparse(A, path):
    """Coordinate-list sparse text ``(row, col, value)``."""
    C = sp.coo_matrix(A)
    order = np.lexsort((C.col, C.row))
    rows = zip(C.row[order], C.col[order], C.data[order])
    return write_table(path, ("row", "col", "value"), rows, comment=f"shape={C.shape[0]}x{C.shape[1]}")


def read_sparse(path):
    header, rows, comments = read_table(path)
    shape = None
    for c in comments:
        if c.startswith("shape="):
            shape = tuple(int(v) for v in c[6:].split("x"))
    r = np.array([int(x[0]) for x in rows], dtype=int)
    cidx = np.array([int(x[1]) for x in rows], dtype=int)
    v = np.array([float(x[2]) for x in rows])
    return sp.csr_matrix((v, (r, cidx)), shape=shape)


def write_plan(plan, path):
    return write_table(path, ("observation", "partition"), plan.rows(), comment=f"strategy={plan.strategy}")


# -- summaries ----------------------------------------------------------------
def output_path(out, experiment, field_name, stat):
    """``<out>/<experiment>/<field>__<stat>.csv``."""
    return os.path.join(out, experiment, f"{field_name}__{stat}.csv")


def write_summary(summary, out, experiment, prefix=""):
    """Fixed-effect table, one file per latent slice and the hyperparameter grid."""
    paths = []
    model = summary.model
    ft = model.fixed_term()
    if ft is not None:
        paths.append(write_table(
            output_path(out, experiment, f"{prefix}fixed", "summary"),
            ("name", "mean", "sd", "q025", "q50", "q975"), summary.fixed_table(),
        ))
    for t in model.terms:
        if t is ft:
            continue
        m, s = summary.slice(t.name)
        paths.append(write_table(
            output_path(out, experiment, f"{prefix}{t.name}", "posterior"),
            ("index", "mean", "sd"), [(i, a, b) for i, (a, b) in enumerate(zip(m, s))],
        ))
    paths.append(write_table(
        output_path(out, experiment, f"{prefix}hyper", "summary"),
        ("name", "mode_internal", "sd_internal", "natural", "natural_low", "natural_high"), summary.hyper_table(),
    ))
    names = [h.name for h in model.hypers]
    rows = [tuple(f.theta) + (w, f.log_posterior) for f, w in zip(summary.fits, summary.weights)]
    paths.append(write_table(
        output_path(out, experiment, f"{prefix}hyper", "grid"), tuple(names) + ("weight", "log_posterior"), rows,
    ))
    return paths


def write_truth_table(path, rows):
    """Rows ``(name, truth, estimate, low, high)``."""
    return write_table(path, ("name", "truth", "estimate", "low", "high"), rows)


def projected_moments(summary, name, P, chunk=256):
    """Mean and sd of ``P @ x[name]`` under the posterior mixture."""
    model = summary.model
    s = model.slices[name]
    P = sp.csr_matrix(P)
    L = P.shape[0]
    mean = P @ summary.mean[s]
    second = np.zeros(L)
    for w, f in zip(summary.weights, summary.fits):
        mu = P @ f.mode[s]
        var = np.zeros(L)
        V, S = f._corr()
        for a in range(0, L, chunk):
            Pc = P[a:a + chunk].toarray()
            E = np.zeros((model.N, Pc.shape[0]))
            E[s] = Pc.T
            X = f.factor.solve(E)
            v = np.einsum("ij,ij->j", E, X)
            if V is not None:
                B = V.T @ E
                v = v - np.einsum("ij,ij->j", B, np.linalg.solve(S, B))
            var[a:a + chunk] = v
        second += w * (np.maximum(var, 0.0) + mu**2)
    return mean, np.sqrt(np.maximum(second - mean**2, 0.0))


def emit_plot_data(summary, fields, bbox, n, out, experiment):
    """Write ``<field>__lattice.csv`` with rows ``(x, y, mean, sd)``.

    Parameters
    ----------
    summary : PosteriorSummary
    fields : dict of name -> TriMesh
        Latent slices holding mesh-node values.
    bbox : tuple
        Lattice box ``(x0, y0, x1, y1)``; points are cell-centred, ``n`` per
        side, ordered by y then x.
    """
    pts = lattice_points(bbox, n)
    paths = []
    for name, mesh in fields.items():
        P = projection(mesh, pts)
        if not P.inside.all():
            raise LatticeOutsideMesh(P.outside.tolist(), f"{P.outside.size} lattice point(s) outside the mesh of {name}")
        m, s = projected_moments(summary, name, P.A)
        rows = [(x, y, a, b) for (x, y), a, b in zip(pts, m, s)]
        paths.append(write_table(output_path(out, experiment, name, "lattice"), ("x", "y", "mean", "sd"), rows))
    return paths


# -- manifest -----------------------------------------------------------------
def module_versions():
    import numba
    import scipy

    from . import __version__

    return {
        "lucoda": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
        "numba": numba.__version__, "pyyaml": yaml.__version__, "python": platform.python_version(),
    }


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(cfg, seeds, outputs=(), root=None, notes=None):
    """Seeds, config hash, versions and output digests of a run."""
    root = root or cfg.out
    man = {
        "experiment": cfg.experiment,
        "command": cfg.command,
        "seeds": [int(s) for s in seeds],
        "spec_hash": config_hash(cfg),
        "config": cfg.to_dict(),
        "versions": module_versions(),
        "numba_disabled": os.environ.get("LUCODA_DISABLE_NUMBA", "") not in ("", "0"),
        "outputs": {os.path.relpath(p, root): file_digest(p) for p in sorted(outputs)},
    }
    if notes:
        man["notes"] = dict(notes)
    return man


def write_manifest(manifest, path):
    with open(path, "w") as f:
        yaml.safe_dump(manifest, f, sort_keys=True)
    return path


def read_manifest(path):
    with open(path) as f:
        return yaml.safe_load(f)
