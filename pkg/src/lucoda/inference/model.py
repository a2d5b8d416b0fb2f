"""Joint latent Gaussian system assembled from terms and likelihood blocks."""
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from ..errors import DimensionMismatch, SpecError
from .hyper import Hyper
from .terms import FixedEffects


@dataclass
class Component:
    """Contribution ``scale * matrix @ z[term]`` to a block's predictor.

    ``scale`` names an identity-transformed hyperparameter (shared-scaled
    terms) or is ``None``.
    """

    term: str
    matrix: object
    scale: str = None


@dataclass
class LikelihoodBlock:
    name: str
    family: object
    y: np.ndarray
    components: list
    offset: np.ndarray = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        n = self.n_eta
        if self.offset is None:
            self.offset = np.zeros(n)
        self.offset = np.asarray(self.offset, dtype=float)
        if self.offset.size != n:
            raise DimensionMismatch(f"block {self.name}: offset has {self.offset.size} rows, expected {n}")

    @property
    def n_eta(self):
        return self.y.size if self.family.group == 1 else self.y.size

    @property
    def n_obs(self):
        return self.y.size // self.family.group


class LatentModel:
    """Assembled model.

    Parameters
    ----------
    terms : list of Term
        Latent components in layout order. Fixed effects are a
        :class:`FixedEffects` term.
    blocks : list of LikelihoodBlock
    hypers : list of Hyper
    """

    def __init__(self, terms, blocks, hypers):
        self.terms = list(terms)
        self.blocks = list(blocks)
        self.hypers = list(hypers)
        self._validate()
        self.slices = {}
        off = 0
        for t in self.terms:
            self.slices[t.name] = slice(off, off + t.size)
            off += t.size
        self.N = off
        self.m0 = np.concatenate([t.prior_mean() for t in self.terms]) if self.terms else np.zeros(0)
        self._build_constraints()
        self._build_maps()

    # -- validation --------------------------------------------------------
    def _validate(self):
        names = [t.name for t in self.terms]
        if len(set(names)) != len(names):
            raise SpecError("model.terms", "term names must be unique")
        hn = [h.name for h in self.hypers]
        if len(set(hn)) != len(hn):
            raise SpecError("model.hypers", "hyperparameter names must be unique")
        for t in self.terms:
            for h in t.hypers:
                if h not in hn:
                    raise SpecError(f"model.terms.{t.name}", f"undeclared hyperparameter {h!r}")
        by_name = {t.name: t for t in self.terms}
        for b in self.blocks:
            for h in b.family.hypers:
                if h not in hn:
                    raise SpecError(f"model.likelihood.{b.name}", f"undeclared hyperparameter {h!r}")
            for k, c in enumerate(b.components):
                path = f"model.likelihood.{b.name}.components[{k}]"
                if c.term not in by_name:
                    raise SpecError(path, f"unknown term {c.term!r}")
                if c.scale is not None and c.scale not in hn:
                    raise SpecError(path, f"undeclared scaling parameter {c.scale!r}")
                shp = c.matrix.shape
                if shp != (b.n_eta, by_name[c.term].size):
                    raise SpecError(path, f"matrix shape {shp} != ({b.n_eta}, {by_name[c.term].size})")

    def _build_constraints(self):
        rows = []
        for t in self.terms:
            if t.constraints is not None:
                C = np.zeros((t.constraints.shape[0], self.N))
                C[:, self.slices[t.name]] = t.constraints
                rows.append(C)
        self.C = np.vstack(rows) if rows else None

    def _build_maps(self):
        self.n_eta = sum(b.n_eta for b in self.blocks)
        self.block_rows = {}
        r0 = 0
        groups = {}
        for b in self.blocks:
            self.block_rows[b.name] = slice(r0, r0 + b.n_eta)
            for c in b.components:
                M = sp.coo_matrix(c.matrix)
                s = self.slices[c.term]
                groups.setdefault(c.scale, []).append((M.row + r0, M.col + s.start, M.data))
            r0 += b.n_eta
        self._A = {}
        for key, parts in groups.items():
            r = np.concatenate([p[0] for p in parts])
            c = np.concatenate([p[1] for p in parts])
            v = np.concatenate([p[2] for p in parts])
            self._A[key] = sp.csr_matrix((v, (r, c)), shape=(self.n_eta, self.N))
        if None not in self._A:
            self._A[None] = sp.csr_matrix((self.n_eta, self.N))
        self.offset = np.concatenate([b.offset for b in self.blocks]) if self.blocks else np.zeros(0)

    # -- hyperparameters ---------------------------------------------------
    @property
    def hyper_names(self):
        return [h.name for h in self.hypers]

    def hyper(self, name):
        return self.hypers[self.hyper_names.index(name)]

    @property
    def free(self):
        return [i for i, h in enumerate(self.hypers) if not h.fixed]

    def theta0(self):
        return np.array([h.init for h in self.hypers])

    def natural(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.size != len(self.hypers):
            raise DimensionMismatch(f"expected {len(self.hypers)} hyperparameters, got {theta.size}")
        return {h.name: h.to_natural(x) for h, x in zip(self.hypers, theta)}

    def log_hyper_prior(self, theta):
        return float(sum(h.log_prior(x) for h, x in zip(self.hypers, theta)))

    def theta_from_natural(self, values):
        th = self.theta0()
        for k, v in values.items():
            i = self.hyper_names.index(k)
            th[i] = self.hypers[i].to_internal(v)
        return th

    # -- assembly ----------------------------------------------------------
    def prior_precision(self, h):
        Qs, ld = [], 0.0
        for t in self.terms:
            Q, l = t.precision(h)
            Qs.append(sp.csr_matrix(Q))
            ld += l
        return sp.block_diag(Qs, format="csr") if Qs else sp.csr_matrix((0, 0)), float(ld)

    def A(self, h):
        A = self._A[None]
        for key, M in self._A.items():
            if key is not None:
                A = A + h[key] * M
        return sp.csr_matrix(A)

    def evaluate(self, eta, h):
        """Total log-likelihood, gradient and curvature over all blocks."""
        total, grads, ws, dense = 0.0, [], [], True
        for b in self.blocks:
            s = self.block_rows[b.name]
            ll, g, w = b.family.evaluate(b.y, eta[s], h)
            total += float(np.sum(ll))
            grads.append(g)
            ws.append(w)
            dense &= not sp.issparse(w)
        g = np.concatenate(grads) if grads else np.zeros(0)
        if dense:
            W = np.concatenate(ws) if ws else np.zeros(0)
        else:
            W = sp.block_diag([w if sp.issparse(w) else sp.diags(w) for w in ws], format="csr")
        return total, g, W

    def loglik_total(self, eta, h):
        total = 0.0
        for b in self.blocks:
            total += float(np.sum(b.family.loglik(b.y, eta[self.block_rows[b.name]], h)))
        return total

    def pointwise_loglik(self, eta, h):
        """Per-observation log-likelihood (grouped rows collapse to one)."""
        return np.concatenate(
            [b.family.loglik(b.y, eta[self.block_rows[b.name]], h) for b in self.blocks]
        )

    def with_priors(self, fixed_mean=None, fixed_prec=None, hyper_priors=None):
        """Copy of the model with replaced fixed-effect and hyperparameter priors.

        ``hyper_priors`` maps names to ``(mean, sd)`` on the internal scale;
        each such hyperparameter also starts its search at the prior mean.
        """
        terms = list(self.terms)
        ft = self.fixed_term()
        if ft is not None and (fixed_mean is not None or fixed_prec is not None):
            k = terms.index(ft)
            terms[k] = FixedEffects(
                ft.names,
                ft.mean if fixed_mean is None else fixed_mean,
                ft.prec if fixed_prec is None else fixed_prec,
                name=ft.name,
            )
        hypers = list(self.hypers)
        for name, (m, s) in (hyper_priors or {}).items():
            i = self.hyper_names.index(name)
            if not hypers[i].fixed:
                hypers[i] = replace(hypers[i].with_prior(m, s), init=float(np.clip(m, hypers[i].lower, hypers[i].upper)))
        return LatentModel(terms, self.blocks, hypers)

    def fixed_term(self):
        for t in self.terms:
            if isinstance(t, FixedEffects):
                return t
        return None
