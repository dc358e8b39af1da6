"""Quality functionals comparing an original graph with a weighted coarse graph.

Every differentiable loss is a mean over test items of ``|F_G(f) - F_coarse(proj f)|``.
For the three spectral kinds the coarse term is linear in the coarse edge
weights once the projected test vector is fixed:

* ``quad``: ``(Pf)^T L^ (Pf) = sum_e w_e (x_r - x_s)^2`` with ``x = P f``;
* ``quad_norm``: with ``proj = D^^1/2 P D^-1/2`` the coarse degree factors
  cancel, ``proj(f)^T N^ proj(f) = sum_e w_e (y_r - y_s)^2`` with
  ``y = P D^-1/2 f``, so the weight dependence of the projection drops out;
* ``rayleigh``: numerator as for ``quad``, denominator ``|G^-1/2 P+^T f|^2``
  which does not involve the weights.

So one ``(m_coarse, k)`` coefficient table per instance gives both value and
gradient.  Conductance is handled separately (piecewise rational).
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .graph import CoarseningResult, GraphError, Partition, WeightedGraph, cluster_sums, project_mean
from .operators import OperatorKind, laplacian
from .spectral import eigen_smallest_k, eigenerror

log = logging.getLogger(__name__)

MAX_RESAMPLE = 100


class LossKind(enum.Enum):
    QUAD = "quad"
    QUAD_NORM = "quad_norm"
    RAYLEIGH = "rayleigh"
    CONDUCTANCE = "conductance"
    EIGENERROR = "eigenerror"

    @classmethod
    def parse(cls, value) -> "LossKind":
        return value if isinstance(value, cls) else cls(str(value).lower())

    @property
    def differentiable(self) -> bool:
        return self is not LossKind.EIGENERROR


@dataclass(frozen=True)
class LossSpec:
    kind: LossKind
    k: int = 40
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind.parse(self.kind))
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass
class TestVectors:
    """Either an ``(n, k)`` array of eigenvectors or a list of vertex subsets."""

    __test__ = False  # not a pytest class

    vectors: np.ndarray | None
    subsets: list[np.ndarray] | None
    provenance: str

    @property
    def k(self) -> int:
        return self.vectors.shape[1] if self.vectors is not None else len(self.subsets)


def _sample_subset(rng, n: int) -> np.ndarray:
    lo, hi = int(np.ceil(n / 4)), max(int(np.floor(n / 2)), int(np.ceil(n / 4)))
    size = int(rng.integers(lo, hi + 1))
    return np.sort(rng.choice(n, size=size, replace=False))


def _image_is_proper(p: Partition, s: np.ndarray) -> bool:
    img = np.unique(p.assign[s])
    return 0 < img.size < p.n_coarse


def make_test_vectors(g: WeightedGraph, spec: LossSpec, partition: Partition | None = None) -> TestVectors:
    """Test vectors for ``spec``.

    Spectral kinds use the first ``k`` eigenvectors of the matching original
    Laplacian (normalized for ``quad_norm``).  Conductance draws ``k`` vertex
    subsets with sizes uniform in ``[n/4, n/2]``; given ``partition``, subsets
    whose image covers all or none of the coarse vertices are redrawn.
    """
    kind = spec.kind
    if spec.k > g.n:
        raise ValueError(f"k={spec.k} exceeds n={g.n}")
    if kind is LossKind.CONDUCTANCE:
        rng = np.random.default_rng(spec.seed)
        subsets = []
        for _ in range(spec.k):
            for _attempt in range(MAX_RESAMPLE):
                s = _sample_subset(rng, g.n)
                if partition is None or _image_is_proper(partition, s):
                    break
            else:
                raise ValueError(f"no subset with a proper coarse image after {MAX_RESAMPLE} draws")
            subsets.append(s)
        return TestVectors(None, subsets, "sampled-subsets")
    if kind is LossKind.EIGENERROR:
        return TestVectors(None, None, "none")
    op_kind = OperatorKind.NORMALIZED if kind is LossKind.QUAD_NORM else OperatorKind.COMBINATORIAL
    spec_ = eigen_smallest_k(laplacian(g, op_kind), spec.k)
    prov = "eigenvectors-of-normalized" if op_kind is OperatorKind.NORMALIZED else "eigenvectors-of-L"
    return TestVectors(spec_.eigenvectors, None, prov)


def _check_weights(w, m: int) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (m,):
        raise ValueError(f"expected {m} coarse weights, got shape {w.shape}")
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise GraphError("coarse weights must be positive and finite")
    return w


class LossContext:
    """Weight-independent precomputation for one (graph, coarsening, test vectors) triple.

    ``value(w)`` and ``gradient(w)`` are then cheap, which is what the
    training loop needs.
    """

    def __init__(self, g: WeightedGraph, result: CoarseningResult, spec: LossSpec, tv: TestVectors):
        self.g = g
        self.result = result
        self.spec = spec
        self.tv = tv
        p = result.partition
        p.check(g)
        cg = result.coarse
        if cg.n != p.n_coarse:
            raise ValueError("coarse graph does not match the partition")
        self.m = cg.m
        kind = spec.kind
        self.kind = kind
        if kind is LossKind.EIGENERROR:
            return
        if kind is LossKind.CONDUCTANCE:
            if tv.subsets is None:
                raise ValueError("conductance loss needs subset test vectors")
            self._prepare_conductance(g, p, cg)
            return
        F = tv.vectors
        if F is None or F.shape[0] != g.n:
            raise ValueError("test vectors do not match the graph")
        if kind is LossKind.QUAD_NORM:
            F = F / np.sqrt(g.degrees())[:, None]  # x^T L_norm x = sum_e w_e (x_u/sqrt(d_u) - x_v/sqrt(d_v))^2
        X = project_mean(p, F)
        # both sides as edge sums in the same arithmetic, so an identity partition cancels exactly
        d = F[g.u] - F[g.v]
        self.orig = g.w @ (d * d)
        diff = X[cg.u] - X[cg.v]
        self.coef = diff * diff  # (m, k)
        self.den = np.ones(F.shape[1])
        self.active = np.ones(F.shape[1], dtype=bool)
        if kind is LossKind.RAYLEIGH:
            self.orig = self.orig / np.sum(F * F, axis=0)
            S = cluster_sums(p, F)
            den = np.sum(S * S / p.cluster_sizes[:, None], axis=0)
            tiny = den <= 1e-300
            if np.any(tiny):
                log.warning("%d test vectors project to zero; their Rayleigh terms count as 0", int(tiny.sum()))
            self.active = ~tiny
            self.den = np.where(tiny, 1.0, den)

    def _prepare_conductance(self, g, p, cg):
        k = len(self.tv.subsets)
        cross = np.zeros((cg.m, k))
        inside = np.zeros((cg.m, k))
        fine_cross = np.zeros((g.m, k))
        fine_inside = np.zeros((g.m, k))
        for i, s in enumerate(self.tv.subsets):
            fine = np.zeros(g.n, dtype=bool)
            fine[s] = True
            fine_cross[:, i] = fine[g.u] != fine[g.v]
            fine_inside[:, i] = fine[g.u].astype(float) + fine[g.v].astype(float)
            mask = np.zeros(cg.n, dtype=bool)
            mask[np.unique(p.assign[s])] = True
            if mask.all() or not mask.any():
                raise ValueError(f"subset {i} has a trivial coarse image; resample with the partition")
            a, b = mask[cg.u], mask[cg.v]
            cross[:, i] = a != b
            inside[:, i] = a.astype(float) + b.astype(float)
        self.orig = self._phi(g.w, fine_cross, fine_inside)
        self.cross = cross
        self.inside = inside

    @staticmethod
    def _phi(w, cross, inside):
        # vol(T) = sum_e w_e * (#endpoints in T); vol(T^c) = 2 W - vol(T)
        cut = w @ cross
        vol = w @ inside
        other = 2.0 * w.sum() - vol
        return cut / np.minimum(vol, other)

    def terms(self, w) -> np.ndarray:
        w = _check_weights(w, self.m)
        if self.kind is LossKind.CONDUCTANCE:
            return np.abs(self.orig - self._phi(w, self.cross, self.inside))
        coarse = (w @ self.coef) / self.den
        t = np.abs(self.orig - coarse)
        return np.where(self.active, t, 0.0)

    def value(self, w) -> float:
        if self.kind is LossKind.EIGENERROR:
            w = _check_weights(w, self.m)
            cg = self.result.coarse.with_weights(w)
            return eigenerror(self.g, self.result, self.spec.k, coarse=cg)
        return float(np.mean(self.terms(w)))

    def gradient(self, w) -> np.ndarray:
        """Derivative of ``value`` in the coarse weights.

        At kinks of ``|.|`` and ``min`` the branch taken is the one chosen by
        ``np.sign`` and ``vol <= other`` respectively.
        """
        if self.kind is LossKind.EIGENERROR:
            raise ValueError("the Eigenerror loss is not differentiable")
        w = _check_weights(w, self.m)
        k = self.orig.size
        if self.kind is LossKind.CONDUCTANCE:
            cut = w @ self.cross
            vol = w @ self.inside
            total = 2.0 * w.sum()
            other = total - vol
            use_vol = vol <= other
            den = np.where(use_vol, vol, other)
            dden = np.where(use_vol[None, :], self.inside, 2.0 - self.inside)
            phi = cut / den
            dphi = (self.cross * den - cut * dden) / (den * den)
            sgn = np.sign(phi - self.orig)
            return (dphi @ sgn) / k
        coarse = (w @ self.coef) / self.den
        sgn = np.sign(coarse - self.orig) * self.active
        return (self.coef @ (sgn / self.den)) / k

    def value_and_gradient(self, w):
        return self.value(w), self.gradient(w)


def evaluate_loss(g, result: CoarseningResult, coarse_weights, spec: LossSpec, tv: TestVectors) -> float:
    return LossContext(g, result, spec, tv).value(coarse_weights)


def loss_gradient_wrt_weights(g, result: CoarseningResult, coarse_weights, spec: LossSpec, tv: TestVectors) -> np.ndarray:
    return LossContext(g, result, spec, tv).gradient(coarse_weights)


def improvement_pct(before: float, after: float) -> float:
    """Relative improvement ``100 (before - after) / before``; 0 when ``before`` is 0."""
    if before == 0:
        return 0.0
    return 100.0 * (before - after) / before
