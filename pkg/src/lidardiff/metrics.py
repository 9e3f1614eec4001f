"""Distribution distances between generated and reference image sets."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import EmptyInput, InsufficientSamples, NumericalError, ParamError, ShapeError
from .projection import RangeImage

EIG_TOL = 1e-6


@dataclass(frozen=True)
class Histogram:
    counts: np.ndarray

    @property
    def bins(self) -> int:
        return len(self.counts)

    def normalized(self) -> np.ndarray:
        c = np.asarray(self.counts, dtype=np.float64)
        total = c.sum()
        if total <= 0:
            raise EmptyInput("histogram has no mass")
        return c / total


@dataclass(frozen=True)
class FeatureStats:
    mu: np.ndarray
    sigma: np.ndarray

    @classmethod
    def from_features(cls, feats) -> "FeatureStats":
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 2 or len(feats) < 2:
            raise InsufficientSamples("need at least two feature vectors for a covariance")
        return cls(feats.mean(axis=0), np.atleast_2d(np.cov(feats, rowvar=False)))


@dataclass
class MetricConfig:
    bins: int = 256
    pool: tuple = (64, 64)
    bandwidth: float | None = None
    unbiased_mmd: bool = True

    def to_dict(self):
        d = asdict(self)
        d["pool"] = list(self.pool)
        return d


@dataclass
class MetricReport:
    jsd: float
    mmd: float
    frechet: float
    n_generated: int
    n_reference: int
    extractor_id: str = ""
    config: dict = field(default_factory=dict)

    def to_json(self, **kw) -> str:
        return json.dumps(asdict(self), **kw)


def _pixels(images):
    if isinstance(images, RangeImage):
        images = [images]
    return [np.asarray(im.data if isinstance(im, RangeImage) else im, dtype=np.float64)
            for im in images]


def intensity_histogram(images, bins: int = 256) -> Histogram:
    """Counts of pixel values in ``bins`` uniform bins over [0, 1].

    Pixels <= 0 are "no return" and skipped; values above 1 land in the top
    bin. Bins are half-open except the last, which includes 1.0.
    """
    if bins < 2:
        raise ParamError("need at least two bins")
    vals = np.concatenate([p.ravel() for p in _pixels(images)]) if len(images) else np.zeros(0)
    vals = vals[vals > 0]
    if vals.size == 0:
        raise EmptyInput("no nonzero pixels to histogram")
    counts, _ = np.histogram(np.minimum(vals, 1.0), bins=bins, range=(0.0, 1.0))
    return Histogram(counts)


def _as_prob(h):
    return h.normalized() if isinstance(h, Histogram) else np.asarray(h, float) / np.sum(h)


def jsd(p, q) -> float:
    """Jensen-Shannon divergence in nats, bounded by ln 2."""
    p, q = _as_prob(p), _as_prob(q)
    if p.shape != q.shape:
        raise ShapeError(f"histograms have {p.size} and {q.size} bins")
    m = 0.5 * (p + q)

    def kl(a):
        nz = a > 0
        return float(np.sum(a[nz] * np.log(a[nz] / m[nz])))

    return 0.5 * kl(p) + 0.5 * kl(q)


def median_bandwidth(X, Y) -> float:
    joint = np.concatenate([X, Y])
    d = pdist(joint)
    d = d[d > 0]
    return float(np.median(d)) if d.size else 1.0


def mmd_rbf(X, Y, sigma: float | None = None, unbiased: bool = True) -> float:
    """Squared MMD with the Gaussian kernel ``exp(-|a-b|^2 / (2 sigma^2))``.

    The unbiased estimate drops self-pairs from the within-set means. For
    equal-sized sets it is the paired U-statistic (cross-set terms with
    matching indices dropped too), which is exactly zero for ``X`` against
    itself. ``sigma=None`` uses the median pairwise distance of the joint
    sample.
    """
    X = np.asarray(X, dtype=np.float64).reshape(len(X), -1)
    Y = np.asarray(Y, dtype=np.float64).reshape(len(Y), -1)
    if X.shape[1] != Y.shape[1]:
        raise ShapeError("sample sets have different dimensionality")
    m, n = len(X), len(Y)
    if unbiased and (m < 2 or n < 2):
        raise InsufficientSamples("unbiased MMD needs at least two samples per set")
    if m < 1 or n < 1:
        raise InsufficientSamples("empty sample set")
    if sigma is None:
        sigma = median_bandwidth(X, Y)
    if sigma <= 0:
        raise ParamError("bandwidth must be positive")
    g = -0.5 / sigma ** 2
    kxx = np.exp(g * cdist(X, X, "sqeuclidean"))
    kyy = np.exp(g * cdist(Y, Y, "sqeuclidean"))
    kxy = np.exp(g * cdist(X, Y, "sqeuclidean"))
    if not unbiased:
        return float(kxx.mean() + kyy.mean() - 2 * kxy.mean())
    within = (kxx.sum() - np.trace(kxx)) / (m * (m - 1)) + (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    if m == n:
        cross = 2 * (kxy.sum() - np.trace(kxy)) / (m * (m - 1))
    else:
        cross = 2 * kxy.mean()
    return float(within - cross)


def _psd_sqrt(mat):
    w, v = np.linalg.eigh(0.5 * (mat + mat.T))
    if w.min() < -EIG_TOL:
        raise NumericalError(f"matrix is indefinite (eigenvalue {w.min():.3g})")
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T, np.clip(w, 0, None)


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """Squared 2-Wasserstein distance between two Gaussians.

    ``tr sqrt(Sa Sb)`` is evaluated as ``tr sqrt(Sa^1/2 Sb Sa^1/2)``, whose
    argument is symmetric PSD, via eigendecompositions.
    """
    mu_a, mu_b = np.atleast_1d(a.mu), np.atleast_1d(b.mu)
    sa, sb = np.atleast_2d(a.sigma), np.atleast_2d(b.sigma)
    if mu_a.shape != mu_b.shape or sa.shape != sb.shape or sa.shape != (mu_a.size, mu_a.size):
        raise ShapeError("feature statistics have mismatched dimensions")
    root_a, _ = _psd_sqrt(sa)
    _psd_sqrt(sb)
    _, eig = _psd_sqrt(root_a @ sb @ root_a)
    diff = mu_a - mu_b
    value = diff @ diff + np.trace(sa) + np.trace(sb) - 2 * np.sqrt(eig).sum()
    return float(max(value, 0.0))


# --- feature extraction ---------------------------------------------------------

def _block_reduce(img, grid, fn):
    rows = np.array_split(np.arange(img.shape[0]), min(grid[0], img.shape[0]))
    cols = np.array_split(np.arange(img.shape[1]), min(grid[1], img.shape[1]))
    return np.array([[fn(img[np.ix_(r, c)]) for c in cols] for r in rows])


class PatchStatsExtractor:
    """Deterministic stand-in for a learned feature network.

    Features: patch means and variances on a coarse and a fine grid, the
    fraction of empty pixels per row band, and a histogram of vertical and
    horizontal range gradients.
    """

    extractor_id = "patch-stats-v1"

    def __init__(self, grids=((2, 8), (4, 16)), grad_bins=16):
        self.grids = grids
        self.grad_bins = grad_bins

    def __call__(self, img) -> np.ndarray:
        img = np.asarray(img.data if isinstance(img, RangeImage) else img, dtype=np.float64)
        img = img.reshape(img.shape[-2:])
        feats = []
        for grid in self.grids:
            feats.append(_block_reduce(img, grid, np.mean).ravel())
            feats.append(_block_reduce(img, grid, np.var).ravel())
        feats.append(_block_reduce(img == 0, (self.grids[-1][0], 1), np.mean).ravel())
        grads = np.concatenate([np.diff(img, axis=0).ravel(), np.diff(img, axis=1).ravel()])
        hist, _ = np.histogram(np.clip(grads, -0.5, 0.5), bins=self.grad_bins, range=(-0.5, 0.5))
        feats.append(hist / max(grads.size, 1))
        return np.concatenate(feats)


def pool_image(img, pool=(64, 64)) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return _block_reduce(img, pool, np.mean)


def evaluate(generated, reference, extractor=None, cfg: MetricConfig | None = None) -> MetricReport:
    """Compare two image sets: histogram JSD, pooled-image MMD and feature Frechet distance."""
    cfg = cfg or MetricConfig()
    extractor = extractor or PatchStatsExtractor()
    gen, ref = _pixels(generated), _pixels(reference)
    if not gen or not ref:
        raise EmptyInput("both image sets must be non-empty")
    j = jsd(intensity_histogram(gen, cfg.bins), intensity_histogram(ref, cfg.bins))
    pg = np.array([pool_image(p, cfg.pool).ravel() for p in gen])
    pr = np.array([pool_image(p, cfg.pool).ravel() for p in ref])
    if cfg.unbiased_mmd and (len(pg) < 2 or len(pr) < 2):
        mmd = mmd_rbf(pg, pr, cfg.bandwidth, unbiased=False)
    else:
        mmd = mmd_rbf(pg, pr, cfg.bandwidth, unbiased=cfg.unbiased_mmd)
    fg = np.array([extractor(p) for p in gen])
    fr = np.array([extractor(p) for p in ref])
    if len(fg) < 2 or len(fr) < 2:
        raise InsufficientSamples("Frechet distance needs at least two images per set")
    fd = frechet_distance(FeatureStats.from_features(fg), FeatureStats.from_features(fr))
    return MetricReport(j, mmd, fd, len(gen), len(ref),
                        getattr(extractor, "extractor_id", type(extractor).__name__), cfg.to_dict())
