"""Image-quality and identity metrics over pluggable feature embedders."""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import ContractError, DomainError, NumericError
from .gallery import downsample
from .image import UNIT, ImageBuffer
from .imageio import read_vector
from .rng import SeededRng

LUMA = np.array([0.2126, 0.7152, 0.0722])


def psnr(x: ImageBuffer, ref: ImageBuffer) -> float:
    """``10 log10(1 / MSE)`` for unit-linear images; ``inf`` when they match."""
    if x.shape != ref.shape:
        raise ContractError(f"shape mismatch: {x.shape} vs {ref.shape}")
    if x.range != UNIT or ref.range != UNIT:
        raise ContractError("psnr expects unit-linear images")
    mse = float(np.mean((x.data.astype(np.float64) - ref.data.astype(np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _as_features(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] == 0:
        raise DomainError(f"{name} must be a non-empty (n, d) feature array")
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{name} holds non-finite features")
    return a


def gaussian_fit(a) -> tuple[np.ndarray, np.ndarray]:
    """Mean and unbiased covariance, with ``1e-6 * trace / d`` added to the diagonal."""
    a = _as_features(a, "features")
    n, d = a.shape
    mu = a.mean(axis=0)
    if n > 1:
        centered = a - mu
        cov = centered.T @ centered / (n - 1)
    else:
        cov = np.zeros((d, d))
    cov = cov + (1e-6 * np.trace(cov) / d) * np.eye(d)
    return mu, cov


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((m + m.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def _trace_sqrt_product(s1: np.ndarray, s2: np.ndarray) -> float:
    """``Tr((S1 S2)^{1/2})`` through the symmetric form ``S1^{1/2} S2 S1^{1/2}``."""
    r = _psd_sqrt(s1)
    m = r @ s2 @ r
    vals = np.linalg.eigvalsh((m + m.T) / 2)
    floor = -1e-6 * max(1.0, float(np.abs(vals).max(initial=0.0)))
    if vals.min(initial=0.0) < floor:
        raise NumericError("covariance product has a significantly negative eigenvalue",
                           eigenvalue=float(vals.min()))
    return float(np.sqrt(np.clip(vals, 0.0, None)).sum())


def frechet_from_moments(mu1, s1, mu2, s2) -> float:
    diff = np.asarray(mu1) - np.asarray(mu2)
    fd = float(diff @ diff + np.trace(s1) + np.trace(s2) - 2.0 * _trace_sqrt_product(s1, s2))
    return max(fd, 0.0)


def frechet_distance(set_a, set_b) -> float:
    """Fréchet distance between Gaussian fits of two feature sets (FID form)."""
    a, b = _as_features(set_a, "set A"), _as_features(set_b, "set B")
    if a.shape[1] != b.shape[1]:
        raise ContractError(f"feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    return frechet_from_moments(*gaussian_fit(a), *gaussian_fit(b))


def polynomial_kernel(x, y) -> np.ndarray:
    """``(x . y / d + 1)**3`` for every row pair."""
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    return (x @ y.T / x.shape[1] + 1.0) ** 3


def mmd2_unbiased(x, y) -> float:
    m, n = len(x), len(y)
    kxx, kyy, kxy = polynomial_kernel(x, x), polynomial_kernel(y, y), polynomial_kernel(x, y)
    sxx = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    syy = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    return float(sxx + syy - 2.0 * kxy.mean())


def kernel_distance(set_a, set_b, subset_size: int = 100, n_subsets: int = 100,
                    rng: SeededRng | None = None, return_std: bool = False):
    """Mean unbiased polynomial-kernel MMD^2 over random subsets (KID form).

    With ``return_std`` also returns the standard error of that mean. When both
    sets hold the same samples, each subset pair is drawn disjointly from one
    permutation; independently drawn subsets would share points, and the
    shared ``k(x, x)`` terms bias the unbiased estimator negative.
    """
    a, b = _as_features(set_a, "set A"), _as_features(set_b, "set B")
    if subset_size < 2:
        raise DomainError("subset_size must be at least 2")
    if len(a) < subset_size or len(b) < subset_size:
        raise DomainError(f"both sets need at least subset_size={subset_size} samples")
    if a.shape[1] != b.shape[1]:
        raise ContractError(f"feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    if n_subsets < 1:
        raise DomainError("n_subsets must be at least 1")
    same = a.shape == b.shape and np.array_equal(a, b)
    if same and len(a) < 2 * subset_size:
        raise DomainError(f"comparing a set with itself needs at least 2 * subset_size={2 * subset_size} samples")
    rng = rng or SeededRng(0, "kid")
    est = np.empty(n_subsets)
    for i in range(n_subsets):
        r = rng.split(i)
        if same:
            perm = r.split("split").permutation(len(a))
            ia, ib = perm[:subset_size], perm[subset_size:2 * subset_size]
        else:
            ia = r.split("a").choice(len(a), subset_size, replace=False)
            ib = r.split("b").choice(len(b), subset_size, replace=False)
        est[i] = mmd2_unbiased(a[ia], b[ib])
    mean = float(est.mean())
    if not return_std:
        return mean
    se = float(est.std(ddof=1) / math.sqrt(n_subsets)) if n_subsets > 1 else math.nan
    return mean, se


class FeatureEmbedder(Protocol):
    dim: int

    def embed(self, img: ImageBuffer) -> np.ndarray:
        """Length-``dim`` finite feature vector."""


def cosine(u, v) -> float:
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise NumericError("cosine similarity of a zero-norm embedding")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def id_score(restored: ImageBuffer, gallery, embedder: FeatureEmbedder) -> float:
    """Mean cosine similarity between the restored image's embedding and each gallery embedding."""
    if len(gallery) == 0:
        raise DomainError("id_score needs a non-empty gallery")
    e = embedder.embed(restored)
    return float(np.mean([cosine(e, embedder.embed(g)) for g in gallery]))


class DefaultEmbedder:
    """Fixed, seeded stand-in for a face-recognition embedding.

    Luminance is area-averaged to 8 x 8, mean-centred and scaled to unit norm,
    then randomly projected; per-channel histograms of the image divided by
    its mean luminance are appended, centred on the uniform histogram. Both
    parts are invariant to a global illumination gain.
    """

    def __init__(self, dim: int = 64, grid: int = 8, bins: int = 8, seed: int = 0,
                 hist_weight: float = 0.5):
        self.grid, self.bins, self.seed, self.hist_weight = int(grid), int(bins), int(seed), float(hist_weight)
        self.proj_dim = int(dim)
        self.dim = self.proj_dim + 3 * self.bins
        g2 = self.grid * self.grid
        self.matrix = SeededRng(seed, "embedder").gaussian((self.proj_dim, g2)) / math.sqrt(self.proj_dim)

    def embed(self, img: ImageBuffer) -> np.ndarray:
        data = img.data.astype(np.float64)
        if data.shape[2] == 3:
            lum = data @ LUMA
        else:
            lum = data.mean(axis=2)
        patch = downsample(lum[..., None], self.grid).ravel()
        patch = patch - patch.mean()
        norm = np.linalg.norm(patch)
        head = self.matrix @ (patch / norm) if norm > 1e-12 else np.zeros(self.proj_dim)
        scale = lum.mean()
        rel = data / scale if scale > 1e-12 else data
        hists = []
        for c in range(min(3, data.shape[2])):
            h, _ = np.histogram(rel[..., c], bins=self.bins, range=(0.0, 2.5))
            hists.append(h / rel[..., c].size - 1.0 / self.bins)
        while len(hists) < 3:
            hists.append(np.zeros(self.bins))
        return np.concatenate([head, self.hist_weight * np.concatenate(hists)])


class RandomEmbedder:
    """Content-hashed random vectors: identical images agree, unrelated ones are near-orthogonal."""

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim, self.seed = int(dim), int(seed)

    def embed(self, img: ImageBuffer) -> np.ndarray:
        key = zlib.crc32(img.data.tobytes())
        return SeededRng(self.seed, "random-embed", key).gaussian(self.dim)


class FileEmbedder:
    """Precomputed embeddings stored as ``<dir>/<image stem>.pfm`` vectors."""

    def __init__(self, directory):
        self.directory = Path(directory)
        files = sorted(self.directory.glob("*.pfm"))
        if not files:
            raise DomainError(f"no embedding vectors in {self.directory}")
        self.dim = read_vector(files[0]).size

    def embed(self, img: ImageBuffer) -> np.ndarray:
        if img.source is None:
            raise ContractError("FileEmbedder needs images that remember their source path")
        vec = read_vector(self.directory / (Path(img.source).stem + ".pfm"))
        if vec.size != self.dim:
            raise ContractError(f"embedding for {img.source} has length {vec.size}, expected {self.dim}")
        return vec


def embed_all(images, embedder: FeatureEmbedder) -> np.ndarray:
    return np.stack([embedder.embed(img) for img in images])


@dataclass
class MetricReport:
    psnr: float | None
    fid: float
    kid: float
    id_score: float | None
    n_samples: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.fid < -1e-6:
            raise NumericError("negative Fréchet distance", fid=self.fid)
        self.fid = max(self.fid, 0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["psnr"] is not None and math.isinf(d["psnr"]):
            d["psnr"] = "inf"
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def evaluate(restored, reference=None, galleries=None, embedder: FeatureEmbedder | None = None,
             kid_subset: int | None = None, kid_subsets: int = 50, seed: int = 0) -> MetricReport:
    """Score a list of restored images.

    ``reference`` pairs one clean image with each restored image (PSNR) and is
    the reference distribution for FID/KID. ``galleries`` pairs one gallery
    (list of images) with each restored image for the ID score.
    """
    if not restored:
        raise DomainError("nothing to evaluate")
    embedder = embedder or DefaultEmbedder()
    feats_r = embed_all(restored, embedder)
    p = fid = kid = ids = None
    n = {"restored": len(restored)}
    if reference:
        if len(reference) != len(restored):
            raise ContractError("reference must pair one image with each restored image")
        p = float(np.mean([psnr(x, r) for x, r in zip(restored, reference)]))
        feats_ref = embed_all(reference, embedder)
        fid = frechet_distance(feats_r, feats_ref)
        m = kid_subset or min(len(restored), len(reference), 100)
        if kid_subset is None and feats_r.shape == feats_ref.shape and np.array_equal(feats_r, feats_ref):
            m = min(m, len(restored) // 2)
        kid = (kernel_distance(feats_r, feats_ref, m, kid_subsets, SeededRng(seed, "kid"))
               if m >= 2 else math.nan)
        n["reference"] = len(reference)
    if galleries is not None:
        if len(galleries) != len(restored):
            raise ContractError("galleries must pair one gallery with each restored image")
        ids = float(np.mean([id_score(x, g, embedder) for x, g in zip(restored, galleries)]))
        n["gallery"] = int(sum(len(g) for g in galleries))
    return MetricReport(p, math.nan if fid is None else fid, math.nan if kid is None else kid, ids, n,
                        {"embedder": type(embedder).__name__, "kid_subsets": kid_subsets, "seed": seed})
