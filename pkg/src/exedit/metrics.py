"""Evaluation metrics over frozen-encoder features: Frechet distance between
feature distributions, a KNN authenticity score per image, and cosine
similarity between the edited region and the reference."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .encoder import ENCODER_INPUT_SIZE, MODE_BOTTLENECK, ToyImageEncoder, encode_reference
from .errors import ParameterError
from .imgio import resize_image
from .masks import bbox_of_mask
from .sampling import GuidanceConfig, edit_image
from .training import EditModel

log = logging.getLogger(__name__)

DEFAULT_KNN_K = 5


@dataclass
class FeatureSet:
    """N x D matrix of global embeddings plus a provenance tag."""

    features: np.ndarray
    tag: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ParameterError(f"features must be 2-D, got shape {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise ParameterError("features contain non-finite values")

    @property
    def n(self) -> int:
        return self.features.shape[0]


@dataclass
class MetricsReport:
    """Benchmark aggregate; field order mirrors the FID / QS / similarity triple."""

    fid: float
    quality_score: float
    similarity_score: float
    n_images: int
    n_failed: int = 0

    def to_dict(self) -> dict:
        return {
            "fid": self.fid,
            "quality_score": self.quality_score,
            "similarity_score": self.similarity_score,
            "n_images": self.n_images,
            "n_failed": self.n_failed,
        }

    def to_text(self) -> str:
        lines = [f"{k}={v}" for k, v in self.to_dict().items()]
        return "\n".join(lines) + "\n"


def _global_embedding(encoder: ToyImageEncoder, image: np.ndarray) -> np.ndarray:
    return encode_reference(encoder, image, MODE_BOTTLENECK)[0].astype(np.float64)


def extract_features(encoder: ToyImageEncoder, images: list[np.ndarray], tag: str = "") -> FeatureSet:
    """One global embedding per image, in input order."""
    if not images:
        raise ParameterError("empty image list")
    return FeatureSet(np.stack([_global_embedding(encoder, im) for im in images]), tag=tag)


def _sqrt_psd(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def _frechet_from_moments(
    mu_a: np.ndarray, cov_a: np.ndarray, mu_b: np.ndarray, cov_b: np.ndarray
) -> tuple[float, bool]:
    """Frechet distance between Gaussians, with the cross term computed from
    the eigenvalues of cov_a^(1/2) cov_b cov_a^(1/2) (clamped at zero)."""
    a_half = _sqrt_psd(cov_a)
    cross = a_half @ cov_b @ a_half
    vals = np.clip(np.linalg.eigvalsh(cross), 0.0, None)
    value = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.sum(np.sqrt(vals)))
    clamped = value < 0
    return (0.0 if clamped else value), clamped


def fid(a: FeatureSet, b: FeatureSet) -> float:
    """Frechet distance between the Gaussian fits of two feature sets."""
    if a.n < 2 or b.n < 2:
        raise ParameterError(f"FID needs at least 2 samples per set, got {a.n} and {b.n}")
    mu_a, mu_b = a.features.mean(axis=0), b.features.mean(axis=0)
    cov_a = np.cov(a.features, rowvar=False)
    cov_b = np.cov(b.features, rowvar=False)
    cov_a = np.atleast_2d(cov_a)
    cov_b = np.atleast_2d(cov_b)
    value, clamped = _frechet_from_moments(mu_a, cov_a, mu_b, cov_b)
    if clamped:
        log.warning("FID came out negative from numerical error; clamped to 0")
    return value


def knn_distance_score(real_features: np.ndarray, query: np.ndarray, k: int) -> float:
    """Negative mean Euclidean distance to the k nearest real features."""
    real_features = np.asarray(real_features, dtype=np.float64)
    if real_features.ndim == 1:
        real_features = real_features[:, None]
    query = np.atleast_1d(np.asarray(query, dtype=np.float64))
    if k < 1 or k > real_features.shape[0]:
        raise ParameterError(f"k must be in [1, {real_features.shape[0]}], got {k}")
    dists = np.linalg.norm(real_features - query[None, :], axis=1)
    nearest = np.sort(dists)[:k]
    return float(-nearest.mean())


def quality_score(
    encoder: ToyImageEncoder, real: FeatureSet, image: np.ndarray, k: int = DEFAULT_KNN_K
) -> float:
    """Authenticity of a single image as KNN feature density against the real pool."""
    return knn_distance_score(real.features, _global_embedding(encoder, image), k)


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    denom = np.linalg.norm(u) * np.linalg.norm(v)
    if denom == 0:
        raise ParameterError("cosine similarity undefined for zero vectors")
    return float(np.dot(u, v) / denom)


def similarity_score(
    encoder: ToyImageEncoder,
    edited: np.ndarray,
    mask: np.ndarray,
    reference: np.ndarray,
    feature_fn=None,
) -> float:
    """Cosine similarity between embeddings of the edited region and the reference.

    Crops the mask's bounding rectangle from the edited image; both crop and
    reference go through the shared resize-and-encode path. `feature_fn` is a
    test hook replacing the encoder embedding.
    """
    mask = np.asarray(mask)
    if mask.sum() == 0:
        raise ParameterError("similarity_score needs a non-empty mask")
    box = bbox_of_mask(mask)
    crop = np.asarray(edited)[box.y : box.y + box.h, box.x : box.x + box.w]
    # A mask crop may be smaller than a standalone image; bring it to the
    # encoder input size before embedding.
    crop = resize_image(crop.astype(np.float32), (ENCODER_INPUT_SIZE, ENCODER_INPUT_SIZE))
    embed = feature_fn if feature_fn is not None else (lambda im: _global_embedding(encoder, im))
    return cosine_similarity(embed(crop), embed(np.asarray(reference)))


def evaluate_benchmark(
    model: EditModel,
    cases: list[tuple[np.ndarray, np.ndarray, np.ndarray]],
    g: GuidanceConfig,
    real_pool: list[np.ndarray],
    knn_k: int = DEFAULT_KNN_K,
) -> MetricsReport:
    """Edit every (source, mask, reference) case and aggregate the metric triple.

    Case i runs with seed g.seed + i, so a fixed config is fully reproducible.
    Per-case failures are collected; the report counts them and aggregates over
    the successes only.
    """
    if not cases:
        raise ParameterError("no benchmark cases")
    if not real_pool:
        raise ParameterError("empty real pool")

    real = extract_features(model.encoder, real_pool, tag="real")
    edits: list[np.ndarray] = []
    sims: list[float] = []
    failures = 0
    for i, (source, mask, reference) in enumerate(cases):
        try:
            out = edit_image(model, source, mask, reference, replace(g, seed=g.seed + i))
            sims.append(similarity_score(model.encoder, out, mask, reference))
            edits.append(out)
        except Exception as exc:
            failures += 1
            log.warning("benchmark case %d failed: %s", i, exc)

    if len(edits) < 2:
        raise ParameterError(f"too few successful edits ({len(edits)}) to aggregate metrics")

    edit_feats = extract_features(model.encoder, edits, tag="edits")
    qs = [knn_distance_score(real.features, f, knn_k) for f in edit_feats.features]
    return MetricsReport(
        fid=fid(edit_feats, real),
        quality_score=float(np.mean(qs)),
        similarity_score=float(np.mean(sims)),
        n_images=len(edits),
        n_failed=failures,
    )
