"""Per-image color statistics and the two dataset-level stain models.

For each image and color space the statistics are the per-channel mean and
population standard deviation of the converted planes, giving one 6-vector
(mu1..3, sigma1..3) per image. Two corpus models are fitted over those
vectors:

* unimodal: independent Gaussians per variable (sample mean / sample std),
* gmm: a full-covariance Gaussian mixture (default 10 components) fitted by
  EM with k-means++ seeding, a 1e-6 diagonal regularization floor, and
  termination on mean per-point log-likelihood improvement.

Fits are deterministic for a fixed seed; the fitted mixture records its
log-likelihood trace so monotonicity can be audited.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .colorspace import ColorSpace, FloatPlanes, StainMatrix, default_stain_matrix, to_space
from .errors import (
    DegenerateComponent,
    InsufficientData,
    IoError,
    ModelMissingSpace,
    SchemaError,
    SpaceMismatch,
)
from .raster import RasterImage
from .rng import derive_rng

REG_FLOOR = 1e-6
DEFAULT_K = 10
DEFAULT_MAX_ITER = 200
DEFAULT_TOL = 1e-4

MODEL_VERSION = "1"
ALL_SPACES = (ColorSpace.HSV, ColorSpace.LAB, ColorSpace.HED)


@dataclass(frozen=True, eq=False)
class ChannelStats:
    """Per-image channel means and population standard deviations."""

    space: ColorSpace
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64).reshape(3)
        sigma = np.asarray(self.sigma, dtype=np.float64).reshape(3)
        if np.any(sigma < 0):
            raise ValueError(f"sigma must be non-negative, got {sigma}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    def as_vector(self) -> np.ndarray:
        """The 6-vector (mu1..3, sigma1..3) the corpus models are fitted on."""
        return np.concatenate([self.mu, self.sigma])


@dataclass(frozen=True, eq=False)
class UnimodalStainModel:
    """Independent Gaussian per statistics variable (RandStainNA)."""

    space: ColorSpace
    mean: np.ndarray  # (6,) variable means, order (mu1..3, sigma1..3)
    std: np.ndarray  # (6,) variable sample stds

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(6)
        std = np.asarray(self.std, dtype=np.float64).reshape(6)
        if np.any(std < 0):
            raise ValueError("variable std must be non-negative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)


@dataclass(frozen=True, eq=False)
class GmmStainModel:
    """Full-covariance Gaussian mixture over the 6 statistics variables."""

    space: ColorSpace
    weights: np.ndarray  # (k,)
    means: np.ndarray  # (k, 6)
    covariances: np.ndarray  # (k, 6, 6) symmetric, eigenvalues >= REG_FLOOR
    ll_trace: tuple = field(default=(), compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        k = w.shape[0]
        m = np.asarray(self.means, dtype=np.float64).reshape(k, 6)
        c = np.asarray(self.covariances, dtype=np.float64).reshape(k, 6, 6)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must be non-negative and sum to 1, got {w}")
        if not np.allclose(c, np.swapaxes(c, 1, 2), atol=1e-12, rtol=0):
            raise ValueError("covariances must be symmetric")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "covariances", c)

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    def mixture_mean(self) -> np.ndarray:
        """Analytic mean sum_k w_k mean_k of the mixture."""
        return self.weights @ self.means

    def mixture_variance(self) -> np.ndarray:
        """Analytic per-coordinate variance of the mixture."""
        second = self.weights @ (
            np.einsum("kii->ki", self.covariances) + self.means**2
        )
        return second - self.mixture_mean() ** 2


StainModel = Union[UnimodalStainModel, GmmStainModel]


def image_stats(
    image: RasterImage, space: ColorSpace, matrix: StainMatrix | None = None
) -> ChannelStats:
    """Exact population moments of the image converted into ``space``."""
    return stats_from_planes(to_space(image, space, matrix))


def stats_from_planes(planes: FloatPlanes) -> ChannelStats:
    """Population moments of already-converted planes (avoids reconversion)."""
    flat = planes.planes.reshape(3, -1)
    return ChannelStats(planes.space, flat.mean(axis=1), flat.std(axis=1))


def _stats_matrix(stats: Sequence[ChannelStats], space: ColorSpace) -> np.ndarray:
    for s in stats:
        if s.space is not space:
            raise SpaceMismatch(
                f"stats entry in {s.space.value} passed to a {space.value} fit"
            )
    return np.stack([s.as_vector() for s in stats])


def fit_unimodal(stats: Sequence[ChannelStats], space: ColorSpace) -> UnimodalStainModel:
    """Sample mean and sample std (ddof=1) of each variable across images."""
    if len(stats) < 2:
        raise InsufficientData(f"unimodal fit needs >= 2 images, got {len(stats)}")
    points = _stats_matrix(stats, space)
    return UnimodalStainModel(space, points.mean(axis=0), points.std(axis=0, ddof=1))


# ---------------------------------------------------------------------------
# EM for the full-covariance mixture

def _log_gaussian(points: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    d = points.shape[1]
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise DegenerateComponent(
            "component covariance not positive definite after regularization"
        ) from exc
    dev = solve_triangular(chol, (points - mean).T, lower=True)
    maha = np.einsum("ij,ij->j", dev, dev)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (d * np.log(2.0 * np.pi) + log_det + maha)


def _e_step(points, weights, means, covs):
    n, k = points.shape[0], weights.shape[0]
    log_prob = np.empty((n, k))
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    for j in range(k):
        log_prob[:, j] = log_w[j] + _log_gaussian(points, means[j], covs[j])
    total = logsumexp(log_prob, axis=1)
    resp = np.exp(log_prob - total[:, None])
    return resp, float(total.mean())


def _kmeans_init(points: np.ndarray, k: int, rng: np.random.Generator):
    """k-means++ seeding followed by 10 Lloyd iterations.

    Empty clusters are relocated to the point farthest from its assigned
    center, one distinct point per cluster per iteration.
    """
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers[j] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centers[j]) ** 2, axis=1))

    assign = np.zeros(n, dtype=np.intp)
    for _ in range(10):
        dist = np.sum((points[:, None, :] - centers[None]) ** 2, axis=2)
        assign = dist.argmin(axis=1)
        own = dist[np.arange(n), assign]
        far_order = np.argsort(own, kind="stable")[::-1]
        taken = 0
        for j in range(k):
            members = points[assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
            elif taken < n:
                centers[j] = points[far_order[taken]]
                taken += 1
    dist = np.sum((points[:, None, :] - centers[None]) ** 2, axis=2)
    return centers, dist.argmin(axis=1)


def fit_gmm(
    stats: Sequence[ChannelStats],
    space: ColorSpace,
    k: int = DEFAULT_K,
    *,
    seed: int,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> GmmStainModel:
    """EM fit of a k-component full-covariance mixture on the 6-dim points.

    Deterministic for a fixed seed; the rng stream is keyed by (seed, space
    index) so fitting the three spaces from one seed gives independent
    initializations. Terminates when the mean per-point log-likelihood
    improves by less than ``tol`` or after ``max_iter`` iterations; the
    per-iteration trace is kept on the returned model.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    points = _stats_matrix(stats, space)
    if points.shape[0] < k:
        raise InsufficientData(
            f"gmm fit needs >= {k} images for k={k}, got {points.shape[0]}"
        )
    rng = derive_rng(seed, ALL_SPACES.index(space))
    weights, means, covs, trace = _em(points, k, rng, max_iter, tol)
    return GmmStainModel(space, weights, means, covs, ll_trace=tuple(trace))


def _em(points, k, rng, max_iter, tol):
    n, d = points.shape
    eye = REG_FLOOR * np.eye(d)
    centers, assign = _kmeans_init(points, k, rng)
    means = centers.copy()
    covs = np.empty((k, d, d))
    global_cov = np.cov(points.T, bias=True).reshape(d, d)
    for j in range(k):
        members = points[assign == j]
        base = np.cov(members.T, bias=True).reshape(d, d) if len(members) else global_cov
        covs[j] = base + eye
    weights = np.full(k, 1.0 / k)

    trace = []
    ll_prev = -np.inf
    for _ in range(max_iter):
        resp, ll = _e_step(points, weights, means, covs)
        trace.append(ll)
        mass = resp.sum(axis=0)
        weights = mass / n
        for j in range(k):
            if mass[j] <= 1e-12:
                continue  # vanished component keeps its previous parameters
            mu = resp[:, j] @ points / mass[j]
            dev = points - mu
            cov = (resp[:, j][:, None] * dev).T @ dev / mass[j]
            means[j] = mu
            covs[j] = (cov + cov.T) / 2.0 + eye
        if ll - ll_prev < tol:
            break
        ll_prev = ll
    return weights, means, covs, trace


# ---------------------------------------------------------------------------
# Sampling

def _psd_factor(cov: np.ndarray) -> np.ndarray:
    """Cholesky factor, falling back to an eigen factor for semidefinite input."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(cov)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def sample_target_stats(model: StainModel, rng: np.random.Generator) -> ChannelStats:
    """Draw target channel statistics from a fitted model.

    Draw order: unimodal takes one vectorized normal draw over the 6
    variables; the mixture takes one uniform (component pick by cumulative
    weights) then one 6-dim standard-normal vector mapped through the
    component's covariance factor. Sampled sigmas are clamped at 0.
    """
    if isinstance(model, UnimodalStainModel):
        vec = rng.normal(model.mean, model.std)
    elif isinstance(model, GmmStainModel):
        u = rng.random()
        comp = min(int(np.searchsorted(np.cumsum(model.weights), u, side="right")),
                   model.k - 1)
        z = rng.standard_normal(6)
        vec = model.means[comp] + _psd_factor(model.covariances[comp]) @ z
    else:
        raise TypeError(f"not a stain model: {type(model).__name__}")
    return ChannelStats(model.space, vec[:3], np.clip(vec[3:], 0.0, None))


# ---------------------------------------------------------------------------
# Model file

@dataclass(frozen=True, eq=False)
class SpaceModels:
    """The unimodal and mixture models fitted for one color space."""

    unimodal: UnimodalStainModel
    gmm: GmmStainModel


@dataclass(frozen=True, eq=False)
class StainModelFile:
    """Dataset-level stain statistics: both model families for each space.

    On disk the file always carries exactly the HSV/LAB/HED blocks; partial
    in-memory instances are allowed (operations that need a space raise
    :class:`ModelMissingSpace`).
    """

    stain_matrix: StainMatrix
    subsample_fraction: float
    image_count: int
    spaces: Mapping[ColorSpace, SpaceModels]
    version: str = MODEL_VERSION

    def model_for(self, space: ColorSpace, variant: str) -> StainModel:
        """The ``variant`` ("unimodal" or "gmm") model for ``space``."""
        if space not in self.spaces:
            raise ModelMissingSpace(f"model file has no {space.value} block")
        pair = self.spaces[space]
        if variant == "unimodal":
            return pair.unimodal
        if variant == "gmm":
            return pair.gmm
        raise ValueError(f"unknown variant {variant!r}")

    def require_all_spaces(self):
        for space in ALL_SPACES:
            if space not in self.spaces:
                raise ModelMissingSpace(f"model file has no {space.value} block")


def _floats(values) -> list:
    return np.asarray(values, dtype=np.float64).tolist()


def model_to_dict(model_file: StainModelFile) -> dict:
    spaces = {}
    for space in ALL_SPACES:
        if space not in model_file.spaces:
            raise SchemaError(f"model file must contain {space.value}")
        pair = model_file.spaces[space]
        spaces[space.value] = {
            "unimodal": {
                "mean": _floats(pair.unimodal.mean),
                "std": _floats(pair.unimodal.std),
            },
            "gmm": {
                "k": pair.gmm.k,
                "weights": _floats(pair.gmm.weights),
                "means": _floats(pair.gmm.means),
                "covariances": _floats(pair.gmm.covariances),
            },
        }
    return {
        "version": model_file.version,
        "stain_matrix": model_file.stain_matrix.to_flat(),
        "subsample_fraction": float(model_file.subsample_fraction),
        "image_count": int(model_file.image_count),
        "spaces": spaces,
    }


def model_from_dict(data: dict) -> StainModelFile:
    if not isinstance(data, dict):
        raise SchemaError("model file must be a JSON object")
    if data.get("version") != MODEL_VERSION:
        raise SchemaError(f"unsupported model version {data.get('version')!r}")
    try:
        matrix = StainMatrix.from_flat(data["stain_matrix"])
        spaces_raw = data["spaces"]
        spaces = {}
        for space in ALL_SPACES:
            if space.value not in spaces_raw:
                raise SchemaError(f"model file missing {space.value} block")
            block = spaces_raw[space.value]
            uni = UnimodalStainModel(
                space,
                np.asarray(block["unimodal"]["mean"], dtype=np.float64),
                np.asarray(block["unimodal"]["std"], dtype=np.float64),
            )
            g = block["gmm"]
            gmm = GmmStainModel(
                space,
                np.asarray(g["weights"], dtype=np.float64),
                np.asarray(g["means"], dtype=np.float64),
                np.asarray(g["covariances"], dtype=np.float64),
            )
            if gmm.k != int(g["k"]):
                raise SchemaError("gmm k does not match its weights length")
            spaces[space] = SpaceModels(uni, gmm)
        return StainModelFile(
            stain_matrix=matrix,
            subsample_fraction=float(data["subsample_fraction"]),
            image_count=int(data["image_count"]),
            spaces=spaces,
        )
    except SchemaError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed model file: {exc}") from exc


def save_model(model_file: StainModelFile, path) -> None:
    """Write the model as JSON; floats round-trip exactly."""
    payload = model_to_dict(model_file)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_model(path) -> StainModelFile:
    """Read a model JSON written by :func:`save_model`."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path} is not valid JSON: {exc}") from exc
    return model_from_dict(data)


# ---------------------------------------------------------------------------
# Corpus subsampling

def subsample_count(n: int, fraction: float) -> int:
    """round(n * fraction), half away from zero, minimum 1 for nonempty input."""
    if n <= 0:
        return 0
    return max(1, int(np.floor(n * fraction + 0.5)))


def reservoir_indices(n: int, count: int, rng: np.random.Generator) -> list[int]:
    """Algorithm-R reservoir selection of ``count`` of ``n`` indices, sorted."""
    count = min(count, n)
    chosen = list(range(count))
    for i in range(count, n):
        j = int(rng.integers(0, i + 1))
        if j < count:
            chosen[j] = i
    return sorted(chosen)
