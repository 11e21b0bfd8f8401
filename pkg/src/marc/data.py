"""Synthetic long-tailed datasets and batch sampling strategies."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass
class FeatureDataset:
    """Feature vectors with integer labels and per-class training counts."""

    features: np.ndarray  # (N, p) float64
    labels: np.ndarray  # (N,) int64 in [0, K)
    class_counts: np.ndarray  # (K,) int64
    name: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.class_counts = np.asarray(self.class_counts, dtype=np.int64)
        if len(self.features) != len(self.labels):
            raise InvalidInputError("features and labels disagree in length")
        counted = np.bincount(self.labels, minlength=len(self.class_counts))
        if not np.array_equal(counted, self.class_counts):
            raise InvalidInputError("class_counts do not match the labels")

    @property
    def num_samples(self):
        return len(self.labels)

    @property
    def num_classes(self):
        return len(self.class_counts)

    @property
    def feature_dim(self):
        return self.features.shape[1]


@dataclass
class LongTailSpec:
    """Recipe for a seeded Gaussian-mixture dataset with exponential class counts."""

    k: int
    dim: int
    n_max: int
    imbalance_factor: float
    class_separation: float
    noise_scale: float
    seed: int

    def __post_init__(self):
        if self.k < 2:
            raise InvalidInputError("need at least 2 classes")
        if self.imbalance_factor < 1:
            raise InvalidInputError("imbalance_factor must be >= 1")
        if self.n_max < 1:
            raise InvalidInputError("n_max must be >= 1")


def longtail_counts(k, n_max, imbalance_factor):
    """Exponential count profile: class j gets round(n_max * IF^(-j/(k-1)))."""
    j = np.arange(k)
    counts = np.round(n_max * imbalance_factor ** (-j / (k - 1))).astype(np.int64)
    if counts[-1] < 1:
        raise InvalidInputError(
            f"smallest class would have {counts[-1]} samples; "
            "reduce imbalance_factor or raise n_max"
        )
    return counts


def class_centers(k, dim, separation, seed):
    """Seeded class centers: `separation` times random unit directions.

    Keyed only by (k, dim, separation, seed) so a companion balanced split
    generated with a different sample seed but the same center seed shares
    the class geometry.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[0])
    dirs = rng.standard_normal((k, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return separation * dirs


def generate_longtail(spec, center_seed=None, name=None):
    """Draw a long-tailed dataset of isotropic Gaussians.

    `center_seed` overrides the seed used for center placement; pass the
    training spec's seed when generating a balanced test split so both
    splits share class centers while their sample noise stays independent.
    """
    counts = longtail_counts(spec.k, spec.n_max, spec.imbalance_factor)
    if center_seed is None:
        center_seed = spec.seed
    centers = class_centers(spec.k, spec.dim, spec.class_separation, center_seed)
    noise_rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(2)[1])
    features = np.empty((int(counts.sum()), spec.dim))
    labels = np.empty(int(counts.sum()), dtype=np.int64)
    row = 0
    for j, n_j in enumerate(counts):
        n_j = int(n_j)
        features[row:row + n_j] = centers[j] + spec.noise_scale * noise_rng.standard_normal(
            (n_j, spec.dim)
        )
        labels[row:row + n_j] = j
        row += n_j
    if name is None:
        name = f"longtail-k{spec.k}-if{spec.imbalance_factor:g}-seed{spec.seed}"
    return FeatureDataset(features, labels, counts, name=name)


def generate_balanced_test(spec, per_class, seed_offset=1_000_003):
    """Balanced companion split: `per_class` samples each, same class centers."""
    test_spec = LongTailSpec(
        spec.k, spec.dim, per_class, 1.0,
        spec.class_separation, spec.noise_scale, spec.seed + seed_offset,
    )
    return generate_longtail(
        test_spec, center_seed=spec.seed,
        name=f"balanced-k{spec.k}-m{per_class}-seed{spec.seed}",
    )


def instance_balanced_batches(ds, batch_size, seed):
    """One epoch of index batches: a seeded permutation of all N indices, chunked.

    Every instance appears exactly once, so class appearance frequency is
    proportional to class size.
    """
    if batch_size < 1:
        raise InvalidInputError("batch_size must be >= 1")
    if ds.num_samples == 0:
        raise InvalidInputError("dataset is empty")
    perm = np.random.default_rng(seed).permutation(ds.num_samples)
    return [perm[i:i + batch_size] for i in range(0, len(perm), batch_size)]


def class_balanced_batches(ds, batch_size, seed):
    """One epoch of batches where each draw picks a class uniformly, then an instance.

    Sampling is with replacement (tail classes are smaller than their
    per-class quota); epoch length matches the instance-balanced epoch.
    """
    if batch_size < 1:
        raise InvalidInputError("batch_size must be >= 1")
    if ds.num_samples == 0:
        raise InvalidInputError("dataset is empty")
    if np.any(ds.class_counts == 0):
        bad = int(np.flatnonzero(ds.class_counts == 0)[0])
        raise InvalidInputError(f"class {bad} is empty")
    rng = np.random.default_rng(seed)
    by_class = [np.flatnonzero(ds.labels == j) for j in range(ds.num_classes)]
    n = ds.num_samples
    classes = rng.integers(0, ds.num_classes, size=n)
    draws = np.empty(n, dtype=np.int64)
    for i, c in enumerate(classes):
        draws[i] = by_class[c][rng.integers(0, len(by_class[c]))]
    return [draws[i:i + batch_size] for i in range(0, n, batch_size)]
