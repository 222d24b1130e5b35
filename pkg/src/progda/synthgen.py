"""Synthetic open-set domain-shift problems.

Known classes are Gaussian clusters placed on a circle in the first two
feature dimensions; the remaining dimensions carry unit noise so that a
random projection mixes signal and noise. The target domain re-draws
the known clusters under a configurable shift (rotation, translation,
per-class scale jitter) and adds unknown-class samples from extra
clusters at twice the circle radius, separable in principle but absent
from the source label space.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .utils import round_half_up, stream

CIRCLE_RADIUS = 2.0
CLUSTER_STD = 0.55
UNKNOWN_STD = 0.55
AMBIENT_NOISE_STD = 1.0
UNKNOWN_RADIUS_FACTOR = 1.0


@dataclass(frozen=True)
class ShiftSpec:
    """Transform applied to the target domain's known-class clusters."""

    rotation_deg: float = 0.0
    translation: tuple[float, float] = (0.0, 0.0)
    scale_jitter: float = 0.0

    def __post_init__(self):
        if len(self.translation) != 2:
            raise ValueError("translation must have exactly 2 components")
        if self.scale_jitter < 0:
            raise ValueError("scale_jitter must be >= 0")


@dataclass(frozen=True)
class GenSpec:
    known_classes: int
    unknown_clusters: int
    feature_dim: int
    n_source: int
    n_target: int
    openness: float
    shift: ShiftSpec = field(default_factory=ShiftSpec)
    source_priors: tuple[float, ...] | None = None
    target_priors: tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.known_classes < 1:
            raise ValueError("known_classes must be positive")
        if self.unknown_clusters < 0:
            raise ValueError("unknown_clusters must be nonnegative")
        if self.feature_dim < 2:
            raise ValueError("feature_dim must be at least 2")
        if self.n_source < 1 or self.n_target < 1:
            raise ValueError("sample counts must be positive")
        if not 0.0 <= self.openness < 1.0:
            raise ValueError("openness must lie in [0, 1)")
        for name, priors in (("source", self.source_priors), ("target", self.target_priors)):
            if priors is not None:
                if len(priors) != self.known_classes:
                    raise ValueError(f"{name}_priors must have one entry per known class")
                if abs(sum(priors) - 1.0) > 1e-12:
                    raise ValueError(f"{name}_priors must sum to 1")
                if any(p < 0 for p in priors):
                    raise ValueError(f"{name}_priors must be nonnegative")

    @property
    def n_target_unknown(self) -> int:
        return round_half_up(self.openness * self.n_target)


@dataclass
class DomainPair:
    """A labeled source sample set and a target set with hidden labels.

    ``target_hidden_labels`` holds ground truth in 1..C+1 and is only
    consulted for evaluation; the training path sees features and ids.
    """

    source_features: np.ndarray
    source_labels: np.ndarray
    target_features: np.ndarray
    target_hidden_labels: np.ndarray
    target_ids: np.ndarray
    spec: GenSpec

    @property
    def num_classes(self) -> int:
        return self.spec.known_classes

    def source_indices_for_class(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.source_labels == label)


@dataclass
class EvalSet:
    features: np.ndarray
    hidden_labels: np.ndarray
    ids: np.ndarray


def _split_counts(total: int, priors, k: int) -> np.ndarray:
    """Per-class counts for `total` samples; rounding drift lands on the last class."""
    if priors is None:
        priors = np.full(k, 1.0 / k)
    counts = np.array([round_half_up(total * p) for p in priors], dtype=np.int64)
    counts[-1] += total - counts.sum()
    if counts[-1] < 0:
        raise ValueError("priors round to more samples than available")
    return counts


def class_means(spec: GenSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Configured 2-D cluster centers: (source known, target known, unknown)."""
    c = spec.known_classes
    angles = 2.0 * np.pi * np.arange(c) / c
    src = CIRCLE_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    theta = np.deg2rad(spec.shift.rotation_deg)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    tgt = src @ rot.T + np.asarray(spec.shift.translation)
    u = max(spec.unknown_clusters, 0)
    if u:
        uang = 2.0 * np.pi * (np.arange(u) + 0.5) / u
        unk = (UNKNOWN_RADIUS_FACTOR * CIRCLE_RADIUS) * np.stack(
            [np.cos(uang), np.sin(uang)], axis=1
        )
    else:
        unk = np.zeros((0, 2))
    return src, tgt, unk


def _cluster_samples(rng, center2d, count, d, std2d):
    x = np.empty((count, d))
    x[:, :2] = center2d + std2d * rng.standard_normal((count, 2))
    x[:, 2:] = AMBIENT_NOISE_STD * rng.standard_normal((count, d - 2))
    return x


def generate(spec: GenSpec) -> DomainPair:
    """Draw a full domain pair; a pure function of the spec."""
    if spec.openness > 0 and spec.unknown_clusters == 0:
        raise ValueError("openness > 0 requires at least one unknown cluster")

    c, d = spec.known_classes, spec.feature_dim
    src_means, tgt_means, unk_means = class_means(spec)
    jitter_rng = stream(spec.seed, "gen-jitter")
    scales = 1.0 + spec.shift.scale_jitter * jitter_rng.uniform(-1.0, 1.0, c)

    src_rng = stream(spec.seed, "gen-source")
    src_counts = _split_counts(spec.n_source, spec.source_priors, c)
    src_feats, src_labels = [], []
    for cls in range(c):
        src_feats.append(
            _cluster_samples(src_rng, src_means[cls], src_counts[cls], d, CLUSTER_STD)
        )
        src_labels.append(np.full(src_counts[cls], cls + 1, dtype=np.int64))

    n_unknown = spec.n_target_unknown
    n_known = spec.n_target - n_unknown
    tgt_rng = stream(spec.seed, "gen-target-known")
    tgt_counts = _split_counts(n_known, spec.target_priors, c)
    tgt_feats, tgt_labels = [], []
    theta = np.deg2rad(spec.shift.rotation_deg)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    for cls in range(c):
        base = src_means[cls] + scales[cls] * CLUSTER_STD * tgt_rng.standard_normal(
            (tgt_counts[cls], 2)
        )
        x = np.empty((tgt_counts[cls], d))
        x[:, :2] = base @ rot.T + np.asarray(spec.shift.translation)
        x[:, 2:] = AMBIENT_NOISE_STD * tgt_rng.standard_normal((tgt_counts[cls], d - 2))
        tgt_feats.append(x)
        tgt_labels.append(np.full(tgt_counts[cls], cls + 1, dtype=np.int64))

    if n_unknown:
        unk_rng = stream(spec.seed, "gen-target-unknown")
        unk_counts = _split_counts(n_unknown, None, spec.unknown_clusters)
        for u in range(spec.unknown_clusters):
            tgt_feats.append(
                _cluster_samples(unk_rng, unk_means[u], unk_counts[u], d, CLUSTER_STD)
            )
            tgt_labels.append(np.full(unk_counts[u], c + 1, dtype=np.int64))

    target_features = np.concatenate(tgt_feats, axis=0)
    target_labels = np.concatenate(tgt_labels)
    order = stream(spec.seed, "gen-shuffle").permutation(spec.n_target)

    return DomainPair(
        source_features=np.concatenate(src_feats, axis=0),
        source_labels=np.concatenate(src_labels),
        target_features=target_features[order],
        target_hidden_labels=target_labels[order],
        target_ids=np.arange(spec.n_target, dtype=np.int64),
        spec=spec,
    )


def holdout_split(pair: DomainPair, eval_fraction: float, seed: int) -> tuple[DomainPair, EvalSet]:
    """Split the target set into train/eval parts, stratified by hidden label."""
    if not 0.0 < eval_fraction < 1.0:
        raise ValueError("eval_fraction must lie strictly between 0 and 1")
    rng = stream(seed, "holdout")
    eval_mask = np.zeros(len(pair.target_ids), dtype=bool)
    labels = pair.target_hidden_labels
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if len(idx) < 2:
            raise ValueError(f"class {cls} has fewer than 2 target samples, cannot split")
        n_eval = round_half_up(len(idx) * eval_fraction)
        n_eval = min(max(n_eval, 1), len(idx) - 1)
        chosen = rng.choice(idx, size=n_eval, replace=False)
        eval_mask[chosen] = True

    train = DomainPair(
        source_features=pair.source_features,
        source_labels=pair.source_labels,
        target_features=pair.target_features[~eval_mask],
        target_hidden_labels=pair.target_hidden_labels[~eval_mask],
        target_ids=pair.target_ids[~eval_mask],
        spec=pair.spec,
    )
    evalset = EvalSet(
        features=pair.target_features[eval_mask],
        hidden_labels=pair.target_hidden_labels[eval_mask],
        ids=pair.target_ids[eval_mask],
    )
    return train, evalset


def export_csv(pair: DomainPair, path, eval_ids=None):
    """Write one row per sample: domain,split,hidden_label,f0..f{d-1}."""
    eval_ids = set() if eval_ids is None else set(int(i) for i in eval_ids)
    d = pair.spec.feature_dim
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["domain", "split", "hidden_label"] + [f"f{i}" for i in range(d)])
        for x, y in zip(pair.source_features, pair.source_labels):
            writer.writerow(["source", "train", int(y)] + [repr(float(v)) for v in x])
        for x, y, i in zip(pair.target_features, pair.target_hidden_labels, pair.target_ids):
            split = "eval" if int(i) in eval_ids else "train"
            writer.writerow(["target", split, int(y)] + [repr(float(v)) for v in x])


def with_seed(spec: GenSpec, seed: int) -> GenSpec:
    return replace(spec, seed=seed)
