"""Synthetic data generation.

Stands in for speech corpora at desk scale: class-conditional Gaussian
feature frames (optionally multi-cluster per class, which makes narrow
networks underfit) and keyword posterior/feature streams with labelled
keyword positions plus a keyword-free environment stream.

Class 0 is filler; classes 1..num_classes-1 are the keyword units in order.
All generators are pure functions of (spec, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kws import PosteriorStream
from .nn import FrameDataset


@dataclass
class KwsStreamSpec:
    unit_duration: int = 16
    gap_min: int = 60
    gap_max: int = 120
    keywords_per_stream: int = 5
    num_test_streams: int = 4
    environment_frames: int = 36000
    environment_bursts: int = 20
    frame_period: float = 0.01
    peak: float = 0.95

    def __post_init__(self):
        if self.unit_duration < 1 or self.gap_min < 1 or self.gap_max < self.gap_min:
            raise ValueError("durations must be positive and gap_max >= gap_min")
        if not 0.0 < self.peak <= 1.0:
            raise ValueError("peak must be in (0, 1]")
        if self.frame_period <= 0:
            raise ValueError("frame_period must be positive")


@dataclass
class SyntheticSpec:
    feature_dim: int = 40
    num_classes: int = 3
    clusters_per_class: int = 1
    mean_scale: float = 1.0
    noise_scale: float = 0.5
    frames_per_class: int = 2000
    test_frames_per_class: int = 500
    kws: KwsStreamSpec = field(default_factory=KwsStreamSpec)
    seed: int = 0
    means: np.ndarray | None = None  # (num_classes, clusters_per_class, feature_dim)

    def __post_init__(self):
        if self.feature_dim < 1 or self.num_classes < 2 or self.clusters_per_class < 1:
            raise ValueError("dims, classes and clusters must be positive")
        if self.frames_per_class < 1:
            raise ValueError("frames_per_class must be positive")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if self.means is not None:
            self.means = np.asarray(self.means, dtype=np.float64)
            want = (self.num_classes, self.clusters_per_class, self.feature_dim)
            if self.means.shape != want:
                raise ValueError(f"means must have shape {want}")


def class_means(spec: SyntheticSpec) -> np.ndarray:
    """Cluster centers, drawn once from the spec seed (shared by the frame
    dataset and the stream features) unless given explicitly."""
    if spec.means is not None:
        return spec.means
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    return rng.normal(
        0.0, spec.mean_scale, size=(spec.num_classes, spec.clusters_per_class, spec.feature_dim)
    )


def _sample_frames(spec, means, classes, rng):
    clusters = rng.integers(0, spec.clusters_per_class, size=len(classes))
    feats = means[classes, clusters]
    if spec.noise_scale > 0:
        feats = feats + rng.normal(0.0, spec.noise_scale, size=feats.shape)
    else:
        feats = feats.copy()
    return feats


def gen_frame_dataset(
    spec: SyntheticSpec, frames_per_class: int | None = None, seed: int | None = None
) -> FrameDataset:
    """Class-conditional Gaussian frames, shuffled. The seed override allows
    disjoint train/test splits that share the same cluster centers."""
    means = class_means(spec)
    count = spec.frames_per_class if frames_per_class is None else frames_per_class
    rng = np.random.Generator(np.random.PCG64(spec.seed + 1 if seed is None else seed))
    labels = np.repeat(np.arange(spec.num_classes), count)
    feats = _sample_frames(spec, means, labels, rng)
    order = rng.permutation(len(labels))
    return FrameDataset(feats[order], labels[order], spec.num_classes)


@dataclass
class GeneratedStream:
    stream_id: str
    posteriors: PosteriorStream
    features: np.ndarray
    frame_classes: np.ndarray


@dataclass
class KwsStreamSet:
    test: list[GeneratedStream]
    labels: list[tuple[str, int]]  # (stream_id, keyword end frame)
    environment: GeneratedStream


def _posteriors_for_classes(classes: np.ndarray, num_classes: int, peak: float) -> np.ndarray:
    rest = (1.0 - peak) / (num_classes - 1)
    probs = np.full((len(classes), num_classes), rest)
    probs[np.arange(len(classes)), classes] = peak
    return probs


def _finish_stream(spec, means, classes, rng, stream_id):
    classes = np.asarray(classes, dtype=np.int64)
    probs = _posteriors_for_classes(classes, spec.num_classes, spec.kws.peak)
    feats = _sample_frames(spec, means, classes, rng)
    return GeneratedStream(
        stream_id,
        PosteriorStream(probs, spec.kws.frame_period),
        feats,
        classes,
    )


def gen_kws_streams(spec: SyntheticSpec) -> KwsStreamSet:
    """Test streams with embedded keywords (unit classes 1..n in order,
    separated by filler gaps) plus an environment stream of filler broken by
    confusable single-unit bursts that can never complete the keyword."""
    ks = spec.kws
    unit_count = spec.num_classes - 1
    means = class_means(spec)
    rng = np.random.Generator(np.random.PCG64(spec.seed + 2))

    test = []
    labels = []
    for si in range(ks.num_test_streams):
        sid = f"s{si:03d}"
        classes: list[int] = []
        for _ in range(ks.keywords_per_stream):
            classes.extend([0] * int(rng.integers(ks.gap_min, ks.gap_max + 1)))
            for unit in range(1, unit_count + 1):
                classes.extend([unit] * ks.unit_duration)
            labels.append((sid, len(classes) - 1))
        classes.extend([0] * int(rng.integers(ks.gap_min, ks.gap_max + 1)))
        test.append(_finish_stream(spec, means, classes, rng, sid))

    env_classes = np.zeros(ks.environment_frames, dtype=np.int64)
    if ks.environment_bursts > 0:
        slot = ks.environment_frames // ks.environment_bursts
        if slot < ks.unit_duration + 2 * ks.gap_min:
            raise ValueError("environment too short for the requested bursts")
        for b in range(ks.environment_bursts):
            unit = int(rng.integers(1, unit_count + 1))
            lo = b * slot + ks.gap_min
            hi = (b + 1) * slot - ks.unit_duration - ks.gap_min
            start = int(rng.integers(lo, max(lo + 1, hi)))
            env_classes[start : start + ks.unit_duration] = unit
    environment = _finish_stream(spec, means, env_classes, rng, "environment")
    return KwsStreamSet(test, labels, environment)
