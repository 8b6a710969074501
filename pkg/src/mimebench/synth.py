"""Synthetic desk-scale dataset generator.

Each class has a distinct periodic motion signature. Per-frame feature
vectors are built so that temporal context demonstrably helps a linear
temporal-convolution head:

  frame latent = class direction + sum_i A * confuser_i * sin(2*pi*t/P_i + phase)

The confuser directions span the class subspace and their periods all divide
32, so any 32-frame window sums them to exactly zero (the class direction
survives cleanly), while single frames are heavily corrupted in every
discriminative direction. Latents are embedded into D dimensions by a fixed
random projection plus Gaussian noise.

Joint coordinates get the same class frequencies as small oscillations around
a fixed stick-figure layout, so the graph head has signal too.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError
from .pose_data import (ClassTaxonomy, Detection, VideoManifestEntry,
                        save_detections, save_manifest, save_taxonomy)

IMAGE_SIZE = (320, 240)
FPS = 25.0
CONFUSER_PERIODS = (4, 8, 16)


@dataclass
class SyntheticSpec:
    num_classes: int = 5
    feature_dim: int = 64
    joints: int = 13
    length_range: tuple[int, int] = (60, 80)
    noise: float = 0.05
    videos_per_class: int = 40
    test_fraction: float = 0.25
    confuser_amplitude: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise InputError("need at least 2 classes")
        if self.feature_dim < self.num_classes:
            raise InputError("feature_dim must be >= num_classes")
        lo, hi = self.length_range
        if not 1 <= lo <= hi:
            raise InputError(f"bad length range {self.length_range}")

    @property
    def class_names(self) -> tuple[str, ...]:
        return tuple(f"action_{i:02d}" for i in range(self.num_classes))


@dataclass
class SyntheticVideo:
    video_id: str
    label: str
    label_index: int
    features: np.ndarray  # [L, D]
    detections: list[Detection] = field(default_factory=list)


def _base_pose(joints: int) -> np.ndarray:
    """Fixed stick-figure 2D layout centered in the image."""
    rng = np.random.default_rng(1234)  # layout constant across datasets
    w, h = IMAGE_SIZE
    xs = w / 2 + rng.uniform(-40, 40, joints)
    ys = np.linspace(h * 0.15, h * 0.85, joints) + rng.uniform(-8, 8, joints)
    return np.column_stack([xs, ys])


def _projection(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """Fixed D x C embedding with orthonormal columns."""
    m = rng.standard_normal((spec.feature_dim, spec.num_classes))
    q, _ = np.linalg.qr(m)
    return q


def _confusers(spec: SyntheticSpec, rng: np.random.Generator):
    """Random orthonormal directions in class space, one period each."""
    m = rng.standard_normal((spec.num_classes, spec.num_classes))
    q, _ = np.linalg.qr(m)
    periods = [CONFUSER_PERIODS[i % len(CONFUSER_PERIODS)]
               for i in range(spec.num_classes)]
    return q.T, periods


def generate_videos(spec: SyntheticSpec) -> list[SyntheticVideo]:
    rng = np.random.default_rng(spec.seed)
    projection = _projection(spec, rng)
    confusers, periods = _confusers(spec, rng)
    base = _base_pose(spec.joints)
    class_freqs = 0.2 + 0.15 * np.arange(spec.num_classes)  # pairwise distinct
    videos = []
    for ci, cname in enumerate(spec.class_names):
        for vi in range(spec.videos_per_class):
            length = int(rng.integers(spec.length_range[0],
                                      spec.length_range[1] + 1))
            t = np.arange(length)
            phases = rng.uniform(0, 2 * np.pi, len(periods))
            latent = np.zeros((length, spec.num_classes))
            latent[:, ci] = 1.0
            for v, period, phase in zip(confusers, periods, phases):
                latent += (spec.confuser_amplitude
                           * np.sin(2 * np.pi * t / period + phase)[:, None]
                           * v[None, :])
            features = latent @ projection.T
            features += spec.noise * rng.standard_normal(features.shape)

            joint_phase = rng.uniform(0, 2 * np.pi)
            sway = 12.0 * np.sin(class_freqs[ci] * t + joint_phase)
            detections = []
            for frame in range(length):
                joints2d = base.copy()
                joints2d[:, 0] += sway[frame] * np.linspace(-1, 1, spec.joints)
                joints2d += rng.normal(0, 1.0, joints2d.shape)
                x0, y0 = joints2d.min(axis=0) - 10
                x1, y1 = joints2d.max(axis=0) + 10
                detections.append(Detection(
                    frame_index=frame,
                    box=(float(x0), float(y0), float(x1), float(y1)),
                    score=float(np.clip(0.9 + rng.normal(0, 0.02), 0.0, 1.0)),
                    joints2d=joints2d,
                    joint_scores=np.clip(
                        0.8 + rng.normal(0, 0.05, spec.joints), 0.0, 1.0),
                    features=features[frame],
                ))
            videos.append(SyntheticVideo(
                video_id=f"{cname}_{vi:03d}", label=cname, label_index=ci,
                features=features, detections=detections))
    return videos


def split_videos(spec: SyntheticSpec, videos: list[SyntheticVideo]
                 ) -> tuple[list[SyntheticVideo], list[SyntheticVideo]]:
    """Per-class deterministic split: the last test_fraction of each class's
    videos are held out."""
    train, test = [], []
    n_test = max(1, int(round(spec.videos_per_class * spec.test_fraction)))
    for video in videos:
        idx = int(video.video_id.rsplit("_", 1)[1])
        (test if idx >= spec.videos_per_class - n_test else train).append(video)
    return train, test


def taxonomy_for(spec: SyntheticSpec) -> ClassTaxonomy:
    return ClassTaxonomy(classes=spec.class_names)


def manifest_entry(video: SyntheticVideo) -> VideoManifestEntry:
    duration = max(1.0, len(video.features) / FPS)
    return VideoManifestEntry(
        video_id=video.video_id,
        source_url=f"synthetic://{video.video_id}",
        interval=(0.0, duration),
        label=video.label,
        is_mime_artist=False,
        object_relevant=False,
        scene_relevant=False,
    )


def write_dataset(spec: SyntheticSpec, out_dir) -> None:
    """Write train/ and test/ detection directories, per-split manifests,
    and the taxonomy."""
    out = Path(out_dir)
    videos = generate_videos(spec)
    save_taxonomy(out / "taxonomy.json", taxonomy_for(spec))
    for split_name, split in zip(("train", "test"), split_videos(spec, videos)):
        split_dir = out / split_name
        split_dir.mkdir(parents=True, exist_ok=True)
        for video in split:
            save_detections(split_dir / f"{video.video_id}.jsonl",
                            video.detections)
        save_manifest(out / f"{split_name}_manifest.csv",
                      [manifest_entry(v) for v in split])
