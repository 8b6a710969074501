"""Data model and on-disk formats for detections, skeletons and manifests.

Interchange formats:
  detections: JSON-lines, one detection per line
  manifest:   CSV with header video_id,source_url,start,end,label,
              is_mime_artist,object_relevant,scene_relevant
  taxonomy:   JSON with "classes", "object_size", "superclasses"

All loaded objects are immutable after load and safe to share across threads.
Missing 3D joints / features are explicit None, never zero-filled.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, SchemaError, TaxonomyError

OBJECT_SIZE_LABELS = ("none_or_small", "large")


@dataclass(frozen=True)
class Detection:
    """One person candidate in one frame.

    joints2d may fall outside image bounds: upstream pose estimators produce
    full-body estimates even for truncated people.
    """
    frame_index: int
    box: tuple[float, float, float, float]  # x_min, y_min, x_max, y_max
    score: float
    joints2d: np.ndarray          # [J, 2] pixel coordinates
    joint_scores: np.ndarray      # [J]
    joints3d: np.ndarray | None = None   # [J, 3] root-relative meters
    features: np.ndarray | None = None   # [D]

    def __post_init__(self):
        x0, y0, x1, y1 = self.box
        if self.frame_index < 0:
            raise ValueError(f"negative frame index {self.frame_index}")
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"degenerate box {self.box}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        if self.joints2d.shape != (self.joint_count, 2):
            raise ValueError("joints2d must be J x 2")
        if self.joints3d is not None and self.joints3d.shape != (self.joint_count, 3):
            raise ValueError("joints3d must be J x 3")

    @property
    def joint_count(self) -> int:
        return len(self.joint_scores)


@dataclass(frozen=True)
class Skeleton:
    """Joint layout: names plus a connected tree of (parent, child) edges."""
    joint_names: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        j = self.joint_count
        if len(self.edges) != j - 1:
            raise ValueError(f"{len(self.edges)} edges cannot form a tree over {j} joints")
        seen = {0}
        adjacency = {i: [] for i in range(j)}
        for a, b in self.edges:
            adjacency[a].append(b)
            adjacency[b].append(a)
        stack = [0]
        while stack:
            node = stack.pop()
            for other in adjacency[node]:
                if other not in seen:
                    seen.add(other)
                    stack.append(other)
        if len(seen) != j:
            raise ValueError("skeleton edges do not connect all joints")

    @property
    def joint_count(self) -> int:
        return len(self.joint_names)


def lcr13_skeleton() -> Skeleton:
    """13-keypoint layout with a single head keypoint."""
    names = ("head", "neck", "left_shoulder", "right_shoulder",
             "left_elbow", "right_elbow", "left_wrist", "right_wrist",
             "left_hip", "right_hip", "left_knee", "right_knee", "pelvis")
    edges = ((0, 1), (1, 2), (1, 3), (2, 4), (3, 5), (4, 6), (5, 7),
             (1, 12), (12, 8), (12, 9), (8, 10), (9, 11))
    return Skeleton(names, edges)


def coco18_skeleton() -> Skeleton:
    """18-keypoint layout with 5 head keypoints (nose, eyes, ears)."""
    names = ("nose", "neck", "right_shoulder", "right_elbow", "right_wrist",
             "left_shoulder", "left_elbow", "left_wrist", "right_hip",
             "right_knee", "right_ankle", "left_hip", "left_knee",
             "left_ankle", "right_eye", "left_eye", "right_ear", "left_ear")
    edges = ((0, 1), (1, 2), (2, 3), (3, 4), (1, 5), (5, 6), (6, 7),
             (1, 8), (8, 9), (9, 10), (1, 11), (11, 12), (12, 13),
             (0, 14), (0, 15), (14, 16), (15, 17))
    return Skeleton(names, edges)


@dataclass(frozen=True)
class NormalizedJoint:
    """Joint coordinate scaled to [-0.5, 0.5] for in-image pixels, plus score.

    Out-of-image joints keep their (unclamped) value, so |x| or |y| may
    exceed 0.5.
    """
    x: float
    y: float
    s: float


def normalize_joints(det: Detection, image_size: tuple[int, int]) -> list[NormalizedJoint]:
    """Map pixel coordinates to [-0.5, 0.5] per axis; no clamping."""
    w, h = image_size
    if w <= 0 or h <= 0:
        raise ValueError(f"non-positive image size {image_size}")
    out = []
    for (px, py), s in zip(det.joints2d, det.joint_scores):
        out.append(NormalizedJoint(px / w - 0.5, py / h - 0.5, float(s)))
    return out


def denormalize_joints(joints: list[NormalizedJoint],
                       image_size: tuple[int, int]) -> np.ndarray:
    """Exact inverse of normalize_joints given the same image size."""
    w, h = image_size
    return np.array([[(j.x + 0.5) * w, (j.y + 0.5) * h] for j in joints])


# ---------------------------------------------------------------------------
# detections file format
# ---------------------------------------------------------------------------

def _detection_to_json(det: Detection) -> dict:
    return {
        "frame": det.frame_index,
        "box": list(det.box),
        "score": det.score,
        "joints2d": det.joints2d.tolist(),
        "joint_scores": det.joint_scores.tolist(),
        "joints3d": None if det.joints3d is None else det.joints3d.tolist(),
        "features": None if det.features is None else det.features.tolist(),
    }


def _detection_from_json(obj: dict) -> Detection:
    return Detection(
        frame_index=int(obj["frame"]),
        box=tuple(float(v) for v in obj["box"]),
        score=float(obj["score"]),
        joints2d=np.array(obj["joints2d"], dtype=np.float64),
        joint_scores=np.array(obj["joint_scores"], dtype=np.float64),
        joints3d=None if obj.get("joints3d") is None
        else np.array(obj["joints3d"], dtype=np.float64),
        features=None if obj.get("features") is None
        else np.array(obj["features"], dtype=np.float64),
    )


def save_detections(path, detections):
    """Write detections (any iterable) as JSON-lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for det in detections:
            fh.write(json.dumps(_detection_to_json(det)) + "\n")


def load_detections(path, expected_feature_dim: int | None = None
                    ) -> dict[int, list[Detection]]:
    """Load a detections file grouped by frame.

    Frames are sorted ascending; within a frame, detections are sorted by
    descending score (stable, so file order breaks ties).
    """
    by_frame: dict[int, list[Detection]] = {}
    joint_count = None
    feature_dim = expected_feature_dim
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                det = _detection_from_json(obj)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad detection: {exc}", path=path, line=lineno)
            if joint_count is None:
                joint_count = det.joint_count
            elif det.joint_count != joint_count:
                raise SchemaError(
                    f"{path}:{lineno}: joint count {det.joint_count} != {joint_count}")
            if det.features is not None:
                if feature_dim is None:
                    feature_dim = len(det.features)
                elif len(det.features) != feature_dim:
                    raise SchemaError(
                        f"{path}:{lineno}: feature dim {len(det.features)} != {feature_dim}")
            by_frame.setdefault(det.frame_index, []).append(det)
    ordered = {}
    for frame in sorted(by_frame):
        dets = by_frame[frame]
        dets.sort(key=lambda d: -d.score)  # stable: ties keep file order
        ordered[frame] = dets
    return ordered


# ---------------------------------------------------------------------------
# manifest and taxonomy
# ---------------------------------------------------------------------------

MANIFEST_FIELDS = ("video_id", "source_url", "start", "end", "label",
                   "is_mime_artist", "object_relevant", "scene_relevant")


@dataclass(frozen=True)
class VideoManifestEntry:
    video_id: str
    source_url: str
    interval: tuple[float, float]
    label: str
    is_mime_artist: bool
    object_relevant: bool
    scene_relevant: bool

    def __post_init__(self):
        start, end = self.interval
        if not 0 <= start < end:
            raise ValueError(f"bad interval {self.interval}")


@dataclass(frozen=True)
class ClassTaxonomy:
    """Ordered class list (defines indices) with per-class annotations."""
    classes: tuple[str, ...]
    object_size: dict[str, str] = field(default_factory=dict)
    superclasses: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.classes)) != len(self.classes):
            raise TaxonomyError("duplicate class names")
        if list(self.classes) != sorted(self.classes):
            raise TaxonomyError("classes must be in lexicographic order")
        for name, size in self.object_size.items():
            if size not in OBJECT_SIZE_LABELS:
                raise TaxonomyError(f"unknown object size {size!r} for {name!r}")

    def class_index(self, name: str) -> int:
        try:
            return self.classes.index(name)
        except ValueError:
            raise TaxonomyError(f"unknown class {name!r}")

    def superclass_of(self, name: str) -> str:
        # classes absent from any declared group form their own superclass
        return self.superclasses.get(name, name)

    @property
    def superclass_names(self) -> tuple[str, ...]:
        return tuple(sorted({self.superclass_of(c) for c in self.classes}))


def _parse_bool(value: str, path, lineno) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes"):
        return True
    if v in ("0", "false", "no"):
        return False
    raise ParseError(f"bad boolean {value!r}", path=path, line=lineno)


def load_manifest(path, taxonomy: ClassTaxonomy | None = None,
                  max_duration: float = 10.0, min_duration: float = 1.0
                  ) -> list[VideoManifestEntry]:
    """Load and validate a manifest CSV.

    Labels are checked against the taxonomy when one is given. Clip durations
    must lie in [min_duration, max_duration] seconds; pass min_duration=0 and
    max_duration=inf to disable.
    """
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != MANIFEST_FIELDS:
            raise SchemaError(
                f"{path}: manifest header must be {','.join(MANIFEST_FIELDS)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                start, end = float(row["start"]), float(row["end"])
            except ValueError:
                raise ParseError("malformed interval", path=path, line=lineno)
            if taxonomy is not None and row["label"] not in taxonomy.classes:
                raise TaxonomyError(
                    f"{path}:{lineno}: unknown class label {row['label']!r}")
            duration = end - start
            if not min_duration <= duration <= max_duration:
                raise SchemaError(
                    f"{path}:{lineno}: clip duration {duration} outside "
                    f"[{min_duration}, {max_duration}]")
            entries.append(VideoManifestEntry(
                video_id=row["video_id"],
                source_url=row["source_url"],
                interval=(start, end),
                label=row["label"],
                is_mime_artist=_parse_bool(row["is_mime_artist"], path, lineno),
                object_relevant=_parse_bool(row["object_relevant"], path, lineno),
                scene_relevant=_parse_bool(row["scene_relevant"], path, lineno),
            ))
    return entries


def save_manifest(path, entries: list[VideoManifestEntry]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIELDS)
        for e in entries:
            writer.writerow([
                e.video_id, e.source_url, e.interval[0], e.interval[1], e.label,
                str(e.is_mime_artist).lower(),
                str(e.object_relevant).lower(),
                str(e.scene_relevant).lower(),
            ])


def load_taxonomy(path) -> ClassTaxonomy:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    try:
        return ClassTaxonomy(
            classes=tuple(obj["classes"]),
            object_size=dict(obj.get("object_size", {})),
            superclasses=dict(obj.get("superclasses", {})),
        )
    except KeyError as exc:
        raise SchemaError(f"{path}: missing taxonomy key {exc}")


def save_taxonomy(path, taxonomy: ClassTaxonomy):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({
            "classes": list(taxonomy.classes),
            "object_size": taxonomy.object_size,
            "superclasses": taxonomy.superclasses,
        }, fh, indent=1)
