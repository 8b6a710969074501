"""Greedy linking of per-frame detections into human tubes.

Procedure: seed with the highest-scored unused detection, extend forward and
backward one frame at a time accepting the best-IoU unused detection above
threshold, look ahead up to max_gap frames across misses (filling the gap by
linear interpolation), stop a direction after max_gap consecutive frames
without an accepted match, then delete the tube's detections and repeat.

Linking is strictly sequential within a video (order-dependent greedy) and
embarrassingly parallel across videos.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .pose_data import Detection

GREY_FILL = (128, 128, 128)


@dataclass
class LinkerConfig:
    iou_threshold: float = 0.3
    max_gap: int = 10

    def __post_init__(self):
        if not 0 < self.iou_threshold <= 1:
            raise InputError(f"iou_threshold {self.iou_threshold} outside (0, 1]")
        if self.max_gap < 1:
            raise InputError(f"max_gap {self.max_gap} < 1")


@dataclass(frozen=True)
class TubeEntry:
    frame_index: int
    detection: Detection
    interpolated: bool
    source_index: int | None = None  # index into the frame's detection list


@dataclass
class Tube:
    entries: list[TubeEntry]
    tube_score: float

    @property
    def frames(self) -> list[int]:
        return [e.frame_index for e in self.entries]

    @property
    def length(self) -> int:
        return len(self.entries)

    def feature_matrix(self) -> np.ndarray:
        """Stack per-frame feature vectors into [L, D]."""
        feats = [e.detection.features for e in self.entries]
        if any(f is None for f in feats):
            raise InputError("tube contains entries without features")
        return np.stack(feats)

    def joint_matrix(self) -> np.ndarray:
        """Stack per-frame 2D joints and scores into [L, J, 3] (x, y, s)."""
        rows = []
        for e in self.entries:
            det = e.detection
            rows.append(np.column_stack([det.joints2d, det.joint_scores]))
        return np.stack(rows)


def iou(a, b) -> float:
    """Intersection over union of two (x0, y0, x1, y1) boxes."""
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    if area_a <= 0 or area_b <= 0:
        raise ValueError("degenerate box")
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (area_a + area_b - inter)


def _lerp(a, b, alpha):
    return a + alpha * (b - a)


def _interpolate_detection(a: Detection, b: Detection, frame: int) -> Detection:
    alpha = (frame - a.frame_index) / (b.frame_index - a.frame_index)
    box = tuple(_lerp(x, y, alpha) for x, y in zip(a.box, b.box))
    joints3d = None
    if a.joints3d is not None and b.joints3d is not None:
        joints3d = _lerp(a.joints3d, b.joints3d, alpha)
    features = None
    if a.features is not None and b.features is not None:
        features = _lerp(a.features, b.features, alpha)
    return Detection(
        frame_index=frame,
        box=box,
        score=_lerp(a.score, b.score, alpha),
        joints2d=_lerp(a.joints2d, b.joints2d, alpha),
        joint_scores=_lerp(a.joint_scores, b.joint_scores, alpha),
        joints3d=joints3d,
        features=features,
    )


def _best_match(box, candidates, used, frame, threshold):
    """Best-IoU unused detection above threshold; ties keep the lowest index."""
    best_idx, best_iou = None, threshold
    for idx, det in enumerate(candidates):
        if (frame, idx) in used:
            continue
        overlap = iou(box, det.box)
        if overlap > best_iou:
            best_idx, best_iou = idx, overlap
    return best_idx


def _extend(seed_frame, seed_idx, dets_by_frame, used, config, step):
    """Extend from the seed in one direction, returning accepted entries."""
    entries = []
    cur_frame = seed_frame
    cur_det = dets_by_frame[seed_frame][seed_idx]
    while True:
        matched = None
        for gap in range(1, config.max_gap + 1):
            frame = cur_frame + step * gap
            candidates = dets_by_frame.get(frame, [])
            idx = _best_match(cur_det.box, candidates, used, frame,
                              config.iou_threshold)
            if idx is not None:
                matched = (frame, idx, gap)
                break
        if matched is None:
            break
        frame, idx, gap = matched
        det = dets_by_frame[frame][idx]
        if gap > 1:
            lo, hi = (cur_det, det) if step > 0 else (det, cur_det)
            for g in range(1, gap):
                missing = cur_frame + step * g
                entries.append(TubeEntry(
                    missing, _interpolate_detection(lo, hi, missing), True))
        entries.append(TubeEntry(frame, det, False, source_index=idx))
        used.add((frame, idx))
        cur_frame, cur_det = frame, det
    return entries


def link_tubes(dets_by_frame: dict[int, list[Detection]],
               config: LinkerConfig | None = None) -> list[Tube]:
    """Link detections into tubes with the greedy delete-and-repeat procedure.

    dets_by_frame must follow the detections-file contract: frames ascending,
    detections within a frame sorted by descending score.
    """
    config = config or LinkerConfig()
    used: set[tuple[int, int]] = set()
    total = sum(len(v) for v in dets_by_frame.values())
    frames_sorted = sorted(dets_by_frame)
    tubes = []
    while len(used) < total:
        # seed: highest score; ties by (frame, in-frame position)
        seed = None
        for frame in frames_sorted:
            for idx, det in enumerate(dets_by_frame[frame]):
                if (frame, idx) in used:
                    continue
                if seed is None or det.score > seed[2]:
                    seed = (frame, idx, det.score)
        seed_frame, seed_idx, _ = seed
        used.add((seed_frame, seed_idx))
        forward = _extend(seed_frame, seed_idx, dets_by_frame, used, config, +1)
        backward = _extend(seed_frame, seed_idx, dets_by_frame, used, config, -1)
        seed_entry = TubeEntry(seed_frame, dets_by_frame[seed_frame][seed_idx],
                               False, source_index=seed_idx)
        entries = list(reversed(backward)) + [seed_entry] + forward
        real_scores = [e.detection.score for e in entries if not e.interpolated]
        tubes.append(Tube(entries, tube_score=sum(real_scores) / len(real_scores)))
    return tubes


def video_class_scores(tubes: list[Tube],
                       per_tube_scores: list[np.ndarray]) -> np.ndarray | None:
    """Element-wise maximum of per-tube class scores; None when no tubes."""
    if len(tubes) != len(per_tube_scores):
        raise ValueError(
            f"{len(tubes)} tubes but {len(per_tube_scores)} score vectors")
    if not tubes:
        return None  # no-tube marker
    stacked = np.stack(per_tube_scores)
    return stacked.max(axis=0)


def tube_coverage(tubes_per_video: dict[str, list[Tube]]) -> float:
    """Fraction of videos with zero tubes.

    Reference values on external corpora range from 0.1% to 15.3% depending
    on how often people are detectable at all.
    """
    if not tubes_per_video:
        return 0.0
    empty = sum(1 for tubes in tubes_per_video.values() if not tubes)
    return empty / len(tubes_per_video)


# ---------------------------------------------------------------------------
# masking geometry
# ---------------------------------------------------------------------------

MASK_TUBES = "mask_tubes"
MASK_BACKGROUND = "mask_background"


@dataclass
class MaskSpec:
    """Per-frame box geometry for grey-fill masking.

    mask_tubes: fill the listed boxes. mask_background: fill everything
    outside them. Boxes are integer half-open pixel intervals clipped to the
    image, so the two modes partition each frame exactly.
    """
    mode: str
    fill: tuple[int, int, int]
    frames: dict[int, list[tuple[int, int, int, int]]] = field(default_factory=dict)


def _clip_box(box, image_size) -> tuple[int, int, int, int] | None:
    w, h = image_size
    x0 = max(0, int(math.floor(box[0])))
    y0 = max(0, int(math.floor(box[1])))
    x1 = min(w, int(math.ceil(box[2])))
    y1 = min(h, int(math.ceil(box[3])))
    if x0 >= x1 or y0 >= y1:
        return None
    return (x0, y0, x1, y1)


def make_mask_spec(tubes: list[Tube], mode: str,
                   image_size: tuple[int, int],
                   frame_range: tuple[int, int] | None = None,
                   fill: tuple[int, int, int] = GREY_FILL) -> MaskSpec:
    """Emit masking geometry for all frames covered by the tubes.

    frame_range (start, stop) forces explicit entries for frames without any
    tube box, which mask_background consumers need (whole frame filled).
    """
    if mode not in (MASK_TUBES, MASK_BACKGROUND):
        raise InputError(f"unknown mask mode {mode!r}")
    boxes_by_frame: dict[int, list[tuple[int, int, int, int]]] = {}
    for tube in tubes:
        for entry in tube.entries:
            clipped = _clip_box(entry.detection.box, image_size)
            if clipped is not None:
                boxes_by_frame.setdefault(entry.frame_index, []).append(clipped)
    if frame_range is not None:
        for frame in range(frame_range[0], frame_range[1]):
            boxes_by_frame.setdefault(frame, [])
    frames = {f: boxes_by_frame[f] for f in sorted(boxes_by_frame)}
    return MaskSpec(mode=mode, fill=fill, frames=frames)


def rasterize_fill(spec: MaskSpec, frame: int,
                   image_size: tuple[int, int]) -> np.ndarray:
    """Boolean grid of pixels the spec says to fill in this frame."""
    w, h = image_size
    inside = np.zeros((h, w), dtype=bool)
    for x0, y0, x1, y1 in spec.frames.get(frame, []):
        inside[y0:y1, x0:x1] = True
    return inside if spec.mode == MASK_TUBES else ~inside


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def _tube_to_json(video_id: str, tube: Tube) -> dict:
    interp = {}
    for e in tube.entries:
        if e.interpolated:
            det = e.detection
            interp[str(e.frame_index)] = {
                "score": det.score,
                "joints2d": det.joints2d.tolist(),
                "joint_scores": det.joint_scores.tolist(),
                "joints3d": None if det.joints3d is None else det.joints3d.tolist(),
                "features": None if det.features is None else det.features.tolist(),
            }
    return {
        "video_id": video_id,
        "frames": [e.frame_index for e in tube.entries],
        "interpolated": [e.interpolated for e in tube.entries],
        "boxes": [list(e.detection.box) for e in tube.entries],
        "det_indices": [e.source_index for e in tube.entries],
        "interp": interp,
        "tube_score": tube.tube_score,
    }


def save_tubes(path, video_id: str, tubes: list[Tube]):
    """One tube per line; joints/features of real entries stay in the
    detections file, interpolated values are inlined."""
    with open(path, "w", encoding="utf-8") as fh:
        for tube in tubes:
            fh.write(json.dumps(_tube_to_json(video_id, tube)) + "\n")


def load_tubes(path, dets_by_frame: dict[int, list[Detection]]
               ) -> tuple[str, list[Tube]]:
    video_id = None
    tubes = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            video_id = obj["video_id"]
            entries = []
            for frame, interp, box, det_idx in zip(
                    obj["frames"], obj["interpolated"], obj["boxes"],
                    obj["det_indices"]):
                if interp:
                    extra = obj["interp"][str(frame)]
                    det = Detection(
                        frame_index=frame,
                        box=tuple(box),
                        score=extra["score"],
                        joints2d=np.array(extra["joints2d"]),
                        joint_scores=np.array(extra["joint_scores"]),
                        joints3d=None if extra["joints3d"] is None
                        else np.array(extra["joints3d"]),
                        features=None if extra["features"] is None
                        else np.array(extra["features"]),
                    )
                    entries.append(TubeEntry(frame, det, True))
                else:
                    det = dets_by_frame[frame][det_idx]
                    entries.append(TubeEntry(frame, det, False,
                                             source_index=det_idx))
            tubes.append(Tube(entries, tube_score=obj["tube_score"]))
    return video_id, tubes


def save_mask_spec(path, video_id: str, spec: MaskSpec):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({
            "video_id": video_id,
            "mode": spec.mode,
            "fill": list(spec.fill),
            "frames": [{"frame": f, "boxes": [list(b) for b in boxes]}
                       for f, boxes in spec.frames.items()],
        }, fh)


def load_mask_spec(path) -> tuple[str, MaskSpec]:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    frames = {rec["frame"]: [tuple(b) for b in rec["boxes"]]
              for rec in obj["frames"]}
    return obj["video_id"], MaskSpec(mode=obj["mode"],
                                     fill=tuple(obj["fill"]), frames=frames)
