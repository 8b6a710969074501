"""Evaluation protocol: accuracies, inverse-rank AP, superclass remapping,
stratified subset reports, confusion matrices, late fusion.

Conventions fixed here once so every number is reproducible:
  - rank of the true class = 1 + #classes with strictly greater probability
    + #equal-probability classes with smaller index (smaller index wins ties)
  - top-k uses the same tie rule
  - videos with no tube count as wrongly classified for accuracy and (by
    default) contribute 0 to AP
All rates are kept as full-precision floats; rounding to one decimal happens
only at text rendering.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, TaxonomyError
from .pose_data import ClassTaxonomy, VideoManifestEntry


@dataclass
class PredictionSet:
    """Per-video probability vectors; None marks a no-tube video."""
    classes: tuple[str, ...]
    probs: dict[str, np.ndarray | None] = field(default_factory=dict)

    def __post_init__(self):
        c = len(self.classes)
        for vid, p in self.probs.items():
            if p is None:
                continue
            if p.shape != (c,):
                raise InputError(f"{vid}: probability vector shape {p.shape}")
            if abs(float(p.sum()) - 1.0) > 1e-9:
                raise InputError(f"{vid}: probabilities sum to {p.sum()}")


def rank_of(probs: np.ndarray, label: int) -> int:
    """1-based rank of the label under the smaller-index-wins tie rule."""
    p = probs[label]
    greater = int(np.sum(probs > p))
    tied_before = int(np.sum(probs[:label] == p))
    return 1 + greater + tied_before


def topk_hit(probs: np.ndarray | None, label: int, k: int) -> bool:
    """True iff the label lands in the top k; no-tube is always a miss."""
    if probs is None:
        return False
    c = len(probs)
    if not 1 <= k <= c:
        raise ValueError(f"k={k} outside [1, {c}]")
    return rank_of(probs, label) <= k


def mean_class_accuracy(preds: PredictionSet, labels: dict[str, str],
                        k: int = 1) -> tuple[float, list[str]]:
    """Unweighted mean over classes of the per-class top-k rate.

    Classes with zero videos are excluded from the mean and returned
    separately.
    """
    per_class, empty = per_class_topk(preds, labels, k)
    rates = [r for r in per_class.values() if r is not None]
    if not rates:
        raise InputError("no labeled videos")
    return sum(rates) / len(rates), empty


def per_class_topk(preds: PredictionSet, labels: dict[str, str],
                   k: int = 1) -> tuple[dict[str, float | None], list[str]]:
    index = {name: i for i, name in enumerate(preds.classes)}
    correct = {name: 0 for name in preds.classes}
    total = {name: 0 for name in preds.classes}
    for vid in sorted(labels):
        label = labels[vid]
        if label not in index:
            raise TaxonomyError(f"label {label!r} not in class list")
        if vid not in preds.probs:
            raise InputError(f"video {vid!r} missing from predictions")
        total[label] += 1
        if topk_hit(preds.probs[vid], index[label], k):
            correct[label] += 1
    per_class = {}
    empty = []
    for name in preds.classes:
        if total[name] == 0:
            per_class[name] = None
            empty.append(name)
        else:
            per_class[name] = correct[name] / total[name]
    return per_class, empty


def global_topk(preds: PredictionSet, labels: dict[str, str],
                k: int = 1) -> float:
    index = {name: i for i, name in enumerate(preds.classes)}
    hits = 0
    for vid in sorted(labels):
        if topk_hit(preds.probs[vid], index[labels[vid]], k):
            hits += 1
    return hits / len(labels)


def average_precision(preds: PredictionSet, labels: dict[str, str],
                      class_name: str,
                      no_tube_contribution: float = 0.0) -> float | None:
    """Mean inverse rank of the true label over the class's videos.

    No-tube videos contribute no_tube_contribution (0 by default). None when
    the class has no videos.
    """
    index = {name: i for i, name in enumerate(preds.classes)}
    label_idx = index[class_name]
    inv_ranks = []
    for vid in sorted(labels):
        if labels[vid] != class_name:
            continue
        probs = preds.probs[vid]
        if probs is None:
            inv_ranks.append(no_tube_contribution)
        else:
            inv_ranks.append(1.0 / rank_of(probs, label_idx))
    if not inv_ranks:
        return None
    return sum(inv_ranks) / len(inv_ranks)


def mean_average_precision(preds: PredictionSet, labels: dict[str, str],
                           no_tube_contribution: float = 0.0
                           ) -> tuple[float, dict[str, float | None]]:
    per_class = {name: average_precision(preds, labels, name,
                                         no_tube_contribution)
                 for name in preds.classes}
    values = [v for v in per_class.values() if v is not None]
    if not values:
        raise InputError("no labeled videos")
    return sum(values) / len(values), per_class


def confusion_matrix(preds: PredictionSet, labels: dict[str, str]
                     ) -> tuple[np.ndarray, int]:
    """Counts[i, j] = videos of class i predicted as class j (top-1, same tie
    rule). No-tube videos have no predicted class; they are excluded from the
    matrix and returned as a separate count."""
    index = {name: i for i, name in enumerate(preds.classes)}
    c = len(preds.classes)
    counts = np.zeros((c, c), dtype=np.int64)
    no_tube = 0
    for vid in sorted(labels):
        probs = preds.probs[vid]
        if probs is None:
            no_tube += 1
            continue
        predicted = rank_one_class(probs)
        counts[index[labels[vid]], predicted] += 1
    return counts, no_tube


def rank_one_class(probs: np.ndarray) -> int:
    """Top-1 class index; the smallest index among tied maxima."""
    return int(np.argmax(probs))


def superclass_remap(preds: PredictionSet, taxonomy: ClassTaxonomy
                     ) -> PredictionSet:
    """Sum member-class probabilities into superclass probabilities."""
    for name in preds.classes:
        if name not in taxonomy.classes:
            raise TaxonomyError(f"class {name!r} absent from taxonomy")
    supers = tuple(sorted({taxonomy.superclass_of(c) for c in preds.classes}))
    super_index = {name: i for i, name in enumerate(supers)}
    remapped = {}
    for vid, probs in preds.probs.items():
        if probs is None:
            remapped[vid] = None
            continue
        out = np.zeros(len(supers))
        for i, name in enumerate(preds.classes):
            out[super_index[taxonomy.superclass_of(name)]] += probs[i]
        remapped[vid] = out
    return PredictionSet(classes=supers, probs=remapped)


def remap_labels(labels: dict[str, str], taxonomy: ClassTaxonomy
                 ) -> dict[str, str]:
    return {vid: taxonomy.superclass_of(label)
            for vid, label in labels.items()}


def late_fusion(a: PredictionSet, b: PredictionSet) -> PredictionSet:
    """Arithmetic mean of probability vectors; a lone no-tube side defers to
    the other, both absent stays absent."""
    if a.classes != b.classes:
        raise InputError("class lists differ")
    if set(a.probs) != set(b.probs):
        raise InputError("video sets differ")
    fused = {}
    for vid in a.probs:
        pa, pb = a.probs[vid], b.probs[vid]
        if pa is None and pb is None:
            fused[vid] = None
        elif pa is None:
            fused[vid] = pb.copy()
        elif pb is None:
            fused[vid] = pa.copy()
        else:
            fused[vid] = (pa + pb) / 2.0
    return PredictionSet(classes=a.classes, probs=fused)


# ---------------------------------------------------------------------------
# stratified reporting
# ---------------------------------------------------------------------------

STRATA = ("all", "mime_artist", "not_mime_artist", "no_relevant_object",
          "scene_not_relevant", "no_object_no_scene",
          "classes_none_or_small_object", "classes_large_object")


def stratum_members(entries: list[VideoManifestEntry],
                    taxonomy: ClassTaxonomy | None = None
                    ) -> dict[str, list[str]]:
    members = {name: [] for name in STRATA}
    for e in entries:
        members["all"].append(e.video_id)
        members["mime_artist" if e.is_mime_artist
                else "not_mime_artist"].append(e.video_id)
        if not e.object_relevant:
            members["no_relevant_object"].append(e.video_id)
        if not e.scene_relevant:
            members["scene_not_relevant"].append(e.video_id)
        if not e.object_relevant and not e.scene_relevant:
            members["no_object_no_scene"].append(e.video_id)
        if taxonomy is not None and e.label in taxonomy.object_size:
            size = taxonomy.object_size[e.label]
            key = ("classes_none_or_small_object" if size == "none_or_small"
                   else "classes_large_object")
            members[key].append(e.video_id)
    return members


def stratified_report(preds: PredictionSet,
                      entries: list[VideoManifestEntry],
                      taxonomy: ClassTaxonomy | None = None
                      ) -> dict[str, tuple[float | None, int]]:
    """Global (not per-class-mean) top-1 accuracy per stratum.

    Empty strata report None, not zero.
    """
    labels = {e.video_id: e.label for e in entries}
    index = {name: i for i, name in enumerate(preds.classes)}
    report = {}
    for stratum, vids in stratum_members(entries, taxonomy).items():
        if not vids:
            report[stratum] = (None, 0)
            continue
        hits = sum(1 for vid in vids
                   if topk_hit(preds.probs[vid], index[labels[vid]], 1))
        report[stratum] = (hits / len(vids), len(vids))
    return report


# ---------------------------------------------------------------------------
# full report
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    classes: tuple[str, ...]
    per_class_top1: dict[str, float | None]
    per_class_ap: dict[str, float | None]
    per_class_counts: dict[str, int]
    mean_top1: float
    mean_top5: float
    map_score: float
    global_top1: float
    strata: dict[str, tuple[float | None, int]]
    confusion: np.ndarray
    no_tube_count: int

    def to_json_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "per_class_top1": self.per_class_top1,
            "per_class_ap": self.per_class_ap,
            "per_class_counts": self.per_class_counts,
            "mean_top1": self.mean_top1,
            "mean_top5": self.mean_top5,
            "mAP": self.map_score,
            "global_top1": self.global_top1,
            "strata": {k: {"accuracy": v[0], "count": v[1]}
                       for k, v in self.strata.items()},
            "confusion": self.confusion.tolist(),
            "no_tube_count": self.no_tube_count,
        }


def evaluate(preds: PredictionSet, entries: list[VideoManifestEntry],
             taxonomy: ClassTaxonomy | None = None,
             no_tube_contribution: float = 0.0) -> EvalReport:
    labels = {e.video_id: e.label for e in entries}
    per_class_top1, _ = per_class_topk(preds, labels, 1)
    mean_top1, _ = mean_class_accuracy(preds, labels, 1)
    mean_top5, _ = mean_class_accuracy(preds, labels, min(5, len(preds.classes)))
    map_score, per_class_ap = mean_average_precision(
        preds, labels, no_tube_contribution)
    confusion, no_tube = confusion_matrix(preds, labels)
    counts = {name: 0 for name in preds.classes}
    for label in labels.values():
        counts[label] += 1
    return EvalReport(
        classes=preds.classes,
        per_class_top1=per_class_top1,
        per_class_ap=per_class_ap,
        per_class_counts=counts,
        mean_top1=mean_top1,
        mean_top5=mean_top5,
        map_score=map_score,
        global_top1=global_topk(preds, labels, 1),
        strata=stratified_report(preds, entries, taxonomy),
        confusion=confusion,
        no_tube_count=no_tube,
    )


def _pct(value: float | None) -> str:
    return "   -" if value is None else f"{100.0 * value:5.1f}"


def render_text(report: EvalReport) -> str:
    """Aligned per-class table: class, #vid, top-1, AP; then aggregates."""
    width = max(len(name) for name in report.classes)
    lines = [f"{'class':<{width}}  #vid  top-1     AP"]
    for name in report.classes:
        lines.append(
            f"{name:<{width}}  {report.per_class_counts[name]:4d}  "
            f"{_pct(report.per_class_top1[name])}  ({_pct(report.per_class_ap[name]).strip()})")
    lines.append("")
    lines.append(f"mean top-1 {_pct(report.mean_top1).strip()}   "
                 f"mean top-5 {_pct(report.mean_top5).strip()}   "
                 f"mAP {_pct(report.map_score).strip()}   "
                 f"global top-1 {_pct(report.global_top1).strip()}")
    lines.append(f"videos without tubes: {report.no_tube_count}")
    lines.append("")
    lines.append("stratified global top-1:")
    for stratum, (acc, count) in report.strata.items():
        lines.append(f"  {stratum:<30} ({count:4d})  {_pct(acc)}")
    return "\n".join(lines) + "\n"


def save_report(path, report: EvalReport):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=1)


# ---------------------------------------------------------------------------
# prediction files
# ---------------------------------------------------------------------------

def save_predictions(path, preds: PredictionSet):
    with open(path, "w", encoding="utf-8") as fh:
        for vid in sorted(preds.probs):
            probs = preds.probs[vid]
            fh.write(json.dumps({
                "video_id": vid,
                "probs": None if probs is None else probs.tolist(),
            }) + "\n")


def load_predictions(path, classes: tuple[str, ...]) -> PredictionSet:
    probs = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            p = obj["probs"]
            probs[obj["video_id"]] = None if p is None else np.array(p)
    return PredictionSet(classes=tuple(classes), probs=probs)


def mean_class_accuracy_from_indices(
        predictions: list[tuple[np.ndarray | None, int]],
        num_classes: int) -> float:
    """Mean class accuracy over (probs, label-index) pairs; lightweight form
    used by sweeps where building a PredictionSet would be ceremony."""
    correct = np.zeros(num_classes)
    total = np.zeros(num_classes)
    for probs, label in predictions:
        total[label] += 1
        if probs is not None and topk_hit(probs, label, 1):
            correct[label] += 1
    mask = total > 0
    if not mask.any():
        raise InputError("no labeled videos")
    return float(np.mean(correct[mask] / total[mask]))
