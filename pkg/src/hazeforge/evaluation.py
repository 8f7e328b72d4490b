"""Detection metrics over plain box files: IoU, greedy matching, AP, mAP.

File formats (whitespace-separated, one box per line):

* truths:     ``<sample_id> <class:int> <xmin> <ymin> <xmax> <ymax>``
* detections: same fields plus a trailing ``<confidence>`` in [0, 1]

Per-class AP uses every detection (no confidence cut); dataset precision and
recall are counted at one operating threshold. Matching is greedy in
confidence order (ties broken by input order), each detection claiming the
unclaimed truth of highest IoU at or above the threshold.
"""

import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AnnotationParseError, ParameterError

Box = tuple[float, float, float, float]

INTERPOLATIONS = ("all", "11point")


def _validate_box(box) -> Box:
    x_min, y_min, x_max, y_max = (float(v) for v in box)
    if not (x_min < x_max and y_min < y_max):
        raise ParameterError(f"degenerate box {box!r}: need x_min < x_max and y_min < y_max")
    return (x_min, y_min, x_max, y_max)


@dataclass(frozen=True)
class TruthBox:
    sample_id: str
    class_id: int
    box: Box

    def __post_init__(self) -> None:
        object.__setattr__(self, "box", _validate_box(self.box))


@dataclass(frozen=True)
class DetectionBox:
    sample_id: str
    class_id: int
    box: Box
    confidence: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "box", _validate_box(self.box))
        if not 0.0 <= self.confidence <= 1.0:
            raise ParameterError(f"confidence must lie in [0, 1], got {self.confidence!r}")


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two axis-aligned boxes; 0 when disjoint."""
    inter_w = min(a[2], b[2]) - max(a[0], b[0])
    inter_h = min(a[3], b[3]) - max(a[1], b[1])
    if inter_w <= 0.0 or inter_h <= 0.0:
        return 0.0
    inter = inter_w * inter_h
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def match_detections(dets, truths, iou_threshold: float = 0.5) -> list[bool]:
    """Label detections of one (sample, class) group as TP/FP.

    Detections are visited in descending confidence (ties keep input order);
    each claims the unclaimed truth with highest IoU if that IoU reaches the
    threshold. Returns flags aligned with the input detection order.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
    claimed = [False] * len(truths)
    flags = [False] * len(dets)
    for i in order:
        best_iou = 0.0
        best_j = -1
        for j, truth in enumerate(truths):
            if claimed[j]:
                continue
            overlap = iou(dets[i].box, truth.box)
            if overlap > best_iou:
                best_iou = overlap
                best_j = j
        if best_j >= 0 and best_iou >= iou_threshold:
            claimed[best_j] = True
            flags[i] = True
    return flags


def average_precision(tp_flags, truth_count: int, interpolation: str = "all") -> float:
    """Area under the precision envelope of the recall curve.

    ``tp_flags`` must already be in descending-confidence order. With
    ``all``-point interpolation the precision at each recall level is
    replaced by the maximum precision at any greater-or-equal recall and the
    exact area under that piecewise-constant envelope is returned; the
    classic 11-point variant averages the envelope at recalls 0, 0.1, ... 1.
    """
    if interpolation not in INTERPOLATIONS:
        raise ParameterError(f"interpolation must be one of {INTERPOLATIONS}, got {interpolation!r}")
    if truth_count < 0:
        raise ParameterError(f"truth_count must be >= 0, got {truth_count}")
    flags = np.asarray(tp_flags, dtype=bool)
    if truth_count == 0 or flags.size == 0:
        return 0.0
    cum_tp = np.cumsum(flags)
    cum_fp = np.cumsum(~flags)
    recall = cum_tp / truth_count
    precision = cum_tp / (cum_tp + cum_fp)

    if interpolation == "11point":
        levels = np.linspace(0.0, 1.0, 11)
        samples = [
            float(precision[recall >= level].max()) if np.any(recall >= level) else 0.0
            for level in levels
        ]
        return math.fsum(samples) / 11.0

    mrec = np.concatenate(([0.0], recall))
    mpre = np.concatenate(([0.0], precision))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1]) + 1
    return math.fsum((mrec[i] - mrec[i - 1]) * mpre[i] for i in steps)


@dataclass
class EvalReport:
    """Per-class AP plus dataset-level mAP, precision, recall."""

    per_class_ap: dict[int, float]
    map: float
    precision: float
    recall: float
    counts: dict[str, int]
    flags: dict[str, bool]
    settings: dict

    def to_dict(self) -> dict:
        return {
            "per_class_ap": {str(k): v for k, v in sorted(self.per_class_ap.items())},
            "map": self.map,
            "precision": self.precision,
            "recall": self.recall,
            "counts": self.counts,
            "flags": self.flags,
            "settings": self.settings,
        }


def _group(items):
    grouped = defaultdict(list)
    for item in items:
        grouped[(item.sample_id, item.class_id)].append(item)
    return grouped


def evaluate_boxes(
    dets,
    truths,
    iou_threshold: float = 0.5,
    confidence_threshold: float = 0.25,
    interpolation: str = "all",
) -> EvalReport:
    """Compute the full report from in-memory box lists.

    Detection input order is the tie-breaker for equal confidences, so pass
    lists in file order for reproducible reports.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ParameterError(f"iou_threshold must lie in (0, 1], got {iou_threshold!r}")
    if not 0.0 <= confidence_threshold <= 1.0:
        raise ParameterError(
            f"confidence_threshold must lie in [0, 1], got {confidence_threshold!r}"
        )

    truth_groups = _group(truths)
    truth_count_by_class = defaultdict(int)
    for truth in truths:
        truth_count_by_class[truth.class_id] += 1

    # Per-class AP over ALL detections, ranked globally by confidence
    # (ties by input index); matching only interacts within one image.
    det_groups: dict[tuple, list[int]] = defaultdict(list)
    for i, det in enumerate(dets):
        det_groups[(det.sample_id, det.class_id)].append(i)
    flags_by_index: dict[int, bool] = {}
    for key, indices in det_groups.items():
        group = [dets[i] for i in indices]
        group_flags = match_detections(group, truth_groups.get(key, []), iou_threshold)
        for i, flag in zip(indices, group_flags):
            flags_by_index[i] = flag

    per_class_ap: dict[int, float] = {}
    for class_id, truth_count in sorted(truth_count_by_class.items()):
        ranked = sorted(
            (i for i, det in enumerate(dets) if det.class_id == class_id),
            key=lambda i: (-dets[i].confidence, i),
        )
        per_class_ap[class_id] = average_precision(
            [flags_by_index[i] for i in ranked], truth_count, interpolation
        )

    # Operating point: re-match using only detections above the confidence
    # threshold (unknown-class detections still count as false positives).
    kept = [det for det in dets if det.confidence >= confidence_threshold]
    kept_groups = _group(kept)
    tp = 0
    for key, group in kept_groups.items():
        tp += sum(match_detections(group, truth_groups.get(key, []), iou_threshold))
    fp = len(kept) - tp
    fn = len(truths) - tp

    precision_defined = (tp + fp) > 0
    recall_defined = len(truths) > 0
    map_defined = len(truth_count_by_class) > 0
    report = EvalReport(
        per_class_ap=per_class_ap,
        map=math.fsum(per_class_ap.values()) / len(per_class_ap) if map_defined else 0.0,
        precision=tp / (tp + fp) if precision_defined else 0.0,
        recall=tp / (tp + fn) if recall_defined else 0.0,
        counts={"tp": tp, "fp": fp, "fn": fn},
        flags={
            "precision_defined": precision_defined,
            "recall_defined": recall_defined,
            "map_defined": map_defined,
        },
        settings={
            "iou_threshold": iou_threshold,
            "confidence_threshold": confidence_threshold,
            "interpolation": interpolation,
        },
    )
    return report


def _parse_line(path, lineno: int, line: str, with_confidence: bool):
    fields = line.split()
    expected = 7 if with_confidence else 6
    if len(fields) != expected:
        raise AnnotationParseError(
            f"{path}:{lineno}: expected {expected} fields, got {len(fields)}"
        )
    sample_id = fields[0]
    try:
        class_id = int(fields[1])
        numbers = [float(v) for v in fields[2:]]
    except ValueError as exc:
        raise AnnotationParseError(f"{path}:{lineno}: {exc}") from None
    try:
        if with_confidence:
            return DetectionBox(sample_id, class_id, tuple(numbers[:4]), numbers[4])
        return TruthBox(sample_id, class_id, tuple(numbers[:4]))
    except ParameterError as exc:
        raise AnnotationParseError(f"{path}:{lineno}: {exc}") from None


def _load_boxes(path, with_confidence: bool):
    boxes = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        boxes.append(_parse_line(path, lineno, line, with_confidence))
    return boxes


def load_truths(path) -> list[TruthBox]:
    return _load_boxes(path, with_confidence=False)


def load_detections(path) -> list[DetectionBox]:
    return _load_boxes(path, with_confidence=True)


def evaluate(
    dets_file,
    truths_file,
    iou_threshold: float = 0.5,
    confidence_threshold: float = 0.25,
    interpolation: str = "all",
) -> EvalReport:
    """Load the two box files and compute the report."""
    return evaluate_boxes(
        load_detections(dets_file),
        load_truths(truths_file),
        iou_threshold=iou_threshold,
        confidence_threshold=confidence_threshold,
        interpolation=interpolation,
    )


def render_table(report: EvalReport) -> str:
    """Plain-text table: per-class AP, then mAP / Precision / Recall."""
    lines = ["class        AP      AP(%)"]
    for class_id, ap in sorted(report.per_class_ap.items()):
        lines.append(f"{class_id:>5d}   {ap:8.6f}   {ap * 100:6.2f}")
    lines.append("")
    lines.append("   mAP(%)   Precision      Recall")
    lines.append(
        f"   {report.map * 100:6.2f}      {report.precision:6.4f}      {report.recall:6.4f}"
    )
    counts = report.counts
    settings = report.settings
    lines.append(
        f"mAP={report.map:.6f}  TP={counts['tp']} FP={counts['fp']} FN={counts['fn']}  "
        f"IoU>={settings['iou_threshold']:g}  conf>={settings['confidence_threshold']:g}"
    )
    notes = [name for name, defined in report.flags.items() if not defined]
    if notes:
        lines.append("undefined (reported as 0): " + ", ".join(n.removesuffix('_defined') for n in notes))
    return "\n".join(lines)


def report_json(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), indent=2)
