"""Detection scoring: greedy matching, per-class AP, weighted mAP, and
run-to-run comparison reports.

Matching is class-aware and greedy in descending score; AP uses all-point
interpolation by default with an eleven-point mode; mAP weights classes by
ground-truth instance count by default, with a uniform mode.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

from .datamodel import Detection, GroundTruthRecord, PredictionSet
from .errors import ValidationError
from .geometry import iou

WEIGHTINGS = ("instances", "uniform")
INTERPOLATIONS = ("all_point", "eleven_point")


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.5
    score_threshold: float | None = 0.5
    weighting: str = "instances"
    interpolation: str = "all_point"

    def __post_init__(self) -> None:
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise ValidationError("iou_threshold must be in [0,1]")
        if self.score_threshold is not None and not 0.0 <= self.score_threshold <= 1.0:
            raise ValidationError("score_threshold must be in [0,1] or None")
        if self.weighting not in WEIGHTINGS:
            raise ValidationError(f"weighting must be one of {WEIGHTINGS}")
        if self.interpolation not in INTERPOLATIONS:
            raise ValidationError(f"interpolation must be one of {INTERPOLATIONS}")


@dataclass(frozen=True)
class ClassEval:
    ap: float
    tp: int
    fp: int
    fn: int
    truth_count: int
    pr: tuple[tuple[float, float], ...]  # (recall, precision) per retained detection


@dataclass(frozen=True)
class EvalReport:
    config: EvalConfig
    imagery: str
    per_class: dict[str, ClassEval]
    map_score: float


def _sort_key(d: Detection):
    return (-d.score, d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max, d.label)


def match_detections(
    detections: list[Detection],
    truth: GroundTruthRecord,
    iou_threshold: float = 0.5,
) -> tuple[list[bool], int]:
    """Greedy per-image matching; returns TP flags (input order) + unmatched truths.

    Detections are processed in descending score; each claims the unmatched
    same-class truth of highest IoU >= threshold (ties to the lowest truth
    index); every truth matches at most once.
    """
    order = sorted(range(len(detections)), key=lambda i: _sort_key(detections[i]))
    matched = [False] * len(truth.defects)
    flags = [False] * len(detections)
    for i in order:
        det = detections[i]
        best_iou = 0.0
        best_j = -1
        for j, gt in enumerate(truth.defects):
            if matched[j] or gt.label != det.label:
                continue
            v = iou(det.box, gt.box)
            if v > best_iou:
                best_iou, best_j = v, j
        if best_j >= 0 and best_iou >= iou_threshold:
            matched[best_j] = True
            flags[i] = True
    return flags, matched.count(False)


def average_precision(
    matches: list[tuple[float, bool]],
    total_truth: int,
    interpolation: str = "all_point",
) -> float:
    """AP from (score, is_tp) pairs against `total_truth` ground truths.

    With no ground truth, AP is 1.0 when there are also no detections and
    0.0 otherwise (a documented convention, not a standard).
    """
    if interpolation not in INTERPOLATIONS:
        raise ValidationError(f"interpolation must be one of {INTERPOLATIONS}")
    if total_truth < 0:
        raise ValidationError("total_truth must be >= 0")
    if total_truth == 0:
        return 1.0 if not matches else 0.0
    if not matches:
        return 0.0
    ordered = sorted(matches, key=lambda m: -m[0])
    tp = 0
    points = []  # (recall, precision) after each detection
    for rank, (_score, is_tp) in enumerate(ordered, start=1):
        tp += int(is_tp)
        points.append((tp / total_truth, tp / rank))
    if interpolation == "eleven_point":
        total = 0.0
        for i in range(11):
            r = i / 10.0
            candidates = [p for rec, p in points if rec >= r - 1e-12]
            total += max(candidates) if candidates else 0.0
        return total / 11.0
    # All-point: integrate the running-max precision envelope over recall.
    area = 0.0
    prev_recall = 0.0
    best = [0.0] * len(points)
    running = 0.0
    for i in range(len(points) - 1, -1, -1):
        running = max(running, points[i][1])
        best[i] = running
    for i, (recall, _precision) in enumerate(points):
        area += (recall - prev_recall) * best[i]
        prev_recall = recall
    return area


def mean_average_precision(
    per_class_ap: dict[str, float],
    per_class_truth: dict[str, int],
    weighting: str = "instances",
) -> float:
    """Instance-weighted (sum AP_c·n_c / sum n_c) or uniform mean of class APs."""
    if weighting not in WEIGHTINGS:
        raise ValidationError(f"weighting must be one of {WEIGHTINGS}")
    if set(per_class_ap) != set(per_class_truth):
        raise ValidationError("AP and truth-count maps must share the same classes")
    if not per_class_ap:
        raise ValidationError("mAP over an empty class set is undefined")
    if weighting == "uniform":
        return sum(per_class_ap.values()) / len(per_class_ap)
    total = sum(per_class_truth.values())
    if total == 0:
        return sum(per_class_ap.values()) / len(per_class_ap)
    return sum(per_class_ap[c] * per_class_truth[c] for c in per_class_ap) / total


def evaluate_detections(
    predictions: "PredictionSet | dict[str, list[Detection]]",
    truths: "list[GroundTruthRecord] | dict[str, GroundTruthRecord]",
    config: EvalConfig = EvalConfig(),
    imagery: str = "",
) -> EvalReport:
    """Score a prediction set against ground truth, dataset-wide.

    The score threshold (when set) filters detections before matching, so PR
    curves cover only the retained detections. Classes are the union of
    truth and prediction classes.
    """
    if isinstance(predictions, PredictionSet):
        per_image = predictions.images
    else:
        per_image = predictions
    if not isinstance(truths, dict):
        truths = {t.image_id: t for t in truths}

    missing = sorted(set(per_image) - set(truths))
    if missing:
        raise ValidationError(
            f"no ground truth for image(s): {', '.join(missing[:5])}"
        )

    # (score, is_tp, image_id, corners) per class, accumulated across images.
    per_class_rows: dict[str, list[tuple]] = {}
    truth_counts: dict[str, int] = {}
    for record in truths.values():
        for gt in record.defects:
            truth_counts[gt.label] = truth_counts.get(gt.label, 0) + 1
            per_class_rows.setdefault(gt.label, [])

    for image_id in sorted(truths):
        dets = per_image.get(image_id, [])
        if config.score_threshold is not None:
            dets = [d for d in dets if d.score >= config.score_threshold]
        flags, _ = match_detections(dets, truths[image_id], config.iou_threshold)
        for det, is_tp in zip(dets, flags):
            per_class_rows.setdefault(det.label, []).append(
                (
                    det.score,
                    is_tp,
                    image_id,
                    det.box.x_min,
                    det.box.y_min,
                    det.box.x_max,
                    det.box.y_max,
                )
            )

    per_class: dict[str, ClassEval] = {}
    ap_map: dict[str, float] = {}
    for label in sorted(per_class_rows):
        rows = sorted(
            per_class_rows[label], key=lambda r: (-r[0], r[2], r[3], r[4], r[5], r[6])
        )
        n_truth = truth_counts.get(label, 0)
        ap = average_precision([(r[0], r[1]) for r in rows], n_truth, config.interpolation)
        tp = sum(1 for r in rows if r[1])
        fp = len(rows) - tp
        points = []
        running_tp = 0
        for rank, r in enumerate(rows, start=1):
            running_tp += int(r[1])
            recall = running_tp / n_truth if n_truth else 0.0
            points.append((recall, running_tp / rank))
        per_class[label] = ClassEval(ap, tp, fp, n_truth - tp, n_truth, tuple(points))
        ap_map[label] = ap

    map_score = mean_average_precision(
        ap_map, {c: truth_counts.get(c, 0) for c in ap_map}, config.weighting
    )
    return EvalReport(config, imagery, per_class, map_score)


def compare_runs(report_a: EvalReport, report_b: EvalReport) -> dict:
    """Per-class deltas (b minus a) plus the total FP delta.

    The two reports must share class set and configuration; only the imagery
    tag may differ. `fp_reduced` is true for a class when run b has strictly
    fewer false positives than run a.
    """
    if report_a.config != report_b.config:
        raise ValidationError("cannot compare runs with different configurations")
    if set(report_a.per_class) != set(report_b.per_class):
        raise ValidationError("cannot compare runs with different class sets")
    per_class = {}
    for label in sorted(report_a.per_class):
        a, b = report_a.per_class[label], report_b.per_class[label]
        per_class[label] = {
            "delta_ap": b.ap - a.ap,
            "delta_fp": b.fp - a.fp,
            "delta_tp": b.tp - a.tp,
            "fp_reduced": b.fp < a.fp,
        }
    return {
        "imagery": [report_a.imagery, report_b.imagery],
        "per_class": per_class,
        "total_fp_delta": sum(v["delta_fp"] for v in per_class.values()),
    }


def report_to_json(report: EvalReport) -> str:
    payload = {
        "config": {
            "iou_threshold": report.config.iou_threshold,
            "score_threshold": report.config.score_threshold,
            "weighting": report.config.weighting,
            "interpolation": report.config.interpolation,
            "imagery": report.imagery,
        },
        "per_class": {
            label: {
                "ap": ce.ap,
                "tp": ce.tp,
                "fp": ce.fp,
                "fn": ce.fn,
                "truth_count": ce.truth_count,
                "pr": [[r, p] for r, p in ce.pr],
            }
            for label, ce in sorted(report.per_class.items())
        },
        "map": report.map_score,
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def report_from_json(text: str) -> EvalReport:
    try:
        data = json.loads(text)
        cfg_data = dict(data["config"])
        imagery = cfg_data.pop("imagery", "")
        config = EvalConfig(**cfg_data)
        per_class = {
            label: ClassEval(
                ce["ap"],
                ce["tp"],
                ce["fp"],
                ce["fn"],
                ce["truth_count"],
                tuple((r, p) for r, p in ce["pr"]),
            )
            for label, ce in data["per_class"].items()
        }
        return EvalReport(config, imagery, per_class, data["map"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed report JSON: {exc}") from exc


def load_report(path: Path | str) -> EvalReport:
    return report_from_json(Path(path).read_text())


def pr_points_csv(report: EvalReport) -> str:
    """PR points as CSV `class,recall,precision` (one row per retained detection)."""
    lines = ["class,recall,precision"]
    for label, ce in sorted(report.per_class.items()):
        for recall, precision in ce.pr:
            lines.append(f"{label},{recall:.6g},{precision:.6g}")
    return "\n".join(lines) + "\n"


def with_imagery(report: EvalReport, imagery: str) -> EvalReport:
    return replace(report, imagery=imagery)
