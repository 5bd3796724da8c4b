"""Per-class AP, instance-weighted mAP, PR curves, and run comparison."""
from __future__ import annotations

import json

import numpy as np
import pytest

from wafersem import (
    DEFECT_CLASSES,
    Detection,
    EvalConfig,
    GroundTruthDefect,
    GroundTruthRecord,
    ValidationError,
    average_precision,
    compare_runs,
    evaluate_detections,
    iou,
    match_detections,
    mean_average_precision,
    pr_points_csv,
    report_from_json,
    report_to_json,
    with_imagery,
)

from conftest import det, gt, record, random_box

# Published per-backbone APs over (gap, p_gap, bridge, microbridge,
# line_collapse), their reported instance-weighted means, and the test-split
# instance counts those means are reproduced from.
TRUTH_COUNTS = {"gap": 174, "p_gap": 54, "bridge": 17, "microbridge": 78, "line_collapse": 76}
REFERENCE_ROWS = {
    "resnet50": ({"gap": 0.954, "p_gap": 0.432, "bridge": 0.872, "microbridge": 0.603,
                  "line_collapse": 0.828}, 0.787),
    "resnet101": ({"gap": 0.968, "p_gap": 0.291, "bridge": 0.811, "microbridge": 0.633,
                   "line_collapse": 0.816}, 0.775),
    "resnet152": ({"gap": 0.963, "p_gap": 0.376, "bridge": 0.844, "microbridge": 0.669,
                   "line_collapse": 0.789}, 0.788),
    "ensemble": ({"gap": 0.959, "p_gap": 0.520, "bridge": 0.867, "microbridge": 0.675,
                  "line_collapse": 0.828}, 0.816),
}


def match_oracle(detections, truth, iou_threshold):
    """Literal greedy matcher: descending score, argmax IoU, lowest-index tie."""
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    flags = [False] * len(detections)
    taken = [False] * len(truth.defects)
    for i in order:
        d = detections[i]
        best, best_iou = None, 0.0
        for j, t in enumerate(truth.defects):
            if taken[j] or t.label != d.label:
                continue
            v = iou(d.box, t.box)
            if v >= iou_threshold and v > best_iou:
                best, best_iou = j, v
        if best is not None:
            taken[best] = True
            flags[i] = True
    return flags, taken.count(False)


class TestMatching:
    def test_perfect_match(self):
        truth = record([gt(0, 0, 10, 10)])
        flags, unmatched = match_detections([det(0, 0, 10, 10)], truth)
        assert flags == [True] and unmatched == 0

    def test_single_match_rule(self):
        truth = record([gt(0, 0, 10, 10)])
        dets = [det(0, 0, 10, 10, score=0.9), det(1, 1, 11, 11, score=0.8)]
        flags, unmatched = match_detections(dets, truth)
        assert flags == [True, False] and unmatched == 0

    def test_wrong_class_is_fp(self):
        truth = record([gt(0, 0, 10, 10, "gap")])
        flags, unmatched = match_detections([det(0, 0, 10, 10, label="bridge")], truth)
        assert flags == [False] and unmatched == 1

    def test_argmax_iou_choice(self):
        truth = record([gt(0, 0, 10, 10), gt(0, 0, 12, 12)])
        flags, unmatched = match_detections([det(0, 0, 12, 12)], truth)
        assert flags == [True] and unmatched == 1

    def test_matches_oracle_on_random_instances(self):
        rng = np.random.default_rng(31)
        for _ in range(300):
            n_truth = int(rng.integers(0, 6))
            n_det = int(rng.integers(0, 11 - n_truth))
            truth = record(
                [
                    GroundTruthDefect(
                        DEFECT_CLASSES[int(rng.integers(0, 3))], random_box(rng, size=50.0)
                    )
                    for _ in range(n_truth)
                ],
                size=64,
            )
            dets = [
                Detection(
                    random_box(rng, size=50.0),
                    DEFECT_CLASSES[int(rng.integers(0, 3))],
                    float(rng.integers(1, 11)) / 10.0,
                    "m",
                )
                for _ in range(n_det)
            ]
            thr = float(rng.uniform(0.1, 0.7))
            assert match_detections(dets, truth, thr) == match_oracle(dets, truth, thr)


class TestAveragePrecision:
    def test_single_true_positive(self):
        assert average_precision([(0.9, True)], 1) == 1.0

    def test_stepped_curve(self):
        matches = [(0.9, True), (0.8, False), (0.7, True)]
        assert average_precision(matches, 2) == pytest.approx(0.5 + 0.5 * (2.0 / 3.0), abs=1e-12)

    def test_all_false(self):
        assert average_precision([(0.9, False), (0.5, False)], 3) == 0.0

    def test_empty_class_conventions(self):
        assert average_precision([], 0) == 1.0
        assert average_precision([(0.9, False)], 0) == 0.0
        assert average_precision([], 2) == 0.0

    def test_eleven_point_variant(self):
        matches = [(0.9, True), (0.8, False), (0.7, True)]
        # recall 0..0.5 → precision 1.0 (6 grid points), beyond → 2/3 (5 points)
        want = (6 * 1.0 + 5 * (2.0 / 3.0)) / 11.0
        assert average_precision(matches, 2, interpolation="eleven_point") == pytest.approx(want)

    def test_score_order_not_magnitude(self):
        matches = [(0.9, True), (0.8, False), (0.7, True)]
        squashed = [(s / 5.0 + 0.01, flag) for s, flag in matches]
        assert average_precision(matches, 2) == average_precision(squashed, 2)

    def test_trailing_fp_never_helps(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            n = int(rng.integers(1, 8))
            matches = sorted(
                [(float(rng.uniform(0.3, 1.0)), bool(rng.integers(0, 2))) for _ in range(n)],
                reverse=True,
            )
            total = max(1, sum(flag for _, flag in matches))
            base = average_precision(matches, total)
            worse = average_precision(matches + [(0.01, False)], total)
            assert worse <= base + 1e-12


class TestMeanAveragePrecision:
    @pytest.mark.parametrize("row", sorted(REFERENCE_ROWS))
    def test_reference_rows(self, row):
        aps, want = REFERENCE_ROWS[row]
        got = mean_average_precision(aps, TRUTH_COUNTS, weighting="instances")
        assert got == pytest.approx(want, abs=1e-3)

    def test_uniform_mean_differs(self):
        aps, _ = REFERENCE_ROWS["ensemble"]
        uniform = mean_average_precision(aps, TRUTH_COUNTS, weighting="uniform")
        assert uniform == pytest.approx(0.7698, abs=1e-4)
        assert abs(uniform - 0.816) > 0.02

    def test_constant_aps(self):
        aps = {c: 0.6 for c in DEFECT_CLASSES}
        counts = {c: i + 1 for i, c in enumerate(DEFECT_CLASSES)}
        for weighting in ("instances", "uniform"):
            assert mean_average_precision(aps, counts, weighting) == pytest.approx(0.6)

    def test_empty_and_mismatched_keys(self):
        with pytest.raises(ValidationError):
            mean_average_precision({}, {})
        with pytest.raises(ValidationError):
            mean_average_precision({"gap": 0.5}, {"bridge": 3})

    def test_zero_total_falls_back_to_uniform(self):
        aps = {"gap": 0.4, "bridge": 0.8}
        assert mean_average_precision(aps, {"gap": 0, "bridge": 0}) == pytest.approx(0.6)


def tiny_run(fp_extra=0):
    """One-image run: two gap truths, one matched; optional extra FPs."""
    truths = [record([gt(0, 0, 10, 10), gt(40, 40, 55, 55)], image_id="a", size=64)]
    dets = {"a": [det(0, 0, 10, 10, score=0.9)]}
    for k in range(fp_extra):
        dets["a"].append(det(20 + 3 * k, 1, 30 + 3 * k, 8, label="gap", score=0.6))
    return dets, truths


class TestEvaluateDetections:
    def test_counts_and_interval(self):
        dets, truths = tiny_run(fp_extra=1)
        report = evaluate_detections(dets, truths, EvalConfig())
        cls = report.per_class["gap"]
        assert (cls.tp, cls.fp, cls.fn, cls.truth_count) == (1, 1, 1, 2)
        assert 0.0 <= report.map_score <= 1.0
        assert cls.pr  # recall/precision points present

    def test_score_threshold_prefilters(self):
        dets, truths = tiny_run()
        dets["a"].append(det(40, 40, 55, 55, score=0.2))
        strict = evaluate_detections(dets, truths, EvalConfig(score_threshold=0.5))
        assert strict.per_class["gap"].tp == 1
        open_run = evaluate_detections(dets, truths, EvalConfig(score_threshold=None))
        assert open_run.per_class["gap"].tp == 2

    def test_classes_cover_truth_and_predictions(self):
        dets, truths = tiny_run()
        dets["a"].append(det(30, 30, 38, 38, label="bridge", score=0.9))
        report = evaluate_detections(dets, truths, EvalConfig())
        assert set(report.per_class) == {"gap", "bridge"}
        assert report.per_class["bridge"].truth_count == 0
        assert report.per_class["bridge"].ap == 0.0

    def test_unknown_image_rejected(self):
        dets, truths = tiny_run()
        dets["ghost"] = [det(0, 0, 5, 5)]
        with pytest.raises(ValidationError, match="ghost"):
            evaluate_detections(dets, truths, EvalConfig())

    def test_report_json_round_trip(self):
        dets, truths = tiny_run(fp_extra=2)
        report = evaluate_detections(dets, truths, EvalConfig(), imagery="noisy")
        back = report_from_json(report_to_json(report))
        assert back == report
        payload = json.loads(report_to_json(report))
        assert set(payload) == {"config", "per_class", "map"}
        assert set(payload["per_class"]["gap"]) == {"ap", "tp", "fp", "fn", "truth_count", "pr"}

    def test_pr_csv(self):
        dets, truths = tiny_run(fp_extra=1)
        report = evaluate_detections(dets, truths, EvalConfig())
        lines = pr_points_csv(report).splitlines()
        assert lines[0] == "class,recall,precision"
        assert len(lines) >= 2


class TestCompareRuns:
    def test_identical_runs(self):
        dets, truths = tiny_run()
        a = evaluate_detections(dets, truths, EvalConfig(), imagery="noisy")
        b = with_imagery(a, "denoised")
        delta = compare_runs(a, b)
        assert delta["total_fp_delta"] == 0
        assert all(not row["fp_reduced"] for row in delta["per_class"].values())
        assert all(row["delta_ap"] == 0.0 for row in delta["per_class"].values())
        assert delta["imagery"] == ["noisy", "denoised"]

    def test_fp_reduction_flag(self):
        noisy_dets, truths = tiny_run(fp_extra=3)
        clean_dets, _ = tiny_run(fp_extra=0)
        a = evaluate_detections(noisy_dets, truths, EvalConfig(), imagery="noisy")
        b = evaluate_detections(clean_dets, truths, EvalConfig(), imagery="denoised")
        delta = compare_runs(a, b)
        assert delta["per_class"]["gap"]["delta_fp"] == -3
        assert delta["per_class"]["gap"]["fp_reduced"] is True
        assert delta["total_fp_delta"] == -3

    def test_config_mismatch(self):
        dets, truths = tiny_run()
        a = evaluate_detections(dets, truths, EvalConfig(iou_threshold=0.5))
        b = evaluate_detections(dets, truths, EvalConfig(iou_threshold=0.75))
        with pytest.raises(ValidationError):
            compare_runs(a, b)

    def test_class_set_mismatch(self):
        dets, truths = tiny_run()
        a = evaluate_detections(dets, truths, EvalConfig())
        extra = {"a": dets["a"] + [det(30, 30, 38, 38, label="bridge", score=0.9)]}
        b = evaluate_detections(extra, truths, EvalConfig())
        with pytest.raises(ValidationError):
            compare_runs(a, b)
