"""Conventional threshold + failure-size detector."""
from __future__ import annotations

import numpy as np
import pytest

from wafersem import (
    BaselineParams,
    DefectSpec,
    NoiseSpec,
    PatternSpec,
    ValidationError,
    add_noise,
    detect_conventional,
    iou,
    render_clean,
)


def params_for(pattern, **kw):
    return BaselineParams(expected_pattern=pattern, **kw)


class TestParams:
    def test_threshold_must_sit_between_intensities(self, pattern256):
        with pytest.raises(ValidationError):
            params_for(pattern256, intensity_threshold=0.2)
        with pytest.raises(ValidationError):
            params_for(pattern256, intensity_threshold=0.8)
        with pytest.raises(ValidationError):
            params_for(pattern256, min_failure_area_px=0)
        with pytest.raises(ValidationError):
            params_for(pattern256, merge_distance_px=-1)

    def test_size_mismatch_rejected(self, pattern256, clean_render):
        image, _ = clean_render
        other = PatternSpec(image_size=512)
        with pytest.raises(ValidationError):
            detect_conventional(image, params_for(other))


class TestDetect:
    def test_defect_free_yields_nothing(self, pattern256, clean_render):
        image, _ = clean_render
        assert detect_conventional(image, params_for(pattern256)) == []

    def test_single_bridge_found(self, pattern256, bridge_render):
        image, truth = bridge_render
        dets = detect_conventional(image, params_for(pattern256))
        assert len(dets) == 1
        assert dets[0].label == "bridge"
        assert iou(dets[0].box, truth.defects[0].box) >= 0.5

    @pytest.mark.parametrize("label", ["bridge", "microbridge", "gap", "p_gap", "line_collapse"])
    def test_every_class_recovered(self, pattern256, label):
        for seed in range(4):
            rng = np.random.default_rng(100 + seed)
            image, truth = render_clean(pattern256, [DefectSpec(label)], rng=rng)
            dets = detect_conventional(image, params_for(pattern256))
            best = max(
                (d for d in dets if d.label == label),
                key=lambda d: iou(d.box, truth.defects[0].box),
                default=None,
            )
            assert best is not None, (label, seed)
            assert iou(best.box, truth.defects[0].box) >= 0.5, (label, seed)

    def test_boxes_inside_image(self, pattern256):
        rng = np.random.default_rng(3)
        image, _ = render_clean(
            pattern256, [DefectSpec("gap", count=2), DefectSpec("bridge")], rng=rng
        )
        noisy = add_noise(image, NoiseSpec(gaussian_sigma=0.08, seed=3))
        for d in detect_conventional(noisy, params_for(pattern256)):
            assert 0.0 <= d.box.x_min < d.box.x_max <= 256.0
            assert 0.0 <= d.box.y_min < d.box.y_max <= 256.0

    def test_min_area_monotone(self, pattern256, bridge_render):
        image, _ = bridge_render
        noisy = add_noise(image, NoiseSpec(gaussian_sigma=0.08, seed=7))
        counts = [
            len(detect_conventional(noisy, params_for(pattern256, min_failure_area_px=a)))
            for a in (1, 2, 4, 8, 16, 64)
        ]
        assert counts == sorted(counts, reverse=True)

    def test_noise_perturbs_detection_count(self, pattern256, bridge_render):
        image, _ = bridge_render
        p = params_for(pattern256)
        clean_count = len(detect_conventional(image, p))
        noisy_counts = [
            len(detect_conventional(
                add_noise(image, NoiseSpec(gaussian_sigma=0.12, seed=s)), p
            ))
            for s in range(20)
        ]
        assert any(c != clean_count for c in noisy_counts)

    def test_score_is_area_proxy(self, pattern256, bridge_render):
        image, _ = bridge_render
        dets = detect_conventional(image, params_for(pattern256, min_failure_area_px=4))
        assert dets[0].score == 1.0  # a bridge is far larger than 16 px
        small = detect_conventional(
            image, params_for(pattern256, min_failure_area_px=10_000)
        )
        assert all(d.score < 1.0 for d in small)

    def test_sorted_by_score_then_corner(self, pattern256):
        rng = np.random.default_rng(15)
        image, _ = render_clean(
            pattern256, [DefectSpec("microbridge", count=2), DefectSpec("bridge")], rng=rng
        )
        dets = detect_conventional(image, params_for(pattern256))
        keys = [(-d.score, d.box.x_min, d.box.y_min, d.label) for d in dets]
        assert keys == sorted(keys)

    def test_source_tag_override(self, pattern256, bridge_render):
        image, _ = bridge_render
        dets = detect_conventional(image, params_for(pattern256), source="sweep_a")
        assert {d.source for d in dets} == {"sweep_a"}
