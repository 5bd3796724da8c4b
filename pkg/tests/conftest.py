"""Shared fixtures and small builders for the test suite."""
from __future__ import annotations

import numpy as np
import pytest

from wafersem import (
    Box,
    DefectSpec,
    Detection,
    GroundTruthDefect,
    GroundTruthRecord,
    NoiseSpec,
    PatternSpec,
    generate_dataset,
    render_clean,
)


def det(x0, y0, x1, y1, label="gap", score=0.9, source="m1"):
    """Terse Detection builder for fixtures."""
    return Detection(Box(float(x0), float(y0), float(x1), float(y1)), label, float(score), source)


def gt(x0, y0, x1, y1, label="gap"):
    """Terse ground-truth defect builder."""
    return GroundTruthDefect(label, Box(float(x0), float(y0), float(x1), float(y1)))


def record(defects, image_id="img", size=1024):
    """Wrap defects in a ground-truth record sized `size`²."""
    return GroundTruthRecord(image_id, size, size, tuple(defects))


def random_box(rng, size=100.0, min_side=2.0):
    """Uniform random box with positive area inside [0, size)²."""
    while True:
        xs = np.sort(rng.uniform(0.0, size, 2))
        ys = np.sort(rng.uniform(0.0, size, 2))
        if xs[1] - xs[0] >= min_side and ys[1] - ys[0] >= min_side:
            return Box(float(xs[0]), float(ys[0]), float(xs[1]), float(ys[1]))


@pytest.fixture(scope="session")
def pattern256():
    return PatternSpec(image_size=256, pitch_px=40.0, seed=0)


@pytest.fixture(scope="session")
def clean_render(pattern256):
    """Defect-free render of the shared 256² pattern."""
    image, truth = render_clean(pattern256, [], image_id="clean")
    return image, truth


@pytest.fixture(scope="session")
def bridge_render(pattern256):
    """256² render with a single injected bridge."""
    rng = np.random.default_rng(7)
    image, truth = render_clean(
        pattern256, [DefectSpec("bridge")], image_id="bridge", rng=rng
    )
    assert len(truth.defects) == 1
    return image, truth


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Six-image labelled dataset at 256² used by pipeline/CLI/service tests."""
    root = tmp_path_factory.mktemp("small_ds") / "ds"
    pattern = PatternSpec(image_size=256, pitch_px=40.0, seed=0)
    generate_dataset(
        pattern,
        {"gap": 2.0, "microbridge": 1.0, "bridge": 1.0},
        NoiseSpec(gaussian_sigma=0.03),
        count=6,
        seed=21,
        out=root,
    )
    return root
