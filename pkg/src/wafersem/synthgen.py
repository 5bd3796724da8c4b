"""Deterministic line/space SEM-like image generator with injected defects.

Vertical resist lines are modelled as per-row left/right edge trajectories;
defects edit those trajectories (gap, p_gap) or add extra material between
lines (bridge, microbridge, line_collapse). The rendered ground-truth box of
a defect is the tight bounding box of the pixels it changed (|delta| >
MODIFIED_EPS after edge blur), padded by 2 px per side and clipped to the
canvas.

All randomness flows through one numpy Generator (PCG64); identical specs
and seeds produce bit-identical rasters and records.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, gaussian_filter1d

from .datamodel import (
    GroundTruthDefect,
    GroundTruthRecord,
    SplitManifest,
    record_to_json,
    validate_label,
)
from .errors import CapacityError, ValidationError
from .geometry import Box, iou
from .image import DEFAULT_PIXEL_SIZE_NM, SemImage, save_png

RNG_ALGORITHM = "numpy-pcg64"

# Intensity change that counts as "modified" when extracting a defect's
# ground-truth box; keeps boxes near the visually changed region instead of
# chasing the full blur skirt.
MODIFIED_EPS = 0.02

GT_PAD_PX = 2

# Smoothing length (rows) of the line-edge roughness random walk.
LWR_CORRELATION_ROWS = 8.0

# Default per-class size bands, recorded in the dataset manifest. Lengths in
# pitch units unless noted.
SIZE_BANDS = {
    "bridge": {"length_pitch": (0.5, 1.5)},
    "microbridge": {"span_space_frac": (0.2, 0.5), "height_px": (2, 6)},
    "gap": {"length_pitch": (0.5, 3.0)},
    "p_gap": {"length_pitch": (0.5, 3.0), "remaining_width_frac": (0.3, 0.7)},
    "line_collapse": {"length_image_frac": (0.25, 0.5)},
}

# Table-like class mix used when no mix is supplied (gap-heavy, bridge rare).
DEFAULT_MIX = {
    "gap": 174.0,
    "p_gap": 54.0,
    "microbridge": 78.0,
    "bridge": 17.0,
    "line_collapse": 76.0,
}

MAX_PLACEMENT_ATTEMPTS = 1000


@dataclass(frozen=True)
class PatternSpec:
    """Geometry and contrast of the defect-free line/space raster."""

    image_size: int = 1024
    pitch_px: float = 40.0
    line_duty: float = 0.5
    line_intensity: float = 0.75
    space_intensity: float = 0.25
    edge_sigma_px: float = 1.0
    lwr_sigma_px: float = 0.0
    charging_contrast: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.line_duty < 1.0:
            raise ValidationError(f"line_duty must be in (0,1), got {self.line_duty}")
        if self.pitch_px < 4:
            raise ValidationError(f"pitch_px must be >= 4, got {self.pitch_px}")
        if self.line_intensity <= self.space_intensity:
            raise ValidationError("line_intensity must exceed space_intensity")
        if not 0.0 <= self.charging_contrast < 1.0:
            raise ValidationError("charging_contrast must be in [0,1)")
        if self.image_size < int(self.pitch_px):
            raise ValidationError("image_size must cover at least one pitch")

    @property
    def line_width(self) -> float:
        return self.pitch_px * self.line_duty

    @property
    def space_width(self) -> float:
        return self.pitch_px - self.line_width

    @property
    def n_lines(self) -> int:
        # Full lines only, centred within their pitch period.
        margin = self.space_width / 2.0
        n = 0
        while (n + 1) * self.pitch_px - margin <= self.image_size + 1e-9:
            n += 1
        return n

    def nominal_edges(self) -> list[tuple[float, float]]:
        """(left, right) edge x-positions of each full line."""
        margin = self.space_width / 2.0
        return [
            (k * self.pitch_px + margin, k * self.pitch_px + margin + self.line_width)
            for k in range(self.n_lines)
        ]


@dataclass(frozen=True)
class DefectSpec:
    """Request for `count` defects of one class, with optional size overrides."""

    label: str
    count: int = 1
    length_range: tuple[float, float] | None = None
    span_range: tuple[float, float] | None = None
    height_range: tuple[float, float] | None = None
    thin_range: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        validate_label(self.label)
        if self.count < 0:
            raise ValidationError(f"defect count must be >= 0, got {self.count}")


@dataclass(frozen=True)
class FootingSpec:
    """Sub-threshold resist-footing bumps, injected without ground truth."""

    count: int = 0
    amplitude: float = 0.45
    span_range: tuple[float, float] = (0.15, 0.35)
    height_range: tuple[float, float] = (2.0, 5.0)

    def __post_init__(self) -> None:
        if not 0.0 < self.amplitude < 1.0:
            raise ValidationError("footing amplitude must be in (0,1)")


@dataclass(frozen=True)
class NoiseSpec:
    """Per-pixel noise model applied after rendering."""

    model: str = "gaussian"
    gaussian_sigma: float = 0.05
    poisson_scale: float = 400.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.model not in ("gaussian", "poisson-gaussian"):
            raise ValidationError(f"unknown noise model {self.model!r}")
        if self.gaussian_sigma < 0:
            raise ValidationError("gaussian_sigma must be >= 0")
        if self.poisson_scale <= 0:
            raise ValidationError("poisson_scale must be > 0")


@dataclass
class _Extra:
    """Rectangle of extra material with per-row horizontal extent."""

    x0: np.ndarray  # (H,)
    x1: np.ndarray  # (H,)
    y0: int
    y1: int
    amplitude: float
    factor: float


@dataclass
class _Structure:
    lefts: np.ndarray  # (n_lines, H)
    rights: np.ndarray  # (n_lines, H)
    factors: np.ndarray  # (n_lines,)
    extras: list[_Extra] = field(default_factory=list)

    def copy(self) -> "_Structure":
        return _Structure(
            self.lefts.copy(), self.rights.copy(), self.factors.copy(), list(self.extras)
        )


def _base_structure(pattern: PatternSpec, rng: np.random.Generator) -> _Structure:
    h = pattern.image_size
    edges = pattern.nominal_edges()
    n = len(edges)
    if pattern.charging_contrast > 0:
        factors = rng.uniform(
            1.0 - pattern.charging_contrast, 1.0 + pattern.charging_contrast, n
        )
    else:
        factors = np.ones(n)
    lefts = np.empty((n, h))
    rights = np.empty((n, h))
    for k, (left, right) in enumerate(edges):
        lefts[k] = left + _lwr_trajectory(pattern, rng, h)
        rights[k] = right + _lwr_trajectory(pattern, rng, h)
    return _Structure(lefts, rights, np.asarray(factors, dtype=np.float64))


def _lwr_trajectory(pattern: PatternSpec, rng: np.random.Generator, h: int) -> np.ndarray:
    # Draw even when sigma is zero so the RNG stream does not depend on it.
    white = rng.standard_normal(h)
    if pattern.lwr_sigma_px == 0:
        return np.zeros(h)
    smooth = gaussian_filter1d(white, LWR_CORRELATION_ROWS, mode="wrap")
    std = smooth.std()
    if std == 0:
        return np.zeros(h)
    return smooth * (pattern.lwr_sigma_px / std)


def _render(pattern: PatternSpec, structure: _Structure) -> np.ndarray:
    h = w = pattern.image_size
    xs = np.arange(w, dtype=np.float64)
    cov = np.zeros((h, w))
    for k in range(structure.lefts.shape[0]):
        a = structure.lefts[k][:, None]
        b = structure.rights[k][:, None]
        cov += structure.factors[k] * np.clip(
            np.minimum(b, xs + 1.0) - np.maximum(a, xs), 0.0, 1.0
        )
    for e in structure.extras:
        rows = slice(e.y0, e.y1)
        a = e.x0[rows][:, None]
        b = e.x1[rows][:, None]
        cov[rows] += (
            e.amplitude
            * e.factor
            * np.clip(np.minimum(b, xs + 1.0) - np.maximum(a, xs), 0.0, 1.0)
        )
    if pattern.edge_sigma_px > 0:
        cov = gaussian_filter(cov, pattern.edge_sigma_px, mode="nearest")
    img = pattern.space_intensity + (
        pattern.line_intensity - pattern.space_intensity
    ) * cov
    return np.clip(img, 0.0, 1.0)


def _tight_box(mask: np.ndarray, size: int) -> Box | None:
    ys, xs = np.nonzero(mask)
    if xs.size == 0:
        return None
    return Box(
        max(0.0, float(xs.min() - GT_PAD_PX)),
        max(0.0, float(ys.min() - GT_PAD_PX)),
        min(float(size), float(xs.max() + 1 + GT_PAD_PX)),
        min(float(size), float(ys.max() + 1 + GT_PAD_PX)),
    )


def _uniform(rng: np.random.Generator, band: tuple[float, float]) -> float:
    return float(rng.uniform(band[0], band[1]))


def _apply_defect(
    structure: _Structure,
    pattern: PatternSpec,
    spec: DefectSpec,
    rng: np.random.Generator,
) -> tuple[_Structure, tuple[float, float, float, float]]:
    """Sample one defect instance; returns the edited structure and the
    structural (pre-blur) extent used for the cheap overlap pre-check."""
    h = pattern.image_size
    n = structure.lefts.shape[0]
    label = spec.label
    out = structure.copy()

    if label in ("bridge", "line_collapse"):
        if n < 2:
            raise CapacityError(f"{label} needs two adjacent lines")
        k = int(rng.integers(0, n - 1))
        if label == "bridge":
            band = spec.length_range or SIZE_BANDS["bridge"]["length_pitch"]
            length = max(2, int(round(_uniform(rng, band) * pattern.pitch_px)))
        else:
            band = spec.length_range or SIZE_BANDS["line_collapse"]["length_image_frac"]
            length = max(2, int(round(_uniform(rng, band) * h)))
        if length >= h:
            length = h - 1
        y0 = int(rng.integers(0, h - length + 1))
        factor = float(0.5 * (structure.factors[k] + structure.factors[k + 1]))
        out.extras.append(
            _Extra(structure.rights[k], structure.lefts[k + 1], y0, y0 + length, 1.0, factor)
        )
        x0 = float(structure.rights[k][y0 : y0 + length].min())
        x1 = float(structure.lefts[k + 1][y0 : y0 + length].max())
        return out, (x0, y0, x1, y0 + length)

    if label == "microbridge":
        if n < 2:
            raise CapacityError("microbridge needs two adjacent lines")
        k = int(rng.integers(0, n - 1))
        span_band = spec.span_range or SIZE_BANDS["microbridge"]["span_space_frac"]
        height_band = spec.height_range or SIZE_BANDS["microbridge"]["height_px"]
        span = _uniform(rng, span_band) * pattern.space_width
        height = max(1, int(round(_uniform(rng, height_band))))
        y0 = int(rng.integers(0, h - height + 1))
        side = int(rng.integers(0, 2))
        if side == 0:  # bump on the right edge of line k
            x0arr = structure.rights[k].copy()
            x1arr = x0arr + span
            factor = float(structure.factors[k])
        else:  # bump on the left edge of line k+1
            x1arr = structure.lefts[k + 1].copy()
            x0arr = x1arr - span
            factor = float(structure.factors[k + 1])
        out.extras.append(_Extra(x0arr, x1arr, y0, y0 + height, 1.0, factor))
        x0 = float(x0arr[y0 : y0 + height].min())
        x1 = float(x1arr[y0 : y0 + height].max())
        return out, (x0, y0, x1, y0 + height)

    if label in ("gap", "p_gap"):
        k = int(rng.integers(0, n))
        band = spec.length_range or SIZE_BANDS[label]["length_pitch"]
        length = max(2, int(round(_uniform(rng, band) * pattern.pitch_px)))
        if length >= h:
            length = h - 1
        y0 = int(rng.integers(0, h - length + 1))
        rows = slice(y0, y0 + length)
        if label == "gap":
            centre = 0.5 * (out.lefts[k, rows] + out.rights[k, rows])
            out.lefts[k, rows] = centre
            out.rights[k, rows] = centre
        else:
            # One-sided thinning: eroding a single edge keeps the changed
            # region a single connected strip, as a threshold tool sees it.
            thin_band = spec.thin_range or SIZE_BANDS["p_gap"]["remaining_width_frac"]
            remaining = _uniform(rng, thin_band)
            width = structure.rights[k, rows] - structure.lefts[k, rows]
            if int(rng.integers(0, 2)) == 0:
                out.rights[k, rows] = out.lefts[k, rows] + remaining * width
            else:
                out.lefts[k, rows] = out.rights[k, rows] - remaining * width
        x0 = float(structure.lefts[k, rows].min())
        x1 = float(structure.rights[k, rows].max())
        return out, (x0, y0, x1, y0 + length)

    raise ValidationError(f"unknown defect class {label!r}")


def _apply_footing(
    structure: _Structure,
    pattern: PatternSpec,
    spec: FootingSpec,
    rng: np.random.Generator,
) -> tuple[_Structure, tuple[float, float, float, float]]:
    h = pattern.image_size
    n = structure.lefts.shape[0]
    if n < 2:
        raise CapacityError("footing needs two adjacent lines")
    out = structure.copy()
    k = int(rng.integers(0, n - 1))
    span = _uniform(rng, spec.span_range) * pattern.space_width
    height = max(1, int(round(_uniform(rng, spec.height_range))))
    y0 = int(rng.integers(0, h - height + 1))
    side = int(rng.integers(0, 2))
    if side == 0:
        x0arr = structure.rights[k].copy()
        x1arr = x0arr + span
        factor = float(structure.factors[k])
    else:
        x1arr = structure.lefts[k + 1].copy()
        x0arr = x1arr - span
        factor = float(structure.factors[k + 1])
    out.extras.append(_Extra(x0arr, x1arr, y0, y0 + height, spec.amplitude, factor))
    x0 = float(x0arr[y0 : y0 + height].min())
    x1 = float(x1arr[y0 : y0 + height].max())
    return out, (x0, y0, x1, y0 + height)


def _boxes_clear(
    candidate: tuple[float, float, float, float],
    margin: float,
    occupied: list[Box],
    size: int,
) -> bool:
    x0, y0, x1, y1 = candidate
    expanded = Box(
        max(0.0, x0 - margin),
        max(0.0, y0 - margin),
        min(float(size), x1 + margin),
        min(float(size), y1 + margin),
    )
    return all(iou(expanded, b) == 0.0 for b in occupied)


def render_clean(
    pattern: PatternSpec,
    defects: list[DefectSpec],
    footing: FootingSpec | None = None,
    image_id: str = "",
    pixel_size_nm: float = DEFAULT_PIXEL_SIZE_NM,
    rng: np.random.Generator | None = None,
) -> tuple[SemImage, GroundTruthRecord]:
    """Render the pattern with the requested defects and exact ground truth.

    Defects are placed by rejection sampling so their ground-truth boxes are
    pairwise disjoint; after MAX_PLACEMENT_ATTEMPTS failures a CapacityError
    names the class. Footing bumps never enter the ground truth.
    """
    if rng is None:
        rng = np.random.default_rng(pattern.seed)
    size = pattern.image_size
    structure = _base_structure(pattern, rng)
    current = _render(pattern, structure)
    margin = math.ceil(4.0 * pattern.edge_sigma_px) + GT_PAD_PX + 1

    gt: list[GroundTruthDefect] = []
    occupied: list[Box] = []

    requests = [(spec, i) for spec in defects for i in range(spec.count)]
    for spec, _ in requests:
        placed = False
        for _attempt in range(MAX_PLACEMENT_ATTEMPTS):
            trial, extent = _apply_defect(structure, pattern, spec, rng)
            if not _boxes_clear(extent, margin, occupied, size):
                continue
            trial_img = _render(pattern, trial)
            box = _tight_box(np.abs(trial_img - current) > MODIFIED_EPS, size)
            if box is None:
                continue
            if any(iou(box, b) > 0.0 for b in occupied):
                continue
            structure, current = trial, trial_img
            gt.append(GroundTruthDefect(spec.label, box))
            occupied.append(box)
            placed = True
            break
        if not placed:
            raise CapacityError(
                f"could not place a {spec.label!r} defect after "
                f"{MAX_PLACEMENT_ATTEMPTS} attempts"
            )

    if footing is not None:
        for _ in range(footing.count):
            placed = False
            for _attempt in range(MAX_PLACEMENT_ATTEMPTS):
                trial, extent = _apply_footing(structure, pattern, footing, rng)
                if not _boxes_clear(extent, margin, occupied, size):
                    continue
                trial_img = _render(pattern, trial)
                box = _tight_box(np.abs(trial_img - current) > MODIFIED_EPS / 2, size)
                if box is None:
                    continue
                structure, current = trial, trial_img
                occupied.append(box)  # reserve space, but no ground truth
                placed = True
                break
            if not placed:
                raise CapacityError(
                    f"could not place a footing bump after {MAX_PLACEMENT_ATTEMPTS} attempts"
                )

    image = SemImage(current, pixel_size_nm)
    record = GroundTruthRecord(image_id, size, size, tuple(gt))
    return image, record


def add_noise(image: SemImage, noise: NoiseSpec, rng: np.random.Generator | None = None) -> SemImage:
    """Apply the noise model and clamp intensities back to [0,1]."""
    if rng is None:
        rng = np.random.default_rng(noise.seed)
    pixels = image.pixels
    if noise.model == "poisson-gaussian":
        pixels = rng.poisson(pixels * noise.poisson_scale) / noise.poisson_scale
    noisy = pixels + rng.normal(0.0, noise.gaussian_sigma, size=image.pixels.shape)
    return image.with_pixels(np.clip(noisy, 0.0, 1.0))


def generate_dataset(
    pattern: PatternSpec,
    mix: dict[str, float] | None,
    noise: NoiseSpec,
    count: int,
    seed: int,
    out: Path | str,
    pixel_size_nm: float = DEFAULT_PIXEL_SIZE_NM,
    mean_defects_per_image: float = 2.6,
    footing: FootingSpec | None = None,
) -> SplitManifest:
    """Write `count` images + ground truth + split manifest under `out`.

    Per-image RNG streams derive from (seed, image index), so regeneration
    and parallel generation are bit-identical. The manifest records every
    generator parameter for provenance.
    """
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    mix = dict(mix) if mix else dict(DEFAULT_MIX)
    for label in mix:
        validate_label(label)
    labels = sorted(mix)
    weights = np.array([mix[l] for l in labels], dtype=np.float64)
    if weights.sum() <= 0 or (weights < 0).any():
        raise ValidationError("defect mix weights must be non-negative with positive sum")
    weights = weights / weights.sum()

    out_dir = Path(out)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "annotations").mkdir(parents=True, exist_ok=True)

    image_ids = []
    for i in range(count):
        rng_struct = np.random.default_rng([seed, i, 0])
        rng_noise = np.random.default_rng([seed, i, 1])
        n_defects = 1 + int(rng_struct.poisson(max(0.0, mean_defects_per_image - 1.0)))
        chosen = rng_struct.choice(len(labels), size=n_defects, p=weights)
        defects = [DefectSpec(labels[c], 1) for c in chosen]
        image_id = f"images/img_{i:05d}.png"
        image, record = render_clean(
            pattern,
            defects,
            footing=footing,
            image_id=image_id,
            pixel_size_nm=pixel_size_nm,
            rng=rng_struct,
        )
        noisy = add_noise(image, noise, rng=rng_noise)
        save_png(noisy, out_dir / image_id)
        (out_dir / "annotations" / f"img_{i:05d}.json").write_text(record_to_json(record))
        image_ids.append(image_id)

    n_train = int(count * 0.8)
    n_val = int(count * 0.1)
    manifest = SplitManifest(
        {
            "train": tuple(image_ids[:n_train]),
            "val": tuple(image_ids[n_train : n_train + n_val]),
            "test": tuple(image_ids[n_train + n_val :]),
        }
    )
    (out_dir / "splits.json").write_text(manifest.to_json())

    provenance = {
        "rng": RNG_ALGORITHM,
        "seed": seed,
        "count": count,
        "pixel_size_nm": pixel_size_nm,
        "pattern": dataclasses.asdict(pattern),
        "noise": dataclasses.asdict(noise),
        "mix": {l: mix[l] for l in labels},
        "mean_defects_per_image": mean_defects_per_image,
        "size_bands": SIZE_BANDS,
        "footing": dataclasses.asdict(footing) if footing is not None else None,
        "splits": {k: list(v) for k, v in manifest.splits.items()},
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(provenance, indent=2, sort_keys=True) + "\n"
    )
    return manifest


def load_manifest(dataset_dir: Path | str) -> dict:
    """Read the provenance manifest written by generate_dataset."""
    return json.loads((Path(dataset_dir) / "manifest.json").read_text())


def pattern_from_manifest(manifest: dict) -> PatternSpec:
    return PatternSpec(**manifest["pattern"])


def dataset_checksum(dataset_dir: Path | str) -> str:
    """SHA-256 over every file in the dataset tree (sorted relative paths)."""
    root = Path(dataset_dir)
    digest = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        digest.update(str(path.relative_to(root)).encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()
