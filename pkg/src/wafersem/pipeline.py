"""Dataset-directory conventions and dataset-scale pipeline runs.

A dataset is a directory of images (any nesting) with optional annotations
(VOC XML or internal JSON, matched by file stem), an optional `splits.json`,
and an optional `manifest.json` with generator provenance. Image ids are
POSIX-style paths relative to the dataset root.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .baseline import BaselineParams, detect_conventional
from .datamodel import GroundTruthRecord, PredictionSet, load_ground_truth
from .denoise import denoise
from .errors import ValidationError
from .image import DEFAULT_PIXEL_SIZE_NM, load_image, save_png
from .synthgen import PatternSpec

IMAGE_EXTENSIONS = (".png", ".tif", ".tiff", ".jpg", ".jpeg")
ANNOTATION_EXTENSIONS = (".xml", ".json")
_RESERVED_JSON = ("manifest.json", "splits.json")

ProgressFn = Callable[[int, int], None]


@dataclass
class Dataset:
    """Resolved dataset directory: image files plus associated ground truth."""

    root: Path
    images: dict[str, Path]
    truths: dict[str, GroundTruthRecord] = field(default_factory=dict)
    manifest: dict | None = None
    annotation_errors: list[tuple[str, str]] = field(default_factory=list)

    @property
    def n_images(self) -> int:
        return len(self.images)

    @property
    def has_ground_truth(self) -> bool:
        return bool(self.images) and all(i in self.truths for i in self.images)

    @property
    def pixel_size_nm(self) -> float:
        if self.manifest and "pixel_size_nm" in self.manifest:
            return float(self.manifest["pixel_size_nm"])
        return DEFAULT_PIXEL_SIZE_NM

    def pattern(self) -> PatternSpec | None:
        if self.manifest and "pattern" in self.manifest:
            return PatternSpec(**self.manifest["pattern"])
        return None


def load_dataset(root: Path | str) -> Dataset:
    """Scan a dataset directory; associate annotations to images by stem."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")

    images: dict[str, Path] = {}
    for path in sorted(root.rglob("*")):
        if path.is_file() and path.suffix.lower() in IMAGE_EXTENSIONS:
            images[path.relative_to(root).as_posix()] = path

    manifest = None
    manifest_path = root / "manifest.json"
    if manifest_path.is_file():
        manifest = json.loads(manifest_path.read_text())

    by_stem: dict[str, list[str]] = {}
    for image_id in images:
        by_stem.setdefault(Path(image_id).stem, []).append(image_id)

    truths: dict[str, GroundTruthRecord] = {}
    errors: list[tuple[str, str]] = []
    for path in sorted(root.rglob("*")):
        if not path.is_file() or path.suffix.lower() not in ANNOTATION_EXTENSIONS:
            continue
        if path.name in _RESERVED_JSON:
            continue
        rel = path.relative_to(root).as_posix()
        try:
            record = load_ground_truth(path)
        except ValidationError as exc:
            errors.append((rel, str(exc)))
            continue
        if record.image_id in images:
            truths[record.image_id] = record
        else:
            for image_id in by_stem.get(path.stem, []):
                truths[image_id] = record
    return Dataset(root, images, truths, manifest, errors)


def detect_dataset(
    dataset: Dataset,
    params: BaselineParams,
    progress: ProgressFn | None = None,
    model: str = "baseline",
) -> PredictionSet:
    """Run the conventional detector over every image in the dataset."""
    result = PredictionSet(model=model)
    total = dataset.n_images
    for done, image_id in enumerate(sorted(dataset.images), start=1):
        image = load_image(dataset.images[image_id], dataset.pixel_size_nm)
        result.images[image_id] = detect_conventional(image, params, source=model)
        if progress is not None:
            progress(done, total)
    return result


def denoise_dataset(
    dataset: Dataset,
    out_root: Path | str,
    method: str,
    method_params: dict[str, float] | None = None,
    progress: ProgressFn | None = None,
) -> Path:
    """Write a derived dataset with every image denoised.

    Annotation files, splits and the manifest are carried over; the manifest
    gains a `denoise` entry recording the method and parameters.
    """
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    method_params = dict(method_params or {})
    total = dataset.n_images
    for done, image_id in enumerate(sorted(dataset.images), start=1):
        image = load_image(dataset.images[image_id], dataset.pixel_size_nm)
        cleaned = denoise(image, method, **method_params)
        dest = out_root / image_id
        dest.parent.mkdir(parents=True, exist_ok=True)
        save_png(cleaned, dest)
        if progress is not None:
            progress(done, total)

    for path in sorted(dataset.root.rglob("*")):
        if not path.is_file() or path.suffix.lower() not in ANNOTATION_EXTENSIONS:
            continue
        if path.name in _RESERVED_JSON:
            continue
        dest = out_root / path.relative_to(dataset.root)
        dest.parent.mkdir(parents=True, exist_ok=True)
        dest.write_bytes(path.read_bytes())

    splits = dataset.root / "splits.json"
    if splits.is_file():
        (out_root / "splits.json").write_bytes(splits.read_bytes())

    manifest = dict(dataset.manifest or {})
    manifest["denoise"] = {"method": method, "params": method_params}
    (out_root / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )
    return out_root
