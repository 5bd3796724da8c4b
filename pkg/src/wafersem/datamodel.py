"""Defect taxonomy, annotations, prediction files, splits and the CSV report.

Every on-disk format the pipeline reads or writes lives here:

* ground truth as Pascal-VOC XML (LabelImg style) or the internal JSON form
  ``{"image": str, "width": int, "height": int, "defects": [{"class": str,
  "bbox": [xmin, ymin, xmax, ymax]}]}``
* predictions as JSON ``{"model": str, "images": [{"image": str,
  "detections": [{"class": str, "score": float, "bbox": [f,f,f,f]}]}]}``
* the defect CSV report with fixed header
  ``image,class,score,x_min,y_min,x_max,y_max,length_nm,width_nm,area_nm2``
* split manifests as JSON mapping split name -> image id array.

VOC corner values are taken verbatim as floats (no inclusive-corner +1
correction); round-trips are lossless.
"""

from __future__ import annotations

import io
import json
import shutil
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import BoundsError, FormatError, TaxonomyError, ValidationError
from .geometry import Box

DEFECT_CLASSES: tuple[str, ...] = (
    "bridge",
    "line_collapse",
    "gap",
    "microbridge",
    "p_gap",
)

CSV_HEADER = "image,class,score,x_min,y_min,x_max,y_max,length_nm,width_nm,area_nm2"

NO_DEFECT_FOLDER = "no_defect"


def validate_label(label: str) -> str:
    """Return `label` if it belongs to the closed five-class set, else raise."""
    if label not in DEFECT_CLASSES:
        raise TaxonomyError(
            f"unknown defect class {label!r}; expected one of {', '.join(DEFECT_CLASSES)}"
        )
    return label


@dataclass(frozen=True)
class Detection:
    """One predicted defect: box, class label, confidence and source model."""

    box: Box
    label: str
    score: float
    source: str

    def __post_init__(self) -> None:
        validate_label(self.label)
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"score must be in [0,1], got {self.score}")
        if not self.source:
            raise ValidationError("detection source must be non-empty")


@dataclass(frozen=True)
class GroundTruthDefect:
    """A labeled defect box inside a ground-truth record."""

    label: str
    box: Box

    def __post_init__(self) -> None:
        validate_label(self.label)


@dataclass(frozen=True)
class GroundTruthRecord:
    """Per-image labeled defects; the evaluation reference."""

    image_id: str
    width: int
    height: int
    defects: tuple[GroundTruthDefect, ...] = ()

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(f"image size must be positive, got {self.width}x{self.height}")
        for d in self.defects:
            b = d.box
            if b.x_min < 0 or b.y_min < 0 or b.x_max > self.width or b.y_max > self.height:
                raise BoundsError(
                    f"box {b.corners()} outside {self.width}x{self.height} image "
                    f"{self.image_id!r}"
                )


@dataclass(frozen=True)
class SplitManifest:
    """Dataset split bookkeeping: split name -> image ids."""

    splits: Mapping[str, tuple[str, ...]]

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "splits", {k: tuple(v) for k, v in self.splits.items()}
        )
        seen: set[str] = set()
        for name, ids in self.splits.items():
            dup = seen.intersection(ids)
            if dup:
                raise ValidationError(f"split {name!r} repeats image ids {sorted(dup)[:3]}")
            seen.update(ids)

    def image_ids(self) -> list[str]:
        return [i for ids in self.splits.values() for i in ids]

    def to_json(self) -> str:
        return json.dumps({k: list(v) for k, v in self.splits.items()}, indent=2) + "\n"

    @staticmethod
    def from_json(text: str) -> "SplitManifest":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise FormatError(f"split manifest is not valid JSON: {e}") from e
        if not isinstance(raw, dict):
            raise FormatError("split manifest must map split name to image id array")
        return SplitManifest({k: tuple(v) for k, v in raw.items()})


# ---------------------------------------------------------------------------
# Pascal-VOC XML ground truth
# ---------------------------------------------------------------------------


def parse_voc_annotation(xml_document: str) -> GroundTruthRecord:
    """Parse a LabelImg-style Pascal-VOC XML document into a record.

    Corner values are read verbatim as floats. Unknown class names raise
    TaxonomyError; boxes outside the image raise BoundsError; malformed XML
    raises FormatError naming the offending line.
    """
    try:
        root = ET.fromstring(xml_document)
    except ET.ParseError as e:
        line, col = e.position
        raise FormatError(f"malformed XML at line {line}, column {col}: {e.msg}") from e

    size = root.find("size")
    if size is None:
        raise FormatError("annotation lacks a <size> element")
    width = int(_text_of(size, "width"))
    height = int(_text_of(size, "height"))
    name_el = root.find("filename")
    image_id = (name_el.text or "").strip() if name_el is not None else ""

    defects = []
    for obj in root.findall("object"):
        label = validate_label(_text_of(obj, "name").strip())
        bnd = obj.find("bndbox")
        if bnd is None:
            raise FormatError(f"object {label!r} lacks a <bndbox>")
        box = Box(
            float(_text_of(bnd, "xmin")),
            float(_text_of(bnd, "ymin")),
            float(_text_of(bnd, "xmax")),
            float(_text_of(bnd, "ymax")),
        )
        defects.append(GroundTruthDefect(label, box))
    return GroundTruthRecord(image_id, width, height, tuple(defects))


def _text_of(parent: ET.Element, tag: str) -> str:
    el = parent.find(tag)
    if el is None or el.text is None:
        raise FormatError(f"missing <{tag}> element")
    return el.text


def to_voc_xml(record: GroundTruthRecord) -> str:
    """Serialize a record back to Pascal-VOC XML (covered fields only)."""
    root = ET.Element("annotation")
    ET.SubElement(root, "filename").text = record.image_id
    size = ET.SubElement(root, "size")
    ET.SubElement(size, "width").text = str(record.width)
    ET.SubElement(size, "height").text = str(record.height)
    ET.SubElement(size, "depth").text = "1"
    for d in record.defects:
        obj = ET.SubElement(root, "object")
        ET.SubElement(obj, "name").text = d.label
        bnd = ET.SubElement(obj, "bndbox")
        ET.SubElement(bnd, "xmin").text = repr(d.box.x_min)
        ET.SubElement(bnd, "ymin").text = repr(d.box.y_min)
        ET.SubElement(bnd, "xmax").text = repr(d.box.x_max)
        ET.SubElement(bnd, "ymax").text = repr(d.box.y_max)
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"


# ---------------------------------------------------------------------------
# Internal JSON ground truth
# ---------------------------------------------------------------------------


def record_to_json(record: GroundTruthRecord) -> str:
    payload = {
        "image": record.image_id,
        "width": record.width,
        "height": record.height,
        "defects": [
            {"class": d.label, "bbox": list(d.box.corners())} for d in record.defects
        ],
    }
    return json.dumps(payload, indent=2) + "\n"


def record_from_json(text: str) -> GroundTruthRecord:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"ground truth is not valid JSON: {e}") from e
    try:
        defects = tuple(
            GroundTruthDefect(validate_label(d["class"]), Box(*d["bbox"]))
            for d in raw.get("defects", [])
        )
        return GroundTruthRecord(raw["image"], int(raw["width"]), int(raw["height"]), defects)
    except (KeyError, TypeError) as e:
        raise FormatError(f"ground truth JSON missing field: {e}") from e


def load_ground_truth(path: Path) -> GroundTruthRecord:
    """Load one record from a .xml (VOC) or .json (internal) file."""
    text = Path(path).read_text()
    if str(path).endswith(".xml"):
        return parse_voc_annotation(text)
    return record_from_json(text)


# ---------------------------------------------------------------------------
# Prediction documents
# ---------------------------------------------------------------------------


@dataclass
class PredictionSet:
    """Detections grouped per image, tagged with the producing model."""

    model: str
    images: dict[str, list[Detection]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def all_detections(self) -> list[Detection]:
        return [d for dets in self.images.values() for d in dets]


def read_predictions(document: str) -> PredictionSet:
    """Parse a prediction JSON document.

    Duplicate image entries are merged and flagged in ``result.warnings``;
    a score outside [0,1] raises ValidationError.
    """
    try:
        raw = json.loads(document)
    except json.JSONDecodeError as e:
        raise FormatError(f"prediction document is not valid JSON: {e}") from e
    if not isinstance(raw, dict) or "model" not in raw or "images" not in raw:
        raise FormatError("prediction document must have 'model' and 'images' fields")
    model = str(raw["model"])
    result = PredictionSet(model=model)
    for entry in raw["images"]:
        image_id = entry["image"]
        dets = []
        for d in entry.get("detections", []):
            score = float(d["score"])
            if not 0.0 <= score <= 1.0:
                raise ValidationError(
                    f"score {score} outside [0,1] for image {image_id!r}"
                )
            dets.append(
                Detection(
                    Box(*d["bbox"]),
                    validate_label(d["class"]),
                    score,
                    str(d.get("source", model)),
                )
            )
        if image_id in result.images:
            result.warnings.append(f"duplicate image entry {image_id!r} merged")
            result.images[image_id].extend(dets)
        else:
            result.images[image_id] = dets
    return result


def write_predictions(predictions: PredictionSet) -> str:
    # A detection whose source differs from the file's model (a merged
    # ensemble file) keeps its tag in an extra per-detection field.
    def det_payload(d: Detection) -> dict:
        payload: dict = {"class": d.label, "score": d.score, "bbox": list(d.box.corners())}
        if d.source != predictions.model:
            payload["source"] = d.source
        return payload

    payload = {
        "model": predictions.model,
        "images": [
            {"image": image_id, "detections": [det_payload(d) for d in dets]}
            for image_id, dets in predictions.images.items()
        ],
    }
    return json.dumps(payload, indent=2) + "\n"


# ---------------------------------------------------------------------------
# CSV defect report
# ---------------------------------------------------------------------------


def _fmt(value: float) -> str:
    # 6 significant digits, '.' decimal separator -- bit-stable golden files.
    return f"{value:.6g}"


def export_csv(images: Mapping[str, Sequence[Detection]], pixel_size_nm: float) -> str:
    """Render the defect CSV report; one row per detection.

    length_nm is the longer box side, width_nm the shorter, both scaled by
    the pixel size; area_nm2 = pixel area * pixel_size_nm**2. Rows are
    sorted by (image, descending score).
    """
    if pixel_size_nm <= 0:
        raise ValidationError(f"pixel_size_nm must be positive, got {pixel_size_nm}")
    out = io.StringIO()
    out.write(CSV_HEADER + "\n")
    for image_id in sorted(images):
        dets = sorted(
            images[image_id],
            key=lambda d: (-d.score, d.box.x_min, d.box.y_min, d.label),
        )
        for d in dets:
            length = max(d.box.width, d.box.height) * pixel_size_nm
            width = min(d.box.width, d.box.height) * pixel_size_nm
            area = d.box.area * pixel_size_nm * pixel_size_nm
            fields = [
                image_id,
                d.label,
                _fmt(d.score),
                _fmt(d.box.x_min),
                _fmt(d.box.y_min),
                _fmt(d.box.x_max),
                _fmt(d.box.y_max),
                _fmt(length),
                _fmt(width),
                _fmt(area),
            ]
            out.write(",".join(fields) + "\n")
    return out.getvalue()


# ---------------------------------------------------------------------------
# Segregation into per-class folders
# ---------------------------------------------------------------------------


@dataclass
class SegregationPlan:
    """Class folder -> image ids, plus per-image copy errors."""

    folders: dict[str, list[str]]
    errors: list[tuple[str, str]] = field(default_factory=list)


def segregate(
    images: Mapping[str, Sequence[Detection]],
    score_threshold: float,
    images_root: Path | str | None = None,
    output_root: Path | str | None = None,
) -> SegregationPlan:
    """Plan (and optionally execute) per-class image segregation.

    An image is planned into the folder of every class for which it has at
    least one detection with score >= threshold; images with no qualifying
    detection go to ``no_defect/``. Copies are performed only when both
    roots are given; a missing source image becomes a per-image error entry
    and the plan continues.
    """
    if not 0.0 <= score_threshold <= 1.0:
        raise ValidationError(f"score_threshold must be in [0,1], got {score_threshold}")
    folders: dict[str, list[str]] = {c: [] for c in DEFECT_CLASSES}
    folders[NO_DEFECT_FOLDER] = []
    for image_id in sorted(images):
        classes = sorted({d.label for d in images[image_id] if d.score >= score_threshold})
        if not classes:
            folders[NO_DEFECT_FOLDER].append(image_id)
        else:
            for c in classes:
                folders[c].append(image_id)
    plan = SegregationPlan(folders=folders)

    if output_root is not None:
        out = Path(output_root)
        out.mkdir(parents=True, exist_ok=True)
        root = Path(images_root) if images_root is not None else Path(".")
        for folder, ids in plan.folders.items():
            dest_dir = out / folder
            dest_dir.mkdir(parents=True, exist_ok=True)
            for image_id in ids:
                src = root / image_id
                if not src.is_file():
                    plan.errors.append((image_id, f"source image not found: {src}"))
                    continue
                shutil.copyfile(src, dest_dir / src.name)
    return plan


# ---------------------------------------------------------------------------
# Split summary (per-split per-class counts)
# ---------------------------------------------------------------------------


def split_summary(
    records: Iterable[GroundTruthRecord], manifest: SplitManifest
) -> dict[str, dict[str, int]]:
    """Count defect instances per (split, class), plus per-split totals."""
    by_image = {r.image_id: r for r in records}
    table: dict[str, dict[str, int]] = {}
    for split, ids in manifest.splits.items():
        counts = {c: 0 for c in DEFECT_CLASSES}
        for image_id in ids:
            if image_id not in by_image:
                raise ValidationError(
                    f"manifest split {split!r} references unknown image {image_id!r}"
                )
            for d in by_image[image_id].defects:
                counts[d.label] += 1
        counts["total"] = sum(counts[c] for c in DEFECT_CLASSES)
        table[split] = counts
    return table
