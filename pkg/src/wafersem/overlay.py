"""Deterministic detection overlays: boxes + "class: score" labels on the
source image, fixed per-class palette."""

from __future__ import annotations

import io
from pathlib import Path

from PIL import Image, ImageDraw, ImageFont

from .datamodel import Detection
from .image import SemImage

PALETTE: dict[str, tuple[int, int, int]] = {
    "bridge": (255, 0, 0),  # red
    "line_collapse": (255, 165, 0),  # orange
    "gap": (0, 0, 255),  # blue
    "p_gap": (0, 255, 255),  # cyan
    "microbridge": (255, 0, 255),  # magenta
}


def render_overlay(
    image: SemImage, detections: list[Detection], min_score: float = 0.5
) -> Image.Image:
    """RGB image with one rectangle + label per detection at score >= min_score."""
    canvas = Image.fromarray(image.to_uint8(), mode="L").convert("RGB")
    draw = ImageDraw.Draw(canvas)
    font = ImageFont.load_default()
    kept = sorted(
        (d for d in detections if d.score >= min_score),
        key=lambda d: (-d.score, d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max),
    )
    for det in kept:
        color = PALETTE.get(det.label, (255, 255, 255))
        b = det.box
        draw.rectangle(
            [b.x_min, b.y_min, max(b.x_min, b.x_max - 1), max(b.y_min, b.y_max - 1)],
            outline=color,
            width=2,
        )
        text = f"{det.label}: {det.score:.2f}"
        tx = min(max(0.0, b.x_min), max(0.0, image.width - 6.0 * len(text)))
        ty = b.y_min - 12 if b.y_min >= 12 else b.y_max + 1
        ty = min(max(0.0, ty), max(0.0, image.height - 12.0))
        draw.text((tx, ty), text, fill=color, font=font)
    return canvas


def overlay_png_bytes(
    image: SemImage, detections: list[Detection], min_score: float = 0.5
) -> bytes:
    """PNG-encoded overlay; byte-identical for identical inputs."""
    buf = io.BytesIO()
    render_overlay(image, detections, min_score).save(buf, format="PNG")
    return buf.getvalue()


def save_overlay(
    image: SemImage, detections: list[Detection], path: Path | str, min_score: float = 0.5
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(overlay_png_bytes(image, detections, min_score))
    return path
