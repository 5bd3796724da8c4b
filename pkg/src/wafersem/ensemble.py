"""Preference-ordered affirmative fusion of ranked detector outputs.

The first-ranked model's detections are kept verbatim; each lower-ranked
detection survives only if it does not overlap the comparison set at the
configured IoU. Detections are never rescored or synthesized — every output
box appears byte-identical in exactly one input model's list.
"""

from __future__ import annotations

from dataclasses import dataclass

from .datamodel import Detection, validate_label
from .errors import ValidationError
from .geometry import iou

DEFAULT_PREFERENCE_ORDER = ("resnet50", "resnet152", "resnet101")

OVERLAP_SCOPES = ("all_accepted", "first_model_only")
CLASS_SCOPES = ("class_agnostic", "class_aware")


@dataclass(frozen=True)
class EnsembleConfig:
    preference_order: tuple[str, ...] = DEFAULT_PREFERENCE_ORDER
    iou_threshold: float = 0.5
    overlap_scope: str = "all_accepted"
    class_scope: str = "class_agnostic"

    def __post_init__(self) -> None:
        if not self.preference_order:
            raise ValidationError("preference_order must be non-empty")
        if len(set(self.preference_order)) != len(self.preference_order):
            raise ValidationError("preference_order identifiers must be unique")
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise ValidationError("iou_threshold must be in [0,1]")
        if self.overlap_scope not in OVERLAP_SCOPES:
            raise ValidationError(f"overlap_scope must be one of {OVERLAP_SCOPES}")
        if self.class_scope not in CLASS_SCOPES:
            raise ValidationError(f"class_scope must be one of {CLASS_SCOPES}")


def _model_order(detections: list[Detection]) -> list[Detection]:
    # Descending score; ties broken by box corners then label for determinism.
    return sorted(
        detections,
        key=lambda d: (-d.score, d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max, d.label),
    )


def affirmative_merge(
    per_model: dict[str, list[Detection]],
    cfg: EnsembleConfig = EnsembleConfig(),
    warnings: list[str] | None = None,
) -> list[Detection]:
    """Merge ranked model outputs; returns accepted detections in rank order.

    Models present in `per_model` but absent from the preference order are
    skipped (a note lands in `warnings` when given); a ranked model missing
    from `per_model` is an error.
    """
    for model in cfg.preference_order:
        if model not in per_model:
            raise ValidationError(f"ranked model {model!r} missing from inputs")
    if warnings is not None:
        for model in sorted(set(per_model) - set(cfg.preference_order)):
            warnings.append(f"model {model!r} not in preference order; ignored")

    first = cfg.preference_order[0]
    accepted = list(_model_order(per_model[first]))
    reference = accepted  # comparison set for first_model_only stays fixed
    if cfg.overlap_scope == "first_model_only":
        reference = list(accepted)

    for model in cfg.preference_order[1:]:
        for det in _model_order(per_model[model]):
            pool = accepted if cfg.overlap_scope == "all_accepted" else reference
            if cfg.class_scope == "class_aware":
                pool = [d for d in pool if d.label == det.label]
            if all(iou(det.box, d.box) < cfg.iou_threshold for d in pool):
                accepted.append(det)
    return accepted


def score_band_filter(
    detections: list[Detection],
    label: str,
    strict_min: float = 0.5,
    weak_band: tuple[float, float] = (0.0, 0.5),
) -> dict[str, list[Detection]]:
    """Split detections into strict (score >= strict_min, any class) and weak
    (the named class only, score inside [low, high)); the rest drop.

    Typical use: keep ordinary detections at the deployment threshold while
    surfacing low-confidence detections of one class for review.
    """
    validate_label(label)
    low, high = weak_band
    if not 0.0 <= low < high <= strict_min <= 1.0:
        raise ValidationError(
            "require 0 <= weak_low < weak_high <= strict_min <= 1, got "
            f"band [{low}, {high}) with strict_min {strict_min}"
        )
    strict = [d for d in detections if d.score >= strict_min]
    weak = [d for d in detections if d.label == label and low <= d.score < high]
    return {"strict": strict, "weak": weak}
