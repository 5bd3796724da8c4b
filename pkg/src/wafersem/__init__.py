"""Desk-scale line/space SEM defect-inspection pipeline.

Synthetic dataset generation, denoising with spectral validation, a
conventional threshold detector, single-stage detector mechanics,
preference-ordered ensembling, instance-weighted evaluation, and an HTTP
service + CLI around them.
"""

from .baseline import BaselineParams, detect_conventional
from .datamodel import (
    CSV_HEADER,
    DEFECT_CLASSES,
    NO_DEFECT_FOLDER,
    Detection,
    GroundTruthDefect,
    GroundTruthRecord,
    PredictionSet,
    SegregationPlan,
    SplitManifest,
    export_csv,
    load_ground_truth,
    parse_voc_annotation,
    read_predictions,
    record_from_json,
    record_to_json,
    segregate,
    split_summary,
    to_voc_xml,
    validate_label,
    write_predictions,
)
from .denoise import (
    DENOISE_METHODS,
    PsdProfile,
    denoise,
    edge_spike_metric,
    psd_profile,
    psd_to_csv,
    spectral_report,
)
from .ensemble import EnsembleConfig, affirmative_merge, score_band_filter
from .errors import (
    BoundsError,
    CapacityError,
    FormatError,
    InspectError,
    TaxonomyError,
    ValidationError,
)
from .evaluate import (
    ClassEval,
    EvalConfig,
    EvalReport,
    average_precision,
    compare_runs,
    evaluate_detections,
    load_report,
    match_detections,
    mean_average_precision,
    pr_points_csv,
    report_from_json,
    report_to_json,
    with_imagery,
)
from .geometry import Box, iou, nms, overlaps
from .image import DEFAULT_PIXEL_SIZE_NM, SemImage, load_image, save_png
from .overlay import PALETTE, overlay_png_bytes, render_overlay, save_overlay
from .pipeline import Dataset, denoise_dataset, detect_dataset, load_dataset
from .retina import (
    BACKGROUND,
    IGNORE,
    AnchorConfig,
    AssignmentConfig,
    ClassScoreMap,
    FocalLossParams,
    assign_anchors,
    batch_focal_loss,
    decode_box,
    decode_predictions,
    encode_box,
    focal_loss,
    generate_anchors,
    read_score_map,
)
from .synthgen import (
    DEFAULT_MIX,
    SIZE_BANDS,
    DefectSpec,
    FootingSpec,
    NoiseSpec,
    PatternSpec,
    add_noise,
    dataset_checksum,
    generate_dataset,
    load_manifest,
    pattern_from_manifest,
    render_clean,
)

__version__ = "0.1.0"
