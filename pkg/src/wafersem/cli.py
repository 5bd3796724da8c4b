"""Command-line entry points: generate, denoise, detect, ensemble, evaluate,
export-csv, segregate, serve.

Every command prints exactly one JSON summary line to stdout (logs go to
stderr) so shell pipelines can compose stages. Exit codes: 0 success,
1 validation/usage, 2 I/O, 3 internal. Every flag can also be supplied via
an environment variable with the `WS_` prefix (the flag wins).
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .baseline import BaselineParams
from .datamodel import (
    PredictionSet,
    export_csv as render_csv,
    read_predictions,
    segregate as run_segregate,
    write_predictions,
)
from .denoise import DENOISE_METHODS, psd_profile, psd_to_csv, spectral_report
from .ensemble import EnsembleConfig, affirmative_merge
from .errors import InspectError, ValidationError
from .evaluate import EvalConfig, evaluate_detections, pr_points_csv, report_to_json
from .image import load_image
from .pipeline import Dataset, denoise_dataset, detect_dataset, load_dataset
from .synthgen import (
    FootingSpec,
    NoiseSpec,
    PatternSpec,
    dataset_checksum,
    generate_dataset,
)

log = logging.getLogger("wafersem")

CONTEXT_SETTINGS = {"auto_envvar_prefix": "WS", "help_option_names": ["-h", "--help"]}

_SCOPES = {"all": "all_accepted", "first": "first_model_only"}
_CLASS_SCOPES = {"agnostic": "class_agnostic", "aware": "class_aware"}
_INTERP = {"all": "all_point", "11": "eleven_point"}


def _emit(summary: dict) -> None:
    click.echo(json.dumps(summary, sort_keys=True))


def _parse_mix(text: str | None) -> dict[str, float] | None:
    if not text:
        return None
    mix = {}
    for part in text.split(","):
        if "=" not in part:
            raise ValidationError(f"mix entry {part!r} must look like class=weight")
        key, value = part.split("=", 1)
        try:
            mix[key.strip()] = float(value)
        except ValueError as exc:
            raise ValidationError(f"mix weight {value!r} is not a number") from exc
    return mix


def _parse_params(pairs: tuple[str, ...]) -> dict[str, float | int]:
    out: dict[str, float | int] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValidationError(f"--param entry {pair!r} must look like name=value")
        key, value = pair.split("=", 1)
        key = key.strip()
        try:
            out[key] = int(value) if key == "size" else float(value)
        except ValueError as exc:
            raise ValidationError(f"parameter {key}={value!r} is not numeric") from exc
    return out


def _resolve_pattern(dataset: Dataset, pitch_px: float | None, image_size: int | None) -> PatternSpec:
    pattern = dataset.pattern()
    if pattern is None:
        pattern = PatternSpec(
            image_size=image_size or 1024, pitch_px=pitch_px if pitch_px is not None else 40.0
        )
    else:
        overrides = {}
        if pitch_px is not None:
            overrides["pitch_px"] = pitch_px
        if image_size is not None:
            overrides["image_size"] = image_size
        if overrides:
            import dataclasses

            pattern = dataclasses.replace(pattern, **overrides)
    return pattern


@click.group(context_settings=CONTEXT_SETTINGS)
def cli() -> None:
    """Line/space SEM defect-inspection pipeline."""


@cli.command()
@click.option("--count", default=10, show_default=True, help="Number of images.")
@click.option("--seed", default=0, show_default=True, help="Dataset seed.")
@click.option("--image-size", default=1024, show_default=True)
@click.option("--pitch-px", default=40.0, show_default=True)
@click.option("--lwr-sigma", default=0.0, show_default=True, help="Edge roughness sigma (px).")
@click.option("--charging", default=0.0, show_default=True, help="Per-line charging contrast.")
@click.option("--mix", default=None, help="Class weights, e.g. gap=174,p_gap=54.")
@click.option("--noise-sigma", default=0.05, show_default=True)
@click.option("--noise-model", default="gaussian", show_default=True,
              type=click.Choice(["gaussian", "poisson-gaussian"]))
@click.option("--mean-defects", default=2.6, show_default=True, help="Mean defects per image.")
@click.option("--footing-count", default=0, show_default=True,
              help="Sub-threshold footing bumps per image (no ground truth).")
@click.option("--footing-amplitude", default=0.45, show_default=True)
@click.option("--pixel-size-nm", default=0.8, show_default=True)
@click.option("--out", required=True, type=click.Path(path_type=Path))
def generate(count, seed, image_size, pitch_px, lwr_sigma, charging, mix, noise_sigma,
             noise_model, mean_defects, footing_count, footing_amplitude, pixel_size_nm, out):
    """Generate a synthetic line/space dataset with labeled defects."""
    pattern = PatternSpec(
        image_size=image_size,
        pitch_px=pitch_px,
        lwr_sigma_px=lwr_sigma,
        charging_contrast=charging,
        seed=seed,
    )
    noise = NoiseSpec(model=noise_model, gaussian_sigma=noise_sigma, seed=seed)
    footing = (
        FootingSpec(count=footing_count, amplitude=footing_amplitude)
        if footing_count > 0
        else None
    )
    manifest = generate_dataset(
        pattern,
        _parse_mix(mix),
        noise,
        count,
        seed,
        out,
        pixel_size_nm=pixel_size_nm,
        mean_defects_per_image=mean_defects,
        footing=footing,
    )
    log.info("generated %d images under %s", count, out)
    _emit(
        {
            "command": "generate",
            "out": str(out),
            "count": count,
            "seed": seed,
            "splits": {k: len(v) for k, v in manifest.splits.items()},
            "checksum": dataset_checksum(out),
        }
    )


@cli.command()
@click.option("--in", "in_dir", required=True, type=click.Path(path_type=Path))
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--method", default="gaussian", show_default=True,
              type=click.Choice(sorted(DENOISE_METHODS)))
@click.option("--param", "params", multiple=True, help="Method parameter, e.g. sigma=1.0.")
@click.option("--report/--no-report", default=True, show_default=True,
              help="Write spectral report, PSD CSV and PSD figure beside the output.")
def denoise(in_dir, out, method, params, report):
    """Denoise every image of a dataset into a derived dataset."""
    dataset = load_dataset(in_dir)
    if dataset.n_images == 0:
        raise ValidationError(f"no images found under {in_dir}")
    method_params = {**DENOISE_METHODS[method], **_parse_params(params)}
    denoise_dataset(dataset, out, method, method_params)

    summary = {
        "command": "denoise",
        "in": str(in_dir),
        "out": str(out),
        "method": method,
        "params": method_params,
        "images": dataset.n_images,
    }
    if report:
        pattern = dataset.pattern()
        pitch = pattern.pitch_px if pattern is not None else 40.0
        derived = load_dataset(out)
        reports = {}
        for image_id in sorted(dataset.images):
            noisy = load_image(dataset.images[image_id], dataset.pixel_size_nm)
            cleaned = load_image(derived.images[image_id], dataset.pixel_size_nm)
            reports[image_id] = spectral_report(noisy, cleaned, pitch_px=pitch)
        passes = sum(1 for r in reports.values() if r["pass"])
        report_payload = {
            "method": method,
            "params": method_params,
            "images": reports,
            "pass_fraction": passes / len(reports),
            "all_pass": passes == len(reports),
        }
        (Path(out) / "spectral_report.json").write_text(
            json.dumps(report_payload, indent=2, sort_keys=True) + "\n"
        )
        first_id = sorted(dataset.images)[0]
        noisy = load_image(dataset.images[first_id], dataset.pixel_size_nm)
        cleaned = load_image(derived.images[first_id], dataset.pixel_size_nm)
        noisy_profile = psd_profile(noisy)
        clean_profile = psd_profile(cleaned)
        (Path(out) / "psd_noisy.csv").write_text(psd_to_csv(noisy_profile))
        (Path(out) / "psd_denoised.csv").write_text(psd_to_csv(clean_profile))
        from .plots import plot_psd_profiles

        plot_psd_profiles(
            {"noisy": noisy_profile, "denoised": clean_profile},
            Path(out) / "psd.png",
            low_cutoff=1.0 / (2.0 * pitch),
            high_cutoff=0.25,
        )
        summary["all_pass"] = report_payload["all_pass"]
        summary["report"] = str(Path(out) / "spectral_report.json")
    _emit(summary)


@cli.command()
@click.option("--in", "in_dir", required=True, type=click.Path(path_type=Path))
@click.option("--method", default="baseline", show_default=True, type=click.Choice(["baseline"]))
@click.option("--intensity-threshold", default=0.5, show_default=True)
@click.option("--min-size", default=4, show_default=True, help="Minimum failure area (px).")
@click.option("--merge-distance", default=2, show_default=True)
@click.option("--pitch-px", default=None, type=float, help="Override the expected pattern pitch.")
@click.option("--image-size", default=None, type=int, help="Override the expected pattern size.")
@click.option("--model-name", default="baseline", show_default=True,
              help="Model tag written into the prediction file.")
@click.option("--out", required=True, type=click.Path(path_type=Path))
def detect(in_dir, method, intensity_threshold, min_size, merge_distance, pitch_px, image_size,
           model_name, out):
    """Run the conventional threshold detector over a dataset."""
    dataset = load_dataset(in_dir)
    if dataset.n_images == 0:
        raise ValidationError(f"no images found under {in_dir}")
    pattern = _resolve_pattern(dataset, pitch_px, image_size)
    params = BaselineParams(
        intensity_threshold=intensity_threshold,
        min_failure_area_px=min_size,
        expected_pattern=pattern,
        merge_distance_px=merge_distance,
    )
    predictions = detect_dataset(dataset, params, model=model_name)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(write_predictions(predictions))
    _emit(
        {
            "command": "detect",
            "method": method,
            "in": str(in_dir),
            "out": str(out),
            "images": dataset.n_images,
            "detections": len(predictions.all_detections()),
        }
    )


@cli.command()
@click.option("--preds", "pred_files", multiple=True, required=True,
              type=click.Path(path_type=Path), help="Prediction JSON (repeatable).")
@click.option("--order", default=None, help="Comma-separated model preference order.")
@click.option("--iou", default=0.5, show_default=True)
@click.option("--scope", default="all", show_default=True, type=click.Choice(sorted(_SCOPES)))
@click.option("--class-scope", default="agnostic", show_default=True,
              type=click.Choice(sorted(_CLASS_SCOPES)))
@click.option("--allow-single", is_flag=True, help="Permit a single prediction file.")
@click.option("--out", required=True, type=click.Path(path_type=Path))
def ensemble(pred_files, order, iou, scope, class_scope, allow_single, out):
    """Affirmatively merge ranked prediction files."""
    if len(pred_files) < 2 and not allow_single:
        raise ValidationError("ensemble needs at least 2 prediction files (or --allow-single)")
    sets = [read_predictions(Path(p).read_text()) for p in pred_files]
    by_model = {}
    for s in sets:
        if s.model in by_model:
            raise ValidationError(f"duplicate model name {s.model!r} across prediction files")
        by_model[s.model] = s
    preference = tuple(order.split(",")) if order else tuple(s.model for s in sets)
    cfg = EnsembleConfig(
        preference_order=preference,
        iou_threshold=iou,
        overlap_scope=_SCOPES[scope],
        class_scope=_CLASS_SCOPES[class_scope],
    )
    image_ids = sorted({i for s in sets for i in s.images})
    merged = PredictionSet(model="+".join(preference))
    warnings: list[str] = []
    for image_id in image_ids:
        per_model = {m: s.images.get(image_id, []) for m, s in by_model.items()}
        merged.images[image_id] = affirmative_merge(per_model, cfg, warnings)
    merged.warnings = sorted(set(warnings))
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(write_predictions(merged))
    _emit(
        {
            "command": "ensemble",
            "out": str(out),
            "models": list(preference),
            "images": len(image_ids),
            "detections": len(merged.all_detections()),
            "warnings": merged.warnings,
        }
    )


@cli.command()
@click.option("--preds", required=True, type=click.Path(path_type=Path))
@click.option("--truth", required=True, type=click.Path(path_type=Path),
              help="Dataset directory (or directory of annotation files).")
@click.option("--iou", default=0.5, show_default=True)
@click.option("--score-threshold", default="0.5", show_default=True,
              help="Minimum score before matching, or 'none' for the full curve.")
@click.option("--weighting", default="instances", show_default=True,
              type=click.Choice(["instances", "uniform"]))
@click.option("--interp", default="all", show_default=True, type=click.Choice(sorted(_INTERP)))
@click.option("--out", required=True, type=click.Path(path_type=Path),
              help="Report JSON path; PR figure and CSV land beside it.")
def evaluate(preds, truth, iou, score_threshold, weighting, interp, out):
    """Score predictions against ground truth (AP per class + weighted mAP)."""
    predictions = read_predictions(Path(preds).read_text())
    truths = _load_truths(Path(truth))
    threshold = None if score_threshold.lower() == "none" else float(score_threshold)
    config = EvalConfig(
        iou_threshold=iou,
        score_threshold=threshold,
        weighting=weighting,
        interpolation=_INTERP[interp],
    )
    report = evaluate_detections(predictions, truths, config, imagery=str(preds))
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report_to_json(report))
    (out.parent / (out.stem + "_pr.csv")).write_text(pr_points_csv(report))
    from .plots import plot_pr_curves

    figure = out.parent / (out.stem + "_pr.png")
    plot_pr_curves(report, figure)
    _emit(
        {
            "command": "evaluate",
            "out": str(out),
            "figure": str(figure),
            "map": report.map_score,
            "per_class_ap": {c: ce.ap for c, ce in sorted(report.per_class.items())},
        }
    )


def _load_truths(path: Path):
    if not path.exists():
        raise FileNotFoundError(f"truth path not found: {path}")
    if path.is_file():
        from .datamodel import load_ground_truth

        record = load_ground_truth(path)
        return {record.image_id or path.stem: record}
    dataset = load_dataset(path)
    if dataset.truths:
        return dict(dataset.truths)
    from .datamodel import load_ground_truth

    truths = {}
    for ann in sorted(path.rglob("*")):
        if ann.is_file() and ann.suffix.lower() in (".xml", ".json") and ann.name not in (
            "manifest.json",
            "splits.json",
        ):
            record = load_ground_truth(ann)
            truths[record.image_id or ann.stem] = record
    if not truths:
        raise ValidationError(f"no ground-truth annotations found under {path}")
    return truths


@cli.command("export-csv")
@click.option("--preds", required=True, type=click.Path(path_type=Path))
@click.option("--pixel-size-nm", default=0.8, show_default=True)
@click.option("--score-threshold", default=0.0, show_default=True,
              help="Only rows with score >= this value are exported.")
@click.option("--out", required=True, type=click.Path(path_type=Path))
def export_csv_cmd(preds, pixel_size_nm, score_threshold, out):
    """Export predictions as the delimited defect report."""
    predictions = read_predictions(Path(preds).read_text())
    images = {
        image_id: [d for d in dets if d.score >= score_threshold]
        for image_id, dets in predictions.images.items()
    }
    text = render_csv(images, pixel_size_nm)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    _emit(
        {
            "command": "export-csv",
            "out": str(out),
            "rows": text.count("\n") - 1,
            "pixel_size_nm": pixel_size_nm,
        }
    )


@cli.command()
@click.option("--preds", required=True, type=click.Path(path_type=Path))
@click.option("--images", "images_root", required=True, type=click.Path(path_type=Path))
@click.option("--score-threshold", default=0.5, show_default=True)
@click.option("--out", required=True, type=click.Path(path_type=Path))
def segregate(preds, images_root, score_threshold, out):
    """Copy images into per-class folders by their detections."""
    if not Path(images_root).is_dir():
        raise FileNotFoundError(f"images root not found: {images_root}")
    predictions = read_predictions(Path(preds).read_text())
    plan = run_segregate(predictions.images, score_threshold, images_root, out)
    _emit(
        {
            "command": "segregate",
            "out": str(out),
            "folders": {k: len(v) for k, v in sorted(plan.folders.items())},
            "errors": [list(e) for e in plan.errors],
        }
    )


@cli.command()
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--data-root", required=True, type=click.Path(path_type=Path))
@click.option("--workers", default=2, show_default=True, help="Job worker slots.")
def serve(port, host, data_root, workers):
    """Run the HTTP inspection service."""
    import uvicorn

    from .service import create_app

    app = create_app(Path(data_root), workers=workers)
    _emit({"command": "serve", "host": host, "port": port, "data_root": str(data_root)})
    uvicorn.run(app, host=host, port=port, log_level="warning")


def main(argv: list[str] | None = None) -> int:
    """Entry point with the documented exit-code contract."""
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return 1
    except (FileNotFoundError, IsADirectoryError, NotADirectoryError, PermissionError) as exc:
        log.error("%s", exc)
        return 2
    except OSError as exc:
        log.error("%s", exc)
        return 2
    except InspectError as exc:
        log.error("%s", exc)
        return 1
    except Exception:  # pragma: no cover - defensive
        log.exception("internal error")
        return 3


if __name__ == "__main__":
    sys.exit(main())
