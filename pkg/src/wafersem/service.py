"""HTTP facade for the inspection workflow.

Datasets are uploaded as zip archives and snapshotted; work runs as
asynchronous jobs polled by id; results are immutable, content-addressed
artifacts (the same job resubmitted yields byte-identical bytes and hence
the same artifact id). Errors are JSON `{"error": {code, message, fields?}}`.
"""

from __future__ import annotations

import io
import json
import threading
import time
import uuid
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from hashlib import sha256
from pathlib import Path

from fastapi import FastAPI, Request, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse, Response
from PIL import Image, UnidentifiedImageError

from .baseline import BaselineParams
from .datamodel import (
    PredictionSet,
    export_csv,
    read_predictions,
    segregate,
    write_predictions,
)
from .denoise import DENOISE_METHODS
from .ensemble import EnsembleConfig, affirmative_merge
from .errors import InspectError, ValidationError
from .evaluate import EvalConfig, evaluate_detections, report_to_json
from .image import load_image
from .overlay import overlay_png_bytes
from .pipeline import (
    ANNOTATION_EXTENSIONS,
    IMAGE_EXTENSIONS,
    denoise_dataset,
    detect_dataset,
    load_dataset,
)
from .synthgen import PatternSpec

JOB_KINDS = ("denoise", "detect", "ensemble", "evaluate", "segregate", "export_csv")

_CARRIED_METADATA = ("manifest.json", "splits.json")


class ApiError(Exception):
    """Error with an HTTP status and the documented JSON shape."""

    def __init__(self, status: int, code: str, message: str, fields: list[str] | None = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.fields = fields

    def payload(self) -> dict:
        error: dict = {"code": self.code, "message": str(self)}
        if self.fields:
            error["fields"] = self.fields
        return {"error": error}


@dataclass
class DatasetEntry:
    id: str
    root: Path
    image_ids: list[str]
    has_ground_truth: bool
    created: float
    rejected: list[dict] = field(default_factory=list)

    def describe(self) -> dict:
        return {
            "id": self.id,
            "image_count": len(self.image_ids),
            "has_ground_truth": self.has_ground_truth,
            "created": self.created,
            "rejected": self.rejected,
        }


@dataclass
class JobState:
    id: str
    kind: str
    params: dict
    status: str = "queued"
    done: int = 0
    total: int = 0
    result: dict | None = None
    error: str | None = None
    created: float = field(default_factory=time.time)

    def describe(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "status": self.status,
            "progress": {"done": self.done, "total": self.total},
            "result": self.result,
            "error": self.error,
            "created": self.created,
        }


class Registry:
    """All mutable service state: datasets, jobs, artifacts, worker pool."""

    def __init__(self, data_root: Path, workers: int):
        self.data_root = Path(data_root)
        (self.data_root / "datasets").mkdir(parents=True, exist_ok=True)
        (self.data_root / "artifacts").mkdir(parents=True, exist_ok=True)
        self.lock = threading.Lock()
        self.datasets: dict[str, DatasetEntry] = {}
        self.jobs: dict[str, JobState] = {}
        self.artifacts: dict[str, dict] = {}
        self.executor = ThreadPoolExecutor(max_workers=max(1, workers))

    # -- datasets ----------------------------------------------------------
    def get_dataset(self, dataset_id: str | None) -> DatasetEntry:
        if not dataset_id:
            raise ApiError(422, "invalid_params", "dataset id is required", ["dataset"])
        with self.lock:
            entry = self.datasets.get(dataset_id)
        if entry is None:
            raise ApiError(404, "unknown_dataset", f"no dataset {dataset_id!r}")
        return entry

    def register_dataset(self, entry: DatasetEntry) -> None:
        with self.lock:
            self.datasets[entry.id] = entry

    # -- artifacts ---------------------------------------------------------
    def store_artifact(self, data: bytes, ext: str, media_type: str, filename: str) -> str:
        digest = sha256(data).hexdigest()
        path = self.data_root / "artifacts" / f"{digest}{ext}"
        if not path.exists():
            tmp = path.with_suffix(path.suffix + f".tmp-{uuid.uuid4().hex[:8]}")
            tmp.write_bytes(data)
            tmp.replace(path)
        with self.lock:
            self.artifacts[digest] = {
                "path": path,
                "media_type": media_type,
                "filename": filename,
            }
        return digest

    def get_artifact(self, artifact_id: str | None, field_name: str = "artifact") -> dict:
        if not artifact_id:
            raise ApiError(422, "invalid_params", "artifact id is required", [field_name])
        with self.lock:
            meta = self.artifacts.get(artifact_id)
        if meta is None:
            raise ApiError(404, "unknown_artifact", f"no artifact {artifact_id!r}")
        return meta

    def read_prediction_artifact(self, artifact_id: str, field_name: str) -> PredictionSet:
        meta = self.get_artifact(artifact_id, field_name)
        try:
            return read_predictions(Path(meta["path"]).read_text())
        except InspectError as exc:
            raise ApiError(
                422, "invalid_params", f"artifact {artifact_id!r} is not a prediction file: {exc}",
                [field_name],
            ) from exc


def _dataset_pattern(entry: DatasetEntry) -> PatternSpec:
    dataset = load_dataset(entry.root)
    pattern = dataset.pattern()
    if pattern is not None:
        return pattern
    if entry.image_ids:
        sample = load_image(dataset.images[sorted(dataset.images)[0]])
        return PatternSpec(image_size=sample.width)
    return PatternSpec()


def _deterministic_zip(files: dict[str, bytes]) -> bytes:
    """Zip with fixed timestamps and sorted entries: byte-stable output."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name in sorted(files):
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, files[name])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Job validation (submit time) and execution (worker thread)
# ---------------------------------------------------------------------------


def _float_param(params: dict, name: str, default: float) -> float:
    try:
        return float(params.get(name, default))
    except (TypeError, ValueError) as exc:
        raise ApiError(422, "invalid_params", f"{name} must be a number", [name]) from exc


def _int_param(params: dict, name: str, default: int) -> int:
    try:
        return int(params.get(name, default))
    except (TypeError, ValueError) as exc:
        raise ApiError(422, "invalid_params", f"{name} must be an integer", [name]) from exc


def _validate_job(reg: Registry, kind: str, params: dict) -> int:
    """Check referenced resources and parameter shapes; return total steps."""
    if kind == "detect":
        entry = reg.get_dataset(params.get("dataset"))
        method = params.get("method", "baseline")
        if method != "baseline":
            raise ApiError(422, "invalid_params", f"unknown detect method {method!r}", ["method"])
        if not isinstance(params.get("model_name", "baseline"), str):
            raise ApiError(422, "invalid_params", "model_name must be a string", ["model_name"])
        try:
            BaselineParams(
                intensity_threshold=_float_param(params, "intensity_threshold", 0.5),
                min_failure_area_px=_int_param(params, "min_size", 4),
                expected_pattern=_dataset_pattern(entry),
                merge_distance_px=_int_param(params, "merge_distance", 2),
            )
        except ValidationError as exc:
            raise ApiError(422, "invalid_params", str(exc), ["intensity_threshold"]) from exc
        return len(entry.image_ids)
    if kind == "denoise":
        entry = reg.get_dataset(params.get("dataset"))
        method = params.get("method", "gaussian")
        if method not in DENOISE_METHODS:
            raise ApiError(422, "invalid_params", f"unknown denoise method {method!r}", ["method"])
        extra = params.get("params", {})
        if not isinstance(extra, dict):
            raise ApiError(422, "invalid_params", "params must be an object", ["params"])
        return len(entry.image_ids)
    if kind == "ensemble":
        preds = params.get("predictions")
        if not isinstance(preds, list) or not preds:
            raise ApiError(
                422, "invalid_params", "predictions must be a non-empty list of artifact ids",
                ["predictions"],
            )
        if len(preds) < 2 and not params.get("allow_single", False):
            raise ApiError(
                422, "invalid_params", "ensemble needs at least 2 prediction artifacts",
                ["predictions"],
            )
        for pid in preds:
            reg.get_artifact(pid, "predictions")
        _float_param(params, "iou", 0.5)
        return 1
    if kind == "evaluate":
        entry = reg.get_dataset(params.get("dataset"))
        reg.get_artifact(params.get("predictions"), "predictions")
        if not entry.has_ground_truth:
            raise ApiError(
                422, "missing_ground_truth",
                f"dataset {entry.id!r} has no ground truth; evaluation impossible",
                ["dataset"],
            )
        _float_param(params, "iou", 0.5)
        return 1
    if kind == "export_csv":
        reg.get_artifact(params.get("predictions"), "predictions")
        _float_param(params, "pixel_size_nm", 0.8)
        return 1
    if kind == "segregate":
        entry = reg.get_dataset(params.get("dataset"))
        reg.get_artifact(params.get("predictions"), "predictions")
        _float_param(params, "score_threshold", 0.5)
        return len(entry.image_ids)
    raise ApiError(422, "unknown_kind", f"job kind must be one of {JOB_KINDS}", ["kind"])


def _run_job(reg: Registry, job: JobState) -> dict:
    params = job.params

    def progress(done: int, total: int) -> None:
        with reg.lock:
            job.done = done
            job.total = total

    if job.kind == "detect":
        entry = reg.get_dataset(params["dataset"])
        dataset = load_dataset(entry.root)
        baseline = BaselineParams(
            intensity_threshold=float(params.get("intensity_threshold", 0.5)),
            min_failure_area_px=int(params.get("min_size", 4)),
            expected_pattern=_dataset_pattern(entry),
            merge_distance_px=int(params.get("merge_distance", 2)),
        )
        model_name = str(params.get("model_name", "baseline"))
        predictions = detect_dataset(dataset, baseline, progress, model=model_name)
        artifact = reg.store_artifact(
            write_predictions(predictions).encode(), ".json", "application/json",
            f"predictions_{model_name}.json",
        )
        return {"artifact": artifact, "detections": len(predictions.all_detections())}

    if job.kind == "denoise":
        entry = reg.get_dataset(params["dataset"])
        method = params.get("method", "gaussian")
        method_params = {**DENOISE_METHODS[method], **params.get("params", {})}
        if "size" in method_params:
            method_params["size"] = int(method_params["size"])
        key = json.dumps([entry.id, method, method_params], sort_keys=True)
        derived_id = "drv-" + sha256(key.encode()).hexdigest()[:16]
        with reg.lock:
            existing = reg.datasets.get(derived_id)
        if existing is None:
            out_root = reg.data_root / "datasets" / derived_id
            dataset = load_dataset(entry.root)
            denoise_dataset(dataset, out_root, method, method_params, progress)
            derived = load_dataset(out_root)
            reg.register_dataset(
                DatasetEntry(
                    id=derived_id,
                    root=out_root,
                    image_ids=sorted(derived.images),
                    has_ground_truth=derived.has_ground_truth,
                    created=time.time(),
                )
            )
        return {"dataset": derived_id}

    if job.kind == "ensemble":
        sets = [
            reg.read_prediction_artifact(pid, "predictions")
            for pid in params["predictions"]
        ]
        order = params.get("order") or [s.model for s in sets]
        by_model = {s.model: s for s in sets}
        cfg = EnsembleConfig(
            preference_order=tuple(order),
            iou_threshold=float(params.get("iou", 0.5)),
            overlap_scope=params.get("overlap_scope", "all_accepted"),
            class_scope=params.get("class_scope", "class_agnostic"),
        )
        image_ids = sorted({i for s in sets for i in s.images})
        merged = PredictionSet(model="+".join(cfg.preference_order))
        warnings: list[str] = []
        for done, image_id in enumerate(image_ids, start=1):
            per_model = {m: s.images.get(image_id, []) for m, s in by_model.items()}
            merged.images[image_id] = affirmative_merge(per_model, cfg, warnings)
            progress(done, len(image_ids))
        merged.warnings = sorted(set(warnings))
        artifact = reg.store_artifact(
            write_predictions(merged).encode(), ".json", "application/json",
            "predictions_ensemble.json",
        )
        return {"artifact": artifact, "detections": len(merged.all_detections())}

    if job.kind == "evaluate":
        entry = reg.get_dataset(params["dataset"])
        predictions = reg.read_prediction_artifact(params["predictions"], "predictions")
        dataset = load_dataset(entry.root)
        raw_threshold = params.get("score_threshold", 0.5)
        config = EvalConfig(
            iou_threshold=float(params.get("iou", 0.5)),
            score_threshold=None if raw_threshold is None else float(raw_threshold),
            weighting=params.get("weighting", "instances"),
            interpolation=params.get("interpolation", "all_point"),
        )
        report = evaluate_detections(predictions, dataset.truths, config, imagery=entry.id)
        artifact = reg.store_artifact(
            report_to_json(report).encode(), ".json", "application/json", "report.json"
        )
        return {"artifact": artifact, "map": report.map_score}

    if job.kind == "export_csv":
        predictions = reg.read_prediction_artifact(params["predictions"], "predictions")
        threshold = float(params.get("score_threshold", 0.0))
        images = {
            image_id: [d for d in dets if d.score >= threshold]
            for image_id, dets in predictions.images.items()
        }
        text = export_csv(images, float(params.get("pixel_size_nm", 0.8)))
        artifact = reg.store_artifact(text.encode(), ".csv", "text/csv", "defects.csv")
        return {"artifact": artifact, "rows": text.count("\n") - 1}

    if job.kind == "segregate":
        entry = reg.get_dataset(params["dataset"])
        predictions = reg.read_prediction_artifact(params["predictions"], "predictions")
        threshold = float(params.get("score_threshold", 0.5))
        plan = segregate(predictions.images, threshold)
        files: dict[str, bytes] = {}
        total = len(entry.image_ids)
        dataset = load_dataset(entry.root)
        done = 0
        for folder, ids in sorted(plan.folders.items()):
            for image_id in ids:
                src = dataset.images.get(image_id)
                if src is None:
                    plan.errors.append((image_id, "image not in dataset snapshot"))
                    continue
                files[f"{folder}/{Path(image_id).name}"] = src.read_bytes()
                done += 1
                progress(min(done, total), total)
        artifact = reg.store_artifact(
            _deterministic_zip(files), ".zip", "application/zip", "segregated.zip"
        )
        return {
            "artifact": artifact,
            "folders": {k: len(v) for k, v in sorted(plan.folders.items())},
            "errors": [list(e) for e in plan.errors],
        }

    raise InspectError(f"unhandled job kind {job.kind}")  # pragma: no cover


def _execute(reg: Registry, job: JobState) -> None:
    with reg.lock:
        job.status = "running"
    try:
        result = _run_job(reg, job)
    except ApiError as exc:
        with reg.lock:
            job.status = "failed"
            job.error = str(exc)
    except InspectError as exc:
        with reg.lock:
            job.status = "failed"
            job.error = str(exc)
    except Exception as exc:  # pragma: no cover - defensive
        with reg.lock:
            job.status = "failed"
            job.error = f"internal error: {exc}"
    else:
        with reg.lock:
            job.done = max(job.done, job.total)
            job.result = result
            job.status = "done"


# ---------------------------------------------------------------------------
# App factory
# ---------------------------------------------------------------------------


def create_app(data_root: Path | str, workers: int = 2) -> FastAPI:
    reg = Registry(Path(data_root), workers)
    app = FastAPI(title="wafersem inspection service")
    app.state.registry = reg

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError):
        return JSONResponse(exc.payload(), status_code=exc.status)

    @app.exception_handler(RequestValidationError)
    async def _validation_error(_req: Request, exc: RequestValidationError):
        fields = sorted({str(e["loc"][-1]) for e in exc.errors() if e.get("loc")})
        payload = {
            "error": {
                "code": "invalid_request",
                "message": "request does not match the expected schema",
                "fields": fields,
            }
        }
        return JSONResponse(payload, status_code=422)

    @app.post("/api/datasets", status_code=201)
    async def upload_dataset(file: UploadFile):
        data = await file.read()
        try:
            archive = zipfile.ZipFile(io.BytesIO(data))
        except zipfile.BadZipFile as exc:
            raise ApiError(422, "bad_archive", f"not a zip archive: {exc}") from exc

        dataset_id = uuid.uuid4().hex[:12]
        root = reg.data_root / "datasets" / dataset_id
        rejected: list[dict] = []
        extracted = 0
        for info in archive.infolist():
            if info.is_dir():
                continue
            name = info.filename
            parts = Path(name).parts
            if Path(name).is_absolute() or ".." in parts:
                rejected.append({"file": name, "reason": "unsafe path"})
                continue
            suffix = Path(name).suffix.lower()
            content = archive.read(info)
            if suffix in IMAGE_EXTENSIONS:
                try:
                    with Image.open(io.BytesIO(content)) as im:
                        im.verify()
                except (UnidentifiedImageError, OSError) as exc:
                    rejected.append({"file": name, "reason": f"undecodable image: {exc}"})
                    continue
            elif suffix in ANNOTATION_EXTENSIONS or Path(name).name in _CARRIED_METADATA:
                pass  # annotations/metadata validated lazily at use
            else:
                rejected.append({"file": name, "reason": "unsupported file type"})
                continue
            dest = root / name
            dest.parent.mkdir(parents=True, exist_ok=True)
            dest.write_bytes(content)
            extracted += 1

        dataset = load_dataset(root) if extracted else None
        if dataset is None or dataset.n_images == 0:
            raise ApiError(422, "empty_dataset", "archive contains no decodable images")
        for rel, reason in dataset.annotation_errors:
            rejected.append({"file": rel, "reason": reason})
        entry = DatasetEntry(
            id=dataset_id,
            root=root,
            image_ids=sorted(dataset.images),
            has_ground_truth=dataset.has_ground_truth,
            created=time.time(),
            rejected=rejected,
        )
        reg.register_dataset(entry)
        return entry.describe()

    @app.get("/api/datasets")
    async def list_datasets():
        with reg.lock:
            entries = sorted(reg.datasets.values(), key=lambda e: e.created)
            return {"datasets": [e.describe() for e in entries]}

    @app.get("/api/datasets/{dataset_id}/images")
    async def list_images(dataset_id: str):
        entry = reg.get_dataset(dataset_id)
        dataset = load_dataset(entry.root)
        return {
            "dataset": entry.id,
            "images": [
                {"id": image_id, "has_ground_truth": image_id in dataset.truths}
                for image_id in entry.image_ids
            ],
        }

    @app.post("/api/jobs", status_code=201)
    async def submit_job(body: dict):
        kind = body.get("kind")
        params = body.get("params", {})
        if not isinstance(params, dict):
            raise ApiError(422, "invalid_params", "params must be an object", ["params"])
        if kind not in JOB_KINDS:
            raise ApiError(422, "unknown_kind", f"job kind must be one of {JOB_KINDS}", ["kind"])
        total = _validate_job(reg, kind, params)
        job = JobState(id=uuid.uuid4().hex[:12], kind=kind, params=params, total=total)
        with reg.lock:
            reg.jobs[job.id] = job
        reg.executor.submit(_execute, reg, job)
        return {"job_id": job.id}

    @app.get("/api/jobs")
    async def list_jobs():
        with reg.lock:
            jobs = sorted(reg.jobs.values(), key=lambda j: j.created)
            return {"jobs": [j.describe() for j in jobs]}

    @app.get("/api/jobs/{job_id}")
    async def poll_job(job_id: str):
        with reg.lock:
            job = reg.jobs.get(job_id)
            if job is None:
                raise ApiError(404, "unknown_job", f"no job {job_id!r}")
            return job.describe()

    @app.get("/api/artifacts/{artifact_id}")
    async def get_artifact(artifact_id: str):
        meta = reg.get_artifact(artifact_id)
        return FileResponse(
            meta["path"], media_type=meta["media_type"], filename=meta["filename"]
        )

    @app.get("/api/overlay")
    async def get_overlay(dataset: str, image: str, pred: str, min_score: float = 0.5):
        entry = reg.get_dataset(dataset)
        if image not in entry.image_ids:
            raise ApiError(404, "unknown_image", f"image {image!r} not in dataset {dataset!r}")
        predictions = reg.read_prediction_artifact(pred, "pred")
        resolved = load_dataset(entry.root)
        sem = load_image(resolved.images[image], resolved.pixel_size_nm)
        png = overlay_png_bytes(sem, predictions.images.get(image, []), min_score)
        return Response(content=png, media_type="image/png")

    return app
