"""HTTP inspection service: uploads, async jobs, artifacts, overlays."""
from __future__ import annotations

import io
import json
import time
import zipfile
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from wafersem import (
    DefectSpec,
    NoiseSpec,
    PatternSpec,
    add_noise,
    record_to_json,
    render_clean,
    save_png,
)
from wafersem.service import create_app

import numpy as np


def build_zip(entries):
    """In-memory zip from {name: bytes}."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        for name, payload in entries.items():
            zf.writestr(name, payload)
    return buf.getvalue()


def png_bytes(image):
    buf = io.BytesIO()
    from PIL import Image

    Image.fromarray(image.to_uint8(), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def sem_fixture(n=10, with_truth=False, seed=0):
    """n rendered images (+ annotations when asked) as zip entries."""
    pattern = PatternSpec(image_size=256, pitch_px=40.0, seed=0)
    entries = {}
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        image, truth = render_clean(
            pattern, [DefectSpec("gap"), DefectSpec("microbridge")],
            image_id=f"img_{i:03d}.png", rng=rng,
        )
        image = add_noise(image, NoiseSpec(gaussian_sigma=0.03, seed=1000 + i))
        entries[f"img_{i:03d}.png"] = png_bytes(image)
        if with_truth:
            entries[f"img_{i:03d}.json"] = record_to_json(truth)
    return entries


def wait_for(client, job_id, timeout=30.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        job = client.get(f"/api/jobs/{job_id}").json()
        if job["status"] in ("done", "failed"):
            return job
        time.sleep(0.05)
    raise AssertionError(f"job {job_id} did not finish: {job}")


@pytest.fixture(scope="module")
def client(tmp_path_factory):
    app = create_app(tmp_path_factory.mktemp("svc"), workers=2)
    with TestClient(app) as c:
        yield c


@pytest.fixture(scope="module")
def dataset_id(client):
    payload = build_zip(sem_fixture(10, with_truth=True))
    resp = client.post("/api/datasets", files={"file": ("ds.zip", payload, "application/zip")})
    assert resp.status_code == 201, resp.text
    return resp.json()["id"]


@pytest.fixture(scope="module")
def plain_dataset_id(client):
    payload = build_zip(sem_fixture(4, with_truth=False, seed=9))
    resp = client.post("/api/datasets", files={"file": ("p.zip", payload, "application/zip")})
    assert resp.status_code == 201
    return resp.json()["id"]


def submit(client, kind, params):
    resp = client.post("/api/jobs", json={"kind": kind, "params": params})
    assert resp.status_code == 201, resp.text
    return resp.json()["job_id"]


def run_detect(client, dataset_id, **params):
    job = wait_for(client, submit(client, "detect", {"dataset": dataset_id, **params}))
    assert job["status"] == "done", job
    return job


class TestUpload:
    def test_valid_archive(self, client, dataset_id):
        listing = client.get("/api/datasets").json()["datasets"]
        entry = next(d for d in listing if d["id"] == dataset_id)
        assert entry["image_count"] == 10
        assert entry["has_ground_truth"] is True

    def test_rejects_non_image_members(self, client):
        entries = sem_fixture(9, seed=3)
        entries["notes.txt"] = b"not an image"
        resp = client.post(
            "/api/datasets", files={"file": ("m.zip", build_zip(entries), "application/zip")}
        )
        assert resp.status_code == 201
        body = resp.json()
        assert body["image_count"] == 9
        assert len(body["rejected"]) == 1
        assert "notes.txt" in body["rejected"][0]["file"]

    def test_empty_archive(self, client):
        resp = client.post(
            "/api/datasets", files={"file": ("e.zip", build_zip({}), "application/zip")}
        )
        assert resp.status_code == 422
        err = resp.json()["error"]
        assert err["code"] == "empty_dataset"
        assert "message" in err

    def test_not_a_zip(self, client):
        resp = client.post(
            "/api/datasets", files={"file": ("x.zip", b"garbage", "application/zip")}
        )
        assert resp.status_code == 422
        assert resp.json()["error"]["code"] == "bad_archive"

    def test_duplicate_uploads_get_distinct_handles(self, client):
        payload = build_zip(sem_fixture(2, seed=5))
        first = client.post("/api/datasets", files={"file": ("a.zip", payload, "application/zip")})
        second = client.post("/api/datasets", files={"file": ("a.zip", payload, "application/zip")})
        assert first.json()["id"] != second.json()["id"]

    def test_image_listing(self, client, dataset_id):
        resp = client.get(f"/api/datasets/{dataset_id}/images")
        body = resp.json()
        assert len(body["images"]) == 10
        assert all(i["has_ground_truth"] for i in body["images"])

    def test_unknown_dataset_404(self, client):
        assert client.get("/api/datasets/nope/images").status_code == 404


class TestJobs:
    def test_detect_lifecycle(self, client, dataset_id):
        job_id = submit(client, "detect", {"dataset": dataset_id})
        progresses = []
        while True:
            job = client.get(f"/api/jobs/{job_id}").json()
            progresses.append(job["progress"]["done"])
            if job["status"] in ("done", "failed"):
                break
            time.sleep(0.02)
        assert job["status"] == "done"
        assert progresses == sorted(progresses)  # monotone progress
        assert job["progress"]["total"] == 10
        artifact = job["result"]["artifact"]
        preds = client.get(f"/api/artifacts/{artifact}")
        assert preds.status_code == 200
        doc = json.loads(preds.content)
        assert len(doc["images"]) == 10

    def test_detect_unknown_dataset_404(self, client):
        resp = client.post("/api/jobs", json={"kind": "detect", "params": {"dataset": "ghost"}})
        assert resp.status_code == 404

    def test_invalid_params_name_field(self, client, dataset_id):
        resp = client.post(
            "/api/jobs",
            json={"kind": "detect",
                  "params": {"dataset": dataset_id, "intensity_threshold": 0.9}},
        )
        assert resp.status_code == 422
        assert resp.json()["error"]["fields"] == ["intensity_threshold"]

    def test_unknown_kind(self, client):
        resp = client.post("/api/jobs", json={"kind": "transmogrify", "params": {}})
        assert resp.status_code == 422

    def test_unknown_job_404(self, client):
        assert client.get("/api/jobs/ghost").status_code == 404

    def test_resubmission_is_content_addressed(self, client, dataset_id):
        a = run_detect(client, dataset_id)["result"]["artifact"]
        b = run_detect(client, dataset_id)["result"]["artifact"]
        assert a == b
        bytes_a = client.get(f"/api/artifacts/{a}").content
        bytes_b = client.get(f"/api/artifacts/{b}").content
        assert bytes_a == bytes_b

    def test_evaluate_requires_ground_truth(self, client, plain_dataset_id, dataset_id):
        detect = run_detect(client, plain_dataset_id)
        resp = client.post(
            "/api/jobs",
            json={"kind": "evaluate",
                  "params": {"dataset": plain_dataset_id,
                             "predictions": detect["result"]["artifact"]}},
        )
        assert resp.status_code == 422
        assert resp.json()["error"]["code"] == "missing_ground_truth"

    def test_evaluate_round(self, client, dataset_id):
        detect = run_detect(client, dataset_id)
        job = wait_for(client, submit(
            client, "evaluate",
            {"dataset": dataset_id, "predictions": detect["result"]["artifact"]},
        ))
        assert job["status"] == "done"
        assert 0.0 <= job["result"]["map"] <= 1.0
        report = json.loads(client.get(f"/api/artifacts/{job['result']['artifact']}").content)
        assert set(report) == {"config", "per_class", "map"}

    def test_ensemble_of_two_sweeps(self, client, dataset_id):
        a = run_detect(client, dataset_id, model_name="sweep_a")
        b = run_detect(client, dataset_id, model_name="sweep_b", intensity_threshold=0.55)
        job = wait_for(client, submit(
            client, "ensemble",
            {"predictions": [a["result"]["artifact"], b["result"]["artifact"]]},
        ))
        assert job["status"] == "done"
        merged = json.loads(client.get(f"/api/artifacts/{job['result']['artifact']}").content)
        first = json.loads(client.get(f"/api/artifacts/{a['result']['artifact']}").content)
        merged_count = sum(len(e["detections"]) for e in merged["images"])
        first_count = sum(len(e["detections"]) for e in first["images"])
        assert merged_count >= first_count

    def test_ensemble_needs_two_artifacts(self, client, dataset_id):
        a = run_detect(client, dataset_id)
        resp = client.post(
            "/api/jobs",
            json={"kind": "ensemble", "params": {"predictions": [a["result"]["artifact"]]}},
        )
        assert resp.status_code == 422

    def test_denoise_creates_derived_dataset(self, client, dataset_id):
        job = wait_for(client, submit(
            client, "denoise", {"dataset": dataset_id, "method": "gaussian"}
        ))
        assert job["status"] == "done"
        derived = job["result"]["dataset"]
        assert derived.startswith("drv-")
        listing = {d["id"]: d for d in client.get("/api/datasets").json()["datasets"]}
        assert listing[derived]["image_count"] == 10
        # resubmission reuses the derived id
        again = wait_for(client, submit(
            client, "denoise", {"dataset": dataset_id, "method": "gaussian"}
        ))
        assert again["result"]["dataset"] == derived

    def test_export_csv(self, client, dataset_id):
        detect = run_detect(client, dataset_id)
        job = wait_for(client, submit(
            client, "export_csv", {"predictions": detect["result"]["artifact"]}
        ))
        assert job["status"] == "done"
        text = client.get(f"/api/artifacts/{job['result']['artifact']}").content.decode()
        header, *rows = text.splitlines()
        assert header.startswith("image,class,score")
        assert len(rows) == job["result"]["rows"]

    def test_segregate_zip(self, client, dataset_id):
        detect = run_detect(client, dataset_id)
        job = wait_for(client, submit(
            client, "segregate",
            {"dataset": dataset_id, "predictions": detect["result"]["artifact"],
             "score_threshold": 0.5},
        ))
        assert job["status"] == "done"
        blob = client.get(f"/api/artifacts/{job['result']['artifact']}").content
        with zipfile.ZipFile(io.BytesIO(blob)) as zf:
            names = zf.namelist()
        copied = [n for n in names if n.lower().endswith(".png")]
        assert len(copied) == sum(job["result"]["folders"].values())
        # deterministic artifact for identical submissions
        again = wait_for(client, submit(
            client, "segregate",
            {"dataset": dataset_id, "predictions": detect["result"]["artifact"],
             "score_threshold": 0.5},
        ))
        assert again["result"]["artifact"] == job["result"]["artifact"]

    def test_job_listing(self, client):
        jobs = client.get("/api/jobs").json()["jobs"]
        assert jobs and all(j["status"] in ("queued", "running", "done", "failed") for j in jobs)


class TestOverlay:
    def test_threshold_changes_rendering(self, client, dataset_id):
        detect = run_detect(client, dataset_id)
        pred = detect["result"]["artifact"]
        preds = client.get(f"/api/artifacts/{pred}").json()
        image_id = next(e["image"] for e in preds["images"] if e["detections"])
        base = {"dataset": dataset_id, "image": image_id, "pred": pred}
        strict = client.get("/api/overlay", params={**base, "min_score": 1.5})
        loose = client.get("/api/overlay", params={**base, "min_score": 0.1})
        assert strict.status_code == loose.status_code == 200
        assert strict.headers["content-type"] == "image/png"
        assert strict.content != loose.content

    def test_deterministic_bytes(self, client, dataset_id):
        detect = run_detect(client, dataset_id)
        image_id = client.get(f"/api/datasets/{dataset_id}/images").json()["images"][0]["id"]
        params = {"dataset": dataset_id, "image": image_id,
                  "pred": detect["result"]["artifact"], "min_score": 0.5}
        assert client.get("/api/overlay", params=params).content == client.get(
            "/api/overlay", params=params
        ).content

    def test_missing_image_404(self, client, dataset_id):
        detect = run_detect(client, dataset_id)
        resp = client.get("/api/overlay", params={
            "dataset": dataset_id, "image": "ghost.png",
            "pred": detect["result"]["artifact"],
        })
        assert resp.status_code == 404

    def test_unknown_artifact_404(self, client, dataset_id):
        image_id = client.get(f"/api/datasets/{dataset_id}/images").json()["images"][0]["id"]
        resp = client.get("/api/overlay", params={
            "dataset": dataset_id, "image": image_id, "pred": "nope",
        })
        assert resp.status_code == 404
