import base64
import io
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from nullface.service import create_app
from nullface.toyset import generate_toy_faces


def png_bytes(img):
    buf = io.BytesIO()
    Image.fromarray(img, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def wait_done(client, job_id, timeout=15.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        job = client.get(f"/api/jobs/{job_id}").json()
        if job["state"] in ("done", "failed"):
            return job
        time.sleep(0.02)
    raise TimeoutError(job_id)


@pytest.fixture(scope="module")
def client(tmp_path_factory):
    app = create_app(tmp_path_factory.mktemp("service-root"))
    with TestClient(app) as c:
        yield c


@pytest.fixture(scope="module")
def uploaded(client):
    img = generate_toy_faces(1, 32)[0][1]
    r = client.post("/api/images", content=png_bytes(img))
    assert r.status_code == 200
    return r.json()["image_id"], img


@pytest.fixture(scope="module")
def inversion(client, uploaded):
    image_id, _ = uploaded
    r = client.post("/api/invert", json={"image_id": image_id, "steps": 20,
                                         "seed": 0, "backend": "toy-pointwise"})
    job = wait_done(client, r.json()["id"])
    assert job["state"] == "done"
    return job["result"]["inversion_id"]


def test_version_header(client):
    r = client.get("/api/jobs/nope")
    assert r.headers["X-NullFace-API"] == "1"


def test_upload_returns_distinct_ids(client, uploaded):
    _, img = uploaded
    a = client.post("/api/images", content=png_bytes(img)).json()["image_id"]
    b = client.post("/api/images", content=png_bytes(img)).json()["image_id"]
    assert a != b


def test_upload_corrupt_payload_415(client):
    r = client.post("/api/images", content=b"definitely not an image")
    assert r.status_code == 415
    assert "error" in r.json()


def test_upload_oversize_413(client):
    r = client.post("/api/images", content=b"\x00" * (8 * 1024 * 1024 + 1))
    assert r.status_code == 413


def test_segmentation_has_nine_code_vocabulary(client, uploaded):
    image_id, _ = uploaded
    r = client.get(f"/api/images/{image_id}/segmentation")
    assert r.status_code == 200
    body = r.json()
    labels = {v for row in body["labels"] for v in row}
    assert labels <= set(range(9))
    assert set(body["codes"]) == {str(c) for c in range(9)}


def test_segmentation_unknown_image_404(client):
    assert client.get("/api/images/zzz/segmentation").status_code == 404


def test_invert_unknown_image_404(client):
    r = client.post("/api/invert", json={"image_id": "zzz", "steps": 10})
    assert r.status_code == 404


def test_invert_single_flight_coalesces(client, uploaded):
    image_id, _ = uploaded
    body = {"image_id": image_id, "steps": 12, "seed": 3, "backend": "toy-pointwise"}
    a = client.post("/api/invert", json=body).json()
    b = client.post("/api/invert", json=body).json()
    assert a["id"] == b["id"]
    other = client.post("/api/invert", json={**body, "seed": 4}).json()
    assert other["id"] != a["id"]


def test_anonymize_flow_and_identity_distance(client, inversion):
    r = client.post("/api/anonymize", json={
        "inversion_id": inversion, "lambda_id": 1.0, "lambda_cfg": 10.0,
        "t_skip": 12, "mask_start": 0, "mask": "whole-face"})
    assert r.status_code == 200
    job = wait_done(client, r.json()["id"])
    assert job["state"] == "done"
    result = job["result"]
    assert result["identity_distance"] > 0.0
    img = client.get(result["image_url"])
    assert img.status_code == 200
    assert img.headers["content-type"] == "image/png"
    assert result["manifest"]["fingerprints"]["backbone"].startswith("toy-pointwise")


def test_lambda_cfg_zero_reconstruction_distance_near_zero(client, inversion):
    r = client.post("/api/anonymize", json={
        "inversion_id": inversion, "lambda_id": 1.0, "lambda_cfg": 0.0,
        "t_skip": 12, "mask_start": 0})
    job = wait_done(client, r.json()["id"])
    assert job["state"] == "done"
    assert job["result"]["identity_distance"] < 0.05


def test_t_skip_full_equals_reconstruction(client, uploaded, inversion):
    r = client.post("/api/anonymize", json={
        "inversion_id": inversion, "t_skip": 20, "mask_start": 0})
    job = wait_done(client, r.json()["id"])
    assert job["state"] == "done"
    assert job["result"]["identity_distance"] < 0.05


def test_mask_change_reuses_inversion(client, inversion):
    jobs = []
    for preset in ("keep-eyes", "keep-mouth"):
        r = client.post("/api/anonymize", json={
            "inversion_id": inversion, "t_skip": 12, "mask_start": 0,
            "mask": preset})
        jobs.append(wait_done(client, r.json()["id"]))
    fps = [j["result"]["inversion_fingerprints"] for j in jobs]
    assert fps[0] == fps[1]
    assert all(j["result"]["inversion_id"] == inversion for j in jobs)
    # denoise-only jobs are far quicker than the original inversion
    assert all(j["finished"] - j["started"] < 10.0 for j in jobs)


def test_inline_mask(client, inversion):
    mask = np.zeros((32, 32), dtype=np.uint8)
    mask[8:24, 8:24] = 255
    buf = io.BytesIO()
    Image.fromarray(mask, mode="L").save(buf, format="PNG")
    r = client.post("/api/anonymize", json={
        "inversion_id": inversion, "t_skip": 12, "mask_start": 0,
        "mask": {"inline": base64.b64encode(buf.getvalue()).decode()}})
    job = wait_done(client, r.json()["id"])
    assert job["state"] == "done"


def test_anonymize_error_codes(client, inversion):
    assert client.post("/api/anonymize", json={"inversion_id": "zzz"}).status_code == 404
    assert client.post("/api/anonymize", json={
        "inversion_id": inversion, "t_skip": 999}).status_code == 422
    assert client.post("/api/anonymize", json={
        "inversion_id": inversion, "lambda_id": -1.0}).status_code == 422
    assert client.post("/api/anonymize", json={
        "inversion_id": inversion, "mask": "no-such-preset"}).status_code == 422
    assert client.post("/api/anonymize", json={
        "inversion_id": inversion, "backend": "toy-attention"}).status_code == 409


def test_job_transitions_and_timestamps(client, uploaded):
    image_id, _ = uploaded
    r = client.post("/api/invert", json={"image_id": image_id, "steps": 8,
                                         "seed": 9, "backend": "toy-pointwise"})
    job = wait_done(client, r.json()["id"])
    assert job["state"] == "done"
    assert job["started"] >= job["created"]
    assert job["finished"] >= job["started"]
