"""HTTP facade for the interactive console.

Complete v1 surface:

    POST /api/images                         upload an RGB image
    GET  /api/images/{id}/segmentation       label map (toy parser or sidecar)
    POST /api/invert                         enqueue an inversion job
    POST /api/anonymize                      enqueue an anonymize job
    GET  /api/jobs/{id}                      poll job state
    GET  /api/results/{job_id}/image         fetch a finished result image

Jobs are asynchronous: clients poll. Inversions are cached by
(image, steps, seed, backend) and concurrent identical invert requests
coalesce into a single job, so parameter changes in the denoise phase
never trigger re-inversion. Results live on disk under a
content-addressed run directory; no database.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import threading
import time
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel

from . import __version__
from .backbones import resolve_plugin
from .conditioning import extract_embedding
from .denoiser import AnonymizationConfig, anonymize
from .engine import make_pool
from .errors import NullfaceError, PluginError, ValidationError
from .estimator import image_seed
from .evaluation import identity_distance
from .inversion import invert
from .masks import CODES, PRESET_NAMES, RegionMask, SegmentationMap, preset_mask
from .schedule import default_schedule

API_VERSION = "1"
MAX_UPLOAD_BYTES = 8 * 1024 * 1024


class InvertRequest(BaseModel):
    image_id: str
    steps: int = 100
    seed: int = 0
    backend: str = "toy-pointwise"


class AnonymizeRequest(BaseModel):
    inversion_id: str
    lambda_id: float = 1.0
    lambda_cfg: float = 10.0
    lambda_img: float = 1.0
    t_skip: int = 70
    mask_start: int = 80
    mask: str | dict | None = None  # preset name or {"inline": base64 PNG}
    backend: str = "toy-pointwise"


class _Job:
    def __init__(self, kind: str, config: dict):
        self.id = uuid.uuid4().hex[:16]
        self.kind = kind
        self.state = "queued"
        self.config = config
        self.result: dict | None = None
        self.error: str | None = None
        self.created = time.time()
        self.started: float | None = None
        self.finished: float | None = None

    def as_json(self) -> dict:
        body = {
            "id": self.id, "kind": self.kind, "state": self.state,
            "config": self.config, "created": self.created,
            "started": self.started, "finished": self.finished,
        }
        if self.state == "done":
            body["result"] = self.result
        if self.state == "failed":
            body["error"] = self.error
        return body


class ServiceState:
    """Single-writer job store plus the engine worker pool."""

    def __init__(self, root: Path):
        self.root = Path(root)
        (self.root / "images").mkdir(parents=True, exist_ok=True)
        (self.root / "results").mkdir(parents=True, exist_ok=True)
        self.lock = threading.Lock()
        self.images: dict[str, np.ndarray] = {}
        self.segmentations: dict[str, np.ndarray] = {}
        self.jobs: dict[str, _Job] = {}
        self.inversions: dict[str, dict] = {}   # inversion_id -> stored record info
        self.invert_jobs: dict[tuple, str] = {}  # single-flight key -> job id
        self.pool = make_pool()
        self.parser = resolve_plugin("parser", "toy-geometric")
        self.codec = resolve_plugin("codec", "toy-codec")
        self.embedder = resolve_plugin("embedder", "toy-stats")
        self._backbones: dict[str, object] = {}

    def backbone(self, name: str):
        if name not in self._backbones:
            self._backbones[name] = resolve_plugin("backbone", name)
        return self._backbones[name]

    def transition(self, job: _Job, state: str, **fields) -> None:
        with self.lock:
            allowed = {"queued": {"running"}, "running": {"done", "failed"}}
            if state not in allowed.get(job.state, set()):
                raise RuntimeError(f"illegal transition {job.state} -> {state}")
            job.state = state
            for key, value in fields.items():
                setattr(job, key, value)


def _error(status: int, reason: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": reason})


def create_app(root: Path | str = "nullface-runs") -> FastAPI:
    app = FastAPI(title="nullface service", version=__version__)
    state = ServiceState(Path(root))
    app.state.service = state

    @app.middleware("http")
    async def version_header(request: Request, call_next):
        response = await call_next(request)
        response.headers["X-NullFace-API"] = API_VERSION
        return response

    @app.post("/api/images")
    async def upload_image(request: Request):
        payload = await request.body()
        if len(payload) > MAX_UPLOAD_BYTES:
            return _error(413, f"payload exceeds {MAX_UPLOAD_BYTES} bytes")
        try:
            img = Image.open(io.BytesIO(payload))
            img.load()
            arr = np.asarray(img.convert("RGB"))
        except Exception as exc:
            return _error(415, f"payload is not a decodable image: {exc}")
        image_id = hashlib.sha256(payload).hexdigest()[:16] + uuid.uuid4().hex[:8]
        with state.lock:
            state.images[image_id] = arr
        (state.root / "images" / f"{image_id}.png").write_bytes(payload)
        return {"image_id": image_id, "width": arr.shape[1], "height": arr.shape[0]}

    @app.get("/api/images/{image_id}/segmentation")
    def segmentation(image_id: str):
        with state.lock:
            img = state.images.get(image_id)
        if img is None:
            return _error(404, f"unknown image {image_id}")
        if image_id not in state.segmentations:
            seg = state.parser(img)
            with state.lock:
                state.segmentations[image_id] = seg.labels
        labels = state.segmentations[image_id]
        return {
            "image_id": image_id, "width": labels.shape[1], "height": labels.shape[0],
            "codes": {str(v): k for k, v in CODES.items()},
            "labels": labels.tolist(),
        }

    def _run_invert(job: _Job, image_id: str, req: InvertRequest):
        state.transition(job, "running", started=time.time())
        try:
            img = state.images[image_id]
            backbone = state.backbone(req.backend)
            sched = default_schedule(req.steps)
            latent = state.codec.encode(img)
            rec = invert(latent, backbone, sched,
                         seed=image_seed(req.seed, img))
            inversion_id = job.id
            with state.lock:
                state.inversions[inversion_id] = {
                    "record": rec, "image_id": image_id, "steps": req.steps,
                    "seed": req.seed, "backend": req.backend,
                    "schedule": sched,
                }
            state.transition(job, "done", finished=time.time())
            job.result = {
                "inversion_id": inversion_id,
                "backbone_fingerprint": rec.backbone_fingerprint,
                "schedule_fingerprint": rec.schedule_fingerprint,
            }
        except NullfaceError as exc:
            state.transition(job, "failed", finished=time.time(), error=str(exc))

    @app.post("/api/invert")
    def invert_endpoint(req: InvertRequest):
        if req.steps < 1:
            return _error(422, "steps must be >= 1")
        if req.seed < 0:
            return _error(422, "seed must be >= 0")
        with state.lock:
            known = req.image_id in state.images
        if not known:
            return _error(404, f"unknown image {req.image_id}")
        try:
            state.backbone(req.backend)
        except PluginError as exc:
            return _error(422, str(exc))
        key = (req.image_id, req.steps, req.seed, req.backend)
        with state.lock:
            existing_id = state.invert_jobs.get(key)
            if existing_id is not None:
                return state.jobs[existing_id].as_json()
            job = _Job("invert", req.model_dump())
            state.jobs[job.id] = job
            state.invert_jobs[key] = job.id
        state.pool.submit(_run_invert, job, req.image_id, req)
        return job.as_json()

    def _resolve_mask(mask_spec, seg, latent_shape):
        if mask_spec is None:
            return preset_mask(seg, "whole-face", latent_shape), "whole-face"
        if isinstance(mask_spec, str):
            return preset_mask(seg, mask_spec, latent_shape), mask_spec
        inline = mask_spec.get("inline", "")
        raw = base64.b64decode(inline)
        img = Image.open(io.BytesIO(raw))
        img.load()
        if img.mode != "L":
            raise ValidationError("inline mask must be a single-channel 8-bit image")
        arr = np.asarray(img)
        if arr.shape != tuple(latent_shape[-2:]):
            raise ValidationError(
                f"inline mask shape {arr.shape} does not match latent "
                f"{tuple(latent_shape[-2:])}")
        return RegionMask(arr.astype(np.float64) / 255.0,
                          provenance="inline"), "inline"

    def _run_anonymize(job: _Job, req: AnonymizeRequest):
        state.transition(job, "running", started=time.time())
        try:
            info = state.inversions[req.inversion_id]
            rec = info["record"]
            sched = info["schedule"]
            backbone = state.backbone(info["backend"])
            img = state.images[info["image_id"]]
            seg_labels = state.segmentations.get(info["image_id"])
            seg = state.parser(img) if seg_labels is None else SegmentationMap(seg_labels)
            mask_user, mask_name = _resolve_mask(req.mask, seg, rec.latent_shape)
            mask_face = preset_mask(seg, "whole-face", rec.latent_shape)
            embedding = extract_embedding(img, state.embedder)
            cfg = AnonymizationConfig(
                T=info["steps"], t_skip=req.t_skip, lambda_id=req.lambda_id,
                lambda_cfg=req.lambda_cfg, lambda_img=req.lambda_img,
                mask_preset=mask_name if isinstance(req.mask, (str, type(None))) else "inline",
                mask_start=req.mask_start, seed=info["seed"])
            latent = anonymize(rec, cfg, mask_user, mask_face, embedding,
                               backbone, sched)
            out = state.codec.decode(latent)
            result_dir = state.root / "results" / job.id
            result_dir.mkdir(parents=True, exist_ok=True)
            Image.fromarray(out, mode="RGB").save(result_dir / "result.png", format="PNG")
            manifest = {
                "version": 1, "tool": f"nullface {__version__}",
                "command": "anonymize",
                "config": {**req.model_dump(), "steps": info["steps"],
                           "seed": info["seed"], "image_id": info["image_id"]},
                "fingerprints": {
                    "backbone": rec.backbone_fingerprint,
                    "schedule": rec.schedule_fingerprint,
                    "codec": state.codec.fingerprint,
                    "embedder": state.embedder.fingerprint,
                    "parser": state.parser.fingerprint,
                },
            }
            (result_dir / "manifest.json").write_text(
                json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
            dist = identity_distance(embedding, extract_embedding(out, state.embedder))
            state.transition(job, "done", finished=time.time())
            job.result = {
                "image_url": f"/api/results/{job.id}/image",
                "manifest": manifest,
                "identity_distance": dist,
                "inversion_id": req.inversion_id,
                "inversion_fingerprints": {
                    "backbone": rec.backbone_fingerprint,
                    "schedule": rec.schedule_fingerprint,
                },
            }
        except NullfaceError as exc:
            state.transition(job, "failed", finished=time.time(), error=str(exc))

    @app.post("/api/anonymize")
    def anonymize_endpoint(req: AnonymizeRequest):
        with state.lock:
            info = state.inversions.get(req.inversion_id)
        if info is None:
            return _error(404, f"unknown inversion {req.inversion_id}")
        if req.backend != info["backend"]:
            return _error(409, f"inversion was built with backend {info['backend']!r}, "
                               f"requested {req.backend!r}")
        steps = info["steps"]
        if not 0 <= req.t_skip <= steps:
            return _error(422, f"t_skip must be in [0, {steps}]")
        if not 0 <= req.mask_start <= steps:
            return _error(422, f"mask_start must be in [0, {steps}]")
        if req.lambda_id < 0 or req.lambda_img < 0:
            return _error(422, "lambda_id and lambda_img must be >= 0")
        if isinstance(req.mask, str) and req.mask not in PRESET_NAMES:
            return _error(422, f"unknown mask preset {req.mask!r}")
        job = _Job("anonymize", req.model_dump())
        with state.lock:
            state.jobs[job.id] = job
        state.pool.submit(_run_anonymize, job, req)
        return job.as_json()

    @app.get("/api/jobs/{job_id}")
    def job_status(job_id: str):
        with state.lock:
            job = state.jobs.get(job_id)
        if job is None:
            return _error(404, f"unknown job {job_id}")
        return job.as_json()

    @app.get("/api/results/{job_id}/image")
    def result_image(job_id: str):
        with state.lock:
            job = state.jobs.get(job_id)
        if job is None or job.state != "done" or job.kind != "anonymize":
            return _error(404, f"no finished anonymize result for {job_id}")
        payload = (state.root / "results" / job_id / "result.png").read_bytes()
        return Response(content=payload, media_type="image/png")

    return app
