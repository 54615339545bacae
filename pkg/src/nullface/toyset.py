"""Bundled deterministic toy face set.

Sixteen procedurally drawn 32x32 faces in the same geometric family the
toy parser assumes (ellipse face, disk eyes, triangle nose, box mouth),
with per-identity colors and small geometry jitter. Purely synthetic;
used by tests, the evaluation sweeps, and the CLI quickstart.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from . import rng

DEFAULT_COUNT = 16
DEFAULT_SIZE = 32


def _draw_face(g: np.random.Generator, size: int) -> np.ndarray:
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w]
    cy = h / 2.0 + g.uniform(-1.5, 1.5)
    cx = w / 2.0 + g.uniform(-1.5, 1.5)

    img = np.empty((h, w, 3), dtype=np.float64)
    img[:] = g.uniform(30, 225, size=3)

    skin = g.uniform(90, 230, size=3) * np.array([1.0, 0.85, 0.72])
    hair = g.uniform(10, 200, size=3)
    eye = g.uniform(0, 255, size=3)
    mouth = g.uniform(120, 255, size=3) * np.array([1.0, 0.45, 0.45])

    outer = ((yy - cy) / (0.46 * h)) ** 2 + ((xx - cx) / (0.40 * w)) ** 2 <= 1.0
    face = ((yy - cy) / (0.38 * h)) ** 2 + ((xx - cx) / (0.30 * w)) ** 2 <= 1.0
    img[outer & (yy < cy - 0.22 * h)] = hair
    img[face] = skin
    img[face & (yy < cy - 0.30 * h)] = hair

    eye_y = cy - 0.10 * h + g.uniform(-0.7, 0.7)
    eye_dx = 0.13 * w + g.uniform(-0.8, 0.8)
    eye_r = 0.05 * min(h, w) + g.uniform(0.0, 0.8)
    for ex in (cx - eye_dx, cx + eye_dx):
        img[(yy - eye_y) ** 2 + (xx - ex) ** 2 <= eye_r**2] = eye

    nose_span = (yy - cy + 0.02 * h) / (0.14 * h)
    nose = (nose_span >= 0) & (nose_span <= 1.0) & (np.abs(xx - cx) <= 0.06 * w * nose_span)
    img[nose & face] = skin * 0.82

    mouth_y = cy + 0.22 * h + g.uniform(-0.7, 0.7)
    mouth_w = 0.11 * w + g.uniform(-0.8, 0.8)
    box = (np.abs(yy - mouth_y) < 0.035 * h) & (np.abs(xx - cx) < mouth_w)
    img[box & face] = mouth

    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def generate_toy_faces(count: int = DEFAULT_COUNT, size: int = DEFAULT_SIZE,
                       seed: int = 0) -> list[tuple[str, np.ndarray]]:
    """Deterministic list of (identity name, uint8 RGB image)."""
    faces = []
    for i in range(count):
        g = rng.aux_generator(seed, 100 + i)
        faces.append((f"face{i:03d}", _draw_face(g, size)))
    return faces


def write_toy_faces(out_dir, count: int = DEFAULT_COUNT, size: int = DEFAULT_SIZE,
                    seed: int = 0) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, img in generate_toy_faces(count, size, seed):
        path = out_dir / f"{name}.png"
        Image.fromarray(img, mode="RGB").save(path, format="PNG")
        paths.append(path)
    return paths


def load_image(path) -> np.ndarray:
    img = Image.open(path)
    img.load()
    return np.asarray(img.convert("RGB"))
