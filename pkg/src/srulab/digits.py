"""Procedural handwritten-style digit images.

Each class is a stroke skeleton (a few polylines in a unit square).
Per image, an affine jitter (rotation, anisotropic scale, shear,
translation) is applied to the control points, the strokes are
rasterized by distance with an antialiased edge, lightly blurred,
noised, and finally normalized to a fixed total ink mass so that no
class is separable from the others by average intensity alone.  The
mass normalization matters for sequence models that read the image as
a scan: it removes the shortcut where a slow running mean of pixel
values identifies the digit without any temporal structure.

All randomness for image i of a split comes from stream(seed, domain, i):
label first, then jitter parameters, then pixel noise, in a fixed order.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from . import rng as rngmod
from .datasets import SequenceDataset, images_to_dataset

IMAGE_SIZE = 28
NUM_CLASSES = 10
INK_MASS = 60.0   # total intensity per image after normalization

_SPLIT_DOMAINS = {
    "train": rngmod.DIGITS_TRAIN,
    "val": rngmod.DIGITS_VAL,
    "test": rngmod.DIGITS_TEST,
}

DEFAULT_SPLITS = {"train": 5000, "val": 1000, "test": 1000}

# Stroke skeletons, unit coordinates, y increasing downwards.
_GLYPHS: dict[int, list[list[tuple[float, float]]]] = {
    0: [[(0.38, 0.14), (0.62, 0.14), (0.74, 0.30), (0.74, 0.70),
         (0.62, 0.86), (0.38, 0.86), (0.26, 0.70), (0.26, 0.30),
         (0.38, 0.14)]],
    1: [[(0.36, 0.26), (0.54, 0.12), (0.54, 0.88)]],
    2: [[(0.28, 0.30), (0.34, 0.16), (0.62, 0.13), (0.72, 0.28),
         (0.66, 0.45), (0.28, 0.84), (0.76, 0.84)]],
    3: [[(0.28, 0.20), (0.46, 0.12), (0.68, 0.18), (0.70, 0.36),
         (0.50, 0.47), (0.72, 0.58), (0.72, 0.78), (0.50, 0.88),
         (0.28, 0.80)]],
    4: [[(0.64, 0.88), (0.64, 0.12), (0.24, 0.62), (0.80, 0.62)]],
    5: [[(0.72, 0.14), (0.32, 0.14), (0.29, 0.45), (0.56, 0.42),
         (0.73, 0.55), (0.72, 0.76), (0.52, 0.88), (0.28, 0.80)]],
    6: [[(0.64, 0.12), (0.40, 0.28), (0.28, 0.52), (0.28, 0.74),
         (0.44, 0.88), (0.64, 0.82), (0.70, 0.64), (0.56, 0.50),
         (0.32, 0.58)]],
    7: [[(0.24, 0.14), (0.76, 0.14), (0.46, 0.88)]],
    8: [[(0.50, 0.12), (0.68, 0.20), (0.65, 0.38), (0.50, 0.47),
         (0.35, 0.38), (0.32, 0.20), (0.50, 0.12)],
        [(0.50, 0.47), (0.71, 0.58), (0.70, 0.80), (0.50, 0.88),
         (0.30, 0.80), (0.29, 0.58), (0.50, 0.47)]],
    9: [[(0.70, 0.44), (0.48, 0.54), (0.31, 0.42), (0.30, 0.22),
         (0.48, 0.12), (0.66, 0.20), (0.70, 0.44), (0.66, 0.70),
         (0.52, 0.88)]],
}

# pixel-center coordinates in unit space, reused across images
_GRID = (np.stack(np.meshgrid(np.arange(IMAGE_SIZE), np.arange(IMAGE_SIZE),
                              indexing="xy"), axis=-1)  # (28, 28, 2) x,y
         .reshape(-1, 2).astype(np.float64) + 0.5) / IMAGE_SIZE


def _jitter_matrix(rng) -> tuple[np.ndarray, np.ndarray]:
    """Random affine map of the unit square about its center.  Draw
    order is part of the format: rotation, scale x, scale y, shear,
    shift x, shift y, thickness comes after via the caller."""
    theta = rng.uniform(-0.22, 0.22)
    sx = rng.uniform(0.85, 1.12)
    sy = rng.uniform(0.85, 1.12)
    shear = rng.uniform(-0.18, 0.18)
    tx = rng.uniform(-0.06, 0.06)
    ty = rng.uniform(-0.06, 0.06)
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    sc = np.array([[sx, sx * shear], [0.0, sy]])
    return rot @ sc, np.array([tx, ty])


def _paint(points: np.ndarray, thickness: float) -> np.ndarray:
    """Antialiased distance field of one polyline, flat (784,) image."""
    img = np.zeros(IMAGE_SIZE * IMAGE_SIZE)
    aa = 0.35 * thickness
    for a, b in zip(points[:-1], points[1:]):
        ab = b - a
        denom = float(ab @ ab)
        if denom == 0.0:
            proj = np.zeros(len(_GRID))
        else:
            proj = np.clip((_GRID - a) @ ab / denom, 0.0, 1.0)
        nearest = a + proj[:, None] * ab
        dist = np.sqrt(((_GRID - nearest) ** 2).sum(axis=1))
        ink = np.clip((thickness - dist) / aa + 0.5, 0.0, 1.0)
        np.maximum(img, ink, out=img)
    return img


def render_digit(label: int, rng) -> np.ndarray:
    """One (28, 28) float image in [0, 1] for a class label."""
    if not 0 <= label < NUM_CLASSES:
        raise ValueError(f"label must be 0..9, got {label}")
    mat, shift = _jitter_matrix(rng)
    thickness = rng.uniform(0.050, 0.070)
    img = np.zeros(IMAGE_SIZE * IMAGE_SIZE)
    for stroke in _GLYPHS[label]:
        pts = np.asarray(stroke)
        pts = (pts - 0.5) @ mat.T + 0.5 + shift
        np.maximum(img, _paint(pts, thickness), out=img)
    img = img.reshape(IMAGE_SIZE, IMAGE_SIZE)
    img = ndimage.gaussian_filter(img, sigma=0.6)
    noise = rng.normal(0.0, 0.03, size=img.shape)
    img = np.clip(img + noise, 0.0, None)
    mass = img.sum()
    if mass <= 0.0:
        raise ValueError("blank render")
    img *= INK_MASS / mass
    return np.clip(img, 0.0, 1.0)


def generate_split(seed: int, n: int, domain: int,
                   ) -> tuple[np.ndarray, np.ndarray]:
    """(images u8 (n, 28, 28), labels (n,)); one stream per image."""
    images = np.empty((n, IMAGE_SIZE, IMAGE_SIZE), dtype=np.uint8)
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        g = rngmod.stream(seed, domain, i)
        lab = int(g.integers(0, NUM_CLASSES))
        img = render_digit(lab, g)
        images[i] = np.round(img * 255.0).astype(np.uint8)
        labels[i] = lab
    return images, labels


def generate_digits(seed: int, splits: dict[str, int] | None = None,
                    ) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Per split: (images, labels) with independent per-image streams."""
    if splits is None:
        splits = dict(DEFAULT_SPLITS)
    out = {}
    for name, n in splits.items():
        if name not in _SPLIT_DOMAINS:
            raise ValueError(f"unknown split name: {name}")
        if n < 1:
            raise ValueError(f"split {name} must be nonempty")
        out[name] = generate_split(seed, n, _SPLIT_DOMAINS[name])
    return out


def digits_dataset(seed: int, splits: dict[str, int] | None = None,
                   pool: int = 2) -> dict[str, SequenceDataset]:
    """Scan-order classification datasets from freshly rendered digits."""
    rendered = generate_digits(seed, splits)
    return {
        name: images_to_dataset(imgs.astype(np.float64) / 255.0, labs, pool)
        for name, (imgs, labs) in rendered.items()
    }
