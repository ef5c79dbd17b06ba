"""Procedural colored-shape corpus, binary PPM IO, and attribute metrics."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from rfedit.numcore import make_rng

COLORS = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
}
SHAPES = ("circle", "square")
CHANNEL = {"red": 0, "green": 1, "blue": 2}
BACKGROUND = 0.5
IMAGE_SIZE = 16


class PPMError(ValueError):
    """Base class for PPM decoding failures."""


class PPMHeaderError(PPMError):
    pass


class PPMTruncatedError(PPMError):
    pass


@dataclass(frozen=True)
class Jitter:
    """Half-extent (radius / half side) and centre ranges, in pixels."""

    size_min: int = 3
    size_max: int = 5
    margin: int = 1


@dataclass
class Sample:
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    caption: str
    mask: np.ndarray  # (H, W) bool
    color: str
    shape: str


def render(color, shape, cy, cx, size, image_size=IMAGE_SIZE):
    yy, xx = np.mgrid[0:image_size, 0:image_size]
    # pixel centres at +0.5
    dy = yy + 0.5 - cy
    dx = xx + 0.5 - cx
    if shape == "circle":
        mask = dy * dy + dx * dx <= size * size
    elif shape == "square":
        mask = (np.abs(dy) <= size) & (np.abs(dx) <= size)
    else:
        raise ValueError(f"unknown shape {shape!r}")
    image = np.full((image_size, image_size, 3), BACKGROUND, dtype=np.float32)
    image[mask] = COLORS[color]
    return image, mask


def generate_sample(seed, color, shape, jitter=Jitter(), image_size=IMAGE_SIZE):
    """Render one shape; position and size are drawn from ``seed``."""
    if color not in COLORS:
        raise ValueError(f"unknown color {color!r}")
    if shape not in SHAPES:
        raise ValueError(f"unknown shape {shape!r}")
    rng = make_rng(seed)
    size = int(rng.integers(jitter.size_min, jitter.size_max + 1))
    lo = size + jitter.margin
    hi = image_size - size - jitter.margin
    cy = int(rng.integers(lo, hi + 1))
    cx = int(rng.integers(lo, hi + 1))
    image, mask = render(color, shape, cy, cx, size, image_size)
    return Sample(image, f"{color} {shape}", mask, color, shape)


def make_corpus(size, seed=0, jitter=Jitter()):
    """Balanced corpus: item ``i`` has class ``i % 6``, its own seed from the master stream.

    Returns ``(samples, manifest_lines)``; each manifest line is
    ``<index> <seed> <color> <shape>``.
    """
    classes = [(c, s) for c in COLORS for s in SHAPES]
    rng = make_rng(seed)
    seeds = rng.integers(0, 2**31 - 1, size=size)
    samples, manifest = [], []
    for i in range(size):
        color, shape = classes[i % len(classes)]
        s = int(seeds[i])
        samples.append(generate_sample(s, color, shape, jitter))
        manifest.append(f"{i} {s} {color} {shape}")
    return samples, manifest


def write_manifest(path, lines):
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_manifest(path, jitter=Jitter()):
    samples = []
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            _, seed, color, shape = line.split()
            samples.append(generate_sample(int(seed), color, shape, jitter))
    return samples


# -- PPM --------------------------------------------------------------------
def quantize(image):
    """Clamp to [0, 1] and quantize to bytes, rounding halves up."""
    x = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.floor(x * 255.0 + 0.5).astype(np.uint8)


def encode_ppm(image):
    arr = np.asarray(image)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=2)
    if arr.dtype != np.uint8:
        arr = quantize(arr)
    h, w, c = arr.shape
    if c != 3:
        raise ValueError(f"expected 3 channels, got {c}")
    return f"P6\n{w} {h}\n255\n".encode("ascii") + arr.tobytes()


def decode_ppm(data: bytes):
    """Decode a binary P6 file into an (H, W, 3) uint8 array."""
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PPMHeaderError("header ended early")
        fields.append(data[start:pos])
    if fields[0] != b"P6":
        raise PPMHeaderError(f"bad magic {fields[0]!r}")
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise PPMHeaderError(f"non-integer header field: {exc}") from None
    if w <= 0 or h <= 0 or maxval != 255:
        raise PPMHeaderError(f"unsupported header w={w} h={h} maxval={maxval}")
    pos += 1  # single whitespace byte after maxval
    payload = data[pos:]
    need = w * h * 3
    if len(payload) < need:
        raise PPMTruncatedError(f"payload has {len(payload)} bytes, need {need}")
    return np.frombuffer(payload[:need], dtype=np.uint8).reshape(h, w, 3).copy()


def write_image(path, image):
    with open(path, "wb") as f:
        f.write(encode_ppm(image))


def read_image(path):
    """Read a P6 file as float32 in [0, 1]."""
    with open(path, "rb") as f:
        return decode_ppm(f.read()).astype(np.float32) / 255.0


def hstack_images(images, gap=1):
    """Concatenate equally sized images left to right with a white gutter."""
    h, _, c = images[0].shape
    parts = []
    for i, img in enumerate(images):
        if i:
            parts.append(np.ones((h, gap, c), dtype=np.float32))
        parts.append(np.asarray(img, dtype=np.float32))
    return np.concatenate(parts, axis=1)


# -- metrics ----------------------------------------------------------------
def attribute_metric(image, mask, channel):
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("attribute_metric needs a nonempty mask")
    if isinstance(channel, str):
        channel = CHANNEL[channel]
    return float(np.asarray(image, dtype=np.float64)[..., channel][mask].mean())


def object_mask(image, threshold=0.2):
    """Pixels that differ from the mid-gray background by more than ``threshold`` in any channel."""
    return (np.abs(np.asarray(image, dtype=np.float64) - BACKGROUND) > threshold).any(axis=-1)


def background_mse(a, b, mask):
    """Mean squared change over pixels outside ``mask``."""
    bg = ~np.asarray(mask, dtype=bool)
    if not bg.any():
        return 0.0
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float((diff[bg] ** 2).mean())


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
