"""Dataset loading: IDX files (gzip or raw), batching, synthetic glyph corpus.

The synthetic dataset draws seven-segment digit glyphs with seeded affine
jitter so the whole pipeline can run and be tested without downloading
anything.  Pixels are quantized onto the uint8/255 grid at generation time,
which makes IDX round-trips bit-exact.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass

import numpy as np

_IMAGES_MAGIC = 0x00000803
_LABELS_MAGIC = 0x00000801
_GZIP_SIG = b"\x1f\x8b"

TRAIN_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte")
TEST_FILES = ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


@dataclass
class Dataset:
    """Images in [0,1] as float32 N×1×H×W with integer labels in [0,10)."""

    images: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        self.validate()

    def validate(self):
        img, lab = self.images, self.labels
        if img.ndim != 4 or img.shape[1] != 1:
            raise ValueError(f"images must be N x 1 x H x W, got {img.shape}")
        if lab.shape != (img.shape[0],):
            raise ValueError(f"{img.shape[0]} images but {lab.shape} labels")
        if img.size and (img.min() < 0.0 or img.max() > 1.0):
            raise ValueError("pixel values outside [0, 1]")
        if lab.size and (lab.min() < 0 or lab.max() >= 10):
            raise ValueError("labels must lie in [0, 10)")

    @property
    def n(self) -> int:
        return self.images.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.split)


def _read_bytes(path) -> bytes:
    with open(path, "rb") as f:
        head = f.read(2)
        f.seek(0)
        if head == _GZIP_SIG:
            with gzip.open(f) as g:
                return g.read()
        return f.read()


def load_idx_images(path) -> np.ndarray:
    """Parse an IDX image file into float32 N×1×H×W in [0,1]."""
    raw = _read_bytes(path)
    if len(raw) < 16:
        raise ValueError(f"{path}: truncated IDX header")
    magic, n, h, w = struct.unpack_from(">IIII", raw, 0)
    if magic != _IMAGES_MAGIC:
        raise ValueError(f"{path}: wrong magic for images (0x{magic:08x})")
    if len(raw) != 16 + n * h * w:
        raise ValueError(f"{path}: {len(raw) - 16} data bytes, header promises {n * h * w}")
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16)
    return (pixels.reshape(n, 1, h, w).astype(np.float32)) / np.float32(255.0)


def load_idx_labels(path) -> np.ndarray:
    """Parse an IDX label file into int64 labels, each < 10."""
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated IDX header")
    magic, n = struct.unpack_from(">II", raw, 0)
    if magic != _LABELS_MAGIC:
        raise ValueError(f"{path}: wrong magic for labels (0x{magic:08x})")
    if len(raw) != 8 + n:
        raise ValueError(f"{path}: {len(raw) - 8} data bytes, header promises {n}")
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8)
    if labels.size and labels.max() >= 10:
        raise ValueError(f"{path}: label {labels.max()} out of range [0, 10)")
    return labels.astype(np.int64)


def quantize_u8(images: np.ndarray) -> np.ndarray:
    """Map [0,1] floats to bytes, rounding half up (the inverse of /255)."""
    return np.floor(np.clip(images, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_idx_images(path, images: np.ndarray) -> None:
    """Write float images as a raw (or .gz) IDX file, quantizing to uint8."""
    n, c, h, w = images.shape
    if c != 1:
        raise ValueError("IDX export supports single-channel images only")
    header = struct.pack(">IIII", _IMAGES_MAGIC, n, h, w)
    payload = header + quantize_u8(images).tobytes()
    _write_maybe_gz(path, payload)


def save_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= 10):
        raise ValueError("labels must lie in [0, 10)")
    payload = struct.pack(">II", _LABELS_MAGIC, labels.size) + labels.astype(np.uint8).tobytes()
    _write_maybe_gz(path, payload)


def _write_maybe_gz(path, payload: bytes) -> None:
    if str(path).endswith(".gz"):
        # fixed mtime and no embedded name so identical data gives identical files
        with open(path, "wb") as f:
            with gzip.GzipFile(filename="", fileobj=f, mode="wb", mtime=0) as g:
                g.write(payload)
    else:
        with open(path, "wb") as f:
            f.write(payload)


def load_dataset(data_dir, split: str) -> Dataset:
    """Load MNIST-format train/test IDX pairs from a directory (gz or raw)."""
    from pathlib import Path

    img_name, lab_name = TRAIN_FILES if split == "train" else TEST_FILES
    base = Path(data_dir)
    paths = []
    for name in (img_name, lab_name):
        for cand in (base / name, base / (name + ".gz")):
            if cand.exists():
                paths.append(cand)
                break
        else:
            raise FileNotFoundError(f"{base}: missing {name}[.gz]")
    images = load_idx_images(paths[0])
    labels = load_idx_labels(paths[1])
    return Dataset(images, labels, split)


# ---------------------------------------------------------------------------
# batching


def batches(dataset: Dataset, batch_size: int, shuffle_seed=None):
    """Yield (images, labels) minibatches; final short batch included.

    shuffle_seed None keeps the original order; any integer gives a
    deterministic permutation.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = dataset.n
    order = np.arange(n)
    if shuffle_seed is not None:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(shuffle_seed))))
        order = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield dataset.images[idx], dataset.labels[idx]


# ---------------------------------------------------------------------------
# synthetic seven-segment glyphs

# canonical segment endpoints on the [-1,1]^2 box (y grows downward)
_SEGMENTS = {
    "A": ((-1.0, -1.0), (1.0, -1.0)),
    "B": ((1.0, -1.0), (1.0, 0.0)),
    "C": ((1.0, 0.0), (1.0, 1.0)),
    "D": ((-1.0, 1.0), (1.0, 1.0)),
    "E": ((-1.0, 0.0), (-1.0, 1.0)),
    "F": ((-1.0, -1.0), (-1.0, 0.0)),
    "G": ((-1.0, 0.0), (1.0, 0.0)),
}

_DIGIT_SEGMENTS = (
    "ABCDEF", "BC", "ABGED", "ABCDG", "FGBC",
    "AFGCD", "AFGEDC", "ABC", "ABCDEFG", "ABCDFG",
)

_HALF_W = 5.5   # canonical half-extent in pixels, x axis
_HALF_H = 9.5   # y axis
_SIDE = 28


def _render_glyph(digit: int, theta, scale, tx, ty, half_stroke, intensity,
                  softness) -> np.ndarray:
    segs = _DIGIT_SEGMENTS[digit]
    cy = cx = (_SIDE - 1) / 2.0
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    ys, xs = np.mgrid[0:_SIDE, 0:_SIDE]
    px = xs.astype(np.float64)
    py = ys.astype(np.float64)
    cover = np.zeros((_SIDE, _SIDE))
    for name in segs:
        (x0, y0), (x1, y1) = _SEGMENTS[name]
        pts = np.array([[x0, y0], [x1, y1]]) * (scale * np.array([_HALF_W, _HALF_H]))
        rot = pts @ np.array([[cos_t, sin_t], [-sin_t, cos_t]])
        ax, ay = rot[0, 0] + cx + tx, rot[0, 1] + cy + ty
        bx, by = rot[1, 0] + cx + tx, rot[1, 1] + cy + ty
        dx, dy = bx - ax, by - ay
        seg_len2 = dx * dx + dy * dy
        t = np.clip(((px - ax) * dx + (py - ay) * dy) / seg_len2, 0.0, 1.0)
        dist = np.hypot(px - (ax + t * dx), py - (ay + t * dy))
        cover = np.maximum(cover, np.clip(0.5 + (half_stroke - dist) / (2 * softness), 0.0, 1.0))
    return intensity * cover


def _background(rng, amplitude) -> np.ndarray:
    """Smooth low-frequency shading: a 7x7 field bilinearly blown up to 28x28."""
    from scipy.ndimage import zoom

    coarse = rng.uniform(0.0, amplitude, size=(7, 7))
    return zoom(coarse, _SIDE / 7, order=1)


def synthetic_dataset(seed: int, n_per_class: int, split: str = "train") -> Dataset:
    """Deterministic 10-class glyph dataset; exactly n_per_class per digit.

    Jitter covers pose (rotation, scale, shift), stroke width, intensity,
    edge softness and faint background shading, so classifiers trained on it
    tolerate the mild blur and ripple that reconstruction-style defenses
    introduce.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    n = 10 * n_per_class
    images = np.empty((n, 1, _SIDE, _SIDE), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    i = 0
    for digit in range(10):
        for _ in range(n_per_class):
            glyph = _render_glyph(
                digit,
                theta=rng.uniform(-0.18, 0.18),
                scale=rng.uniform(0.85, 1.1),
                tx=rng.uniform(-0.08, 0.08) * _SIDE,
                ty=rng.uniform(-0.08, 0.08) * _SIDE,
                half_stroke=rng.uniform(0.9, 1.4),
                intensity=rng.uniform(0.8, 1.0),
                softness=rng.uniform(0.5, 1.2),
            )
            glyph = np.clip(glyph + _background(rng, rng.uniform(0.0, 0.10)), 0.0, 1.0)
            # land exactly on the uint8 grid so IDX round-trips are bitwise
            images[i, 0] = quantize_u8(glyph[None, None]).astype(np.float32) / np.float32(255.0)
            labels[i] = digit
            i += 1
    return Dataset(images, labels, split)
