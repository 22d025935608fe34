"""Desk-scale datasets: Gaussian blobs, IDX ingestion, normalisation, crop/flip."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

IDX_UBYTE = 0x08


class IdxParseError(ValueError):
    def __init__(self, offset: int, message: str):
        self.offset = offset
        super().__init__(f"IDX parse error at byte {offset}: {message}")


@dataclass(frozen=True)
class Dataset:
    samples: np.ndarray          # [n, dim], normalised
    labels: np.ndarray           # [n] int64
    classes: int
    mean: np.ndarray             # per-feature stats used for normalisation
    std: np.ndarray
    spatial_shape: tuple[int, int] | None = None

    def __post_init__(self):
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise ValueError("labels out of range")
        if len(self.samples) != len(self.labels):
            raise ValueError("samples and labels differ in length")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        return (raw - self.mean) / self.std

    def subset(self, idx) -> "Dataset":
        return Dataset(self.samples[idx], self.labels[idx], self.classes, self.mean, self.std,
                       self.spatial_shape)


def from_raw(raw: np.ndarray, labels, classes: int, spatial_shape=None) -> Dataset:
    raw = np.asarray(raw, dtype=np.float64)
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)
    std = np.where(std > 0, std, 1.0)  # constant features (e.g. image borders)
    return Dataset((raw - mean) / std, np.asarray(labels, dtype=np.int64), int(classes),
                   mean, std, spatial_shape)


def lattice_means(classes: int, dim: int, separation: float = 1.0) -> np.ndarray:
    """Class means on a regular grid in [-separation, separation]^dim.

    The grid uses the smallest base b with b**dim >= classes; class c sits at
    the base-b digits of c, so nearest neighbours are ``2*separation/(b-1)`` apart.
    """
    if dim <= 0:
        raise ValueError("dim must be positive")
    if classes < 2:
        raise ValueError("need at least two classes")
    base = 2
    while base ** dim < classes:
        base += 1
    digits = np.zeros((classes, dim))
    for c in range(classes):
        v = c
        for d in range(dim):
            digits[c, d], v = v % base, v // base
    return separation * (2.0 * digits / (base - 1) - 1.0)


def make_blobs(classes: int = 8, per_class: int = 625, dim: int = 8, spread: float = 0.3,
               seed: int = 0, separation: float = 1.0) -> Dataset:
    """Isotropic Gaussian clusters around :func:`lattice_means`, shuffled, normalised."""
    if spread <= 0:
        raise ValueError("spread must be positive")
    means = lattice_means(classes, dim, separation)
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(classes), per_class)
    raw = means[labels] + spread * rng.standard_normal((labels.size, dim))
    order = rng.permutation(labels.size)
    return from_raw(raw[order], labels[order], classes)


def train_test_split(ds: Dataset, test_size: int, seed: int = 0) -> tuple[Dataset, Dataset]:
    if not 0 < test_size < len(ds):
        raise ValueError("test_size must be within (0, len(ds))")
    order = np.random.default_rng(seed).permutation(len(ds))
    return ds.subset(np.sort(order[test_size:])), ds.subset(np.sort(order[:test_size]))


def nearest_mean_accuracy(train: Dataset, test: Dataset) -> float:
    means = np.stack([train.samples[train.labels == c].mean(axis=0) for c in range(train.classes)])
    d = ((test.samples[:, None, :] - means[None]) ** 2).sum(axis=-1)
    return float((d.argmin(axis=1) == test.labels).mean())


# -- IDX ---------------------------------------------------------------------

def parse_idx(data: bytes, strict: bool = False) -> np.ndarray:
    """Parse an unsigned-byte IDX blob; trailing bytes are ignored unless ``strict``."""
    if len(data) < 4:
        raise IdxParseError(len(data), "truncated magic")
    zero, type_code, ndim = struct.unpack_from(">HBB", data, 0)
    if zero != 0:
        raise IdxParseError(0, f"magic must start with two zero bytes, got {zero:#06x}")
    if type_code != IDX_UBYTE:
        raise IdxParseError(2, f"unsupported type code {type_code:#04x}")
    header_end = 4 + 4 * ndim
    if len(data) < header_end:
        raise IdxParseError(len(data), f"truncated header, need {header_end} bytes")
    extents = struct.unpack_from(f">{ndim}I", data, 4)
    count = math.prod(extents)
    if count >= 2 ** 63:
        raise IdxParseError(4, f"extent product {count} overflows")
    end = header_end + count
    if len(data) < end:
        raise IdxParseError(len(data), f"truncated payload, expected {count} bytes from offset {header_end}")
    if strict and len(data) != end:
        raise IdxParseError(end, f"{len(data) - end} trailing bytes")
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=header_end).reshape(extents).copy()


def write_idx(array) -> bytes:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError("only uint8 arrays are supported")
    if array.ndim > 255:
        raise ValueError("too many dimensions")
    header = struct.pack(">HBB", 0, IDX_UBYTE, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array).tobytes()


def load_idx_dataset(images: bytes, labels: bytes, classes: int | None = None) -> Dataset:
    imgs = parse_idx(images)
    labs = parse_idx(labels).astype(np.int64)
    if imgs.ndim != 3 or labs.ndim != 1 or len(imgs) != len(labs):
        raise ValueError(f"expected images [n,h,w] and labels [n], got {imgs.shape} and {labs.shape}")
    n, h, w = imgs.shape
    classes = int(labs.max()) + 1 if classes is None else classes
    return from_raw(imgs.reshape(n, h * w) / 255.0, labs, classes, (h, w))


# -- augmentation ------------------------------------------------------------

def pad_crop(image: np.ndarray, dy: int, dx: int, padding: int = 4) -> np.ndarray:
    """Zero-pad a [h, w] image by ``padding`` and cut the h x w window at (dy, dx)."""
    h, w = image.shape
    padded = np.pad(image, padding)
    return padded[dy:dy + h, dx:dx + w]


def hflip(image: np.ndarray) -> np.ndarray:
    return image[:, ::-1]


def augment(batch: np.ndarray, spatial_shape, rng: np.random.Generator, padding: int = 4,
            flip_prob: float = 0.5) -> np.ndarray:
    """Random crop with zero padding and random horizontal flip, per sample."""
    if spatial_shape is None:
        raise ValueError("augmentation needs a spatial shape; disabled for non-image data")
    h, w = spatial_shape
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != h * w:
        raise ValueError(f"batch shape {batch.shape} does not match spatial shape {spatial_shape}")
    out = np.empty_like(batch)
    offsets = rng.integers(0, 2 * padding + 1, size=(len(batch), 2))
    flips = rng.random(len(batch)) < flip_prob
    for i, row in enumerate(batch):
        img = pad_crop(row.reshape(h, w), offsets[i, 0], offsets[i, 1], padding)
        if flips[i]:
            img = hflip(img)
        out[i] = img.reshape(-1)
    return out


# -- cache -------------------------------------------------------------------

DATA_TAG = "DATA."


def dataset_arrays(ds: Dataset) -> dict[str, np.ndarray]:
    """Checkpoint-container arrays for a dataset, every name carrying the DATA tag."""
    shape = np.array(ds.spatial_shape if ds.spatial_shape else [], dtype=np.float64)
    return {
        DATA_TAG + "samples": ds.samples,
        DATA_TAG + "labels": ds.labels.astype(np.float64),
        DATA_TAG + "classes": np.array([float(ds.classes)]),
        DATA_TAG + "mean": np.asarray(ds.mean, dtype=np.float64),
        DATA_TAG + "std": np.asarray(ds.std, dtype=np.float64),
        DATA_TAG + "spatial_shape": shape,
    }


def dataset_from_arrays(arrays: dict[str, np.ndarray]) -> Dataset:
    try:
        shape = arrays[DATA_TAG + "spatial_shape"].astype(int)
        return Dataset(arrays[DATA_TAG + "samples"], arrays[DATA_TAG + "labels"].astype(np.int64),
                       int(arrays[DATA_TAG + "classes"][0]), arrays[DATA_TAG + "mean"],
                       arrays[DATA_TAG + "std"], tuple(int(s) for s in shape) if shape.size else None)
    except KeyError as exc:
        raise ValueError(f"missing dataset section {exc.args[0]!r}") from None
