"""Dataset ingestion: CIFAR binary files, augmentation, synthetic tasks."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .container import pack_array, read_container, unpack_array, write_container
from .errors import FormatError
from .masks import seed_stream

__all__ = [
    "LabeledDataset",
    "read_cifar_batch",
    "write_cifar_batch",
    "load_cifar10",
    "load_cifar100",
    "augment",
    "flip_horizontal",
    "pad_crop",
    "make_synthetic_task",
    "save_dataset",
    "load_dataset",
]

CIFAR10_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR10_TEST_FILE = "test_batch.bin"
CIFAR_PIXELS = 3072  # 3 planes of 32x32, row-major
VAL_SIZE = 5000


@dataclass
class LabeledDataset:
    """Images (float32 in [0,1]) with integer labels and a split tag."""

    images: np.ndarray
    labels: np.ndarray
    split: str

    def __len__(self):
        return len(self.labels)


def read_cifar_batch(path, label_bytes: int = 1, expect_records: int | None = None):
    """Parse one raw CIFAR batch file into (labels, pixels) uint8 arrays.

    Each record is `label_bytes` label bytes followed by 3072 pixel
    bytes (R, G, B planes). Returns labels of shape (N, label_bytes)
    and pixels of shape (N, 3072), unnormalized.
    """
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"missing dataset file: {path}")
    raw = np.frombuffer(path.read_bytes(), dtype=np.uint8)
    record = label_bytes + CIFAR_PIXELS
    if expect_records is not None and raw.size != expect_records * record:
        raise FormatError(
            f"{path}: expected {expect_records * record} bytes "
            f"({expect_records} records of {record}), got {raw.size}"
        )
    if raw.size % record:
        raise FormatError(
            f"{path}: size {raw.size} is not a multiple of the {record}-byte record"
        )
    rows = raw.reshape(-1, record)
    return rows[:, :label_bytes].copy(), rows[:, label_bytes:].copy()


def write_cifar_batch(labels: np.ndarray, pixels: np.ndarray) -> bytes:
    """Inverse of read_cifar_batch; reproduces the source bytes exactly."""
    labels = np.asarray(labels, dtype=np.uint8)
    if labels.ndim == 1:
        labels = labels[:, None]
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(len(labels), CIFAR_PIXELS)
    return np.concatenate([labels, pixels], axis=1).tobytes()


def _to_images(pixels: np.ndarray) -> np.ndarray:
    return (pixels.reshape(-1, 3, 32, 32).astype(np.float32)) / np.float32(255.0)


def load_cifar10(dir_path):
    """Load the binary CIFAR-10 layout into (train, val, test).

    The last 5000 training images, in file order, form the validation
    split; pixel values are mapped from [0, 255] to [0, 1].
    """
    dir_path = Path(dir_path)
    labels_parts, pixel_parts = [], []
    for name in CIFAR10_TRAIN_FILES:
        lab, pix = read_cifar_batch(dir_path / name, 1, expect_records=10000)
        labels_parts.append(lab[:, 0])
        pixel_parts.append(pix)
    labels = np.concatenate(labels_parts).astype(np.int64)
    images = _to_images(np.concatenate(pixel_parts))
    test_lab, test_pix = read_cifar_batch(dir_path / CIFAR10_TEST_FILE, 1, expect_records=10000)
    cut = len(labels) - VAL_SIZE
    return (
        LabeledDataset(images[:cut], labels[:cut], "train"),
        LabeledDataset(images[cut:], labels[cut:], "val"),
        LabeledDataset(_to_images(test_pix), test_lab[:, 0].astype(np.int64), "test"),
    )


def load_cifar100(dir_path):
    """Load binary CIFAR-100 (coarse + fine label bytes; fine labels used)."""
    dir_path = Path(dir_path)
    lab, pix = read_cifar_batch(dir_path / "train.bin", 2, expect_records=50000)
    labels = lab[:, 1].astype(np.int64)
    images = _to_images(pix)
    test_lab, test_pix = read_cifar_batch(dir_path / "test.bin", 2, expect_records=10000)
    cut = len(labels) - VAL_SIZE
    return (
        LabeledDataset(images[:cut], labels[:cut], "train"),
        LabeledDataset(images[cut:], labels[cut:], "val"),
        LabeledDataset(_to_images(test_pix), test_lab[:, 1].astype(np.int64), "test"),
    )


def flip_horizontal(images: np.ndarray) -> np.ndarray:
    return images[..., ::-1].copy()


def pad_crop(images: np.ndarray, pad: int, offsets: np.ndarray) -> np.ndarray:
    """Zero-pad by `pad` then crop back to size at per-image (row, col) offsets."""
    n, c, h, w = images.shape
    padded = np.pad(images, [(0, 0), (0, 0), (pad, pad), (pad, pad)])
    out = np.empty_like(images)
    for i, (oy, ox) in enumerate(offsets):
        out[i] = padded[i, :, oy:oy + h, ox:ox + w]
    return out


def augment(images: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Random shifted crop (after zero-padding) plus horizontal flip.

    Training-time only; labels are untouched and values stay in [0, 1].
    """
    n = images.shape[0]
    offsets = rng.integers(0, 2 * pad + 1, size=(n, 2))
    out = pad_crop(images, pad, offsets)
    flips = rng.random(n) < 0.5
    out[flips] = out[flips, :, :, ::-1]
    return out


def make_synthetic_task(n: int, seed: int, *, n_classes: int = 2, dim: int = 2,
                        image_shape=None, spread: float = 0.5, radius: float = 2.5):
    """Deterministic separable Gaussian-blob task for fast end-to-end runs.

    Returns (train, val, test) with n training points and n // 4 each
    for validation and test. With `image_shape` (c, h, w) the classes
    are noisy per-class template images in [0, 1] instead of blob
    vectors.
    """
    rng = seed_stream(seed, "synthetic")
    sizes = {"train": int(n), "val": max(int(n) // 4, 32), "test": max(int(n) // 4, 32)}

    if image_shape is not None:
        shape = tuple(int(v) for v in image_shape)
        templates = rng.uniform(0.0, 1.0, size=(n_classes, *shape))

    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    centers = np.zeros((n_classes, dim))
    centers[:, 0] = radius * np.cos(angles)
    centers[:, 1 % dim] = radius * np.sin(angles)

    out = []
    for split, size in sizes.items():
        labels = (np.arange(size) % n_classes).astype(np.int64)
        rng.shuffle(labels)
        if image_shape is None:
            feats = centers[labels] + rng.normal(0.0, spread, size=(size, dim))
            images = feats.astype(np.float32)
        else:
            noise = rng.normal(0.0, 0.25, size=(size, *shape))
            images = np.clip(templates[labels] + noise, 0.0, 1.0).astype(np.float32)
        out.append(LabeledDataset(images, labels, split))
    return tuple(out)


def save_dataset(path, ds: LabeledDataset):
    """Serialize a dataset into the checkpoint container format."""
    meta = json.dumps({"split": ds.split}, sort_keys=True).encode("utf8")
    write_container(
        path,
        [("meta", meta), ("images", pack_array(ds.images)), ("labels", pack_array(ds.labels))],
    )


def load_dataset(path) -> LabeledDataset:
    sections = read_container(path)
    try:
        meta = json.loads(sections["meta"].decode("utf8"))
        images = unpack_array(sections["images"])
        labels = unpack_array(sections["labels"])
    except KeyError as missing:
        raise FormatError(f"{path}: missing dataset section {missing}") from None
    return LabeledDataset(images, labels, meta.get("split", "train"))
