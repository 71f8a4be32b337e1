"""Desk-scale datasets: IDX files and two synthetic tasks.

Dataset specs are strings:

* ``synthetic:two-blobs`` - 32x32 RGB images holding one (class 0) or two
  (class 1) Gaussian blobs; separable by mean intensity.
* ``synthetic:digits`` - the 8x8 handwritten digits bundled with
  scikit-learn, upsampled to 32x32 and replicated to three channels.
* ``idx:<images>,<labels>`` - an IDX image file (``[N, H, W]`` or
  ``[N, H, W, C]``) and an IDX label file (``[N]``).

Every spec may carry a split suffix ``@train`` / ``@test`` (default train).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {v.newbyteorder("=").str: k for k, v in IDX_TYPES.items()}


class IdxFormatError(ValueError):
    pass


def parse_idx(buf: bytes) -> np.ndarray:
    if len(buf) < 4:
        raise IdxFormatError(f"truncated header: need 4 magic bytes at offset 0, file has {len(buf)}")
    zero, code, ndim = struct.unpack_from(">HBB", buf, 0)
    if zero != 0:
        raise IdxFormatError(f"bad magic at offset 0: first two bytes must be 0, got 0x{zero:04x}")
    if code not in IDX_TYPES:
        raise IdxFormatError(f"unknown element type 0x{code:02x} at offset 2")
    if ndim == 0:
        raise IdxFormatError("zero dimensions declared at offset 3")
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise IdxFormatError(f"truncated dimension list: expected {ndim} dims ending at offset {header}, file has {len(buf)} bytes")
    dims = struct.unpack_from(f">{ndim}I", buf, 4)
    dtype = IDX_TYPES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(buf) - header != expected:
        raise IdxFormatError(
            f"payload at offset {header} holds {len(buf) - header} bytes, dims {dims} need {expected}"
        )
    return np.frombuffer(buf, dtype=dtype, offset=header).reshape(dims).astype(dtype.newbyteorder("="))


def read_idx(path) -> np.ndarray:
    return parse_idx(Path(path).read_bytes())


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    code = _IDX_CODES.get(array.dtype.newbyteorder("=").str)
    if code is None:
        raise TypeError(f"dtype {array.dtype} has no IDX type code")
    header = struct.pack(">HBB", 0, code, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.astype(IDX_TYPES[code]).tobytes())


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    images: np.ndarray  # [N, 3, H, W] float32
    labels: np.ndarray  # [N] int64
    num_classes: int
    name: str = ""

    def __len__(self):
        return len(self.labels)

    def __iter__(self) -> Iterator[tuple[np.ndarray, int]]:
        for img, lab in zip(self.images, self.labels):
            yield img, int(lab)

    def channel_stats(self) -> tuple[np.ndarray, np.ndarray]:
        mean = self.images.mean(axis=(0, 2, 3), dtype=np.float64)
        std = self.images.std(axis=(0, 2, 3), dtype=np.float64)
        return mean, np.where(std > 0, std, 1.0)

    def normalized(self, stats=None) -> "Dataset":
        mean, std = self.channel_stats() if stats is None else stats
        mean = np.asarray(mean)[None, :, None, None]
        std = np.asarray(std)[None, :, None, None]
        images = ((self.images - mean) / std).astype(np.float32)
        return Dataset(images, self.labels, self.num_classes, self.name)

    def batches(self, batch_size: int, seed: int | None = None, epoch: int = 0, drop_last: bool = False):
        """Yield ``(images, labels)``; the order is a pure function of (seed, epoch)."""
        n = len(self)
        order = np.arange(n) if seed is None else np.random.default_rng([seed, epoch]).permutation(n)
        stop = n - n % batch_size if drop_last else n
        for i in range(0, stop, batch_size):
            idx = order[i:i + batch_size]
            yield self.images[idx], self.labels[idx]


def two_blobs(n: int, seed: int, size: int = 32) -> Dataset:
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    rng.shuffle(labels)
    yy, xx = np.mgrid[0:size, 0:size]
    sigma, margin = size / 10.0, size // 4
    images = rng.normal(0.0, 0.05, size=(n, 3, size, size))
    for i, lab in enumerate(labels):
        for _ in range(lab + 1):
            cy, cx = rng.uniform(margin, size - margin, size=2)
            blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
            images[i] += blob * rng.uniform(0.9, 1.1, size=(3, 1, 1))
    return Dataset(images.astype(np.float32), labels.astype(np.int64), 2, "two-blobs")


def small_digits(size: int = 32) -> Dataset:
    from sklearn.datasets import load_digits

    digits = load_digits()
    scale = size // 8
    imgs = np.kron(digits.images / 16.0, np.ones((scale, scale)))
    pad = (size - imgs.shape[-1]) // 2
    if pad:
        imgs = np.pad(imgs, ((0, 0), (pad, pad), (pad, pad)))
    imgs = np.repeat(imgs[:, None], 3, axis=1).astype(np.float32)
    return Dataset(imgs, digits.target.astype(np.int64), 10, "digits")


def fit_images(images: np.ndarray, size: int) -> np.ndarray:
    """IDX arrays to ``[N, 3, size, size]`` float32 in [0, 1] for integer data."""
    if images.ndim == 3:
        images = images[:, None]
    elif images.ndim == 4:
        images = images.transpose(0, 3, 1, 2)
    else:
        raise IdxFormatError(f"image file must have 3 or 4 dims, got shape {images.shape}")
    if images.shape[1] == 1:
        images = np.repeat(images, 3, axis=1)
    if images.shape[1] != 3:
        raise IdxFormatError(f"expected 1 or 3 channels, got {images.shape[1]}")
    scale = 255.0 if images.dtype.kind == "u" and images.dtype.itemsize == 1 else 1.0
    images = images.astype(np.float32) / scale
    h, w = images.shape[2:]
    if h > size or w > size:
        raise ValueError(f"images of {h}x{w} exceed the model input size {size}")
    if (h, w) != (size, size):
        top, left = (size - h) // 2, (size - w) // 2
        images = np.pad(images, ((0, 0), (0, 0), (top, size - h - top), (left, size - w - left)))
    return images


def load_dataset(spec: str, image_size: int = 32) -> Dataset:
    """Resolve a dataset spec (see module docstring) to an un-normalised dataset."""
    spec, _, split = spec.partition("@")
    split = split or "train"
    if split not in ("train", "test"):
        raise ValueError(f"unknown split {split!r}")
    kind, _, arg = spec.partition(":")
    if kind == "synthetic":
        if arg == "two-blobs":
            # the test split uses a disjoint generator stream
            return two_blobs(1024 if split == "train" else 256, seed=1000 * (split == "test") + 17, size=image_size)
        if arg == "digits":
            full = small_digits(image_size)
            order = np.random.default_rng(1234).permutation(len(full))
            cut = int(0.8 * len(full))
            idx = order[:cut] if split == "train" else order[cut:]
            return Dataset(full.images[idx], full.labels[idx], 10, "digits")
        raise ValueError(f"unknown synthetic task {arg!r}; choose two-blobs or digits")
    if kind == "idx":
        try:
            img_path, lab_path = arg.split(",")
        except ValueError:
            raise ValueError(f"idx spec needs '<images>,<labels>', got {arg!r}") from None
        images = fit_images(read_idx(img_path), image_size)
        labels = read_idx(lab_path)
        if labels.ndim != 1 or len(labels) != len(images):
            raise IdxFormatError(f"label file shape {labels.shape} does not match {len(images)} images")
        labels = labels.astype(np.int64)
        return Dataset(images, labels, int(labels.max()) + 1, Path(img_path).name)
    raise ValueError(f"unrecognised dataset spec {spec!r}")
