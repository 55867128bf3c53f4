"""Dataset IO and preprocessing.

IDX files (the classic big-endian format used by the common handwriting
benchmarks) are read and written directly, gzipped or plain. Images are
turned into input amplitudes by bilinear-resizing to half the grid side,
zero-padding to the full side (centered), mapping gray linearly to
amplitude and normalizing each sample to unit total power, so every
sample injects the same energy into the system.

Resampling uses half-pixel-center bilinear weights with clamped edges,
precomputed once per (input size, output size) pair as two small weight
matrices; a batch resize is then two matrix products.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "DatasetError",
    "IdxFormatError",
    "LabeledImageSet",
    "load_idx",
    "save_idx",
    "load_image_set",
    "save_image_set",
    "subset_classes",
    "bilinear_weights",
    "preprocess",
    "preprocess_batch",
    "batch_iter",
    "synthetic_blobs",
]

_IDX_UBYTE = 0x08


class DatasetError(Exception):
    """Problems locating or combining dataset files."""


class IdxFormatError(DatasetError):
    """Malformed IDX payload."""


@dataclass
class LabeledImageSet:
    """Raw uint8 images with integer labels."""

    images: np.ndarray  # (count, height, width) uint8
    labels: np.ndarray  # (count,) int64

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 3:
            raise DatasetError(f"images must be (count, h, w), got {self.images.shape}")
        if self.images.dtype != np.uint8:
            raise DatasetError(f"images must be uint8, got {self.images.dtype}")
        if self.labels.shape != (self.images.shape[0],):
            raise DatasetError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )
        if len(self) == 0:
            raise DatasetError("empty dataset")
        if self.labels.min() < 0:
            raise DatasetError("negative labels")

    def __len__(self) -> int:
        return self.images.shape[0]

    def category_count(self) -> int:
        return int(self.labels.max()) + 1


def _read_bytes(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    if raw[:2] == b"\x1f\x8b":
        try:
            return gzip.decompress(raw)
        except (OSError, gzip.BadGzipFile, EOFError) as exc:
            raise IdxFormatError(f"{path}: broken gzip stream: {exc}") from exc
    return raw


def load_idx(path) -> np.ndarray:
    """Read one IDX file (plain or gzipped) into a uint8 array."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    zero0, zero1, dtype_code, ndim = struct.unpack(">BBBB", raw[:4])
    if zero0 != 0 or zero1 != 0:
        raise IdxFormatError(f"{path}: bad magic prefix {raw[:2].hex()}")
    if dtype_code != _IDX_UBYTE:
        raise IdxFormatError(
            f"{path}: unsupported element type 0x{dtype_code:02x} (only ubyte 0x08)"
        )
    if ndim < 1 or ndim > 3:
        raise IdxFormatError(f"{path}: unsupported rank {ndim}")
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise IdxFormatError(f"{path}: truncated dimension table")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    expected = int(np.prod(dims))
    payload = raw[header_len:]
    if len(payload) != expected:
        raise IdxFormatError(
            f"{path}: header declares {expected} bytes "
            f"({'x'.join(map(str, dims))}) but file holds {len(payload)}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims).copy()


def save_idx(path, array: np.ndarray):
    """Write a uint8 array as IDX; gzip when the path ends in .gz."""
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    if arr.ndim < 1 or arr.ndim > 3:
        raise IdxFormatError(f"can only write rank 1..3 arrays, got {arr.ndim}")
    header = struct.pack(">BBBB", 0, 0, _IDX_UBYTE, arr.ndim)
    header += struct.pack(f">{arr.ndim}I", *arr.shape)
    blob = header + arr.tobytes()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(blob)


def load_image_set(images_path, labels_path) -> LabeledImageSet:
    """Pair an IDX image file with its IDX label file."""
    images = load_idx(images_path)
    labels = load_idx(labels_path)
    if images.ndim != 3:
        raise IdxFormatError(f"{images_path}: expected rank 3 images, got rank {images.ndim}")
    if labels.ndim != 1:
        raise IdxFormatError(f"{labels_path}: expected rank 1 labels, got rank {labels.ndim}")
    if images.shape[0] != labels.shape[0]:
        raise DatasetError(
            f"{images.shape[0]} images in {images_path} but "
            f"{labels.shape[0]} labels in {labels_path}"
        )
    return LabeledImageSet(images=images, labels=labels.astype(np.int64))


def save_image_set(images_path, labels_path, dataset: LabeledImageSet):
    save_idx(images_path, dataset.images)
    save_idx(labels_path, dataset.labels.astype(np.uint8))


def subset_classes(dataset: LabeledImageSet, classes, seed: int = 0,
                   cap: int | None = None) -> LabeledImageSet:
    """Keep the listed classes, relabeled 0..len(classes)-1 in list order.

    With ``cap`` set and more matches than the cap, a seeded uniform
    subsample (without replacement) is kept; original sample order is
    preserved either way.
    """
    classes = list(classes)
    if len(set(classes)) != len(classes):
        raise DatasetError(f"duplicate classes in {classes}")
    if not classes:
        raise DatasetError("no classes requested")
    missing = [c for c in classes if not np.any(dataset.labels == c)]
    if missing:
        raise DatasetError(f"classes {missing} absent from the dataset")
    lookup = {orig: new for new, orig in enumerate(classes)}
    keep = np.isin(dataset.labels, classes)
    idx = np.nonzero(keep)[0]
    if cap is not None and cap < idx.size:
        if cap < 1:
            raise DatasetError(f"cap must be >= 1, got {cap}")
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(idx, size=cap, replace=False))
    labels = np.array([lookup[int(l)] for l in dataset.labels[idx]], dtype=np.int64)
    return LabeledImageSet(images=dataset.images[idx], labels=labels)


_weights_cache: dict = {}


def bilinear_weights(in_size: int, out_size: int) -> np.ndarray:
    """(out_size, in_size) row-resampling matrix, half-pixel convention.

    Output sample i sits at source coordinate (i + 0.5) * in/out - 0.5;
    its two neighbors are blended linearly with edge clamping. Cached.
    """
    key = (in_size, out_size)
    if key in _weights_cache:
        return _weights_cache[key]
    w = np.zeros((out_size, in_size), dtype=np.float64)
    ratio = in_size / out_size
    for i in range(out_size):
        src = (i + 0.5) * ratio - 0.5
        lo = int(np.floor(src))
        t = src - lo
        lo_c = min(max(lo, 0), in_size - 1)
        hi_c = min(max(lo + 1, 0), in_size - 1)
        w[i, lo_c] += 1.0 - t
        w[i, hi_c] += t
    _weights_cache[key] = w
    return w


def preprocess_batch(images: np.ndarray, side: int) -> np.ndarray:
    """(B, h, w) gray images -> (B, side, side) unit-power amplitudes.

    Resize to side/2 per edge, zero-pad centered to side (odd leftover
    goes to the bottom/right), map gray linearly to amplitude and scale
    each sample to total power 1. All-zero images pass through as zeros.
    Integer inputs are read as 0..255 gray; floats are used as-is.
    """
    if side < 2 or side % 2:
        raise ValueError(f"grid side must be even and >= 2, got {side}")
    images = np.asarray(images)
    if images.ndim != 3:
        raise ValueError(f"expected (batch, h, w) images, got {images.shape}")
    if np.issubdtype(images.dtype, np.integer):
        gray = images.astype(np.float64) / 255.0
    else:
        gray = images.astype(np.float64)
    half = side // 2
    wr = bilinear_weights(images.shape[1], half)
    wc = bilinear_weights(images.shape[2], half)
    resized = np.einsum("oh,bhw,pw->bop", wr, gray, wc, optimize=True)
    top = (side - half) // 2
    left = (side - half) // 2
    out = np.zeros((images.shape[0], side, side), dtype=np.float64)
    out[:, top:top + half, left:left + half] = resized
    power = np.einsum("bij,bij->b", out, out)
    norm = np.where(power > 0.0, np.sqrt(power), 1.0)
    out /= norm[:, None, None]
    return out


def preprocess(image: np.ndarray, side: int) -> np.ndarray:
    """Single-image version of preprocess_batch."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"expected a (h, w) image, got {image.shape}")
    return preprocess_batch(image[None], side)[0]


def _perm(size: int, seed: int, epoch: int, task: int, cycle: int) -> np.ndarray:
    ss = np.random.SeedSequence([int(seed), int(epoch), int(task), int(cycle)])
    return np.random.default_rng(ss).permutation(size)


def batch_iter(sizes, batch_size: int, seed: int, epoch: int):
    """Aligned per-task index batches for one epoch.

    ``sizes`` is a list of dataset lengths (or datasets). Each task gets
    its own shuffle keyed by (seed, epoch, task); one epoch is a full
    pass over the largest task, during which every index of an
    equally-sized task appears exactly once. Shorter tasks wrap with a
    fresh shuffle per cycle. Yields tuples of index arrays; the final
    batch may be short.
    """
    sizes = [s if isinstance(s, int) else len(s) for s in sizes]
    if not sizes:
        raise ValueError("no task sizes given")
    if any(s < 1 for s in sizes):
        raise ValueError(f"task sizes must be >= 1, got {sizes}")
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1, got {batch_size}")
    longest = max(sizes)
    perms = [_perm(s, seed, epoch, t, 0) for t, s in enumerate(sizes)]
    cursors = [0] * len(sizes)
    cycles = [0] * len(sizes)
    emitted = 0
    while emitted < longest:
        take = min(batch_size, longest - emitted)
        batch = []
        for t, size in enumerate(sizes):
            chunks = []
            need = take
            while need:
                if cursors[t] == size:
                    cycles[t] += 1
                    perms[t] = _perm(size, seed, epoch, t, cycles[t])
                    cursors[t] = 0
                grab = min(need, size - cursors[t])
                chunks.append(perms[t][cursors[t]:cursors[t] + grab])
                cursors[t] += grab
                need -= grab
            batch.append(np.concatenate(chunks) if len(chunks) > 1 else chunks[0])
        emitted += take
        yield tuple(batch)


def synthetic_blobs(categories: int, count: int, seed: int = 0,
                    image_size: int = 28, noise: float = 0.1) -> LabeledImageSet:
    """Classifiable stand-in images: one blurred blob per class position.

    Class k puts a Gaussian blob at angle 2 pi k / categories on a ring,
    with per-sample center jitter and additive noise. Balanced labels.
    Useful for pipeline tests when no real dataset is on disk.
    """
    if categories < 2:
        raise ValueError(f"need >= 2 categories, got {categories}")
    if count < categories:
        raise ValueError(f"need >= {categories} samples, got {count}")
    rng = np.random.default_rng(seed)
    labels = np.arange(count, dtype=np.int64) % categories
    rng.shuffle(labels)
    yy, xx = np.mgrid[0:image_size, 0:image_size].astype(np.float64)
    center = (image_size - 1) / 2.0
    ring = image_size * 0.30
    sigma = image_size / 7.0
    images = np.empty((count, image_size, image_size), dtype=np.uint8)
    angles = 2.0 * np.pi * labels / categories
    cy = center + ring * np.sin(angles) + rng.normal(0.0, 0.6, count)
    cx = center + ring * np.cos(angles) + rng.normal(0.0, 0.6, count)
    for n in range(count):
        blob = np.exp(-((yy - cy[n]) ** 2 + (xx - cx[n]) ** 2) / (2.0 * sigma**2))
        blob += noise * rng.random((image_size, image_size))
        blob /= blob.max()
        images[n] = np.round(255.0 * blob).astype(np.uint8)
    return LabeledImageSet(images=images, labels=labels)
