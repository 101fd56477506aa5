"""Dataset handling: IDX ingestion, seeded splits and batching, synthetic sets.

A ``LabeledSet`` is the unit of currency everywhere: float64 features in
[0, 1] with integer class labels. MNIST-style IDX files are parsed in-repo
(big-endian magic and dimensions, then raw bytes). Two synthetic generators
cover testing needs: Gaussian blobs for fast shape/logic tests, and rendered
digit glyphs for desk-scale image experiments when no IDX files are at hand.
"""

from __future__ import annotations

import gzip
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import IdxFormatError, InputError, SpecError
from .seeding import derive_seed

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class LabeledSet:
    """Feature tensor with leading dimension N, values in [0,1], plus labels."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        features = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        labels = np.ascontiguousarray(np.asarray(self.labels))
        if not np.issubdtype(labels.dtype, np.integer):
            raise InputError(f"labels must be integers, got dtype {labels.dtype}")
        labels = labels.astype(np.int64)
        if features.ndim < 2:
            raise InputError(f"features need a leading sample dimension, got shape {features.shape}")
        if features.shape[0] == 0:
            raise InputError("dataset is empty")
        if labels.shape != (features.shape[0],):
            raise InputError(
                f"label count {labels.shape} does not match {features.shape[0]} samples"
            )
        if self.class_count < 2:
            raise InputError(f"class_count must be >= 2, got {self.class_count}")
        if features.size and (features.min() < 0.0 or features.max() > 1.0):
            raise InputError(
                f"feature values must lie in [0,1], got range "
                f"[{features.min():.6g}, {features.max():.6g}]"
            )
        if labels.min() < 0 or labels.max() >= self.class_count:
            raise InputError(
                f"labels must lie in [0, {self.class_count}), got range "
                f"[{labels.min()}, {labels.max()}]"
            )
        features.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return self.features.shape[1:]

    def subset(self, indices: np.ndarray) -> "LabeledSet":
        return LabeledSet(self.features[indices], self.labels[indices], self.class_count)

    def reshaped(self, sample_shape: tuple[int, ...]) -> "LabeledSet":
        """Same data with each sample viewed under a new shape."""
        want = int(np.prod(sample_shape))
        have = int(np.prod(self.sample_shape))
        if want != have:
            raise InputError(f"cannot reshape samples of {have} values to {sample_shape}")
        return LabeledSet(
            self.features.reshape(self.size, *sample_shape), self.labels, self.class_count
        )


@dataclass(frozen=True)
class SplitSpec:
    validation_count: int
    test_count: int
    seed: int


def _read_idx(path, expected_magic: int, dims: int, kind: str):
    with open(path, "rb") as fh:
        head = fh.read(2)
    opener = gzip.open if head == b"\x1f\x8b" else open
    with opener(path, "rb") as src:
        raw = src.read()
    if len(raw) < 4 * (1 + dims):
        raise IdxFormatError(f"{kind} file {path} truncated before the header ends")
    magic = int.from_bytes(raw[:4], "big")
    if magic != expected_magic:
        raise IdxFormatError(
            f"{kind} file {path} has magic 0x{magic:08X}, expected 0x{expected_magic:08X}"
        )
    shape = tuple(
        int.from_bytes(raw[4 * (1 + i) : 4 * (2 + i)], "big") for i in range(dims)
    )
    payload = raw[4 * (1 + dims) :]
    expected = int(np.prod(shape))
    if len(payload) < expected:
        raise IdxFormatError(
            f"{kind} file {path} truncated: expected {expected} data bytes, found {len(payload)}"
        )
    if len(payload) > expected:
        raise IdxFormatError(
            f"{kind} file {path} has {len(payload) - expected} trailing bytes beyond the header's count"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(shape)


def load_idx(images_path, labels_path, class_count: int = 10) -> LabeledSet:
    """Parse an IDX image/label file pair; pixels are scaled by 1/255."""
    images = _read_idx(images_path, IMAGES_MAGIC, 3, "images")
    labels = _read_idx(labels_path, LABELS_MAGIC, 1, "labels")
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels"
        )
    return LabeledSet(images.astype(np.float64) / 255.0, labels.astype(np.int64), class_count)


def split(data: LabeledSet, spec: SplitSpec) -> tuple[LabeledSet, LabeledSet, LabeledSet]:
    """Seeded shuffle, then partition into (train, validation, test)."""
    if spec.validation_count < 1 or spec.test_count < 1:
        raise SpecError("split needs at least one validation and one test sample")
    held = spec.validation_count + spec.test_count
    if held >= data.size:
        raise SpecError(
            f"validation {spec.validation_count} + test {spec.test_count} "
            f"leaves no training data out of {data.size}"
        )
    perm = np.random.default_rng(spec.seed).permutation(data.size)
    cut = data.size - held
    train = data.subset(perm[:cut])
    val = data.subset(perm[cut : cut + spec.validation_count])
    test = data.subset(perm[cut + spec.validation_count :])
    return train, val, test


def batches(data_size: int, batch_size: int, epoch_seed: int) -> list[np.ndarray]:
    """Index batches for one epoch: seeded shuffle, short final batch kept."""
    if batch_size < 1 or batch_size > data_size:
        raise InputError(f"batch size {batch_size} invalid for {data_size} samples")
    perm = np.random.default_rng(epoch_seed).permutation(data_size)
    return [perm[i : i + batch_size] for i in range(0, data_size, batch_size)]


def synth_blobs(
    classes: int, per_class: int, dims: int, spread: float, seed: int
) -> LabeledSet:
    """Gaussian class clusters, affinely squashed into the unit box."""
    if classes < 2 or per_class < 1 or dims < 1:
        raise InputError("classes >= 2, per_class >= 1 and dims >= 1 required")
    if spread < 0:
        raise InputError(f"spread must be >= 0, got {spread}")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.0, 1.0, size=(classes, dims))
    points = np.repeat(centers, per_class, axis=0)
    points = points + rng.normal(0.0, spread, size=points.shape) if spread > 0 else points
    labels = np.repeat(np.arange(classes), per_class)
    lo = points.min(axis=0)
    span = points.max(axis=0) - lo
    squashed = np.where(span > 0, (points - lo) / np.where(span > 0, span, 1.0), 0.5)
    return LabeledSet(squashed, labels, classes)


# Digit glyphs on a 7x5 grid; rendered samples stand in for handwritten
# digits when no IDX files are available.
_GLYPHS = {
    0: ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    1: ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    2: ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    3: ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    4: ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    5: ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    6: ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    7: ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    8: ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    9: ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
}


def _glyph_canvas(digit: int) -> np.ndarray:
    bitmap = np.array([[int(c) for c in row] for row in _GLYPHS[digit]], dtype=np.float64)
    big = np.kron(bitmap, np.ones((3, 3)))
    canvas = np.zeros((28, 28))
    canvas[3 : 3 + big.shape[0], 6 : 6 + big.shape[1]] = big
    return canvas


def _render_digit(digit: int, rng: np.random.Generator) -> np.ndarray:
    # warp and blur ranges keep strokes near-saturated, MNIST-like;
    # heavier jitter makes l-inf robustness at eps 0.3 unrealistically hard
    base = _glyph_canvas(digit)
    theta = rng.uniform(-0.18, 0.18)
    scale = rng.uniform(0.9, 1.15)
    shear = rng.uniform(-0.1, 0.1)
    shift = rng.uniform(-2.0, 2.0, size=2)
    c, s = np.cos(theta), np.sin(theta)
    matrix = np.array([[c, -s], [s, c]]) @ np.array([[1.0, shear], [0.0, 1.0]]) / scale
    center = np.array([13.5, 13.5])
    offset = center - matrix @ center + shift
    img = ndimage.affine_transform(base, matrix, offset=offset, order=1, cval=0.0)
    img = ndimage.gaussian_filter(img, sigma=rng.uniform(0.35, 0.6))
    img *= rng.uniform(0.9, 1.0)
    return np.clip(img, 0.0, 1.0)


def synth_digits(count: int, seed: int) -> LabeledSet:
    """Seeded 28x28 digit images: warped, blurred, brightness-jittered glyphs.

    Labels cycle 0..9 so any prefix is close to balanced. Sample i depends
    only on (seed, i), never on count.
    """
    if count < 10:
        raise InputError(f"need at least one sample per class, got count {count}")
    images = np.empty((count, 28, 28))
    labels = np.arange(count, dtype=np.int64) % 10
    for i in range(count):
        rng = np.random.default_rng(derive_seed(seed, "digit", i))
        images[i] = _render_digit(int(labels[i]), rng)
    return LabeledSet(images, labels, 10)
