"""Dataset containers, IDX / CIFAR-10 readers and synthetic generators."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from snds.errors import DataFormatError, DomainError

IDX_LABELS = 0x00000801
IDX_IMAGES = 0x00000803
CIFAR_RECORD = 1 + 3 * 32 * 32

# Median of |a| + |b| for independent standard normals a, b: each radius event is a fair coin.
L1_MEDIAN_2D = 1.4874639702935366


class PayloadLengthError(DataFormatError):
    pass


@dataclass
class Dataset:
    """Train/test split with per-channel normalisation statistics from the train split.

    ``x_*`` are already normalised; ``mean``/``std`` are kept so raw samples can
    be mapped identically.
    """

    name: str
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    num_classes: int
    mean: np.ndarray = field(default_factory=lambda: np.zeros(1))
    std: np.ndarray = field(default_factory=lambda: np.ones(1))
    augment: bool = False

    def __post_init__(self):
        for split, y in (("train", self.y_train), ("test", self.y_test)):
            if len(y) and (y.min() < 0 or y.max() >= self.num_classes):
                raise DomainError(f"{self.name}: {split} labels outside [0, {self.num_classes})")

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return tuple(self.x_train.shape[1:])

    @classmethod
    def normalised(cls, name, x_train, y_train, x_test, y_test, num_classes, augment=False) -> "Dataset":
        """Standardise both splits with the train split's per-channel mean and std."""
        x_train = np.asarray(x_train, dtype=np.float64)
        x_test = np.asarray(x_test, dtype=np.float64)
        axes = (0, 2, 3) if x_train.ndim == 4 else (0,)
        mean = x_train.mean(axis=axes)
        std = x_train.std(axis=axes)
        std = np.where(std > 0, std, 1.0)
        shape = (1, -1, 1, 1) if x_train.ndim == 4 else (1, -1)
        m, s = mean.reshape(shape), std.reshape(shape)
        return cls(name, (x_train - m) / s, np.asarray(y_train, dtype=np.int64), (x_test - m) / s,
                   np.asarray(y_test, dtype=np.int64), num_classes, mean, std, augment)


def _open(path: Path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def load_idx(path, scale: bool = True) -> np.ndarray:
    """Read an IDX label (0x801) or image (0x803) file, optionally gzip-compressed.

    Images are scaled to [0, 1] unless ``scale`` is false; labels are int64.
    """
    path = Path(path)
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise PayloadLengthError(f"{path}: {len(raw)} bytes, too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic not in (IDX_LABELS, IDX_IMAGES):
        raise DataFormatError(
            f"{path}: IDX magic 0x{magic:08x}, expected 0x{IDX_LABELS:08x} (labels) or 0x{IDX_IMAGES:08x} (images)")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise PayloadLengthError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = int(np.prod(dims))
    payload = len(raw) - header
    if payload != expected:
        raise PayloadLengthError(f"{path}: payload has {payload} bytes, dimensions {dims} need {expected}")
    data = np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)
    if ndim == 1:
        return data.astype(np.int64)
    return data / 255.0 if scale else data.copy()


def write_idx(path, array: np.ndarray) -> Path:
    """Write a 1-D or 3-D uint8 array as an uncompressed IDX file."""
    array = np.asarray(array)
    if array.ndim not in (1, 3):
        raise DataFormatError(f"IDX writer supports 1-D or 3-D arrays, got {array.ndim}-D")
    if array.dtype != np.uint8:
        if array.min() < 0 or array.max() > 255 or not np.array_equal(array, np.round(array)):
            raise DataFormatError("IDX payload must be integers in [0, 255]")
        array = array.astype(np.uint8)
    path = Path(path)
    magic = IDX_LABELS if array.ndim == 1 else IDX_IMAGES
    with open(path, "wb") as fh:
        fh.write(struct.pack(f">I{array.ndim}I", magic, *array.shape))
        fh.write(np.ascontiguousarray(array).tobytes())
    return path


def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        if (directory / name).exists():
            return directory / name
    raise FileNotFoundError(f"{directory}: no {stem}[.gz]")


def _select(x, y, classes):
    if classes is None:
        return x, y, int(y.max()) + 1
    classes = list(classes)
    mask = np.isin(y, classes)
    remap = np.full(int(max(y.max(), max(classes))) + 1, -1)
    remap[classes] = np.arange(len(classes))
    return x[mask], remap[y[mask]], len(classes)


def load_mnist(directory, classes=None, train_limit: int | None = None, seed: int = 0) -> Dataset:
    """MNIST from the four standard IDX files in ``directory``.

    ``classes`` keeps a subset relabelled to ``0..k-1`` in the given order;
    ``train_limit`` draws that many training samples at random (seeded).
    """
    directory = Path(directory)
    xtr = load_idx(_find(directory, "train-images-idx3-ubyte"))
    ytr = load_idx(_find(directory, "train-labels-idx1-ubyte"))
    xte = load_idx(_find(directory, "t10k-images-idx3-ubyte"))
    yte = load_idx(_find(directory, "t10k-labels-idx1-ubyte"))
    xtr, ytr, k = _select(xtr, ytr, classes)
    xte, yte, _ = _select(xte, yte, classes)
    if train_limit is not None and train_limit < len(ytr):
        keep = np.sort(np.random.default_rng(seed).choice(len(ytr), train_limit, replace=False))
        xtr, ytr = xtr[keep], ytr[keep]
    return Dataset.normalised("mnist", xtr[:, None], ytr, xte[:, None], yte, k)


def load_bundled_mnist(classes=None, test_size: int = 300, seed: int = 0) -> Dataset:
    """The 5000-digit MNIST sample shipped with ``mlxtend`` (optional dependency), split at random."""
    from mlxtend.data import mnist_data

    x, y = mnist_data()
    x = x.reshape(-1, 28, 28) / 255.0
    x, y, k = _select(x, y.astype(np.int64), classes)
    order = np.random.default_rng(seed).permutation(len(y))
    te, tr = np.sort(order[:test_size]), np.sort(order[test_size:])
    return Dataset.normalised("mnist-bundled", x[tr, None], y[tr], x[te, None], y[te], k)


def _read_cifar(path: Path) -> tuple[np.ndarray, np.ndarray]:
    raw = path.read_bytes()
    if len(raw) % CIFAR_RECORD:
        raise PayloadLengthError(f"{path}: {len(raw)} bytes is not a multiple of {CIFAR_RECORD}")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    return rec[:, 1:].reshape(-1, 3, 32, 32) / 255.0, rec[:, 0].astype(np.int64)


def load_cifar10(directory, classes=None, augment: bool = True) -> Dataset:
    """CIFAR-10 binary batches (``data_batch_1..5.bin``, ``test_batch.bin``)."""
    directory = Path(directory)
    parts = [_read_cifar(directory / f"data_batch_{i}.bin") for i in range(1, 6)]
    xtr, ytr = np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])
    xte, yte = _read_cifar(directory / "test_batch.bin")
    xtr, ytr, k = _select(xtr, ytr, classes)
    xte, yte, _ = _select(xte, yte, classes)
    return Dataset.normalised("cifar10", xtr, ytr, xte, yte, max(k, 10 if classes is None else k), augment)


def augment_batch(x: np.ndarray, rng: np.random.Generator, shift: int = 4) -> np.ndarray:
    """Random translation by up to ``shift`` pixels (zero padded) and horizontal flips."""
    n, _, h, w = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (shift, shift), (shift, shift)))
    dy, dx = rng.integers(0, 2 * shift + 1, size=(2, n))
    flip = rng.random(n) < 0.5
    out = np.empty_like(x)
    for i in range(n):
        img = padded[i, :, dy[i]:dy[i] + h, dx[i]:dx[i] + w]
        out[i] = img[:, :, ::-1] if flip[i] else img
    return out


def make_blobs(num_classes: int, n: int, spread: float = 0.5, seed: int = 0, dim: int = 2,
               n_test: int | None = None) -> Dataset:
    """Gaussian clusters around fixed unit-norm centres, labels assigned round-robin."""
    if n < num_classes:
        raise DomainError(f"need n >= num_classes, got n={n}, num_classes={num_classes}")
    angles = 2 * np.pi * np.arange(num_classes) / num_classes
    centres = np.zeros((num_classes, dim))
    centres[:, 0], centres[:, 1 % dim] = 3 * np.cos(angles), 3 * np.sin(angles)
    rng = np.random.default_rng(seed)

    def draw(m):
        y = np.arange(m) % num_classes
        return centres[y] + spread * rng.normal(size=(m, dim)), y

    xtr, ytr = draw(n)
    xte, yte = draw(n_test if n_test is not None else max(num_classes, n // 2))
    return Dataset("blobs", xtr, ytr, xte, yte, num_classes)


def depth_task_labels(x: np.ndarray) -> np.ndarray:
    r1 = np.abs(x[:, 0]) + np.abs(x[:, 1])
    r2 = np.abs(x[:, 2]) + np.abs(x[:, 3])
    return ((r1 > L1_MEDIAN_2D) ^ (r2 > L1_MEDIAN_2D)).astype(np.int64)


def make_depth_task(n: int, seed: int = 0, n_test: int = 2000) -> Dataset:
    """Binary XOR of two L1-radius tests on 4-D standard normal inputs.

    A single dense block cannot carve the two nested diamonds and their XOR
    at once; two or more blocks can.
    """
    if n < 100:
        raise DomainError(f"depth task needs n >= 100, got {n}")
    rng = np.random.default_rng(seed)
    xtr = rng.normal(size=(n, 4))
    xte = rng.normal(size=(n_test, 4))
    return Dataset("depth-task", xtr, depth_task_labels(xtr), xte, depth_task_labels(xte), 2)
