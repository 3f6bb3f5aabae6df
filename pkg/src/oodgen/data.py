"""Datasets: IDX files, synthetic OOD sets and the 3-D sphere toy."""

from __future__ import annotations

import gzip
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn import ContractError

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# IDX element type codes and the big-endian numpy dtype they map to
_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {v: k for k, v in _IDX_TYPES.items()}


class IdxFormatError(ValueError):
    """Malformed IDX container; the message names the byte offset."""


@dataclass
class LabeledDataset:
    samples: np.ndarray  # (N, input_dim)
    labels: np.ndarray  # (N,) ints, -1 for unlabeled
    name: str = "dataset"
    bounded: bool = True  # values promised to lie in [0, 1]
    image_shape: tuple = field(default=())

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim == 1:
            self.samples = self.samples.reshape(1, -1) if self.samples.size else self.samples.reshape(0, 0)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(self.labels) != len(self.samples):
            raise ContractError(f"{len(self.labels)} labels for {len(self.samples)} samples")
        if self.bounded and self.samples.size:
            lo, hi = self.samples.min(), self.samples.max()
            if lo < 0.0 or hi > 1.0:
                raise ContractError(f"{self.name}: values in [{lo}, {hi}] escape [0, 1]")

    def __len__(self):
        return len(self.samples)

    @property
    def input_dim(self):
        return self.samples.shape[1]

    @property
    def classes(self):
        return np.unique(self.labels[self.labels >= 0])

    def subset(self, index, name=None):
        return LabeledDataset(
            self.samples[index], self.labels[index], name or self.name, self.bounded, self.image_shape
        )


# -- IDX ------------------------------------------------------------------


def _read_bytes(path):
    path = Path(path)
    raw = path.read_bytes()
    return gzip.decompress(raw) if path.suffix == ".gz" else raw


def read_idx(path) -> np.ndarray:
    """Decode any IDX container into an array of its declared shape."""
    blob = _read_bytes(path)
    if len(blob) < 4:
        raise IdxFormatError(f"{path}: truncated magic at offset 0")
    zero, type_code, ndim = struct.unpack_from(">HBB", blob, 0)
    if zero != 0 or type_code not in _IDX_TYPES or ndim == 0:
        raise IdxFormatError(f"{path}: bad magic 0x{int.from_bytes(blob[:4], 'big'):08x} at offset 0")
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise IdxFormatError(f"{path}: truncated dimension header at offset 4")
    dims = struct.unpack_from(f">{ndim}I", blob, 4)
    dtype = _IDX_TYPES[type_code]
    need = int(np.prod(dims)) * dtype.itemsize
    if len(blob) - header < need:
        raise IdxFormatError(
            f"{path}: payload truncated at offset {len(blob)}, expected {header + need} bytes"
        )
    return np.frombuffer(blob, dtype=dtype, count=int(np.prod(dims)), offset=header).reshape(dims)


def write_idx(path, array, dtype=">u1") -> None:
    array = np.asarray(array)
    dtype = np.dtype(dtype)
    header = struct.pack(">HBB", 0, _IDX_CODES[dtype], array.ndim)
    header += struct.pack(f">{array.ndim}I", *array.shape)
    payload = np.ascontiguousarray(array, dtype=dtype).tobytes()
    Path(path).write_bytes(header + payload)


def load_idx(images_path, labels_path=None, name=None) -> LabeledDataset:
    """Load an IDX image file (and optional label file) as flattened samples.

    Unsigned-byte pixels are rescaled from [0, 255] to [0, 1]; floating
    payloads are taken as-is and the dataset is marked unbounded.
    """
    images = read_idx(images_path)
    n = images.shape[0]
    image_shape = tuple(images.shape[1:])
    flat = images.reshape(n, int(np.prod(image_shape)))
    if images.dtype == np.dtype(">u1"):
        samples, bounded = flat.astype(np.float64) / 255.0, True
    else:
        samples, bounded = flat.astype(np.float64), False
    if labels_path is not None:
        labels = read_idx(labels_path)
        if labels.ndim != 1:
            raise IdxFormatError(f"{labels_path}: label file must be one-dimensional (offset 3)")
        if len(labels) != n:
            raise IdxFormatError(f"{labels_path}: {len(labels)} labels for {n} images (offset 4)")
        labels = labels.astype(np.int64)
    else:
        labels = np.full(n, -1, dtype=np.int64)
    return LabeledDataset(samples, labels, name or Path(images_path).stem, bounded, image_shape)


def save_idx(dataset: LabeledDataset, images_path, labels_path=None, image_shape=None) -> None:
    """Write a dataset as IDX.

    Bounded datasets are quantized to unsigned bytes; unbounded ones are
    stored as big-endian float64 so nothing is lost.
    """
    shape = image_shape or dataset.image_shape or (dataset.input_dim,)
    array = dataset.samples.reshape((len(dataset),) + tuple(shape))
    if dataset.bounded:
        if array.size and (array.min() < 0.0 or array.max() > 1.0):
            raise ContractError(f"{dataset.name}: refusing to quantize values outside [0, 1]")
        write_idx(images_path, np.rint(array * 255.0).astype(np.uint8), ">u1")
    else:
        write_idx(images_path, array, ">f8")
    if labels_path is not None:
        if dataset.labels.size and dataset.labels.min() < 0:
            raise ContractError("unlabeled samples cannot be written to an IDX label file")
        write_idx(labels_path, dataset.labels.astype(np.uint8), ">u1")


# -- synthetic OOD sets ----------------------------------------------------


def _unlabeled(samples, name, bounded):
    return LabeledDataset(samples, np.full(len(samples), -1), name, bounded)


def gen_gaussian_noise(n, dim, rng, clamp=True) -> LabeledDataset:
    """Pixels drawn i.i.d. from N(0.5, 1), clamped to [0, 1] unless ``clamp`` is off."""
    rng = np.random.default_rng(rng)
    x = rng.normal(0.5, 1.0, size=(n, dim))
    if clamp:
        np.clip(x, 0.0, 1.0, out=x)
    return _unlabeled(x, "gaussian_noise", clamp)


def gen_uniform_noise(n, dim, rng) -> LabeledDataset:
    rng = np.random.default_rng(rng)
    return _unlabeled(rng.uniform(0.0, 1.0, size=(n, dim)), "uniform_noise", True)


def _unit_rows(rng, n, dim):
    u = rng.standard_normal((n, dim))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def gen_sphere_ood(n, dim, radius, rng) -> LabeledDataset:
    """Points uniform on the origin-centred sphere of the given radius."""
    if radius <= 0:
        raise ContractError("sphere radius must be positive")
    rng = np.random.default_rng(rng)
    return _unlabeled(radius * _unit_rows(rng, n, dim), "sphere_ood", False)


def max_norm(dataset: LabeledDataset) -> float:
    return float(np.linalg.norm(dataset.samples, axis=1).max())


def gen_toy3d(n_per_class, rng) -> LabeledDataset:
    """Two classes on the unit sphere: the all-positive and the all-negative octant."""
    if n_per_class <= 0:
        raise ContractError("n_per_class must be positive")
    rng = np.random.default_rng(rng)
    # folding a uniform sphere point into one octant keeps it uniform there
    pos = np.abs(_unit_rows(rng, n_per_class, 3))
    neg = -np.abs(_unit_rows(rng, n_per_class, 3))
    samples = np.concatenate([pos, neg])
    labels = np.repeat([0, 1], n_per_class)
    return LabeledDataset(samples, labels, "toy3d", bounded=False)


def gen_off_octant_sphere(n, rng) -> LabeledDataset:
    """Unit-sphere points outside both toy octants (mixed coordinate signs)."""
    rng = np.random.default_rng(rng)
    chunks, have = [], 0
    while have < n:
        u = _unit_rows(rng, 2 * n, 3)
        signs = np.sign(u)
        mixed = ~(np.all(signs > 0, axis=1) | np.all(signs < 0, axis=1))
        chunks.append(u[mixed])
        have += int(mixed.sum())
    return _unlabeled(np.concatenate(chunks)[:n], "off_octant_sphere", False)


# -- splitting and filtering ----------------------------------------------


def split(dataset: LabeledDataset, train_fraction, rng):
    """Stratified shuffled split into ``(train, held_out)``."""
    if not 0.0 < train_fraction < 1.0:
        raise ContractError("train_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(rng)
    train_idx, held_idx = [], []
    for c in np.unique(dataset.labels):
        idx = np.flatnonzero(dataset.labels == c)
        if len(idx) < 2:
            log.warning("class %d has %d sample(s); stratification is meaningless", c, len(idx))
        idx = rng.permutation(idx)
        cut = int(round(train_fraction * len(idx)))
        train_idx.append(idx[:cut])
        held_idx.append(idx[cut:])
    train_idx = rng.permutation(np.concatenate(train_idx))
    held_idx = rng.permutation(np.concatenate(held_idx))
    return (
        dataset.subset(train_idx, f"{dataset.name}_train"),
        dataset.subset(held_idx, f"{dataset.name}_heldout"),
    )


def class_filter(dataset: LabeledDataset, keep, relabel=False) -> LabeledDataset:
    keep = sorted(set(int(k) for k in keep))
    if not keep:
        raise ContractError("keep must name at least one class")
    mask = np.isin(dataset.labels, keep)
    if not mask.any():
        raise ContractError(f"no samples of classes {keep} in {dataset.name}")
    out = dataset.subset(np.flatnonzero(mask))
    if relabel:
        remap = {c: i for i, c in enumerate(keep)}
        out.labels = np.array([remap[c] for c in out.labels], dtype=np.int64)
    return out


SYNTHETIC = ("gaussian_noise", "uniform_noise", "sphere_ood", "off_octant_sphere")


def load_any(spec, rng=None, reference: LabeledDataset | None = None, n=1000, dim=None):
    """Resolve an OOD roster entry: a synthetic generator name or an IDX path.

    Generator names: ``gaussian_noise``, ``uniform_noise``, ``sphere_ood``
    (radius from ``reference``), ``off_octant_sphere``.
    """
    dim = dim or (reference.input_dim if reference is not None else None)
    if spec == "gaussian_noise":
        return gen_gaussian_noise(n, dim, rng)
    if spec == "uniform_noise":
        return gen_uniform_noise(n, dim, rng)
    if spec == "sphere_ood":
        return gen_sphere_ood(n, dim, max_norm(reference), rng)
    if spec == "off_octant_sphere":
        return gen_off_octant_sphere(n, rng)
    return load_idx(spec)


MNIST5K_IMAGES = "mnist5k-images-idx3-ubyte"
MNIST5K_LABELS = "mnist5k-labels-idx1-ubyte"


def mnist5k_to_idx(out_dir):
    """Convert mlxtend's bundled 5000-image MNIST subset to IDX files.

    mlxtend is only needed here; the rest of the package reads IDX.
    """
    from mlxtend.data import mnist_data

    x, y = mnist_data()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images, labels = out_dir / MNIST5K_IMAGES, out_dir / MNIST5K_LABELS
    write_idx(images, x.reshape(-1, 28, 28).astype(np.uint8), ">u1")
    write_idx(labels, y.astype(np.uint8), ">u1")
    return images, labels
