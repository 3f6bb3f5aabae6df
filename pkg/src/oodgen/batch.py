"""Containers for generated OOD samples and their on-disk form."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import LabeledDataset, read_idx, write_idx
from .nn import ContractError

MANIFEST_FIELDS = ("index", "type", "beta", "source_class", "source_index", "radius")


@dataclass
class OodBatch:
    """Generated samples with per-row provenance.

    ``gen_type`` is ``"I"`` (off-manifold perturbation) or ``"II"`` (decoded
    ellipsoid-surface latent). ``beta``/``source_index`` are NaN/-1 for
    Type II rows, ``radius`` is NaN for Type I rows.
    """

    samples: np.ndarray
    gen_type: np.ndarray
    source_class: np.ndarray
    beta: np.ndarray
    source_index: np.ndarray
    radius: np.ndarray
    latents: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        n = len(self.samples)
        for name in ("gen_type", "source_class", "beta", "source_index", "radius"):
            if len(getattr(self, name)) != n:
                raise ContractError(f"{name} has {len(getattr(self, name))} rows, samples have {n}")
        self.gen_type = np.asarray(self.gen_type, dtype="<U2")
        self.source_class = np.asarray(self.source_class, dtype=np.int64)
        self.source_index = np.asarray(self.source_index, dtype=np.int64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.radius = np.asarray(self.radius, dtype=np.float64)

    def __len__(self):
        return len(self.samples)

    @classmethod
    def empty(cls, dim):
        return cls(np.zeros((0, dim)), [], [], [], [], [])

    @classmethod
    def merge(cls, *batches):
        batches = [b for b in batches if b is not None]
        if not batches:
            raise ContractError("nothing to merge")
        lat = [b.latents for b in batches]
        return cls(
            np.concatenate([b.samples for b in batches]),
            np.concatenate([b.gen_type for b in batches]),
            np.concatenate([b.source_class for b in batches]),
            np.concatenate([b.beta for b in batches]),
            np.concatenate([b.source_index for b in batches]),
            np.concatenate([b.radius for b in batches]),
            np.concatenate(lat) if all(x is not None for x in lat) else None,
        )

    def select(self, index):
        return OodBatch(
            self.samples[index],
            self.gen_type[index],
            self.source_class[index],
            self.beta[index],
            self.source_index[index],
            self.radius[index],
            None if self.latents is None else self.latents[index],
        )

    def of_type(self, gen_type):
        return self.select(np.flatnonzero(self.gen_type == gen_type))

    def as_dataset(self, label) -> LabeledDataset:
        """All rows labeled ``label`` (the OOD class index)."""
        return LabeledDataset(self.samples, np.full(len(self), label), "ood_batch", bounded=False)

    def save(self, prefix) -> tuple[Path, Path]:
        """Write ``<prefix>.idx`` (float64 IDX) and ``<prefix>.csv`` (manifest)."""
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        idx_path, csv_path = prefix.with_suffix(".idx"), prefix.with_suffix(".csv")
        write_idx(idx_path, self.samples, ">f8")
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(MANIFEST_FIELDS)
            for i in range(len(self)):
                w.writerow(
                    (
                        i,
                        self.gen_type[i],
                        repr(float(self.beta[i])),
                        int(self.source_class[i]),
                        int(self.source_index[i]),
                        repr(float(self.radius[i])),
                    )
                )
        return idx_path, csv_path

    @classmethod
    def load(cls, prefix) -> "OodBatch":
        prefix = Path(prefix)
        samples = read_idx(prefix.with_suffix(".idx")).astype(np.float64)
        samples = samples.reshape(len(samples), -1)
        with open(prefix.with_suffix(".csv"), newline="") as fh:
            rows = list(csv.DictReader(fh))
        if len(rows) != len(samples):
            raise ContractError(f"manifest lists {len(rows)} rows, IDX holds {len(samples)}")
        return cls(
            samples,
            [r["type"] for r in rows],
            [int(r["source_class"]) for r in rows],
            [float(r["beta"]) for r in rows],
            [int(r["source_index"]) for r in rows],
            [float(r["radius"]) for r in rows],
        )
