"""Datasets, labeled-subset sampling and class-noise injection.

Class indices are 0-based throughout the package; ``NO_LABEL`` (-1) marks an
unlabeled entry in ``LabelConfig.given_labels``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

NO_LABEL = -1


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    features: np.ndarray
    true_labels: np.ndarray
    name: str = ""
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise DatasetError("features must be a 2-d array")
        if self.features.shape[0] != self.true_labels.shape[0]:
            raise DatasetError("features and labels disagree on sample count")
        if self.n < 2:
            raise DatasetError("need at least 2 samples")
        if not np.all(np.isfinite(self.features)):
            raise DatasetError("features contain non-finite values")
        if self.true_labels.min() < 0:
            raise DatasetError("labels must be non-negative class indices")
        present = np.unique(self.true_labels)
        if len(present) < 2:
            raise DatasetError("need at least 2 distinct classes")
        if not np.array_equal(present, np.arange(len(present))):
            raise DatasetError("class indices must be contiguous from 0")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def m(self) -> int:
        return self.features.shape[1]

    @property
    def c(self) -> int:
        return int(self.true_labels.max()) + 1


@dataclass
class LabelConfig:
    """Which samples are labeled, what label each was given, which are corrupted."""

    labeled_mask: np.ndarray
    given_labels: np.ndarray
    noisy_mask: np.ndarray
    seed: int | None = None

    @property
    def n(self) -> int:
        return self.labeled_mask.shape[0]

    @property
    def l(self) -> int:  # noqa: E743
        return int(self.labeled_mask.sum())

    @property
    def q(self) -> int:
        return int(self.noisy_mask.sum())

    @property
    def labeled_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labeled_mask)

    def copy(self) -> LabelConfig:
        return LabelConfig(
            self.labeled_mask.copy(),
            self.given_labels.copy(),
            self.noisy_mask.copy(),
            self.seed,
        )

    def to_dict(self) -> dict:
        idx = self.labeled_indices
        return {
            "n": self.n,
            "labeled": idx.tolist(),
            "given_labels": self.given_labels[idx].tolist(),
            "noisy": np.flatnonzero(self.noisy_mask).tolist(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> LabelConfig:
        n = int(data["n"])
        labeled = np.zeros(n, dtype=bool)
        given = np.full(n, NO_LABEL, dtype=np.int64)
        noisy = np.zeros(n, dtype=bool)
        idx = np.asarray(data["labeled"], dtype=np.int64)
        labeled[idx] = True
        given[idx] = np.asarray(data["given_labels"], dtype=np.int64)
        noisy[np.asarray(data.get("noisy", []), dtype=np.int64)] = True
        if np.any(noisy & ~labeled):
            raise DatasetError("noisy entries must be labeled")
        return cls(labeled, given, noisy, data.get("seed"))

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def from_json(cls, path) -> LabelConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def from_indices(cls, d: Dataset, indices) -> LabelConfig:
        """Noise-free split that labels exactly ``indices`` with their true class."""
        labeled = np.zeros(d.n, dtype=bool)
        labeled[np.asarray(indices, dtype=np.int64)] = True
        given = np.where(labeled, d.true_labels, NO_LABEL)
        return cls(labeled, given, np.zeros(d.n, dtype=bool))


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_csv(path, label_column: int | str = -1, name: str | None = None) -> Dataset:
    """Read a comma-separated file into a :class:`Dataset`.

    ``label_column`` is a column index (negative counts from the end) or a
    header name. A header row is detected when any cell of the first row that
    is not the label column fails to parse as a number. Labels are re-encoded
    to ``0..c-1`` in order of first appearance.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(cell.strip() for cell in r)]
    if not rows:
        raise DatasetError(f"{path}: empty file")

    width = len(rows[0])
    header = None
    if isinstance(label_column, str):
        header = [h.strip() for h in rows[0]]
        if label_column not in header:
            raise DatasetError(f"{path}: no column named {label_column!r}")
        col = header.index(label_column)
        rows = rows[1:]
    else:
        col = label_column % width
        first = [cell.strip() for i, cell in enumerate(rows[0]) if i != col]
        if not all(_is_float(cell) for cell in first):
            header = rows[0]
            rows = rows[1:]

    features, raw_labels = [], []
    for lineno, row in enumerate(rows, start=2 if header else 1):
        if len(row) != width:
            raise DatasetError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
        values = []
        for i, cell in enumerate(row):
            if i == col:
                continue
            try:
                v = float(cell)
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: non-numeric feature {cell!r}") from None
            if not np.isfinite(v):
                raise DatasetError(f"{path}:{lineno}: non-finite feature {cell!r}")
            values.append(v)
        features.append(values)
        raw_labels.append(row[col].strip())

    codes: dict[str, int] = {}
    labels = [codes.setdefault(lab, len(codes)) for lab in raw_labels]
    if len(rows) < 2:
        raise DatasetError(f"{path}: need at least 2 samples")
    if len(codes) < 2:
        raise DatasetError(f"{path}: need at least 2 distinct classes")
    return Dataset(
        np.array(features, dtype=np.float64),
        np.array(labels, dtype=np.int64),
        name=name or path.stem,
        class_names=list(codes),
    )


def load_builtin(name: str) -> Dataset:
    """Iris, Wine and the 8x8 handwritten digits shipped with scikit-learn."""
    from sklearn import datasets as skd

    loaders = {"iris": skd.load_iris, "wine": skd.load_wine, "digits": skd.load_digits}
    if name not in loaders:
        raise DatasetError(f"unknown builtin dataset {name!r}; choose from {sorted(loaders)}")
    bunch = loaders[name]()
    return Dataset(
        bunch.data,
        bunch.target,
        name=name,
        class_names=[str(t) for t in bunch.target_names],
    )


def zscore_normalize(d: Dataset) -> Dataset:
    mean = d.features.mean(axis=0)
    std = d.features.std(axis=0, ddof=1)
    centered = d.features - mean
    scale = np.where(std > 0, std, 1.0)
    out = np.where(std > 0, centered / scale, 0.0)
    return Dataset(out, d.true_labels.copy(), d.name, list(d.class_names))


def sample_labeled_subset(d: Dataset, l: int, rng: np.random.Generator) -> LabelConfig:  # noqa: E741
    """Pick ``l`` samples uniformly without replacement, redrawing until all classes appear."""
    if l < d.c:
        raise DatasetError(f"l={l} cannot represent all {d.c} classes")
    if l > d.n:
        raise DatasetError(f"l={l} exceeds sample count {d.n}")
    while True:
        idx = rng.choice(d.n, size=l, replace=False)
        if len(np.unique(d.true_labels[idx])) == d.c:
            break
    cfg = LabelConfig.from_indices(d, idx)
    return cfg


def inject_label_noise(cfg: LabelConfig, q: int, c: int, rng: np.random.Generator) -> LabelConfig:
    """Corrupt ``q`` labeled entries, each moved to a uniformly drawn other class.

    ``cfg`` must be noise-free on entry; the returned config is a new object.
    """
    if q < 0 or q > cfg.l:
        raise DatasetError(f"q={q} outside [0, l={cfg.l}]")
    out = cfg.copy()
    if q == 0:
        return out
    chosen = rng.choice(cfg.labeled_indices, size=q, replace=False)
    # shift by 1..c-1 modulo c: uniform over the other classes
    shift = rng.integers(1, c, size=q)
    out.given_labels[chosen] = (cfg.given_labels[chosen] + shift) % c
    out.noisy_mask[chosen] = True
    return out


def gen_gaussians(
    n_per_class: int,
    c: int,
    dims: int,
    spacing: float,
    rng: np.random.Generator,
) -> Dataset:
    """Unit-variance isotropic Gaussian classes centred on hypercube corners.

    Class ``k`` sits on the corner whose coordinates are the binary digits of
    ``k`` scaled by ``spacing``.
    """
    if c < 2 or dims < 1:
        raise DatasetError("need c >= 2 and dims >= 1")
    if c > 2**dims:
        raise DatasetError(f"{c} classes do not fit on the {2**dims} corners of a {dims}-cube")
    bits = (np.arange(c)[:, None] >> np.arange(dims)[None, :]) & 1
    means = spacing * bits.astype(np.float64)
    labels = np.repeat(np.arange(c), n_per_class)
    x = rng.standard_normal((c * n_per_class, dims)) + means[labels]
    return Dataset(x, labels, name=f"gauss{c}x{dims}")
