"""Synthetic nested-Gaussian datasets and the CSV dataset format."""

import csv
import io
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .hierarchy import HierarchySpec, lift_labels

SPLITS = ("train", "val", "test")
SPLIT_FRACTIONS = (0.5, 0.25, 0.25)


class DatasetError(ValueError):
    pass


@dataclass
class SampleSet:
    x: np.ndarray  # (n, b)
    y: np.ndarray  # (n, H), coarse first
    ids: Optional[np.ndarray] = None  # position in the generated population, when known

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.y.ndim != 2 or len(self.x) != len(self.y):
            raise DatasetError(f"inconsistent sample arrays x{self.x.shape} y{self.y.shape}")

    def __len__(self):
        return len(self.x)

    @property
    def feature_dim(self) -> int:
        return self.x.shape[1]

    def subset(self, index) -> "SampleSet":
        ids = None if self.ids is None else self.ids[index]
        return SampleSet(self.x[index], self.y[index], ids)


@dataclass
class SyntheticConfig:
    feature_dim: int = 16
    samples_per_class: int = 40
    clusters_per_class: int = 1
    leaf_spread: float = 1.0
    # per level, std of a class center around its parent center (level 1: around the origin),
    # in units of leaf_spread
    level_spreads: Optional[tuple] = None
    cluster_spread: float = 1.0
    noise_rate: float = 0.0
    noise_splits: tuple = ("train", "val")
    seed: int = 0

    def validate(self, spec: Optional[HierarchySpec] = None):
        if self.feature_dim < 1:
            raise DatasetError("feature_dim must be >= 1")
        if self.samples_per_class < 4:
            raise DatasetError("samples_per_class must be >= 4 so every split sees every class")
        if self.clusters_per_class < 1:
            raise DatasetError("clusters_per_class must be >= 1")
        if not self.leaf_spread > 0 or not self.cluster_spread > 0:
            raise DatasetError("spreads must be > 0")
        if not 0.0 <= self.noise_rate < 1.0:
            raise DatasetError(f"noise_rate must lie in [0, 1), got {self.noise_rate}")
        if any(s not in SPLITS for s in self.noise_splits):
            raise DatasetError(f"noise_splits must be drawn from {SPLITS}")
        if self.level_spreads is not None:
            if any(not m > 0 for m in self.level_spreads):
                raise DatasetError("level_spreads must be > 0")
            if spec is not None and len(self.level_spreads) != spec.num_levels:
                raise DatasetError(
                    f"level_spreads has {len(self.level_spreads)} entries for {spec.num_levels} levels"
                )

    def effective(self, spec: HierarchySpec) -> "SyntheticConfig":
        spreads = self.level_spreads
        if spreads is None:
            spreads = (6.0,) * spec.num_levels
        return SyntheticConfig(**{**asdict(self), "level_spreads": tuple(float(s) for s in spreads),
                                  "noise_splits": tuple(self.noise_splits)})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["level_spreads"] = None if self.level_spreads is None else list(self.level_spreads)
        d["noise_splits"] = list(self.noise_splits)
        return d


def class_centers(spec: HierarchySpec, config: SyntheticConfig, rng: np.random.Generator) -> list:
    """Centers for every level, each drawn around its parent's center."""
    b, sigma = config.feature_dim, config.leaf_spread
    centers = [rng.normal(0.0, config.level_spreads[0] * sigma, size=(spec.size(1), b))]
    for h in range(2, spec.num_levels + 1):
        parent = centers[-1][spec.parents_of(h)]
        centers.append(parent + rng.normal(0.0, config.level_spreads[h - 1] * sigma, size=parent.shape))
    return centers


def sibling_noise(spec: HierarchySpec, fine: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Replace each fine label, with probability ``rate``, by a different child of the same parent."""
    fine = fine.copy()
    if rate == 0:
        return fine
    H = spec.num_levels
    parents = spec.parents_of(H) if H > 1 else np.zeros(spec.size(1), dtype=np.int64)
    flip = rng.random(fine.size) < rate
    for n in np.flatnonzero(flip):
        options = np.flatnonzero((parents == parents[fine[n]]) & (np.arange(parents.size) != fine[n]))
        if options.size:
            fine[n] = options[rng.integers(options.size)]
    return fine


def generate(spec: HierarchySpec, config: SyntheticConfig) -> dict:
    """Return {"train", "val", "test"} SampleSets drawn from a nested Gaussian mixture."""
    config.validate(spec)
    config = config.effective(spec)
    rng = np.random.default_rng(config.seed)
    centers = class_centers(spec, config, rng)
    fine_centers = centers[-1]
    n_fine, per_class, b = spec.size(spec.num_levels), config.samples_per_class, config.feature_dim

    xs, labels = [], []
    for c in range(n_fine):
        if config.clusters_per_class == 1:
            clusters = fine_centers[c][None, :]
        else:
            clusters = fine_centers[c] + rng.normal(
                0.0, config.cluster_spread * config.leaf_spread, size=(config.clusters_per_class, b)
            )
        pick = rng.integers(config.clusters_per_class, size=per_class)
        xs.append(clusters[pick] + rng.normal(0.0, config.leaf_spread, size=(per_class, b)))
        labels.append(np.full(per_class, c))
    x = np.concatenate(xs)
    fine = np.concatenate(labels)

    n_train = int(round(SPLIT_FRACTIONS[0] * per_class))
    n_val = int(round(SPLIT_FRACTIONS[1] * per_class))
    split_idx = {s: [] for s in SPLITS}
    for c in range(n_fine):
        members = np.flatnonzero(fine == c)
        members = members[rng.permutation(members.size)]
        split_idx["train"].append(members[:n_train])
        split_idx["val"].append(members[n_train:n_train + n_val])
        split_idx["test"].append(members[n_train + n_val:])

    out = {}
    for s in SPLITS:
        idx = np.sort(np.concatenate(split_idx[s]))
        y_fine = fine[idx]
        if s in config.noise_splits:
            y_fine = sibling_noise(spec, y_fine, config.noise_rate, rng)
        out[s] = SampleSet(x[idx], lift_labels(spec, y_fine), idx)
    return out


# CSV format: header f0..f{b-1},y1..yH (or f0..f{b-1},yH for fine labels only)

_FEATURE_COL = re.compile(r"^f(\d+)$")
_LABEL_COL = re.compile(r"^y(\d+)$")


def dataset_to_csv(samples: SampleSet, fine_only: bool = False) -> str:
    H = samples.y.shape[1]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    label_levels = [H] if fine_only else list(range(1, H + 1))
    writer.writerow([f"f{i}" for i in range(samples.feature_dim)] + [f"y{h}" for h in label_levels])
    for xrow, yrow in zip(samples.x, samples.y):
        writer.writerow([repr(float(v)) for v in xrow] + [int(yrow[h - 1]) for h in label_levels])
    return buf.getvalue()


def write_dataset(path, samples: SampleSet, fine_only: bool = False):
    Path(path).write_text(dataset_to_csv(samples, fine_only), encoding="utf-8")


def parse_dataset(text: str, spec: HierarchySpec, feature_dim: Optional[int] = None) -> SampleSet:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise DatasetError("dataset file is empty")
    header = [h.strip() for h in rows[0]]
    feat_cols = [i for i, h in enumerate(header) if _FEATURE_COL.match(h)]
    label_cols = {int(_LABEL_COL.match(h).group(1)): i for i, h in enumerate(header) if _LABEL_COL.match(h)}
    if len(feat_cols) + len(label_cols) != len(header):
        unknown = [h for h in header if not (_FEATURE_COL.match(h) or _LABEL_COL.match(h))]
        raise DatasetError(f"unrecognised column(s) {unknown}")
    if [int(_FEATURE_COL.match(header[i]).group(1)) for i in feat_cols] != list(range(len(feat_cols))):
        raise DatasetError("feature columns must be f0..f{b-1} in order")
    H = spec.num_levels
    if sorted(label_cols) == list(range(1, H + 1)):
        fine_only = False
    elif sorted(label_cols) == [H]:
        fine_only = True
    else:
        raise DatasetError(f"label columns must be y1..y{H} or y{H} alone, got {sorted(label_cols)}")
    b = len(feat_cols)
    if feature_dim is not None and b != feature_dim:
        raise DatasetError(f"dataset has {b} features, expected {feature_dim}")

    x = np.empty((len(rows) - 1, b))
    y = np.empty((len(rows) - 1, len(label_cols)), dtype=np.int64)
    levels = sorted(label_cols)
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DatasetError(f"row {r}: expected {len(header)} fields, got {len(row)}")
        try:
            x[r - 2] = [float(row[i]) for i in feat_cols]
            y[r - 2] = [int(row[label_cols[h]]) for h in levels]
        except ValueError as exc:
            raise DatasetError(f"row {r}: malformed value ({exc})") from exc
    if not np.all(np.isfinite(x)):
        raise DatasetError("dataset contains non-finite features")
    for k, h in enumerate(levels):
        bad = (y[:, k] < 0) | (y[:, k] >= spec.size(h))
        if bad.any():
            r = int(np.flatnonzero(bad)[0]) + 2
            raise DatasetError(f"row {r}: label {int(y[r - 2, k])} out of range for level {h}")
    if fine_only:
        y = lift_labels(spec, y[:, 0])
    return SampleSet(x, y)


def load_dataset(path, spec: HierarchySpec, feature_dim: Optional[int] = None) -> SampleSet:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    return parse_dataset(path.read_text(encoding="utf-8"), spec, feature_dim)


def load_features(path, feature_dim: Optional[int] = None) -> np.ndarray:
    """Feature matrix from a dataset CSV; label columns, if any, are ignored."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    rows = list(csv.reader(io.StringIO(path.read_text(encoding="utf-8"))))
    if not rows:
        raise DatasetError("dataset file is empty")
    header = [h.strip() for h in rows[0]]
    feat_cols = [i for i, h in enumerate(header) if _FEATURE_COL.match(h)]
    if feature_dim is not None and len(feat_cols) != feature_dim:
        raise DatasetError(f"dataset has {len(feat_cols)} features, expected {feature_dim}")
    x = np.empty((len(rows) - 1, len(feat_cols)))
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DatasetError(f"row {r}: expected {len(header)} fields, got {len(row)}")
        try:
            x[r - 2] = [float(row[i]) for i in feat_cols]
        except ValueError as exc:
            raise DatasetError(f"row {r}: malformed value ({exc})") from exc
    if not np.all(np.isfinite(x)):
        raise DatasetError("dataset contains non-finite features")
    return x
