"""Datasets, ground-truth metric access, weights and group structure."""

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist


class LoadError(ValueError):
    """Raised when a dataset file cannot be parsed."""


@dataclass(frozen=True)
class MetricConfig:
    distance_kind: str = "euclidean"  # euclidean | explicit-matrix
    integerize: bool = False
    aspect_ratio_cap: Optional[float] = None

    def __post_init__(self):
        if self.distance_kind not in ("euclidean", "explicit-matrix"):
            raise ValueError(f"unknown distance kind {self.distance_kind!r}")
        if self.aspect_ratio_cap is not None and self.aspect_ratio_cap <= 0:
            raise ValueError("aspect_ratio_cap must be positive")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable point store.

    Exactly one of ``points`` (n x d coordinates) or ``matrix`` (n x n
    distances) is set. ``groups`` maps an attribute name to an integer
    label array of length n; ``group_names`` maps the same attribute name to
    the label values in label order.
    """

    points: Optional[np.ndarray] = None
    matrix: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    groups: dict = field(default_factory=dict)
    group_names: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.points is None) == (self.matrix is None):
            raise ValueError("exactly one of points or matrix must be given")
        if self.points is not None:
            pts = np.asarray(self.points, dtype=float)
            if pts.ndim == 1:
                pts = pts[:, None]
            if pts.ndim != 2 or pts.shape[0] < 1:
                raise ValueError("points must be a non-empty 2-d array")
            if not np.all(np.isfinite(pts)):
                raise ValueError("points must be finite")
            pts.setflags(write=False)
            object.__setattr__(self, "points", pts)
            n = pts.shape[0]
        else:
            mat = np.asarray(self.matrix, dtype=float)
            _check_matrix(mat)
            mat.setflags(write=False)
            object.__setattr__(self, "matrix", mat)
            n = mat.shape[0]
        if self.weights is None:
            w = np.ones(n)
        else:
            w = np.asarray(self.weights, dtype=float).copy()
            if w.shape != (n,):
                raise ValueError("weights must have one entry per point")
            if not np.all(w > 0):
                raise ValueError("weights must be strictly positive")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        groups = {}
        for attr, labels in self.groups.items():
            lab = np.asarray(labels, dtype=np.int64).copy()
            if lab.shape != (n,):
                raise ValueError(f"attribute {attr!r} needs one label per point")
            if lab.min() < 0:
                raise ValueError("group labels must be nonnegative")
            lab.setflags(write=False)
            groups[attr] = lab
        object.__setattr__(self, "groups", groups)
        names = {a: list(self.group_names.get(a, range(int(groups[a].max()) + 1)))
                 for a in groups}
        object.__setattr__(self, "group_names", names)

    @property
    def n(self) -> int:
        if self.points is not None:
            return self.points.shape[0]
        return self.matrix.shape[0]

    @property
    def num_attributes(self) -> int:
        return len(self.groups)

    def group_sizes(self, attribute) -> dict:
        labels = self.groups[attribute]
        return {int(g): float(self.weights[labels == g].sum()) for g in np.unique(labels)}

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        groups = {a: lab[idx] for a, lab in self.groups.items()}
        if self.points is not None:
            return Dataset(points=self.points[idx], weights=self.weights[idx],
                           groups=groups, group_names=self.group_names)
        return Dataset(matrix=self.matrix[np.ix_(idx, idx)], weights=self.weights[idx],
                       groups=groups, group_names=self.group_names)


def _check_matrix(mat, tol=1e-9):
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.shape[0] < 1:
        raise ValueError("distance matrix must be square and non-empty")
    if not np.all(np.isfinite(mat)) or np.any(mat < 0):
        raise ValueError("distances must be finite and nonnegative")
    if not np.allclose(mat, mat.T, atol=tol, rtol=0):
        raise ValueError("distance matrix must be symmetric")
    if np.any(np.abs(np.diag(mat)) > tol):
        raise ValueError("distance matrix must have a zero diagonal")
    n = mat.shape[0]
    # d(i,k) <= d(i,j) + d(j,k), one pivot j at a time to keep memory at O(n^2)
    for j in range(n):
        via = mat[:, j][:, None] + mat[j, :][None, :]
        if np.any(mat > via + tol):
            raise ValueError("distance matrix violates the triangle inequality")


def default_config(ds: Dataset) -> MetricConfig:
    kind = "euclidean" if ds.points is not None else "explicit-matrix"
    return MetricConfig(distance_kind=kind)


def _finish(d, cfg):
    if cfg is not None and cfg.integerize:
        return np.rint(d)
    return d


def pair_distances(ds: Dataset, cfg: Optional[MetricConfig], i, j) -> np.ndarray:
    """Vectorised ground-truth distances for index arrays ``i`` and ``j``."""
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    if i.size and (i.min() < 0 or i.max() >= ds.n or j.min() < 0 or j.max() >= ds.n):
        raise IndexError("point index out of range")
    if ds.points is not None:
        diff = ds.points[i] - ds.points[j]
        d = np.sqrt((diff * diff).sum(axis=-1))
    else:
        d = ds.matrix[i, j]
    d = np.where(i == j, 0.0, d)
    return _finish(d, cfg)


def distances_from(ds: Dataset, cfg: Optional[MetricConfig], i: int, js) -> np.ndarray:
    js = np.asarray(js, dtype=np.int64)
    return pair_distances(ds, cfg, np.full(js.shape, i, dtype=np.int64), js)


def distance_block(ds: Dataset, cfg: Optional[MetricConfig], rows, cols) -> np.ndarray:
    """Matrix of ground-truth distances between ``rows`` and ``cols``."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    for arr in (rows, cols):
        if arr.size and (arr.min() < 0 or arr.max() >= ds.n):
            raise IndexError("point index out of range")
    if ds.points is not None:
        d = cdist(ds.points[rows], ds.points[cols])
        d[rows[:, None] == cols[None, :]] = 0.0
    else:
        d = ds.matrix[np.ix_(rows, cols)].copy()
    return _finish(d, cfg)


def true_distance(ds: Dataset, cfg: Optional[MetricConfig], i: int, j: int) -> float:
    if not (0 <= i < ds.n and 0 <= j < ds.n):
        raise IndexError(f"index pair ({i}, {j}) out of range for n={ds.n}")
    if i == j:
        return 0.0
    return float(pair_distances(ds, cfg, [i], [j])[0])


def diameter(ds: Dataset, cfg: Optional[MetricConfig], S: Sequence[int]) -> float:
    S = np.asarray(S, dtype=np.int64)
    if S.size == 0:
        raise ValueError("diameter of an empty set is undefined")
    if S.size == 1:
        return 0.0
    best = 0.0
    for start in range(0, S.size, 512):
        block = distance_block(ds, cfg, S[start:start + 512], S)
        best = max(best, float(block.max()))
    return best


def aspect_ratio(ds: Dataset, cfg: Optional[MetricConfig], S=None) -> float:
    """Largest over smallest nonzero pairwise distance (brute force)."""
    S = np.arange(ds.n) if S is None else np.asarray(S, dtype=np.int64)
    block = distance_block(ds, cfg, S, S)
    nz = block[block > 0]
    if nz.size == 0:
        return 1.0
    return float(nz.max() / nz.min())


def load_dataset(path, features: Optional[Sequence[str]] = None,
                 group_cols: Sequence[str] = (), weight_col: Optional[str] = None) -> Dataset:
    """Read a CSV with a header row.

    Feature columns are parsed as floats; each group column becomes one
    attribute whose distinct string values are the groups. When ``features``
    is None every column that is not a group or weight column is a feature.
    """
    group_cols = list(group_cols)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise LoadError(f"{path}: empty file") from None
        for col in group_cols + ([weight_col] if weight_col else []):
            if col not in header:
                raise LoadError(f"{path}: missing column {col!r}")
        if features is None:
            skip = set(group_cols) | ({weight_col} if weight_col else set())
            features = [h for h in header if h not in skip]
        else:
            features = list(features)
            for col in features:
                if col not in header:
                    raise LoadError(f"{path}: missing column {col!r}")
        if not features:
            raise LoadError(f"{path}: no feature columns")
        fpos = [header.index(c) for c in features]
        gpos = [header.index(c) for c in group_cols]
        wpos = header.index(weight_col) if weight_col else None
        rows, glabels, weights = [], [[] for _ in group_cols], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise LoadError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            try:
                vals = [float(row[p]) for p in fpos]
            except ValueError:
                raise LoadError(f"{path}: row {lineno} has a non-numeric feature") from None
            if not all(math.isfinite(v) for v in vals):
                raise LoadError(f"{path}: row {lineno} has a non-finite feature")
            rows.append(vals)
            for slot, p in enumerate(gpos):
                glabels[slot].append(row[p].strip())
            if wpos is not None:
                try:
                    wv = float(row[wpos])
                except ValueError:
                    raise LoadError(f"{path}: row {lineno} has a non-numeric weight") from None
                if not (wv > 0 and math.isfinite(wv)):
                    raise LoadError(f"{path}: row {lineno} has a non-positive weight")
                weights.append(wv)
    if not rows:
        raise LoadError(f"{path}: no data rows")
    groups, names = {}, {}
    for col, labels in zip(group_cols, glabels):
        values = sorted(set(labels))
        lookup = {v: k for k, v in enumerate(values)}
        groups[col] = np.array([lookup[v] for v in labels], dtype=np.int64)
        names[col] = values
    return Dataset(points=np.array(rows), weights=np.array(weights) if weights else None,
                   groups=groups, group_names=names)


def load_matrix(path) -> Dataset:
    """Read a whitespace-separated n x n distance matrix preceded by a line holding n."""
    with open(path) as fh:
        tokens = fh.read().split()
    if not tokens:
        raise LoadError(f"{path}: empty file")
    try:
        n = int(tokens[0])
        vals = np.array([float(t) for t in tokens[1:]])
    except ValueError:
        raise LoadError(f"{path}: non-numeric entry") from None
    if n < 1 or vals.size != n * n:
        raise LoadError(f"{path}: expected {n}x{n} entries, found {vals.size}")
    try:
        return Dataset(matrix=vals.reshape(n, n))
    except ValueError as exc:
        raise LoadError(f"{path}: {exc}") from None


def save_csv(ds: Dataset, path, feature_prefix="x") -> None:
    if ds.points is None:
        raise ValueError("only coordinate datasets can be written as CSV")
    attrs = list(ds.groups)
    d = ds.points.shape[1]
    header = [f"{feature_prefix}{c}" for c in range(d)] + attrs
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.points[i]]
            row += [str(ds.group_names[a][ds.groups[a][i]]) for a in attrs]
            w.writerow(row)
