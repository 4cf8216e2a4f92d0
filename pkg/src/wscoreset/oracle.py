"""Metered weak/strong distance oracles and the robust set-distance estimator.

Algorithms in this package never touch :mod:`wscoreset.metric` directly; every
distance they see comes through an :class:`OracleEnv`.
"""

import contextlib
import math
import threading
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import metric
from .metric import Dataset, MetricConfig

ADVERSARIES = ("small-value", "zero", "huge", "uniform-random", "permuted-true")
PHASES = ("weak-clustering", "coreset-loop", "estimator")

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


class OracleAccessError(RuntimeError):
    """Exact distance requested for a pair the strong oracle has not revealed."""


class EstimatorError(ValueError):
    """Precondition of the set-distance estimator violated."""


def _splitmix(x):
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & _MASK64
    x = ((x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK64
    x = ((x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK64
    return x ^ (x >> np.uint64(31))


def _unit(h):
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def pair_uniforms(seed: int, lo, hi, stream: int):
    """Deterministic U[0,1) per unordered pair; ``lo <= hi`` elementwise."""
    with np.errstate(over="ignore"):
        h = _splitmix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ np.uint64(stream * 0x632BE59BD9B4E019 & 0xFFFFFFFFFFFFFFFF))
        h = _splitmix(h ^ lo.astype(np.uint64))
        h = _splitmix(h ^ (hi.astype(np.uint64) * np.uint64(0xD1B54A32D192ED03) & _MASK64))
    return _unit(h)


@dataclass
class QueryLedger:
    weak_count: int = 0
    strong_pair_count: int = 0
    strong_points: set = field(default_factory=set)
    phases: dict = field(default_factory=lambda: {p: {"weak": 0, "strong_points": 0, "strong_pairs": 0}
                                                   for p in PHASES})

    @property
    def strong_point_count(self) -> int:
        return len(self.strong_points)

    def to_dict(self) -> dict:
        return {
            "weak": self.weak_count,
            "strong_points": self.strong_point_count,
            "strong_pairs": self.strong_pair_count,
            "phases": {p: dict(v) for p, v in sorted(self.phases.items())},
        }

    def snapshot(self) -> dict:
        return self.to_dict()


class OracleEnv:
    """Simulated weak/strong oracle pair over a ground-truth dataset.

    Corruption of the weak answer for an unordered pair is decided by hashing
    ``(seed, min(i, j), max(i, j))``, so every answer is a fixed function of
    the pair: repeated queries always agree. The adversary is oblivious.
    """

    def __init__(self, ds: Dataset, cfg: Optional[MetricConfig] = None, corruption_prob: float = 1 / 3,
                 adversary: str = "small-value", seed: int = 0, sample_floor: Optional[int] = None,
                 huge_value: float = 1e9):
        if not 0 <= corruption_prob < 0.5:
            raise ValueError("corruption_prob must lie in [0, 0.5)")
        if adversary not in ADVERSARIES:
            raise ValueError(f"unknown adversary {adversary!r}; choose from {ADVERSARIES}")
        self.ds = ds
        self.cfg = cfg if cfg is not None else metric.default_config(ds)
        self.corruption_prob = float(corruption_prob)
        self.adversary = adversary
        self.seed = int(seed)
        self.huge_value = float(huge_value)
        n = ds.n
        self.sample_floor = sample_floor if sample_floor is not None else 10 * max(1, math.ceil(math.log2(max(n, 2))))
        self.ledger = QueryLedger()
        self._phase = "coreset-loop"
        self._lock = threading.Lock()
        self._strong_mask = np.zeros(n, dtype=bool)
        self._strong_pairs = set()
        if n <= 8192:
            self._weak_seen = np.zeros((n, n), dtype=bool)
            self._weak_keys = None
        else:
            self._weak_seen = None
            self._weak_keys = set()
        self._scale = None

    # -- bookkeeping --------------------------------------------------------

    @property
    def n(self) -> int:
        return self.ds.n

    @property
    def strong_mask(self) -> np.ndarray:
        return self._strong_mask

    @contextlib.contextmanager
    def phase(self, name: str):
        if name not in PHASES:
            raise ValueError(f"unknown phase {name!r}")
        prev, self._phase = self._phase, name
        try:
            yield self
        finally:
            self._phase = prev

    def _check(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n):
            raise IndexError("point index out of range")
        return idx

    def _charge_weak(self, lo, hi):
        with self._lock:
            if self._weak_seen is not None:
                fresh = ~self._weak_seen[lo, hi]
                if not fresh.any():
                    return
                flo, fhi = lo[fresh], hi[fresh]
                # duplicates inside one call are counted once
                keys = np.unique(flo * self.n + fhi)
                self._weak_seen[keys // self.n, keys % self.n] = True
                added = int(keys.size)
            else:
                added = 0
                for key in np.unique(lo * self.n + hi).tolist():
                    if key not in self._weak_keys:
                        self._weak_keys.add(key)
                        added += 1
            self.ledger.weak_count += added
            self.ledger.phases[self._phase]["weak"] += added

    def _value_scale(self) -> float:
        if self._scale is None:
            ds = self.ds
            if ds.points is not None:
                span = ds.points.max(axis=0) - ds.points.min(axis=0)
                self._scale = float(np.sqrt((span * span).sum())) or 1.0
            else:
                self._scale = float(ds.matrix.max()) or 1.0
        return self._scale

    # -- weak oracle --------------------------------------------------------

    def weak_answers(self, i, j) -> np.ndarray:
        """Weak answers for index arrays ``i`` and ``j`` (broadcast)."""
        i, j = np.broadcast_arrays(self._check(i), self._check(j))
        lo = np.minimum(i, j).ravel()
        hi = np.maximum(i, j).ravel()
        off = lo != hi
        out = np.zeros(lo.shape, dtype=float)
        if off.any():
            lo_o, hi_o = lo[off], hi[off]
            self._charge_weak(lo_o, hi_o)
            truth = metric.pair_distances(self.ds, self.cfg, lo_o, hi_o)
            corrupt = pair_uniforms(self.seed, lo_o, hi_o, stream=1) < self.corruption_prob
            vals = truth.copy()
            if corrupt.any():
                vals[corrupt] = self._adversary_values(lo_o[corrupt], hi_o[corrupt], truth[corrupt])
            out[off] = vals
        return out.reshape(i.shape)

    def _adversary_values(self, lo, hi, truth):
        kind = self.adversary
        if kind in ("small-value", "zero"):
            vals = np.zeros_like(truth)
        elif kind == "huge":
            vals = np.full_like(truth, self.huge_value)
        elif kind == "uniform-random":
            vals = pair_uniforms(self.seed, lo, hi, stream=2) * self._value_scale()
        else:  # permuted-true: the true distance of a hashed unrelated pair
            other = np.floor(pair_uniforms(self.seed, lo, hi, stream=3) * self.n).astype(np.int64)
            other = np.where(other == hi, (other + 1) % self.n, other)
            vals = metric.pair_distances(self.ds, self.cfg, lo, other)
        if self.cfg.integerize:
            vals = np.rint(vals)
        return vals

    def is_corrupted(self, i, j) -> np.ndarray:
        """Ground-truth corruption flags (test/audit helper; never used by algorithms)."""
        i, j = np.broadcast_arrays(self._check(i), self._check(j))
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        flags = pair_uniforms(self.seed, lo.ravel(), hi.ravel(), stream=1) < self.corruption_prob
        return (flags & (lo.ravel() != hi.ravel())).reshape(i.shape)

    # -- strong oracle ------------------------------------------------------

    def strong_point_query(self, i) -> None:
        idx = np.atleast_1d(self._check(i))
        with self._lock:
            fresh = np.unique(idx[~self._strong_mask[idx]])
            if fresh.size:
                self._strong_mask[fresh] = True
                self.ledger.strong_points.update(fresh.tolist())
                self.ledger.phases[self._phase]["strong_points"] += int(fresh.size)

    def strong_pair_query(self, i, j) -> np.ndarray:
        i, j = np.broadcast_arrays(self._check(i), self._check(j))
        lo = np.minimum(i, j).ravel()
        hi = np.maximum(i, j).ravel()
        with self._lock:
            added = 0
            for a, b in zip(lo.tolist(), hi.tolist()):
                if a != b and (a, b) not in self._strong_pairs:
                    self._strong_pairs.add((a, b))
                    added += 1
            self.ledger.strong_pair_count += added
            self.ledger.phases[self._phase]["strong_pairs"] += added
        return metric.pair_distances(self.ds, self.cfg, lo, hi).reshape(i.shape)

    def revealed(self, i, j) -> bool:
        if i == j:
            return True
        if self._strong_mask[i] and self._strong_mask[j]:
            return True
        return (min(i, j), max(i, j)) in self._strong_pairs

    def exact_distance(self, i, j):
        """Exact distance(s) for pairs already revealed by the strong oracle."""
        i, j = np.broadcast_arrays(self._check(i), self._check(j))
        ok = (i == j) | (self._strong_mask[i] & self._strong_mask[j])
        if not ok.all():
            for a, b in zip(i[~ok].ravel().tolist(), j[~ok].ravel().tolist()):
                if (min(a, b), max(a, b)) not in self._strong_pairs:
                    raise OracleAccessError(f"distance ({a}, {b}) has not been revealed by the strong oracle")
        out = metric.pair_distances(self.ds, self.cfg, i.ravel(), j.ravel()).reshape(i.shape)
        return float(out) if out.ndim == 0 else out

    def exact_block(self, rows, cols) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if not (self._strong_mask[rows].all() and self._strong_mask[cols].all()):
            rr, cc = np.meshgrid(rows, cols, indexing="ij")
            return np.asarray(self.exact_distance(rr, cc)).reshape(rows.size, cols.size)
        return metric.distance_block(self.ds, self.cfg, rows, cols)

    def reveal_set(self, S, mode: str = "point") -> None:
        """Make all pairwise distances inside ``S`` known (point mode: SO(x) each)."""
        S = np.asarray(S, dtype=np.int64)
        if mode == "point":
            self.strong_point_query(S)
        elif mode == "pair":
            if S.size > 1:
                a, b = np.triu_indices(S.size, k=1)
                need = ~(self._strong_mask[S[a]] & self._strong_mask[S[b]])
                if need.any():
                    self.strong_pair_query(S[a][need], S[b][need])
        else:
            raise ValueError(f"unknown query mode {mode!r}")

    # -- cloning ------------------------------------------------------------

    def clone(self, seed_offset: int = 0) -> "OracleEnv":
        """Fresh environment over the same data (empty ledger).

        With ``seed_offset == 0`` the clone sees identical weak answers.
        """
        return OracleEnv(self.ds, self.cfg, self.corruption_prob, self.adversary,
                         self.seed + seed_offset, self.sample_floor, self.huge_value)


def weak_query(env: OracleEnv, i: int, j: int) -> float:
    if i == j:
        env._check([i])
        return 0.0
    return float(env.weak_answers(np.array([i]), np.array([j]))[0])


def strong_point_query(env: OracleEnv, i: int) -> None:
    env.strong_point_query(i)


def strong_pair_query(env: OracleEnv, i: int, j: int) -> float:
    return float(env.strong_pair_query(np.array([i]), np.array([j]))[0])


def estimate_distances_to_set(env: OracleEnv, xs, S, R_S: Optional[float] = None,
                              floor: Optional[int] = None) -> np.ndarray:
    """Robust estimate of the distance from each ``x`` to the strong-known set ``S``.

    Two upper envelopes are combined, each a median over the members of S:
    ``w(x,s) + ecc(s)`` with ``ecc(s)`` the exact eccentricity of s inside S,
    and ``w(x,s) + R_S``. While fewer than half of the answers for x are
    corrupted, the result is at least ``d(x,s)`` for every ``s`` in S and at
    most ``min_s d(x,s) + 2 R_S``. Points whose distances to S are already
    revealed get the exact ``max_s d(x,s)``.
    """
    S = np.asarray(S, dtype=np.int64)
    xs = np.atleast_1d(np.asarray(xs, dtype=np.int64))
    floor = env.sample_floor if floor is None else floor
    if S.size < max(1, floor):
        raise EstimatorError(f"estimator needs |S| >= {floor}, got {S.size}")
    # precondition: every pairwise distance in S must be revealed
    inner = env.exact_block(S, S)
    ecc = inner.max(axis=1)
    diam = float(ecc.max())
    if R_S is None:
        R_S = diam
    elif R_S + 1e-9 * max(1.0, diam) < diam:
        raise EstimatorError(f"R_S={R_S} is below the diameter {diam} of S")
    # distances from x are already exact when x is in S or both sides are strong-known
    known = np.isin(xs, S)
    if env.strong_mask[S].all():
        known |= env.strong_mask[xs]
    out = np.empty(xs.size)
    if known.any():
        out[known] = env.exact_block(xs[known], S).max(axis=1)
    rest = ~known
    if rest.any():
        with env.phase("estimator"):
            w = env.weak_answers(xs[rest][:, None], S[None, :])
        out[rest] = combine_estimates(w, inner, R_S)
    return out


def combine_estimates(w, inner, R_S=None) -> np.ndarray:
    """Estimator core: ``w`` holds weak answers (rows: queries, columns: S), ``inner`` exact distances within S."""
    ecc = inner.max(axis=1)
    if R_S is None:
        R_S = float(ecc.max())
    # np.median of an even count averages the two middle values; use the upper middle
    # so the majority argument holds without averaging in a corrupted answer
    m = w.shape[1] // 2
    via_ecc = np.partition(w + ecc[None, :], m, axis=1)[:, m]
    via_diam = np.partition(w, m, axis=1)[:, m] + R_S
    return np.maximum(np.minimum(via_ecc, via_diam), 0.0)


def estimate_distance_to_set(env: OracleEnv, x: int, S, R_S: Optional[float] = None,
                             floor: Optional[int] = None) -> float:
    return float(estimate_distances_to_set(env, [x], S, R_S=R_S, floor=floor)[0])
