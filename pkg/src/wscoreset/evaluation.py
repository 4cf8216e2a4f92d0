"""Exact costs, constrained and fair assignment solvers, and coreset verification."""

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from . import metric
from .metric import Dataset


class InfeasibleError(ValueError):
    """Constraint system has no feasible assignment; the message holds a certificate."""


class CapExceededError(ValueError):
    pass


@dataclass
class CostReport:
    cost: float
    per_center: list
    sigma: list = field(default_factory=list)  # (point, center, mass)
    status: str = "optimal"

    def to_dict(self) -> dict:
        return {"cost": self.cost, "per_center": self.per_center,
                "sigma": [list(t) for t in self.sigma], "status": self.status}


@dataclass(frozen=True)
class AssignmentConstraint:
    capacities: tuple

    def __post_init__(self):
        caps = tuple(float(c) for c in self.capacities)
        if any(c < 0 for c in caps):
            raise ValueError("capacities must be nonnegative")
        object.__setattr__(self, "capacities", caps)

    @property
    def total(self) -> float:
        return math.fsum(self.capacities)


@dataclass(frozen=True)
class FairnessBounds:
    """Per-attribute lower/upper fractions: ``alpha[attr][g]`` and ``beta[attr][g]``."""

    alpha: dict
    beta: dict

    def __post_init__(self):
        for attr in self.alpha:
            a = np.asarray(self.alpha[attr], dtype=float)
            b = np.asarray(self.beta[attr], dtype=float)
            if a.shape != b.shape:
                raise ValueError(f"alpha and beta for {attr!r} differ in length")
            if np.any(a < 0) or np.any(b > 1) or np.any(a > b):
                raise ValueError(f"need 0 <= alpha <= beta <= 1 for attribute {attr!r}")

    @classmethod
    def uniform(cls, ds: Dataset, alpha: float, beta: float) -> "FairnessBounds":
        al = {a: [alpha] * len(ds.group_names[a]) for a in ds.groups}
        be = {a: [beta] * len(ds.group_names[a]) for a in ds.groups}
        return cls(al, be)

    @classmethod
    def vacuous(cls, ds: Dataset) -> "FairnessBounds":
        return cls.uniform(ds, 0.0, 1.0)


def _resolve(ds, indices, weights):
    if indices is None:
        return np.arange(ds.n), ds.weights
    idx = np.asarray(indices, dtype=np.int64)
    w = ds.weights[idx] if weights is None else np.asarray(weights, dtype=float)
    return idx, w


def _dz(ds, cfg, rows, centers, z):
    cfg = cfg if cfg is not None else metric.default_config(ds)
    return metric.distance_block(ds, cfg, rows, centers) ** z


def clustering_cost(ds: Dataset, centers, z: float = 1, indices=None, weights=None, cfg=None) -> float:
    """Sum of ``w(x) d(x, C)^z``; ``indices``/``weights`` select a weighted subset."""
    centers = np.atleast_1d(np.asarray(centers, dtype=np.int64))
    if centers.size == 0:
        raise ValueError("at least one center is required")
    idx, w = _resolve(ds, indices, weights)
    if idx.size == 0:
        return 0.0
    return float(w @ _dz(ds, cfg, idx, centers, z).min(axis=1))


def _check_total(gamma, w):
    tot, need = gamma.sum(), w.sum()
    if abs(tot - need) > 1e-9 * max(1.0, need):
        raise InfeasibleError(f"capacities sum to {tot!r} but the points weigh {need!r} (imbalance {tot - need!r})")


def _two_center(cost, w, gamma):
    # fractional knapsack: move the cheapest mass gamma[1] to the second center
    delta = cost[:, 1] - cost[:, 0]
    order = np.argsort(delta, kind="stable")
    moved = np.zeros_like(w)
    left = gamma[1]
    for t in order.tolist():
        if left <= 0:
            break
        take = min(w[t], left)
        moved[t] = take
        left -= take
    sig = np.stack([w - moved, moved], axis=1)
    sig[:, 0] = np.maximum(sig[:, 0], 0.0)
    return sig


def _transport_lp(cost, w, gamma):
    n, k = cost.shape
    rows = np.repeat(np.arange(n), k)
    cols = np.arange(n * k)
    A_pts = sparse.csr_matrix((np.ones(n * k), (rows, cols)), shape=(n, n * k))
    A_ctr = sparse.csr_matrix((np.ones(n * k), (np.tile(np.arange(k), n), cols)), shape=(k, n * k))
    res = linprog(cost.ravel(), A_eq=sparse.vstack([A_pts, A_ctr]), b_eq=np.concatenate([w, gamma]),
                  bounds=(0, None), method="highs")
    if res.status != 0:
        raise InfeasibleError(f"transportation solver failed: {res.message}")
    return np.maximum(res.x.reshape(n, k), 0.0)


def _report(sig, cost, idx, centers, status="optimal"):
    total = float((sig * cost).sum())
    per = (sig * cost).sum(axis=0).tolist()
    nz = np.argwhere(sig > 0)
    triples = [(int(idx[a]), int(centers[b]), float(sig[a, b])) for a, b in nz]
    return CostReport(total, per, triples, status)


def constrained_cost(ds: Dataset, centers, gamma, z: float = 1, indices=None, weights=None,
                     cfg=None) -> CostReport:
    """Minimum connection cost over fractional assignments meeting capacities ``gamma``."""
    centers = np.atleast_1d(np.asarray(centers, dtype=np.int64))
    caps = np.asarray(gamma.capacities if isinstance(gamma, AssignmentConstraint) else gamma, dtype=float)
    if caps.shape != centers.shape:
        raise ValueError("one capacity per center is required")
    idx, w = _resolve(ds, indices, weights)
    _check_total(caps, w)
    # absorb float round-off in the totals
    caps = caps * (w.sum() / caps.sum()) if caps.sum() > 0 else caps
    cost = _dz(ds, cfg, idx, centers, z)
    k = centers.size
    if k == 1:
        sig = w[:, None].copy()
    elif k == 2:
        sig = _two_center(cost, w, caps)
    else:
        sig = _transport_lp(cost, w, caps)
    return _report(sig, cost, idx, centers)


def _group_labels(ds, indices, groups):
    if groups is not None:
        return {a: np.asarray(v, dtype=np.int64) for a, v in groups.items()}
    idx = np.arange(ds.n) if indices is None else np.asarray(indices, dtype=np.int64)
    return {a: lab[idx] for a, lab in ds.groups.items()}


def check_fair_feasible(labels: dict, w, bounds: FairnessBounds) -> None:
    """Raise :class:`InfeasibleError` with a certificate if no fair assignment exists.

    Putting every point on one center is feasible exactly when each group's
    global share lies in its bounds, and any feasible assignment averages to
    the global shares, so this test is exact.
    """
    total = float(w.sum())
    for attr in sorted(bounds.alpha):
        a = np.asarray(bounds.alpha[attr], dtype=float)
        b = np.asarray(bounds.beta[attr], dtype=float)
        if a.sum() > 1 + 1e-12:
            raise InfeasibleError(f"attribute {attr!r}: lower bounds sum to {a.sum():.6g} > 1")
        if b.sum() < 1 - 1e-12:
            raise InfeasibleError(f"attribute {attr!r}: upper bounds sum to {b.sum():.6g} < 1")
        lab = labels[attr]
        share = np.bincount(lab, weights=w, minlength=a.size) / total
        for g in range(a.size):
            if share[g] < a[g] - 1e-12 or share[g] > b[g] + 1e-12:
                raise InfeasibleError(f"attribute {attr!r}, group {g}: global share {share[g]:.6g} "
                                      f"outside [{a[g]:.6g}, {b[g]:.6g}]")


def fair_cost(ds: Dataset, centers, bounds: FairnessBounds, z: float = 1, indices=None, weights=None,
              groups=None, cfg=None) -> CostReport:
    """Minimum cost over fractional assignments where each cluster's group shares obey ``bounds``."""
    centers = np.atleast_1d(np.asarray(centers, dtype=np.int64))
    idx, w = _resolve(ds, indices, weights)
    labels = _group_labels(ds, indices, groups)
    check_fair_feasible(labels, w, bounds)
    cost = _dz(ds, cfg, idx, centers, z)
    n, k = cost.shape
    rows, cols, vals, ub = [], [], [], []
    r = 0
    var = np.arange(n * k).reshape(n, k)
    for attr in sorted(bounds.alpha):
        lab = labels[attr]
        for g, (lo, hi) in enumerate(zip(bounds.alpha[attr], bounds.beta[attr])):
            in_g = (lab == g).astype(float)
            for c in range(k):
                # alpha * sigma(X, c) - sigma(X_g, c) <= 0
                if lo > 0:
                    rows.append(np.full(n, r)); cols.append(var[:, c]); vals.append(lo - in_g)
                    ub.append(0.0); r += 1
                # sigma(X_g, c) - beta * sigma(X, c) <= 0
                if hi < 1:
                    rows.append(np.full(n, r)); cols.append(var[:, c]); vals.append(in_g - hi)
                    ub.append(0.0); r += 1
    if r == 0:
        sig = np.zeros_like(cost)
        sig[np.arange(n), cost.argmin(axis=1)] = w
        return _report(sig, cost, idx, centers)
    A_ub = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(r, n * k))
    A_eq = sparse.csr_matrix((np.ones(n * k), (np.repeat(np.arange(n), k), np.arange(n * k))), shape=(n, n * k))
    res = linprog(cost.ravel(), A_ub=A_ub, b_ub=np.array(ub), A_eq=A_eq, b_eq=w, bounds=(0, None),
                  method="highs")
    if res.status != 0:
        raise InfeasibleError(f"fair assignment LP failed: {res.message}")
    return _report(np.maximum(res.x.reshape(n, k), 0.0), cost, idx, centers)


def _combination_batches(n, k, batch):
    it = itertools.combinations(range(n), k)
    while True:
        chunk = list(itertools.islice(it, batch))
        if not chunk:
            return
        yield np.array(chunk, dtype=np.int64)


def _costs_for_sets(Dz, w, sets):
    """Cost of each row of ``sets`` (B x k) for the weighted points behind ``Dz``."""
    out = np.empty(sets.shape[0])
    step = max(1, int(4e6 // max(1, Dz.shape[0] * sets.shape[1])))
    for s in range(0, sets.shape[0], step):
        blk = sets[s:s + step]
        out[s:s + step] = w @ Dz[:, blk].min(axis=2)
    return out


def brute_force_opt(ds: Dataset, k: int, z: float = 1, cap: int = 2_000_000, cfg=None):
    """Exact optimum over k-subsets of the dataset: ``(cost, centers)``."""
    n = ds.n
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= n")
    if math.comb(n, k) > cap:
        raise CapExceededError(f"C({n},{k}) = {math.comb(n, k)} exceeds the cap {cap}")
    Dz = _dz(ds, cfg, np.arange(n), np.arange(n), z)
    best, arg = math.inf, None
    for sets in _combination_batches(n, k, 20000):
        costs = _costs_for_sets(Dz, ds.weights, sets)
        t = int(np.argmin(costs))
        if costs[t] < best:
            best, arg = float(costs[t]), sets[t]
    return best, arg


def relative_deviation(full, core):
    full = np.asarray(full, dtype=float)
    core = np.asarray(core, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(core - full) / full
    rel = np.where(full == 0, np.where(core == 0, 0.0, np.inf), rel)
    return rel


def _knapsack_curve(Dz_pair, w, grid):
    """Two-center constrained cost for each capacity of center 2 in ``grid``."""
    base = float(w @ Dz_pair[:, 0])
    delta = Dz_pair[:, 1] - Dz_pair[:, 0]
    order = np.argsort(delta, kind="stable")
    cw = np.concatenate([[0.0], np.cumsum(w[order])])
    cc = np.concatenate([[0.0], np.cumsum(w[order] * delta[order])])
    return base + np.interp(grid, cw, cc)


def _compositions(total, k, step):
    units = int(round(total / step))
    for bars in itertools.combinations(range(units + k - 1), k - 1):
        parts, prev = [], -1
        for b in bars:
            parts.append(b - prev - 1)
            prev = b
        parts.append(units + k - 2 - prev)
        yield np.array(parts, dtype=float) * step


def verify_coreset(ds: Dataset, coreset, k: int, z: float = 1, eps_target: float = 0.25,
                   mode="exhaustive", constraint_mode="none", seed: int = 0, cap: int = 2_000_000,
                   n_witnesses: int = 5, cfg=None) -> dict:
    """Largest relative cost deviation of ``coreset`` against the full data.

    ``mode`` is ``"exhaustive"`` or ``("sampled", N)``; ``constraint_mode`` is
    ``"none"`` or ``("gamma-grid", G)`` with capacities on a grid of step G.
    """
    n = ds.n
    if mode == "exhaustive":
        if math.comb(n, k) > cap:
            raise CapExceededError(f"C({n},{k}) exceeds the cap {cap}; use sampled mode")
        sets = np.array(list(itertools.combinations(range(n), k)), dtype=np.int64).reshape(-1, k)
        mode_name = "exhaustive"
    else:
        kind, N = mode
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5E75]))
        sets = np.array([np.sort(rng.choice(n, size=k, replace=False)) for _ in range(int(N))],
                        dtype=np.int64).reshape(-1, k)
        mode_name = f"sampled({int(N)})"
    Dz = _dz(ds, cfg, np.arange(n), np.arange(n), z)
    w = ds.weights
    ci, cw = coreset.indices, coreset.weights
    Dz_core = Dz[ci]
    witnesses = []
    if constraint_mode == "none":
        full = _costs_for_sets(Dz, w, sets)
        core = _costs_for_sets(Dz_core, cw, sets)
        rel = relative_deviation(full, core)
        worst = np.argsort(-rel, kind="stable")[:n_witnesses]
        for t in worst.tolist():
            witnesses.append({"centers": sets[t].tolist(), "full_cost": float(full[t]),
                              "coreset_cost": float(core[t]), "rel_dev": float(rel[t])})
        tested = int(sets.shape[0])
        cname = "none"
    else:
        _, G = constraint_mode
        W = float(w.sum())
        scale = cw.sum() / W if W > 0 else 1.0
        records = []
        if k == 2:
            grid = np.arange(0.0, W + 1e-9, float(G))
            if grid[-1] < W - 1e-9:
                grid = np.append(grid, W)
            for s in sets:
                full = _knapsack_curve(Dz[:, s], w, grid)
                core = _knapsack_curve(Dz_core[:, s], cw, grid * scale)
                rel = relative_deviation(full, core)
                t = int(np.argmax(rel))
                records.append((float(rel[t]), s.tolist(), [W - grid[t], grid[t]], float(full[t]), float(core[t])))
            tested = int(sets.shape[0] * grid.size)
        else:
            tested = 0
            for s in sets:
                for gam in _compositions(W, k, float(G)):
                    f = constrained_cost(ds, s, gam, z, cfg=cfg).cost
                    c = constrained_cost(ds, s, gam * scale, z, indices=ci, weights=cw, cfg=cfg).cost
                    rel = float(relative_deviation(f, c))
                    records.append((rel, s.tolist(), gam.tolist(), f, c))
                    tested += 1
        records.sort(key=lambda r: -r[0])
        for rel, s, gam, f, c in records[:n_witnesses]:
            witnesses.append({"centers": s, "gamma": gam, "full_cost": f, "coreset_cost": c, "rel_dev": rel})
        cname = f"gamma-grid({G})"
    max_dev = witnesses[0]["rel_dev"] if witnesses else 0.0
    return {"max_rel_dev": max_dev, "pass": bool(max_dev <= eps_target), "eps_target": eps_target,
            "mode": mode_name, "constraint_mode": cname, "tested": tested, "seeds": [seed],
            "witnesses": witnesses}
