"""Assignment-preserving coresets and their union into fair coresets."""

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .coreset import RingPartition, RunTrace, WeightedCoreset, _anchor_set, _center_rng, _log2c, \
    _strong_distances, base_radius
from .evaluation import AssignmentConstraint, FairnessBounds  # noqa: F401  (re-exported)
from .oracle import OracleEnv, estimate_distances_to_set
from .weak import WeakClustering, weak_kz_clustering


@dataclass(frozen=True)
class FairParams:
    epsilon: float
    C0: float
    preset: str
    s_r: int
    heavy_fraction: float
    m: int
    max_iters: int
    c_m: float
    query_mode: str = "point"
    peel_floor: Optional[int] = None
    exact_small_batches: bool = False
    strata_factor: Optional[float] = None

    def __post_init__(self):
        if self.s_r < 1 or self.m < 1:
            raise ValueError("s_r and m must be at least 1")
        if not 0 < self.heavy_fraction <= 1:
            raise ValueError("heavy_fraction must lie in (0, 1]")

    @property
    def F(self) -> float:
        return 2.0 * self.C0

    @classmethod
    def paper(cls, n: int, k: int, epsilon: float, C0: float = 5.0, c_m: float = 30.0, **kw) -> "FairParams":
        lg = _log2c(n)
        return cls(epsilon=epsilon, C0=C0, preset="paper", s_r=math.ceil(1000 * C0 * lg ** 2),
                   heavy_fraction=min(1.0, 4 / (5 * lg)),
                   m=math.ceil(c_m * k * lg ** 2 * math.log2(n / epsilon) / epsilon ** 2),
                   max_iters=10 * lg ** 2, c_m=c_m, **kw)

    @classmethod
    def desk(cls, n: int, k: int, epsilon: float, C0: float = 2.0, c_m: float = 1.0, lam: float = 2.0,
             factor: float = 800.0, **kw) -> "FairParams":
        kw.setdefault("strata_factor", 2.0)
        return cls(epsilon=epsilon, C0=C0, preset="desk",
                   s_r=max(1, math.ceil(1000 * C0 * lam ** 2 / factor)),
                   heavy_fraction=min(1.0, 4 / (5 * lam)),
                   m=max(1, math.ceil(c_m * k * lam ** 2 * (lam + math.log2(1 / epsilon)) / epsilon ** 2)),
                   max_iters=max(1, math.ceil(10 * lam ** 2)), c_m=c_m, **kw)

    @classmethod
    def from_preset(cls, preset: str, n: int, k: int, epsilon: float, **kw) -> "FairParams":
        if preset == "paper":
            return cls.paper(n, k, epsilon, **kw)
        if preset == "desk":
            return cls.desk(n, k, epsilon, **kw)
        raise ValueError(f"unknown preset {preset!r}")


def collect_batches(env: OracleEnv, wc: WeakClustering, fp: FairParams, seed: Optional[int] = None,
                    trace: Optional[RunTrace] = None, tag: str = ""):
    """Sample-and-peel loop; returns the peeled batches ``[(label, indices, score)]`` in order.

    Each iteration picks the smallest ring holding at least
    ``heavy_fraction * s_r`` samples and peels everything estimated within
    that ring's outer radius. Survivors left after ``max_iters`` (or a
    survivor set no larger than one sample) form a final batch, so every
    point lands in exactly one batch. A batch's score is its estimated
    cost about the center (plus R per unit weight) and only steers how a
    fixed draw budget is split.
    """
    trace = trace if trace is not None else RunTrace()
    m_pts = int(wc.indices.size)
    R = base_radius(wc.est_cost, wc.beta, m_pts, wc.z)
    floor = fp.peel_floor if fp.peel_floor is not None else env.sample_floor
    batches = []
    w = env.ds.weights
    with env.phase("coreset-loop"):
        for i, c in enumerate(wc.centers.tolist()):
            surv = wc.members(i).copy()
            if R <= 0:
                batches.append((f"peel-batch({tag}{i},0)", surv, float(w[surv].sum())))
                trace.add(center=i, iteration=0, j_star=None, before=int(surv.size), after=0,
                          batch=int(surv.size), removed=np.sort(surv).tolist(), flushed=True, group=tag)
                continue
            rng = _center_rng(env, seed, 0xFA1, i)
            ring = RingPartition(center=c, R=R, F=fp.F, L=0)
            pool_idx, pool_d = [], []
            r = 0
            while surv.size and r < fp.max_iters:
                before = int(surv.size)
                if surv.size <= fp.s_r:
                    break
                S = rng.choice(surv, size=fp.s_r, replace=False)
                d = _strong_distances(env, c, S, fp.query_mode)
                pool_idx.extend(S.tolist())
                pool_d.extend(d.tolist())
                lab = ring.index(d)
                counts = np.bincount(lab)
                heavy = np.nonzero(counts >= fp.heavy_fraction * S.size)[0]
                j_star = int(heavy.min()) if heavy.size else int(np.argmax(counts))
                radius = ring.outer_radius(j_star)
                pi, pd = np.array(pool_idx), np.array(pool_d)
                keep = pd <= radius
                anchors = _anchor_set(env, c, pi[keep], pd[keep], floor, fp.query_mode)
                # widen by the estimator's additive error so every point within radius is peeled
                slack = 2.0 * float(env.exact_block(anchors, anchors).max())
                est = estimate_distances_to_set(env, surv, anchors, floor=1)
                hit = est <= radius + slack
                T = surv[hit]
                if T.size:
                    batches.extend(_strata(f"peel-batch({tag}{i},{r}", T, est[hit], R, w, fp.strata_factor))
                    surv = np.setdiff1d(surv, T, assume_unique=True)
                trace.add(center=i, iteration=r, j_star=j_star, before=before, after=int(surv.size),
                          batch=int(T.size), removed=np.sort(T).tolist(), flushed=False, group=tag,
                          radius=radius, slack=slack, ring_counts=counts.tolist())
                r += 1
            if surv.size:
                # leftover survivors become one last batch so no weight is lost
                known = np.array(pool_idx + [c], dtype=np.int64)
                env.reveal_set(known, fp.query_mode)
                est = estimate_distances_to_set(env, surv, known, floor=1)
                batches.extend(_strata(f"peel-batch({tag}{i},{r}", surv, est, R, w, fp.strata_factor))
                trace.add(center=i, iteration=r, j_star=None, before=int(surv.size), after=0,
                          batch=int(surv.size), removed=np.sort(surv).tolist(), flushed=True, group=tag)
    return batches, trace


def _strata(prefix, T, est, R, w, factor):
    """Split one peeled batch into geometric shells of estimated distance (factor ``factor``)."""
    if factor is None or T.size < 2:
        return [(prefix + ")", T, float(w[T] @ (est + R)))]
    shell = np.floor(np.log(np.maximum(est, R) / R) / math.log(factor)).astype(np.int64)
    out = []
    for j in np.unique(shell).tolist():
        sel = shell == j
        out.append((f"{prefix}.{j})", T[sel], float(w[T[sel]] @ (est[sel] + R))))
    return out


def _allocation(scores, m, target):
    """Draws per batch: ``m`` each, or ``target`` split in proportion to the batch scores.

    With a target every batch keeps at least one draw and the draws sum to
    ``max(target, number of batches)``.
    """
    if target is None:
        return [m] * len(scores)
    scores = np.asarray(scores, dtype=float)
    if scores.sum() <= 0:
        scores = np.ones_like(scores)
    spare = max(0, int(target) - scores.size)
    quota = spare * scores / scores.sum()
    alloc = np.floor(quota).astype(int)
    # largest remainders get the leftover draws; ties resolve by batch order
    for b in np.argsort(-(quota - alloc), kind="stable")[: spare - int(alloc.sum())]:
        alloc[b] += 1
    return [int(a) + 1 for a in alloc]


def sample_batches(env: OracleEnv, batches, fp: FairParams, rng, target_size: Optional[int] = None,
                   group_attrs=None) -> WeightedCoreset:
    """Draw from each batch with replacement, weight ``w(T)/m`` per draw, merge repeats."""
    w = env.ds.weights
    merged = {}
    order = []
    for (label, T, _), m in zip(batches, _allocation([b[2] for b in batches], fp.m, target_size)):
        wT = w[T]
        total = float(wT.sum())
        if fp.exact_small_batches and T.size <= m:
            picks, each = T, None
        else:
            picks = rng.choice(T, size=m, replace=True, p=wT / total)
            each = total / m
        for x in picks.tolist():
            key = (x, label)
            if key not in merged:
                merged[key] = []
                order.append(key)
            merged[key].append(float(w[x]) if each is None else each)
    idx = np.array([k[0] for k in order], dtype=np.int64)
    wts = np.array([math.fsum(merged[k]) for k in order])
    prov = [k[1] for k in order]
    groups = None
    if group_attrs:
        groups = {a: env.ds.groups[a][idx] for a in group_attrs}
    return WeightedCoreset(idx, wts, prov, groups)


def build_assignment_preserving_coreset(env: OracleEnv, wc: WeakClustering, fp: FairParams,
                                        seed: Optional[int] = None, target_size: Optional[int] = None):
    """Returns ``(coreset, ledger, trace)``; the coreset's total weight equals the clustered weight."""
    batches, trace = collect_batches(env, wc, fp, seed)
    rng = _center_rng(env, seed, 0x5A3B, 0)
    cs = sample_batches(env, batches, fp, rng, target_size, group_attrs=list(env.ds.groups) or None)
    return cs, env.ledger, trace


def intersection_classes(ds, attributes):
    """Point indices grouped by their combination of labels across ``attributes``."""
    if not attributes:
        return {(): np.arange(ds.n)}
    keys = np.stack([ds.groups[a] for a in attributes], axis=1)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = np.asarray(inv).ravel()
    return {tuple(int(v) for v in uniq[t]): np.flatnonzero(inv == t) for t in range(uniq.shape[0])}


def build_fair_coreset(env: OracleEnv, k: int, fp: FairParams, attributes=None, z: float = 1,
                       seed: Optional[int] = None, target_size: Optional[int] = None, weak_kwargs=None):
    """Fair coreset as a union of assignment-preserving coresets, one per group combination.

    Every point belongs to exactly one combination of labels, so each
    group's weight in the union equals its weight in the data. Returns
    ``(coreset, ledger, trace)``.
    """
    if z != 1:
        raise ValueError("fair coresets are provided for z = 1 only")
    ds = env.ds
    attributes = list(ds.groups) if attributes is None else list(attributes)
    if not attributes:
        raise ValueError("fair coresets need at least one group attribute")
    for a in attributes:
        present = set(np.unique(ds.groups[a]).tolist())
        for g, name in enumerate(ds.group_names[a]):
            if g not in present:
                warnings.warn(f"attribute {a!r}: group {name!r} is empty and is skipped")
    weak_kwargs = dict(weak_kwargs or {})
    trace = RunTrace()
    batches = []
    for t, (key, members) in enumerate(sorted(intersection_classes(ds, attributes).items())):
        kk = min(k, members.size)
        wc = weak_kz_clustering(env, kk, z=1, subset=members, seed=(env.seed if seed is None else seed) + 7919 * t,
                                **weak_kwargs)
        tag = "/".join(str(v) for v in key) + ":"
        part, _ = collect_batches(env, wc, fp, None if seed is None else seed + 7919 * t, trace, tag)
        batches.extend(part)
    rng = _center_rng(env, seed, 0x5A3B, 0)
    cs = sample_batches(env, batches, fp, rng, target_size, group_attrs=attributes)
    return cs, env.ledger, trace
