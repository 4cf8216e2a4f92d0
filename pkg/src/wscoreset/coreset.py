"""Ring sampling and peeling coresets for k-median and (k,z)-clustering."""

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .oracle import OracleEnv, estimate_distances_to_set
from .weak import WeakClustering


class PreconditionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# rings


def ring_indices(d, R: float, F: float) -> np.ndarray:
    """Vectorised ring lookup: 0 inside B(c,R), else the smallest j with d <= F^j R."""
    d = np.asarray(d, dtype=float)
    if R <= 0 or F <= 1:
        raise ValueError("ring geometry needs R > 0 and F > 1")
    out = np.zeros(d.shape, dtype=np.int64)
    outside = d > R
    if outside.any():
        guess = np.ceil(np.log(d[outside] / R) / math.log(F)).astype(np.int64)
        guess = np.maximum(guess, 1)
        # repair float drift so that F^(j-1) R < d <= F^j R holds exactly
        for _ in range(3):
            too_small = d[outside] > R * np.power(F, guess.astype(float))
            guess = guess + too_small
            too_big = (guess > 1) & (d[outside] <= R * np.power(F, (guess - 1).astype(float)))
            guess = guess - too_big
        out[outside] = guess
    return out


def ring_index(d: float, R: float, F: float) -> int:
    if d < 0:
        raise ValueError("distance must be nonnegative")
    return int(ring_indices(np.array([d]), R, F)[0])


@dataclass
class RingPartition:
    center: int
    R: float
    F: float
    L: int
    processed: set = field(default_factory=set)

    def index(self, d) -> np.ndarray:
        return ring_indices(d, self.R, self.F)

    def outer_radius(self, j: int) -> float:
        return self.R * self.F ** j


# ---------------------------------------------------------------------------
# parameters


def _log2c(n: int) -> int:
    return max(1, math.ceil(math.log2(max(n, 2))))


@dataclass(frozen=True)
class CoresetParams:
    epsilon: float
    C0: float
    preset: str
    s_r: int
    heavy_threshold: int
    update_threshold: int
    max_iters: int
    z: float = 1.0
    query_mode: str = "point"
    prose_update: bool = False
    ring_cap: Optional[int] = None
    peel_floor: Optional[int] = None

    def __post_init__(self):
        if self.s_r < 1:
            raise ValueError("s_r must be at least 1")
        if self.query_mode not in ("point", "pair"):
            raise ValueError("query_mode must be 'point' or 'pair'")
        if self.z < 1:
            raise ValueError("z must be at least 1")

    @property
    def F(self) -> float:
        return 2.0 * self.C0

    @classmethod
    def paper(cls, n: int, k: int, epsilon: float, C0: float = 5.0, z: float = 1.0,
              rescale_epsilon: bool = False, beta: float = 2.0, **kw) -> "CoresetParams":
        lg = _log2c(n)
        eps = epsilon / (15 * beta * C0 ** 3 * lg) if rescale_epsilon else epsilon
        return cls(epsilon=eps, C0=C0, preset="paper", z=z,
                   s_r=math.ceil(100 * C0 * k * lg ** 3 / eps ** 3),
                   heavy_threshold=math.ceil(80 * C0 * k * lg ** 2 / eps ** 3),
                   update_threshold=math.ceil(30 * k * lg ** 2 / eps ** 2),
                   max_iters=10 * lg ** 2, **kw)

    @classmethod
    def desk(cls, n: int, k: int, epsilon: float, C0: float = 2.0, z: float = 1.0, lam: float = 2.0,
             factor: float = 640.0, rescale_epsilon: bool = False, beta: float = 2.0,
             **kw) -> "CoresetParams":
        """Full-preset formulas with log n replaced by ``lam`` and leading constants divided by ``factor``."""
        eps = epsilon / (15 * beta * C0 ** 3 * lam) if rescale_epsilon else epsilon
        return cls(epsilon=eps, C0=C0, preset="desk", z=z,
                   s_r=max(1, math.ceil(100 * C0 * k * lam ** 3 / eps ** 3 / factor)),
                   heavy_threshold=max(1, math.ceil(80 * C0 * k * lam ** 2 / eps ** 3 / factor)),
                   update_threshold=max(1, math.ceil(30 * k * lam ** 2 / eps ** 2 / factor)),
                   max_iters=max(1, math.ceil(10 * lam ** 2)), **kw)

    @classmethod
    def from_preset(cls, preset: str, n: int, k: int, epsilon: float, **kw) -> "CoresetParams":
        if preset == "paper":
            return cls.paper(n, k, epsilon, **kw)
        if preset == "desk":
            return cls.desk(n, k, epsilon, **kw)
        raise ValueError(f"unknown preset {preset!r}")

    def with_(self, **kw) -> "CoresetParams":
        return replace(self, **kw)


# ---------------------------------------------------------------------------
# outputs


@dataclass
class WeightedCoreset:
    indices: np.ndarray
    weights: np.ndarray
    provenance: list
    groups: Optional[dict] = None

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.indices.shape != self.weights.shape or len(self.provenance) != self.indices.size:
            raise ValueError("indices, weights and provenance must align")
        if self.weights.size and not np.all(self.weights > 0):
            raise ValueError("coreset weights must be positive")

    @property
    def size(self) -> int:
        return int(self.indices.size)

    @property
    def total_weight(self) -> float:
        return float(math.fsum(self.weights.tolist()))

    def to_records(self) -> list:
        recs = []
        for t in range(self.size):
            rec = {"index": int(self.indices[t]), "weight": float(self.weights[t]),
                   "provenance": self.provenance[t]}
            if self.groups is not None:
                rec["groups"] = {a: int(v[t]) for a, v in sorted(self.groups.items())}
            recs.append(rec)
        return recs

    def to_json(self) -> str:
        return json.dumps(self.to_records(), sort_keys=True)

    @classmethod
    def from_records(cls, recs) -> "WeightedCoreset":
        groups = None
        if recs and "groups" in recs[0]:
            groups = {a: np.array([r["groups"][a] for r in recs], dtype=np.int64) for a in recs[0]["groups"]}
        return cls([r["index"] for r in recs], [r["weight"] for r in recs],
                   [r["provenance"] for r in recs], groups)

    @classmethod
    def empty(cls) -> "WeightedCoreset":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0), [])


class _Builder:
    def __init__(self):
        self.idx, self.w, self.prov = [], [], []

    def add(self, items, tag):
        for i, wt in items:
            if wt > 0:
                self.idx.append(int(i))
                self.w.append(float(wt))
                self.prov.append(tag)

    def build(self) -> WeightedCoreset:
        return WeightedCoreset(np.array(self.idx, dtype=np.int64), np.array(self.w), list(self.prov))


@dataclass
class RunTrace:
    records: list = field(default_factory=list)

    def add(self, **rec):
        self.records.append(rec)

    def for_center(self, i):
        return [r for r in self.records if r["center"] == i]

    def soft_failures(self):
        return [r for r in self.records if r.get("soft_failure")]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


# ---------------------------------------------------------------------------
# building blocks


def coreset_update(S_est, S_w, surviving: float, s_r: int, est_weights=None, w_weights=None,
                   est_fraction: float = 1 / 3, update_threshold: int = 0, prose: bool = False,
                   m_tilde: Optional[float] = None):
    """Re-weight one ring's samples.

    ``S_est`` is the ring's share of the estimation part of the iteration
    sample, which holds ``est_fraction * s_r`` draws in total, and ``S_w``
    the ring's remaining draws. The ring mass is estimated as
    ``m~ = |P~| / (est_fraction * s_r) * w(S_est)`` and split over ``S_w`` in
    proportion to point weight; ``prose=True`` splits it over the whole ring
    sample instead. Returns ``(entries, m~)`` with ``(index, weight)`` entries.
    """
    S_est = np.asarray(S_est, dtype=np.int64)
    S_w = np.asarray(S_w, dtype=np.int64)
    ew = np.ones(S_est.size) if est_weights is None else np.asarray(est_weights, dtype=float)
    ww = np.ones(S_w.size) if w_weights is None else np.asarray(w_weights, dtype=float)
    if S_est.size + S_w.size < update_threshold:
        raise PreconditionError(f"ring sample of size {S_est.size + S_w.size} is below the update "
                                f"threshold {update_threshold}")
    if m_tilde is None:
        m_tilde = surviving / (est_fraction * s_r) * float(ew.sum()) if S_est.size else 0.0
    if m_tilde <= 0:
        return [], 0.0
    if prose or S_w.size == 0:
        targets, tw = np.concatenate([S_est, S_w]), np.concatenate([ew, ww])
    else:
        targets, tw = S_w, ww
    share = m_tilde / float(tw.sum())
    return [(int(x), float(share * wx)) for x, wx in zip(targets, tw)], float(m_tilde)


def split_for_estimate(n_draws: int) -> np.ndarray:
    """Mask of the estimation part: the first third (rounded up) of the draws."""
    return np.arange(n_draws) < math.ceil(n_draws / 3)


def _anchor_set(env, center, cands, cand_d, floor, mode):
    """``floor`` candidates nearest the center, plus the center, made strong-known."""
    order = np.argsort(cand_d, kind="stable")
    chosen = np.asarray(cands, dtype=np.int64)[order[:max(0, floor)]]
    S = np.unique(np.concatenate([[center], chosen]))
    env.reveal_set(S, mode)
    return S


def peel(env: OracleEnv, center: int, survivors, anchors, radius: float, mode: str = "point") -> np.ndarray:
    """Survivors whose robust estimated distance to ``anchors`` is at most ``radius``."""
    survivors = np.asarray(survivors, dtype=np.int64)
    if survivors.size == 0:
        return survivors
    env.reveal_set(anchors, mode)
    est = estimate_distances_to_set(env, survivors, anchors, floor=1)
    return survivors[est <= radius]


def conservative_peel(env: OracleEnv, center: int, survivors, anchors, R: float,
                      mode: str = "point") -> np.ndarray:
    return peel(env, center, survivors, anchors, R, mode)


# ---------------------------------------------------------------------------
# main driver


def base_radius(est_cost: float, beta: float, m: int, z: float) -> float:
    if m == 0 or est_cost <= 0:
        return 0.0
    return (est_cost / (beta * m)) ** (1.0 / z)


def _strong_distances(env, center, S, mode):
    if mode == "point":
        env.strong_point_query(S)
        env.strong_point_query(center)
        return np.asarray(env.exact_distance(S, np.full(S.shape, center)), dtype=float)
    return env.strong_pair_query(S, np.full(S.shape, center))


def _center_rng(env, seed, tag, i):
    base = env.seed if seed is None else seed
    return np.random.default_rng(np.random.SeedSequence([int(base) & 0xFFFFFFFF, tag, i]))


def build_kz_coreset(env: OracleEnv, wc: WeakClustering, params: CoresetParams, seed: Optional[int] = None):
    """Heavy-ring sampling with peeling, per weak-clustering center.

    Returns ``(coreset, ledger, trace)``. The control flow does not depend on
    ``z``; only the base radius does.
    """
    z = params.z
    F = params.F
    m = int(wc.indices.size)
    R = base_radius(wc.est_cost, wc.beta, m, z)
    out = _Builder()
    trace = RunTrace()
    floor = params.peel_floor if params.peel_floor is not None else env.sample_floor
    weights = env.ds.weights
    L = math.ceil(math.log(max(wc.beta * m, 2.0)) / math.log(F)) + 2
    if params.ring_cap is not None:
        L = min(L, params.ring_cap)
    warned = False

    with env.phase("coreset-loop"):
        for i, c in enumerate(wc.centers.tolist()):
            members = wc.members(i)
            if R <= 0:
                # degenerate: every point sits on its center
                out.add([(c, float(weights[members].sum()))], f"center({i})")
                trace.add(center=i, iteration=0, j_star=None, peel="degenerate", before=int(members.size),
                          after=0, removed=members.tolist(), rings_updated=[], soft_failure=False)
                continue
            rng = _center_rng(env, seed, 0xC0DE, i)
            ring = RingPartition(center=c, R=R, F=F, L=L)
            surv = members.copy()
            for r in range(params.max_iters):
                if surv.size == 0:
                    break
                before = int(surv.size)
                if surv.size <= params.s_r:
                    d = _strong_distances(env, c, surv, params.query_mode)
                    lab = ring.index(d)
                    if not warned and lab.max() > L:
                        warnings.warn(f"distance beyond {L} rings; aspect ratio larger than assumed")
                        warned = True
                    updated = []
                    for ell in np.unique(lab).tolist():
                        if ell in ring.processed:
                            continue
                        S_l = surv[lab == ell]
                        if S_l.size >= params.update_threshold:
                            est = split_for_estimate(S_l.size)
                            items, _ = coreset_update(S_l[est], S_l[~est], before, before,
                                                      weights[S_l[est]], weights[S_l[~est]],
                                                      prose=params.prose_update,
                                                      m_tilde=float(weights[S_l].sum()))
                            updated.append(ell)
                        else:
                            items = [(int(x), float(weights[x])) for x in S_l]
                        out.add(items, f"ring({i},{ell})")
                    ring.processed.update(np.unique(lab).tolist())
                    trace.add(center=i, iteration=r, j_star=None, peel="exact", before=before, after=0,
                              removed=np.sort(surv).tolist(), rings_updated=updated, peel_ring=None,
                              soft_failure=False)
                    surv = surv[:0]
                    break

                S = rng.choice(surv, size=params.s_r, replace=False)
                d = _strong_distances(env, c, S, params.query_mode)
                lab = ring.index(d)
                if not warned and lab.max() > L:
                    warnings.warn(f"distance beyond {L} rings; aspect ratio larger than assumed")
                    warned = True
                counts = np.bincount(lab)
                heavy = np.nonzero(counts >= params.heavy_threshold)[0]
                if heavy.size:
                    j_star = int(heavy.max())
                else:
                    j_star = int(np.flatnonzero(counts == counts.max()).max())
                close = S[(lab == 0) & (d <= R / (2 * params.C0))]
                n0 = int((lab == 0).sum())
                conservative = j_star == 0 and 0 not in ring.processed and close.size * 2 > n0
                # a conservative peel leaves ring 1 in place, so ring 1 waits for a later iteration
                top = 0 if conservative else j_star + 1
                est = split_for_estimate(S.size)
                frac = est.sum() / S.size
                updated = []
                for ell in range(top + 1):
                    if ell in ring.processed or ell >= counts.size:
                        continue
                    if counts[ell] >= params.update_threshold:
                        a = S[(lab == ell) & est]
                        b = S[(lab == ell) & ~est]
                        items, _ = coreset_update(a, b, before, S.size, weights[a], weights[b], frac,
                                                  params.update_threshold, prose=params.prose_update)
                        out.add(items, f"ring({i},{ell})")
                        updated.append(ell)

                if conservative:
                    anchors = _anchor_set(env, c, close, d[np.isin(S, close)], floor, params.query_mode)
                    removed = conservative_peel(env, c, surv, anchors, R, params.query_mode)
                    kind, peel_ring = "conservative", 0
                    ring.processed.add(0)
                else:
                    inner = lab <= j_star
                    anchors = _anchor_set(env, c, S[inner], d[inner], floor, params.query_mode)
                    removed = peel(env, c, surv, anchors, ring.outer_radius(j_star + 1), params.query_mode)
                    kind, peel_ring = "normal", j_star + 1
                    ring.processed.update(range(j_star + 2))
                surv = np.setdiff1d(surv, removed, assume_unique=True)
                trace.add(center=i, iteration=r, j_star=j_star, peel=kind, before=before, after=int(surv.size),
                          removed=np.sort(removed).tolist(), rings_updated=updated, peel_ring=peel_ring,
                          anchors=anchors.tolist(), soft_failure=False)
            if surv.size:
                trace.add(center=i, iteration=params.max_iters, j_star=None, peel="none", before=int(surv.size),
                          after=int(surv.size), removed=[], rings_updated=[], peel_ring=None, soft_failure=True)
    return out.build(), env.ledger, trace


def build_unconstrained_coreset(env: OracleEnv, wc: WeakClustering, params: CoresetParams,
                                seed: Optional[int] = None):
    """k-median coreset (``z`` = 1)."""
    if params.z != 1:
        raise ValueError("build_unconstrained_coreset is the z = 1 case; use build_kz_coreset")
    return build_kz_coreset(env, wc, params, seed=seed)
