"""Synthetic data, subsampling, baselines and the relative-cost experiment."""

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import metric
from .coreset import CoresetParams, WeightedCoreset, build_unconstrained_coreset
from .evaluation import FairnessBounds, InfeasibleError, clustering_cost, fair_cost
from .fair import FairParams, build_fair_coreset
from .metric import Dataset
from .oracle import OracleEnv
from .weak import plugin_exact_clustering, weak_kz_clustering

METHODS = ("ours-unconstrained", "ours-fair", "uniform-baseline")


def child_seed(master: int, *path: int) -> int:
    """Deterministic 32-bit seed derived from ``master`` and a path of integers."""
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFF, *[int(p) for p in path]])
    return int(ss.generate_state(1)[0])


# ---------------------------------------------------------------------------
# generators


def gaussian_blobs(sizes, separation: float = 10.0, dim: int = 2, spread: float = 1.0, seed: int = 0,
                   group_spec: Optional[dict] = None, group_probs: Optional[dict] = None) -> Dataset:
    """Isotropic Gaussian clusters with centers ``separation`` apart along the first axis.

    ``group_spec`` maps attribute name to group count; labels are drawn
    independently per point, using ``group_probs[attr]`` when given.
    """
    rng = np.random.default_rng(child_seed(seed, 1))
    sizes = [int(s) for s in sizes]
    parts = []
    for c, s in enumerate(sizes):
        mu = np.zeros(dim)
        mu[0] = separation * c
        parts.append(rng.normal(scale=spread, size=(s, dim)) + mu)
    pts = np.vstack(parts)
    groups = {}
    for attr, count in (group_spec or {}).items():
        p = None if group_probs is None or attr not in group_probs else np.asarray(group_probs[attr], float)
        groups[attr] = rng.choice(count, size=pts.shape[0], p=p)
    return Dataset(points=pts, groups=groups)


def planted_rings(ring_sizes, R: float = 1.0, F: float = 2.0, dim: int = 2, centers: int = 1,
                  separation: Optional[float] = None, seed: int = 0):
    """Points placed in exact rings around planted centers.

    Ring 0 holds radii in (0, R], ring j radii in (F^(j-1) R, F^j R]. The
    planted centers are included as the first points. Returns the dataset and
    the planted ring label of every point (-1 for the centers).
    """
    rng = np.random.default_rng(child_seed(seed, 2))
    ring_sizes = [int(s) for s in ring_sizes]
    outer = R * F ** (len(ring_sizes) - 1)
    sep = 4 * outer if separation is None else separation
    pts, labels = [], []
    for c in range(centers):
        mu = np.zeros(dim)
        mu[0] = sep * c
        pts.append(mu[None, :])
        labels.append([-1])
    for c in range(centers):
        mu = np.zeros(dim)
        mu[0] = sep * c
        for j, s in enumerate(ring_sizes):
            lo = 0.0 if j == 0 else R * F ** (j - 1)
            hi = R * F ** j
            # keep clear of the boundaries so float rounding cannot move a point across
            rad = rng.uniform(lo + 0.02 * (hi - lo), hi - 0.02 * (hi - lo), size=s)
            dirs = rng.normal(size=(s, dim))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            pts.append(mu + dirs * rad[:, None])
            labels.append([j] * s)
    return Dataset(points=np.vstack(pts)), np.concatenate(labels).astype(np.int64)


def duplicate_heavy(n: int, distinct: int = 3, dim: int = 2, seed: int = 0, scale: float = 10.0) -> Dataset:
    rng = np.random.default_rng(child_seed(seed, 3))
    sites = rng.normal(scale=scale, size=(distinct, dim))
    return Dataset(points=sites[rng.integers(0, distinct, size=n)])


def imbalanced(sizes=(1800, 200), separation: float = 10.0, dim: int = 2, seed: int = 0,
               group_share: float = 0.7) -> Dataset:
    """Two clusters of unequal size with one binary group attribute."""
    return gaussian_blobs(sizes, separation=separation, dim=dim, seed=seed, group_spec={"group": 2},
                          group_probs={"group": [group_share, 1 - group_share]})


GENERATORS = {
    "gaussian-blobs": gaussian_blobs,
    "planted-rings": planted_rings,
    "duplicate-heavy": duplicate_heavy,
    "imbalanced": imbalanced,
}


# ---------------------------------------------------------------------------
# subsampling and baselines


def _meyerson_pass(ds, cfg, order, u, tau):
    mind = np.full(ds.n, np.inf)
    kept = []
    for x in order.tolist():
        if kept and u[x] >= min(1.0, mind[x] / tau):
            continue
        kept.append(x)
        mind = np.minimum(mind, metric.distances_from(ds, cfg, x, np.arange(ds.n)))
    return kept


def meyerson_subsample(ds: Dataset, target: int, seed: int = 0, cfg=None, tol: float = 0.2,
                       max_steps: int = 40) -> np.ndarray:
    """Streaming subsample that favours isolated points.

    Points arrive in random order; the first is kept and each later point is
    kept with probability ``min(1, d(x, S) / tau)``. ``tau`` is doubled (then
    bisected) until the kept count is within ``tol`` of ``target``.
    """
    if not 1 <= target <= ds.n:
        raise ValueError("target must lie in [1, n]")
    if target == ds.n:
        return np.arange(ds.n)
    cfg = cfg if cfg is not None else metric.default_config(ds)
    rng = np.random.default_rng(child_seed(seed, 4))
    order = rng.permutation(ds.n)
    u = rng.random(ds.n)
    lo_ok, hi_ok = (1 - tol) * target, (1 + tol) * target
    sample = order[: min(ds.n, 200)]
    scale = float(np.median(metric.distance_block(ds, cfg, sample, sample))) or 1.0
    tau = scale * 1e-3
    lo, hi = None, None
    best = None
    for _ in range(max_steps):
        kept = _meyerson_pass(ds, cfg, order, u, tau)
        if best is None or abs(len(kept) - target) < abs(len(best) - target):
            best = kept
        if lo_ok <= len(kept) <= hi_ok:
            break
        if len(kept) > hi_ok:
            lo = tau
            tau = tau * 2 if hi is None else math.sqrt(tau * hi)
        else:
            hi = tau
            if lo is None:
                # even tiny tau keeps too few: the data has few distinct points
                if tau <= scale * 1e-9:
                    break
                tau = tau / 2
            else:
                tau = math.sqrt(lo * tau)
    return np.sort(np.array(best, dtype=np.int64))


def uniform_baseline(ds: Dataset, size: int, seed: int = 0) -> WeightedCoreset:
    if not 1 <= size <= ds.n:
        raise ValueError("size must lie in [1, n]")
    rng = np.random.default_rng(child_seed(seed, 5))
    idx = np.sort(rng.choice(ds.n, size=size, replace=False))
    w = np.full(size, float(ds.weights.sum()) / size)
    groups = {a: lab[idx] for a, lab in ds.groups.items()} or None
    return WeightedCoreset(idx, w, ["uniform"] * size, groups)


# ---------------------------------------------------------------------------
# experiment


@dataclass
class ExperimentSpec:
    source: str = "imbalanced"          # generator name or CSV path
    source_args: dict = field(default_factory=dict)
    group_cols: tuple = ()
    subsample_target: Optional[int] = None
    ks: tuple = (2, 4, 6)
    epsilon: float = 0.5
    z: float = 1.0
    corruption_prob: float = 1 / 3
    adversary: str = "small-value"
    methods: tuple = ("ours-fair", "uniform-baseline")
    repetitions: int = 10
    coreset_size: int = 100
    alpha: float = 0.1
    beta: float = 1.0
    preset: str = "desk"
    seed: int = 0
    output_dir: Optional[str] = None

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if any(int(k) < 1 for k in self.ks):
            raise ValueError("every k must be at least 1")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")


def load_source(spec: ExperimentSpec) -> Dataset:
    if spec.source in GENERATORS:
        args = dict(spec.source_args)
        args.setdefault("seed", spec.seed)
        out = GENERATORS[spec.source](**args)
        return out[0] if isinstance(out, tuple) else out
    return metric.load_dataset(spec.source, group_cols=spec.group_cols)


def _relative(full, core):
    if full == 0:
        return 0.0 if core == 0 else math.inf
    return abs(full - core) / full


def build_method(method: str, ds: Dataset, k: int, spec: ExperimentSpec, seed: int):
    """Coreset for one method plus its query ledger (``None`` for the baseline)."""
    if method == "uniform-baseline":
        return uniform_baseline(ds, min(spec.coreset_size, ds.n), seed), None
    env = OracleEnv(ds, corruption_prob=spec.corruption_prob, adversary=spec.adversary, seed=seed)
    if method == "ours-fair":
        fp = FairParams.from_preset(spec.preset, ds.n, k, spec.epsilon)
        cs, ledger, _ = build_fair_coreset(env, k, fp, target_size=spec.coreset_size, seed=seed)
        return cs, ledger
    wc = weak_kz_clustering(env, k, z=1)
    params = CoresetParams.from_preset(spec.preset, ds.n, k, spec.epsilon)
    cs, ledger, _ = build_unconstrained_coreset(env, wc, params, seed=seed)
    if ds.groups:
        cs.groups = {a: lab[cs.indices] for a, lab in ds.groups.items()}
    return cs, ledger


def _mean_err(vals):
    arr = np.asarray([v for v in vals if np.isfinite(v)], dtype=float)
    if arr.size == 0:
        return float("nan"), float("nan")
    err = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
    return float(arr.mean()), err


def run_experiment(spec: ExperimentSpec, ds: Optional[Dataset] = None) -> dict:
    """Relative plain and fair cost of each method's coreset, averaged over repetitions.

    When ``spec.output_dir`` is set, writes ``report.json``, ``curves.csv``
    and ``relative_cost.png`` there.
    """
    ds = load_source(spec) if ds is None else ds
    if spec.subsample_target is not None and spec.subsample_target < ds.n:
        ds = ds.subset(meyerson_subsample(ds, spec.subsample_target, child_seed(spec.seed, 10)))
    bounds = FairnessBounds.uniform(ds, spec.alpha, spec.beta) if ds.groups else None
    rows = []
    runs = []
    for k in spec.ks:
        k = int(k)
        per = {m: {"plain": [], "fair": [], "strong_points": [], "weak": [], "size": []} for m in spec.methods}
        for rep in range(spec.repetitions):
            centers = plugin_exact_clustering(ds, k, spec.z, seed=child_seed(spec.seed, 20, k, rep)).centers
            full_plain = clustering_cost(ds, centers, spec.z)
            full_fair = fair_cost(ds, centers, bounds, spec.z).cost if bounds is not None else None
            for mi, method in enumerate(spec.methods):
                cs, ledger = build_method(method, ds, k, spec, child_seed(spec.seed, 30, k, rep, mi))
                core_plain = clustering_cost(ds, centers, spec.z, indices=cs.indices, weights=cs.weights)
                rel_plain = _relative(full_plain, core_plain)
                rel_fair = float("nan")
                soft = None
                if bounds is not None:
                    try:
                        core_fair = fair_cost(ds, centers, bounds, spec.z, indices=cs.indices,
                                              weights=cs.weights, groups=cs.groups).cost
                        rel_fair = _relative(full_fair, core_fair)
                    except InfeasibleError as exc:
                        soft = str(exc)
                led = ledger.to_dict() if ledger is not None else {"weak": 0, "strong_points": 0, "strong_pairs": 0}
                per[method]["plain"].append(rel_plain)
                per[method]["fair"].append(rel_fair)
                per[method]["strong_points"].append(led["strong_points"])
                per[method]["weak"].append(led["weak"])
                per[method]["size"].append(cs.size)
                runs.append({"k": k, "repetition": rep, "method": method, "rel_plain": rel_plain,
                             "rel_fair": rel_fair, "coreset_size": cs.size, "ledger": led,
                             "soft_failure": soft})
        for method in spec.methods:
            p_mean, p_err = _mean_err(per[method]["plain"])
            f_mean, f_err = _mean_err(per[method]["fair"])
            rows.append({"method": method, "k": k, "plain_mean": p_mean, "plain_stderr": p_err,
                         "fair_mean": f_mean, "fair_stderr": f_err,
                         "strong_points_mean": float(np.mean(per[method]["strong_points"])),
                         "weak_mean": float(np.mean(per[method]["weak"])),
                         "size_mean": float(np.mean(per[method]["size"]))})
    spec_dict = asdict(spec)
    spec_dict.pop("output_dir", None)
    report = {"spec": spec_dict, "n": ds.n, "summary": rows, "runs": runs}
    if spec.output_dir:
        write_report(report, spec.output_dir)
    return report


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n"


def atomic_write(path, data, mode="w") -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def curves_csv(rows) -> str:
    buf = io.StringIO()
    cols = ["method", "k", "plain_mean", "plain_stderr", "fair_mean", "fair_stderr",
            "strong_points_mean", "weak_mean", "size_mean"]
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: (repr(r[c]) if isinstance(r[c], float) else r[c]) for c in cols})
    return buf.getvalue()


def write_report(report: dict, out_dir) -> dict:
    from .plotting import plot_relative_cost

    paths = {"json": os.path.join(out_dir, "report.json"), "csv": os.path.join(out_dir, "curves.csv"),
             "png": os.path.join(out_dir, "relative_cost.png")}
    atomic_write(paths["json"], dumps(report))
    atomic_write(paths["csv"], curves_csv(report["summary"]))
    atomic_write(paths["png"], plot_relative_cost(report["summary"]), mode="wb")
    return paths
