"""Experiment families behind the CLI. Each returns plain row dicts so the
same code serves the command line and the test suite."""

import logging
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import ConfigError, RunConfig
from .features import build_landmarks, nystrom_approx, nystrom_features, stratified_indices
from .kernels import gram, linear, rbf, bandwidth_heuristic
from .training import build_dataset, resolve_kernel, train

log = logging.getLogger(__name__)

AXIS_FIELD = {"m": "m", "D": "D", "stacks": "stacks"}
AXIS_ARCHS = {"m": ("nystrom", "multikernel", "multinystrom"), "D": ("dense",), "stacks": ("deepfried",)}
AXIS_DEFAULTS = {"m": (2, 4, 8, 16, 32, 64, 128), "D": (2, 4, 8, 16, 32, 64, 128, 1024),
                 "stacks": (1, 3, 5, 7)}

SMALLSET_ARCHS = {
    "dense": {"type": "dense", "D": 1024},
    "deepfried": {"type": "deepfried", "stacks": 5, "adaptive": True},
    "nystrom-linear": {"type": "nystrom", "kernel": "linear", "adaptive": True, "landmark_pool": "all"},
    "nystrom-rbf": {"type": "nystrom", "kernel": "rbf", "adaptive": True, "landmark_pool": "all"},
    "nystrom-chi2": {"type": "nystrom", "kernel": "chi2exp", "adaptive": True, "landmark_pool": "all"},
}


def seed_text(seeds):
    return f"{seeds.data}:{seeds.init}:{seeds.landmarks}"


def _run_all(fn, jobs, threads):
    """Map fn over jobs, in order; parallel across processes when asked."""
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, jobs))


def _train_job(cfg):
    res = train(cfg)
    return res.trace, res.val_acc, res.test_acc, res.trainable_params, res.landmark_mem, res.best_epoch


def run_train(cfg, repeats=1, threads=1, keep_stack=False):
    """Per-epoch rows for each repeat; also returns the first run's result
    when ``keep_stack`` is set (for checkpointing)."""
    rows, first = [], None
    jobs = [cfg.replace(seed=cfg.seed.offset(r)) for r in range(repeats)]
    if keep_stack:
        first = train(jobs[0])
        outs = [(first.trace, first.val_acc, first.test_acc, first.trainable_params,
                 first.landmark_mem, first.best_epoch)]
        outs += _run_all(_train_job, jobs[1:], threads)
    else:
        outs = _run_all(_train_job, jobs, threads)
    for r, (job, (trace, _, _, params, mem, _)) in enumerate(zip(jobs, outs)):
        for t in trace:
            rows.append({"run_id": r, "seed": seed_text(job.seed), "epoch": t["epoch"],
                         "train_loss": t["train_loss"], "val_acc": t["val_acc"],
                         "test_acc": t["test_acc"], "trainable_params": params, "landmark_mem": mem})
    return rows, first


def run_sweep(cfg, axis="m", values=None, repeats=10, threads=1):
    if axis not in AXIS_ARCHS:
        raise ConfigError(f"unknown sweep axis {axis!r}")
    if cfg.architecture.type not in AXIS_ARCHS[axis]:
        raise ConfigError(f"axis {axis} does not apply to architecture {cfg.architecture.type}",
                          "architecture.type")
    values = tuple(values or AXIS_DEFAULTS[axis])
    jobs, keys = [], []
    for v in values:
        for r in range(repeats):
            jobs.append(cfg.replace(architecture={AXIS_FIELD[axis]: v}, seed=cfg.seed.offset(r)))
            keys.append((v, r))
    outs = _run_all(_train_job, jobs, threads)
    rows = []
    for (v, r), job, (trace, val, test, params, mem, best) in zip(keys, jobs, outs):
        rows.append({"run_id": len(rows), "arch": cfg.architecture.type,
                     "adaptive": cfg.architecture.adaptive, "axis": axis, "value": v, "repeat": r,
                     "seed": seed_text(job.seed), "epochs": len(trace), "best_epoch": best,
                     "val_acc": val, "test_acc": test, "trainable_params": params,
                     "landmark_mem": mem})
    return rows


def summarize(rows, keys, metric="test_acc"):
    """Mean, std and median of ``metric`` grouped by ``keys``; first-seen order."""
    groups = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in keys), []).append(row)
    out = []
    for k, grp in groups.items():
        vals = np.array([g[metric] for g in grp], dtype=np.float64)
        rec = dict(zip(keys, k))
        rec.update({"n": len(vals), "mean": float(vals.mean()), "std": float(vals.std()),
                    "median": float(np.median(vals))})
        if "trainable_params" in grp[0]:
            rec["trainable_params"] = grp[0]["trainable_params"]
        out.append(rec)
    return out


def run_smallset(cfg, per_class=(5, 20), repeats=30, archs=None, threads=1):
    archs = list(archs or SMALLSET_ARCHS)
    for a in archs:
        if a not in SMALLSET_ARCHS:
            raise ConfigError(f"unknown architecture {a!r}; choose from {sorted(SMALLSET_ARCHS)}")
    jobs, keys = [], []
    for a in archs:
        for k in per_class:
            for r in range(repeats):
                arch = dict(SMALLSET_ARCHS[a])
                if arch["type"] == "nystrom":
                    arch["m"] = cfg.architecture.m
                jobs.append(cfg.replace(architecture=arch, dataset={"per_class": k},
                                        seed=cfg.seed.offset(r)))
                keys.append((a, k, r))
    outs = _run_all(_train_job, jobs, threads)
    rows = []
    for (a, k, r), job, (trace, val, test, params, mem, best) in zip(keys, jobs, outs):
        rows.append({"run_id": len(rows), "arch": a, "per_class": k, "repeat": r,
                     "seed": seed_text(job.seed), "labeled_rows": k * _n_classes(job),
                     "epochs": len(trace), "val_acc": val, "test_acc": test,
                     "trainable_params": params, "landmark_mem": mem})
    return rows


def _n_classes(cfg):
    if cfg.dataset.kind == "blobs":
        return cfg.dataset.classes
    return build_dataset(cfg.dataset, cfg.seed.data).n_classes


def run_mkl(cfg, scales=(0.01, 0.1, 1.0, 10.0, 100.0), ms=(2, 4, 8), repeats=10, threads=1):
    """Single-bandwidth RBF Nystrom models against their concatenation.

    Bandwidths are given as multiples of the heuristic sigma.
    """
    if len(scales) < 2:
        raise ConfigError("need at least two bandwidths in the grid")
    texts = [f"rbf:scale={s!r}" for s in scales]
    jobs, keys = [], []
    for m in ms:
        for r in range(repeats):
            seeds = cfg.seed.offset(r)
            for s, t in zip(scales, texts):
                jobs.append(cfg.replace(architecture={"type": "nystrom", "kernel": t, "m": m},
                                        seed=seeds))
                keys.append((m, repr(s), r))
            jobs.append(cfg.replace(architecture={"type": "multikernel", "kernels": tuple(texts), "m": m},
                                    seed=seeds))
            keys.append((m, "fused", r))
    outs = _run_all(_train_job, jobs, threads)
    rows = []
    for (m, label, r), job, (trace, val, test, params, mem, best) in zip(keys, jobs, outs):
        width = m * (len(scales) if label == "fused" else 1)
        rows.append({"run_id": len(rows), "m": m, "sigma_scale": label, "repeat": r,
                     "seed": seed_text(job.seed), "width": width, "epochs": len(trace),
                     "val_acc": val, "test_acc": test, "trainable_params": params})
    return rows


def run_embed2d(cfg, max_rows=1000):
    """Two-landmark Nystrom coordinates for a random sample of test rows."""
    a = cfg.architecture
    if a.type != "nystrom" or a.m != 2:
        raise ConfigError("embed2d needs architecture.type=nystrom and architecture.m=2",
                          "architecture.m")
    ds = build_dataset(cfg.dataset, cfg.seed.data)
    x_tr, y_tr = ds.train
    idx = stratified_indices(y_tr, 2, cfg.seed.landmarks)
    k = resolve_kernel(a.kernel, ds.landmark_pool()[0], cfg.seed.landmarks)
    ls = build_landmarks(x_tr[idx], k, idx, cfg.seed.landmarks)
    x_te, y_te = ds.test
    if len(y_te) < max_rows:
        log.warning("test set has %d rows (< %d); using all of them", len(y_te), max_rows)
    rng = np.random.default_rng([cfg.seed.data, 3])
    pick = np.sort(rng.choice(len(y_te), size=min(max_rows, len(y_te)), replace=False))
    phi = nystrom_features(ls, x_te[pick])
    return [{"phi1": float(p[0]), "phi2": float(p[1]), "label": int(y)} for p, y in zip(phi, y_te[pick])]


def run_gramcheck(seed=0):
    """Feature-map invariants as (check, value, tolerance, passed) rows."""
    from .features import fastfood_dense, fastfood_project, make_fastfood
    rng = np.random.default_rng(seed)
    rows = []

    def add(name, value, tol, ok=None):
        rows.append({"check": name, "value": float(value), "tolerance": float(tol),
                     "passed": bool(value <= tol if ok is None else ok)})

    x = rng.standard_normal((200, 10))
    k = rbf(bandwidth_heuristic(x, seed=seed))
    phi = nystrom_features(build_landmarks(x, k), x)
    add("nystrom_exact_full_landmarks", np.abs(phi @ phi.T - gram(k, x, x)).max(), 1e-8)

    basis = rng.standard_normal((16, 64))
    xs = rng.standard_normal((300, 16)) @ basis
    kfull = gram(linear(), xs, xs)
    err = np.abs(nystrom_approx(linear(), xs, xs[:16]) - kfull).max() / np.abs(kfull).max()
    add("low_rank_recovery_rel", err, 1e-6)

    y = rng.standard_normal((120, 6))
    ky = rbf(bandwidth_heuristic(y, seed=seed))
    lidx = rng.choice(120, 12, replace=False)
    approx = nystrom_approx(ky, y, y[lidx])
    add("landmark_block_exact", np.abs(approx[np.ix_(lidx, lidx)] - gram(ky, y[lidx], y[lidx])).max(), 1e-8)
    add("approx_symmetric", np.abs(approx - approx.T).max(), 1e-10)
    lam = np.linalg.eigvalsh(approx)
    add("approx_psd", max(0.0, -lam.min() / lam.max()), 1e-8)

    worst = 0.0
    for s in range(50):
        for dp in (64, 256):
            blk = make_fastfood(dp, 1.0 + s % 3, [seed, s, dp])
            v = rng.standard_normal((4, dp))
            worst = max(worst, np.abs(fastfood_project(blk, v) - v @ fastfood_dense(blk).T).max())
    add("fastfood_fwht_vs_dense", worst, 1e-10)
    return rows
