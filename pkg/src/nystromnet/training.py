"""Model assembly from a RunConfig and the minibatch Adam training loop."""

import logging
import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import data as dio
from .config import RunConfig
from .features import build_landmarks, make_fastfood, sigma_for_gamma, stratified_indices
from .kernels import KernelSpec, bandwidth_heuristic
from .nn import (Adam, AdaptiveNystromLayer, DenseLayer, FastfoodLayer, LayerStack,
                 MultiKernelLayer, landmark_memory, loss_softmax_xent, param_count)

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


def build_dataset(spec, seed):
    if spec.kind == "blobs":
        ds = dio.make_blobs(spec.n, spec.d, spec.classes, spec.sep, seed)
    elif spec.kind == "csv":
        ds = dio.load_csv(spec.path, seed)
    else:
        ds = dio.load_idx(spec.path, spec.labels_path, seed)
    if spec.extractor_dim > 0:
        fx = dio.FrozenExtractor.make(ds.features.shape[1], spec.extractor_dim, seed, spec.extractor_shift)
        ds = ds.with_features(dio.extract(fx, ds.features))
    if spec.per_class > 0:
        ds = dio.subsample_per_class(ds, spec.per_class, seed)
    return ds


_SCALE = re.compile(r"\s*(rbf|chi2exp)\s*(?::\s*scale\s*=\s*([^\s]+))?\s*")


def resolve_kernel(text, features, seed=0):
    """Turn a config kernel string into a KernelSpec, filling in gamma from
    the bandwidth heuristic when the string does not fix it."""
    m = _SCALE.fullmatch(text)
    if not m:
        return KernelSpec.parse(text)
    chi = m.group(1) == "chi2exp"
    gamma = bandwidth_heuristic(features, seed=seed, metric="chi2" if chi else "sqeuclidean")
    if m.group(2) is not None:
        # sigma = scale * heuristic sigma, with gamma = 1 / sigma
        gamma /= float(m.group(2))
    return KernelSpec("chi2_exp" if chi else "rbf", gamma)


def _landmark_indices(cfg, ds, m, seed):
    """Indices into the landmark pool, plus the pool itself."""
    if cfg.architecture.landmark_pool == "all":
        x, _ = ds.landmark_pool()
        if not 1 <= m <= len(x):
            raise ValueError(f"need 1 <= m <= {len(x)}, got {m}")
        idx = np.sort(np.random.default_rng(seed).choice(len(x), size=m, replace=False))
        return idx, x
    x, y = ds.train
    return stratified_indices(y, m, seed), x


def build_stack(cfg: RunConfig, ds):
    a = cfg.architecture
    s = cfg.seed
    x_tr, _ = ds.train
    d = ds.features.shape[1]
    c = ds.n_classes
    rng = np.random.default_rng([s.init, 0])
    pool_x, _ = ds.landmark_pool()

    if a.type == "dense":
        first = DenseLayer.init(d, a.D, "relu", rng)
    elif a.type == "deepfried":
        gamma = bandwidth_heuristic(pool_x, seed=s.landmarks)
        blocks = [make_fastfood(d, sigma_for_gamma(gamma), [s.init, 1, i]) for i in range(a.stacks)]
        first = FastfoodLayer(blocks, a.adaptive, in_dim=d)
    else:
        idx, pool = _landmark_indices(cfg, ds, a.m, s.landmarks)
        pts = pool[idx]
        if a.type == "nystrom":
            k = resolve_kernel(a.kernel, pool, s.landmarks)
            first = AdaptiveNystromLayer.init(build_landmarks(pts, k, idx, s.landmarks), a.adaptive)
        elif a.type == "multikernel":
            subs = []
            for text in a.kernels:
                k = resolve_kernel(text, pool, s.landmarks)
                subs.append(AdaptiveNystromLayer.init(build_landmarks(pts, k, idx, s.landmarks), a.adaptive))
            first = MultiKernelLayer(subs)
        else:
            bounds = np.linspace(0, d, a.groups + 1).round().astype(int)
            subs, slices = [], []
            for lo, hi in zip(bounds, bounds[1:]):
                k = resolve_kernel(a.kernel, pool[:, lo:hi], s.landmarks)
                subs.append(AdaptiveNystromLayer.init(
                    build_landmarks(pts[:, lo:hi], k, idx, s.landmarks), a.adaptive))
                slices.append(slice(int(lo), int(hi)))
            first = MultiKernelLayer(subs, slices)
    head = DenseLayer.init(first.out_dim, c, "none", rng)
    return LayerStack([first, head])


def accuracy(stack, z, y):
    if len(y) == 0:
        return float("nan")
    return float(np.mean(np.argmax(stack.predict(z, embedded=True), axis=1) == y))


def _evaluate(stack, z, y):
    if len(y) == 0:
        return float("nan"), float("nan")
    logits = stack.predict(z, embedded=True)
    return float(np.mean(np.argmax(logits, axis=1) == y)), loss_softmax_xent(logits, y)[0]


@dataclass
class TrainResult:
    stack: LayerStack
    trace: list = field(default_factory=list)
    best_epoch: int = 0
    val_acc: float = float("nan")
    test_acc: float = float("nan")
    trainable_params: int = 0
    landmark_mem: int = 0


def train(cfg: RunConfig, ds=None, stack=None):
    """Minibatch Adam on mean cross-entropy with early stopping on
    validation accuracy (ties broken by validation loss, so a flat accuracy
    with falling loss still counts as progress). The returned stack holds the best-validation
    weights and ``test_acc`` is measured with them."""
    if ds is None:
        ds = build_dataset(cfg.dataset, cfg.seed.data)
    if stack is None:
        stack = build_stack(cfg, ds)
    o = cfg.optimizer
    (x_tr, y_tr), (x_va, y_va), (x_te, y_te) = ds.train, ds.val, ds.test
    z_tr, z_va, z_te = stack.embed(x_tr), stack.embed(x_va), stack.embed(x_te)
    opt = Adam(lr=o.lr)
    order_rng = np.random.default_rng([cfg.seed.init, 2])
    params = stack.named_params()
    res = TrainResult(stack, trainable_params=param_count(stack), landmark_mem=landmark_memory(stack))
    best = ((-1.0, math.inf), {k: v.copy() for k, v in params.items()})
    n = len(y_tr)
    for epoch in range(1, o.epochs + 1):
        perm = order_rng.permutation(n)
        total = 0.0
        for lo in range(0, n, o.batch_size):
            bi = perm[lo:lo + o.batch_size]
            logits = stack.forward(z_tr[bi], embedded=True)
            loss, dlog = loss_softmax_xent(logits, y_tr[bi])
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}", res.trace)
            total += loss * len(bi)
            grads = stack.backward(dlog)
            if params:
                opt.step(params, grads)
        val_acc, val_loss = _evaluate(stack, z_va, y_va)
        row = {"epoch": epoch, "train_loss": total / max(n, 1),
               "val_acc": val_acc, "test_acc": accuracy(stack, z_te, y_te)}
        res.trace.append(row)
        acc0, loss0 = best[0]
        if val_acc > acc0 or (val_acc == acc0 and val_loss < loss0):
            best = ((val_acc, val_loss), {k: v.copy() for k, v in params.items()})
            res.best_epoch = epoch
        elif o.patience and epoch - res.best_epoch >= o.patience:
            break
    for k, v in best[1].items():
        params[k][...] = v
    res.val_acc = accuracy(stack, z_va, y_va)
    res.test_acc = accuracy(stack, z_te, y_te)
    return res
