import numpy as np
import pytest

from nystromnet.config import RunConfig, Seeds
from nystromnet.nn import param_count
from nystromnet.training import DivergenceError, build_dataset, build_stack, resolve_kernel, train
from nystromnet.kernels import KernelSpec, bandwidth_heuristic

SEPARABLE = RunConfig().replace(dataset={"classes": 2, "sep": 100.0, "n": 400},
                                optimizer={"lr": 1e-2, "epochs": 50})

ARCHS = {
    "dense": {"type": "dense", "D": 32},
    "deepfried": {"type": "deepfried", "stacks": 1, "adaptive": True},
    "nystrom-linear": {"type": "nystrom", "kernel": "linear", "m": 4},
    "nystrom-rbf": {"type": "nystrom", "kernel": "rbf", "m": 4},
    "nystrom-chi2": {"type": "nystrom", "kernel": "chi2exp", "m": 4},
    "multikernel": {"type": "multikernel", "kernels": ("rbf", "linear"), "m": 4},
    "multinystrom": {"type": "multinystrom", "kernel": "rbf", "groups": 4, "m": 4},
}


@pytest.mark.parametrize("name", sorted(ARCHS))
def test_separable_blobs(name):
    res = train(SEPARABLE.replace(architecture=ARCHS[name]))
    assert res.test_acc >= 0.99
    assert len(res.trace) <= 50


def test_ten_class_blobs_m16():
    accs = []
    for r in range(10):
        cfg = RunConfig().replace(dataset={"n": 2000, "d": 32, "classes": 10, "sep": 6.0, "extractor_dim": 0},
                                  architecture={"type": "nystrom", "kernel": "rbf", "m": 16, "adaptive": True},
                                  optimizer={"lr": 1e-2, "epochs": 200}, seed=Seeds(r, r, r))
        accs.append(train(cfg).test_acc)
    assert np.median(accs) >= 0.95


def test_deterministic_trace():
    cfg = RunConfig().replace(dataset={"n": 300, "classes": 3}, architecture={"kernel": "rbf", "m": 6},
                              optimizer={"lr": 1e-3, "epochs": 15})
    a, b = train(cfg), train(cfg)
    assert a.trace == b.trace
    assert a.test_acc == b.test_acc


def test_seeds_change_result():
    cfg = RunConfig().replace(dataset={"n": 300, "classes": 3}, architecture={"kernel": "rbf", "m": 6},
                              optimizer={"lr": 1e-3, "epochs": 5})
    assert train(cfg).trace != train(cfg.replace(seed=Seeds(0, 1, 1))).trace


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts():
    cfg = RunConfig().replace(dataset={"n": 200, "classes": 2}, architecture={"type": "dense", "D": 8},
                              optimizer={"lr": 1e200, "epochs": 20})
    with pytest.raises(DivergenceError) as info:
        train(cfg)
    assert isinstance(info.value.trace, list)


def test_early_stopping_restores_best():
    cfg = RunConfig().replace(dataset={"n": 400, "classes": 4}, architecture={"kernel": "rbf", "m": 8},
                              optimizer={"lr": 1e-2, "epochs": 200, "patience": 5})
    res = train(cfg)
    assert len(res.trace) - res.best_epoch <= 5 or len(res.trace) == 200
    assert res.val_acc == res.trace[res.best_epoch - 1]["val_acc"]


def test_param_count_in_result():
    cfg = RunConfig().replace(dataset={"n": 300, "classes": 3}, architecture={"kernel": "rbf", "m": 2},
                              optimizer={"epochs": 1})
    res = train(cfg)
    assert res.trainable_params == 2 * 2 + 2 * 3 + 3 == param_count(res.stack)
    assert res.landmark_mem == 2 * 64


def test_landmarks_from_unlabeled_pool():
    cfg = RunConfig().replace(dataset={"n": 1000, "classes": 10, "per_class": 5},
                              architecture={"kernel": "rbf", "m": 64, "landmark_pool": "all"})
    ds = build_dataset(cfg.dataset, 0)
    assert len(ds.train[1]) == 50
    stack = build_stack(cfg, ds)
    assert stack.layers[0].landmarks.m == 64


def test_resolve_kernel():
    x = np.random.default_rng(0).standard_normal((50, 3))
    g = bandwidth_heuristic(x)
    assert resolve_kernel("rbf", x) == KernelSpec("rbf", g)
    assert resolve_kernel("rbf:scale=10", x).gamma == pytest.approx(g / 10)
    assert resolve_kernel("rbf:gamma=0.25", x) == KernelSpec("rbf", 0.25)
    assert resolve_kernel("linear", x) == KernelSpec("linear")
    assert resolve_kernel("chi2exp", np.abs(x)).kind == "chi2_exp"
