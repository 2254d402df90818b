import numpy as np
import pytest

from tempofact.als import FitConfig, als_sweep, fit_best, fit_once, fit_restarts
from tempofact.tensor import DenseTensor3, KruskalTensor, reconstruct, relative_error
from util import best_match, cosine, random_kruskal, random_tensor


def _objective(x, k):
    return relative_error(x, reconstruct(k)) ** 2 * x.norm() ** 2


def test_sweep_is_fixed_point_on_exact_rank_one():
    rng = np.random.default_rng(2)
    k = random_kruskal(rng, (5, 4, 6), 1)
    x = reconstruct(k)
    before = _objective(x, k)
    after = _objective(x, als_sweep(x, k))
    assert abs(after - before) < 1e-12


def test_sweep_never_increases_objective():
    rng = np.random.default_rng(3)
    for _ in range(100):
        dims = tuple(rng.integers(3, 7, size=3))
        x = random_tensor(rng, dims)
        k = random_kruskal(rng, dims, 2)
        assert _objective(x, als_sweep(x, k)) <= _objective(x, k) + 1e-10


def test_sweep_dim_mismatch():
    rng = np.random.default_rng(4)
    with pytest.raises(ValueError):
        als_sweep(random_tensor(rng, (3, 3, 3)), random_kruskal(rng, (3, 3, 4), 2))


def test_zero_tensor_reaches_zero_objective():
    x = DenseTensor3(np.zeros((3, 4, 5)))
    res = fit_once(x, FitConfig(rank=2, restarts=1), seed=0)
    assert res.objective_trace[-1] == 0.0
    assert res.rel_error == 0.0


def test_fit_once_deterministic():
    rng = np.random.default_rng(9)
    x = random_tensor(rng, (6, 5, 7))
    cfg = FitConfig(rank=2, max_sweeps=40, restarts=1, seed=1)
    a = fit_once(x, cfg, seed=123)
    b = fit_once(x, cfg, seed=123)
    assert a.objective_trace == b.objective_trace
    assert np.array_equal(a.factors.A, b.factors.A)
    assert np.array_equal(a.factors.weights, b.factors.weights)
    assert a.rel_error == b.rel_error


def test_fit_recovers_exact_rank_two_model():
    rng = np.random.default_rng(14)
    x = reconstruct(random_kruskal(rng, (10, 8, 12), 2))
    best = fit_best(x, FitConfig(rank=2, restarts=20, seed=7))
    assert best.rel_error < 1e-6


def test_rank_one_model_class_is_exact():
    rng = np.random.default_rng(15)
    x = reconstruct(random_kruskal(rng, (6, 5, 7), 1))
    best = fit_best(x, FitConfig(rank=1, restarts=5, seed=3))
    assert best.rel_error < 1e-8


def test_single_restart_equals_fit_once_with_derived_seed():
    rng = np.random.default_rng(16)
    x = random_tensor(rng, (5, 4, 6))
    cfg = FitConfig(rank=2, max_sweeps=30, restarts=1, seed=11)
    via_best = fit_best(x, cfg)
    direct = fit_once(x, cfg, seed=11)
    assert via_best.objective_trace == direct.objective_trace
    assert np.array_equal(via_best.factors.C, direct.factors.C)


def test_restart_list_independent_of_jobs():
    rng = np.random.default_rng(17)
    x = random_tensor(rng, (6, 4, 5))
    cfg = FitConfig(rank=2, max_sweeps=25, restarts=4, seed=2)
    serial = fit_restarts(x, cfg, jobs=1)
    parallel = fit_restarts(x, cfg, jobs=2)
    assert len(serial) == len(parallel) == 4
    for a, b in zip(serial, parallel):
        assert a.objective_trace == b.objective_trace
        assert np.array_equal(a.factors.B, b.factors.B)


def test_traces_monotone_and_factors_nonnegative():
    rng = np.random.default_rng(19)
    for trial in range(30):
        dims = tuple(rng.integers(4, 9, size=3))
        x = random_tensor(rng, dims)
        rank = int(rng.integers(1, 4))
        res = fit_once(x, FitConfig(rank=rank, max_sweeps=60, restarts=1), seed=trial)
        trace = np.array(res.objective_trace)
        assert (np.diff(trace) <= 1e-10).all()
        assert 0.0 <= res.rel_error <= 1.0
        for mat in (res.factors.A, res.factors.B, res.factors.C):
            assert mat.min() >= 0.0


def test_fit_best_aggregate_failure(monkeypatch):
    import tempofact.als as als_mod

    rng = np.random.default_rng(99)
    x = random_tensor(rng, (4, 4, 4))
    monkeypatch.setattr(als_mod, "_try_fit", lambda *args: None)
    with pytest.raises(als_mod.FitError, match="all 3 restarts"):
        als_mod.fit_best(x, FitConfig(rank=1, restarts=3))


def test_normalized_result_reconstructs_identically():
    rng = np.random.default_rng(20)
    k = random_kruskal(rng, (5, 6, 4), 3)
    gap = np.abs(reconstruct(k.normalize()).values - reconstruct(k).values).max()
    assert gap < 1e-12


def test_recovery_matches_ground_truth_components():
    rng = np.random.default_rng(21)
    truth = random_kruskal(rng, (12, 10, 14), 4)
    x = reconstruct(truth)
    best = fit_best(x, FitConfig(rank=4, restarts=20, seed=5))
    assert best.rel_error < 1e-5
    truth_n = truth.normalize()
    fit_n = best.factors
    for true_mat, fit_mat in ((truth_n.A, fit_n.A), (truth_n.B, fit_n.B), (truth_n.C, fit_n.C)):
        scores = np.array(
            [[cosine(true_mat[:, i], fit_mat[:, j]) for j in range(4)] for i in range(4)]
        )
        _, matched = best_match(scores)
        assert min(matched) >= 0.99


def test_rel_error_of_zero_factors_is_one():
    rng = np.random.default_rng(22)
    x = random_tensor(rng, (4, 4, 4))
    zero = KruskalTensor(np.zeros((4, 1)), np.zeros((4, 1)), np.zeros((4, 1)))
    assert relative_error(x, reconstruct(zero)) == 1.0


def test_config_validation():
    with pytest.raises(ValueError):
        FitConfig(rank=0)
    with pytest.raises(ValueError):
        FitConfig(rank=1, max_sweeps=0)
    with pytest.raises(ValueError):
        FitConfig(rank=1, restarts=0)
    with pytest.raises(ValueError):
        FitConfig(rank=1, rel_tol=0.0)
    with pytest.raises(ValueError):
        FitConfig(rank=1, init="gaussian")
    with pytest.raises(ValueError):
        fit_once(DenseTensor3(np.zeros((0, 0, 0))), FitConfig(rank=1), seed=0)
