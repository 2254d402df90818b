"""Rank-R nonnegative CP decomposition by alternating NNLS updates.

One sweep updates A, then B, then C, each by solving the nonnegative least
squares problem that keeps the other two factors fixed.  The normal
equations are assembled from small Gram matrices via the Hadamard identity
``(U kr V)^T (U kr V) = (U^T U) * (V^T V)``, so the only pass over the data
per update is one unfolded-tensor-times-Khatri-Rao product.

The squared misfit ``||X - Xhat||_F^2`` after each sweep is evaluated from
the same products (no reconstruction), which keeps the per-sweep objective
trace cheap and exactly consistent with the updates.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from tempofact.nnls import NnlsProblem, solve_nnls
from tempofact.tensor import DenseTensor3, KruskalTensor, khatri_rao

_INIT_MODES = ("random-uniform", "random-scaled")


class FitError(RuntimeError):
    """A decomposition could not be computed (inner solver stalled)."""


@dataclass(frozen=True)
class FitConfig:
    """Hyperparameters of one multi-restart CP fit."""

    rank: int
    max_sweeps: int = 500
    rel_tol: float = 1e-8
    restarts: int = 20
    seed: int = 0
    init: str = "random-scaled"

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if not self.rel_tol > 0.0:
            raise ValueError("rel_tol must be > 0")
        if self.init not in _INIT_MODES:
            raise ValueError(f"init must be one of {_INIT_MODES}, got {self.init!r}")


@dataclass(frozen=True)
class FitResult:
    """A converged (or stopped) decomposition with its diagnostics."""

    factors: KruskalTensor
    rel_error: float
    sweeps_used: int
    converged: bool
    objective_trace: tuple[float, ...]
    seed: int


class _Workspace:
    """Per-tensor state reused across sweeps: contiguous unfoldings and norm."""

    def __init__(self, x: DenseTensor3):
        a = x.values
        self.dims = x.dims
        self.norm2 = float(np.vdot(a, a))
        self.unfold = tuple(
            np.ascontiguousarray(
                np.reshape(np.moveaxis(a, mode, 0), (a.shape[mode], -1), order="F")
            )
            for mode in range(3)
        )


def _update_factor(unfolded: np.ndarray, left: np.ndarray, right: np.ndarray):
    """NNLS update of one factor given the other two (right varies fastest)."""
    gram = (left.T @ left) * (right.T @ right)
    gram = 0.5 * (gram + gram.T)
    proj = unfolded @ khatri_rao(left, right)
    tol = 1e-8 * max(1.0, float(np.abs(proj).max()) if proj.size else 0.0)
    sol = solve_nnls(NnlsProblem(gram, proj.T), tol=tol)
    if not sol.converged:
        raise FitError(
            f"NNLS update stalled (kkt residual {sol.kkt_residual:.3e} after "
            f"{sol.iterations} exchange rounds)"
        )
    return sol.W, gram, proj


def _sweep(ws: _Workspace, A: np.ndarray, B: np.ndarray, C: np.ndarray):
    """One A -> B -> C update cycle; returns factors and the post-sweep misfit."""
    A, _, _ = _update_factor(ws.unfold[0], C, B)
    B, _, _ = _update_factor(ws.unfold[1], C, A)
    C, gram, proj = _update_factor(ws.unfold[2], B, A)
    xhat2 = float(((C.T @ C) * gram).sum())
    inner = float((proj * C).sum())
    obj = max(ws.norm2 - 2.0 * inner + xhat2, 0.0)
    return A, B, C, obj


def als_sweep(x: DenseTensor3, k: KruskalTensor) -> KruskalTensor:
    """Run one full alternating update cycle starting from ``k``.

    Component weights are folded into the day factors before the sweep; the
    returned tensor carries unit weights.  The reconstruction misfit never
    increases across a sweep (each update solves its subproblem exactly).
    """
    if k.dims != x.dims:
        raise ValueError(f"factor dims {k.dims} do not match tensor dims {x.dims}")
    ws = _Workspace(x)
    A, B, C, _ = _sweep(ws, k.A, k.B, k.C * k.weights)
    return KruskalTensor(A, B, C)


def _initial_factors(ws: _Workspace, rank: int, seed: int, init: str):
    rng = np.random.default_rng(seed)
    n, t, d = ws.dims
    A = rng.random((n, rank))
    B = rng.random((t, rank))
    C = rng.random((d, rank))
    if init == "random-scaled":
        # Match the initial reconstruction norm to the data norm.
        g = (A.T @ A) * (B.T @ B) * (C.T @ C)
        init_norm = float(np.sqrt(max(g.sum(), 0.0)))
        scale = (np.sqrt(ws.norm2) / init_norm) ** (1.0 / 3.0) if init_norm > 0 else 0.0
        A *= scale
        B *= scale
        C *= scale
    return A, B, C


def fit_once(x: DenseTensor3, cfg: FitConfig, seed: int) -> FitResult:
    """Fit one decomposition from the random start derived from ``seed``.

    Sweeps run until the relative change of the squared misfit drops below
    ``cfg.rel_tol`` or ``cfg.max_sweeps`` is reached.  Deterministic for a
    fixed (tensor, config, seed).
    """
    if x.values.size == 0:
        raise ValueError("cannot fit an empty tensor")
    ws = _Workspace(x)
    A, B, C = _initial_factors(ws, cfg.rank, seed, cfg.init)
    trace: list[float] = []
    converged = False
    for sweep_no in range(1, cfg.max_sweeps + 1):
        try:
            A, B, C, obj = _sweep(ws, A, B, C)
        except FitError as err:
            raise FitError(f"sweep {sweep_no}: {err}") from err
        trace.append(obj)
        if len(trace) > 1:
            prev = trace[-2]
            if abs(obj - prev) / max(prev, 1e-300) < cfg.rel_tol:
                converged = True
                break
    rel = float(np.sqrt(trace[-1] / ws.norm2)) if ws.norm2 > 0 else 0.0
    factors = KruskalTensor(A, B, C).normalize()
    return FitResult(factors, rel, len(trace), converged, tuple(trace), seed)


def fit_restarts(x: DenseTensor3, cfg: FitConfig, jobs: int = 1) -> list:
    """Run ``cfg.restarts`` independent fits; restart k uses seed ``cfg.seed + k``.

    Returns one entry per restart, in restart order: a FitResult, or None if
    that restart failed.  The list is identical for any ``jobs`` value.
    """
    seeds = [cfg.seed + k for k in range(cfg.restarts)]
    results: list = []
    if jobs <= 1:
        for s in seeds:
            results.append(_try_fit(x, cfg, s))
        return results
    payloads = [(x.values, x.semantics, cfg, s) for s in seeds]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for out in pool.map(_guarded_worker, payloads):
            results.append(out)
    return results


def _try_fit(x: DenseTensor3, cfg: FitConfig, seed: int):
    try:
        return fit_once(x, cfg, seed)
    except FitError:
        return None


def _guarded_worker(payload):
    values, semantics, cfg, seed = payload
    return _try_fit(DenseTensor3(values, semantics), cfg, seed)


def fit_best(x: DenseTensor3, cfg: FitConfig, jobs: int = 1) -> FitResult:
    """Best-of-restarts fit: the restart with the smallest relative error wins.

    Ties go to the earliest restart, so the outcome does not depend on the
    degree of parallelism.
    """
    results = fit_restarts(x, cfg, jobs)
    ok = [r for r in results if r is not None]
    if not ok:
        raise FitError(f"all {cfg.restarts} restarts failed")
    return min(ok, key=lambda r: (r.rel_error, r.seed))
