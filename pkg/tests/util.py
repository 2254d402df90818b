"""Shared test helpers: independent oracles and component matching."""

from __future__ import annotations

import itertools

import numpy as np

from tempofact.tensor import DenseTensor3, KruskalTensor


def triple_sum_tensor(weights, A, B, C) -> np.ndarray:
    """Entrywise triple-sum reconstruction, the slow reference for reconstruct()."""
    n, r = A.shape
    t = B.shape[0]
    d = C.shape[0]
    out = np.zeros((n, t, d))
    for i in range(n):
        for j in range(t):
            for k in range(d):
                acc = 0.0
                for rr in range(r):
                    acc += weights[rr] * A[i, rr] * B[j, rr] * C[k, rr]
                out[i, j, k] = acc
    return out


def random_kruskal(rng, dims, rank) -> KruskalTensor:
    n, t, d = dims
    return KruskalTensor(rng.random((n, rank)), rng.random((t, rank)), rng.random((d, rank)))


def random_tensor(rng, dims, semantics="count") -> DenseTensor3:
    return DenseTensor3(rng.random(dims), semantics)


def nnls_oracle_objective(gram: np.ndarray, h: np.ndarray) -> float:
    """Exhaustive active-set search: best feasible quadratic value
    q(w) = w'Gw - 2h'w over all 2^R passive-set candidates (w=0 included)."""
    r = gram.shape[0]
    best = 0.0
    for mask in itertools.product((False, True), repeat=r):
        idx = [i for i in range(r) if mask[i]]
        if not idx:
            continue
        sub = gram[np.ix_(idx, idx)]
        try:
            w_sub = np.linalg.solve(sub, h[idx])
        except np.linalg.LinAlgError:
            continue
        if (w_sub < 0).any():
            continue
        w = np.zeros(r)
        w[idx] = w_sub
        best = min(best, float(w @ gram @ w - 2.0 * h @ w))
    return best


def nnls_objective(gram: np.ndarray, h: np.ndarray, w: np.ndarray) -> float:
    return float(w @ gram @ w - 2.0 * h @ w)


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float) - np.mean(x)
    y = np.asarray(y, dtype=float) - np.mean(y)
    denom = np.linalg.norm(x) * np.linalg.norm(y)
    return float(x @ y / denom) if denom > 0 else float("nan")


def cosine(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    denom = np.linalg.norm(x) * np.linalg.norm(y)
    return float(x @ y / denom) if denom > 0 else float("nan")


def similarity(x, y) -> float:
    """Pearson correlation, falling back to uncentered cosine when either
    vector is (numerically) constant and correlation is undefined."""
    if np.ptp(x) < 1e-12 * max(1.0, float(np.max(np.abs(x)))) or np.ptp(y) < 1e-12 * max(
        1.0, float(np.max(np.abs(y)))
    ):
        return cosine(x, y)
    return pearson(x, y)


def best_match(score_matrix: np.ndarray):
    """Assignment of targets (rows) to components (columns) maximizing the
    total score; returns (permutation, matched scores)."""
    r = score_matrix.shape[0]
    best_perm, best_total = None, -np.inf
    for perm in itertools.permutations(range(r)):
        total = sum(score_matrix[i, perm[i]] for i in range(r))
        if total > best_total:
            best_total, best_perm = total, perm
    return best_perm, [float(score_matrix[i, best_perm[i]]) for i in range(r)]
