"""Dense 3-way tensors and the multilinear kernels everything else builds on.

Unfolding convention: the mode-n matricization puts mode n on the rows and
flattens the two remaining modes into columns with the earlier mode varying
fastest.  Under this convention a tensor assembled from factor matrices
A (banks), B (intervals), C (days) satisfies

    X_(1) = A (C kr B)^T,   X_(2) = B (C kr A)^T,   X_(3) = C (B kr A)^T,

where ``kr`` is the columnwise Kronecker (Khatri-Rao) product.  These
identities are exact and are enforced by the test suite; every consumer of
:func:`matricize` and :func:`khatri_rao` relies on them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class DenseTensor3:
    """Nonnegative banks x intervals x days activity tensor.

    ``values`` is stored as a contiguous float64 array and frozen after
    construction, so instances can be shared freely across workers.  The
    ``semantics`` tag records what an entry means ("amount_meur" for traded
    volume, "count" for trade counts) and travels with the exchange format.
    """

    values: np.ndarray
    semantics: str = "amount_meur"

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ValueError(f"expected a 3-way array, got ndim={v.ndim}")
        if v.size:
            if not np.isfinite(v).all():
                raise ValueError("tensor entries must be finite")
            if v.min() < 0.0:
                raise ValueError("tensor entries must be nonnegative")
        object.__setattr__(self, "values", v)
        v.setflags(write=False)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.values.shape)  # type: ignore[return-value]

    def norm(self) -> float:
        """Frobenius norm of the tensor."""
        return float(np.linalg.norm(self.values.ravel()))


@dataclass(frozen=True)
class KruskalTensor:
    """Factor-matrix representation of a rank-R nonnegative CP model.

    ``A`` (banks x R), ``B`` (intervals x R) and ``C`` (days x R) hold one
    component per column; ``weights`` carries per-component scales.  After
    :meth:`normalize` every factor column has unit Euclidean norm and all
    scale lives in ``weights``; :attr:`weighted_C` gives the day factors with
    the weights folded back in, which is the form used for display and for
    the core consistency diagnostic.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        mats = []
        for name in ("A", "B", "C"):
            m = np.asarray(getattr(self, name), dtype=np.float64)
            if m.ndim != 2:
                raise ValueError(f"factor {name} must be 2-D, got ndim={m.ndim}")
            if m.size and m.min() < 0.0:
                raise ValueError(f"factor {name} has negative entries")
            object.__setattr__(self, name, m)
            mats.append(m)
        r = mats[0].shape[1]
        if mats[1].shape[1] != r or mats[2].shape[1] != r:
            raise ValueError("factor matrices must share the same column count")
        w = self.weights
        w = np.ones(r) if w is None else np.asarray(w, dtype=np.float64)
        if w.shape != (r,):
            raise ValueError(f"weights must have shape ({r},), got {w.shape}")
        if w.size and w.min() < 0.0:
            raise ValueError("weights must be nonnegative")
        object.__setattr__(self, "weights", w)
        for m in (*mats, w):
            m.setflags(write=False)

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.A.shape[0], self.B.shape[0], self.C.shape[0])

    @property
    def weighted_C(self) -> np.ndarray:
        """Day factors with the component weights folded in."""
        return self.C * self.weights

    def normalize(self) -> "KruskalTensor":
        """Rescale every factor column to unit norm, absorbing scale into weights.

        Zero columns are left as zeros and end up with weight zero.
        """
        out = []
        w = self.weights.copy()
        for m in (self.A, self.B, self.C):
            norms = np.linalg.norm(m, axis=0)
            scaled = np.divide(m, norms, out=np.zeros_like(m), where=norms > 0)
            w = w * norms
            out.append(scaled)
        return KruskalTensor(out[0], out[1], out[2], w)

    def permute(self, order: np.ndarray) -> "KruskalTensor":
        """Reorder components; ``order`` must be a permutation of range(rank)."""
        order = np.asarray(order, dtype=int)
        if sorted(order.tolist()) != list(range(self.rank)):
            raise ValueError(f"not a permutation of 0..{self.rank - 1}: {order!r}")
        return KruskalTensor(
            self.A[:, order], self.B[:, order], self.C[:, order], self.weights[order]
        )


def matricize(x: DenseTensor3, mode: int) -> np.ndarray:
    """Mode-n matricization of a 3-way tensor.

    Mode 1 returns an N x TD matrix, mode 2 a T x ND matrix and mode 3 a
    D x NT matrix.  Columns follow the convention in the module docstring,
    so ``matricize(reconstruct(K), 1)`` equals ``K.A @ khatri_rao(K.C, K.B).T``
    up to roundoff.
    """
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")
    a = x.values
    return np.reshape(np.moveaxis(a, mode - 1, 0), (a.shape[mode - 1], -1), order="F")


def tensorize(
    m: np.ndarray, mode: int, dims: tuple[int, int, int], semantics: str = "amount_meur"
) -> DenseTensor3:
    """Inverse of :func:`matricize`: fold a mode-n unfolding back into a tensor."""
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")
    if len(dims) != 3:
        raise ValueError(f"dims must have length 3, got {dims!r}")
    m = np.asarray(m, dtype=np.float64)
    rest = [d for i, d in enumerate(dims) if i != mode - 1]
    expected = (dims[mode - 1], int(math.prod(rest)))
    if m.ndim != 2 or m.shape != expected:
        raise ValueError(f"matrix shape {m.shape} does not match dims {dims} for mode {mode}")
    folded = np.moveaxis(np.reshape(m, (dims[mode - 1], *rest), order="F"), 0, mode - 1)
    return DenseTensor3(np.ascontiguousarray(folded), semantics)


def khatri_rao(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Columnwise Kronecker product: column r of the result is kron(a_r, b_r)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("khatri_rao expects two matrices")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"column counts differ: {a.shape[1]} vs {b.shape[1]}")
    return (a[:, None, :] * b[None, :, :]).reshape(a.shape[0] * b.shape[0], a.shape[1])


def reconstruct(k: KruskalTensor, semantics: str = "amount_meur") -> DenseTensor3:
    """Assemble the dense tensor whose (i, j, k) entry is
    ``sum_r weights_r * A[i, r] * B[j, r] * C[k, r]``."""
    vals = np.einsum("r,ir,jr,kr->ijk", k.weights, k.A, k.B, k.C, optimize=True)
    return DenseTensor3(vals, semantics)


def frobenius_distance(x: DenseTensor3, y: DenseTensor3) -> float:
    """Frobenius norm of the entrywise difference of two equal-shaped tensors."""
    if x.dims != y.dims:
        raise ValueError(f"dimension mismatch: {x.dims} vs {y.dims}")
    return float(np.linalg.norm((x.values - y.values).ravel()))


def relative_error(x: DenseTensor3, y: DenseTensor3) -> float:
    """``frobenius_distance(x, y) / ||x||_F``; zero for two zero tensors."""
    dist = frobenius_distance(x, y)
    nx = x.norm()
    if nx > 0.0:
        return dist / nx
    return 0.0 if dist == 0.0 else float("inf")
