"""Core consistency diagnostic and rank selection scan.

Given fitted CP factors, the least-squares Tucker core G (an R x R x R
tensor with the factors held fixed) is computed via factor pseudoinverses.
If the CP model explains the data, G collapses to the unit superdiagonal;
interactions between components push mass off the superdiagonal.  The core
consistency score

    cc = 100 * (1 - sum((G - I_sd)^2) / R)

is 100 for a perfect CP structure and can be arbitrarily negative.  A rank
scan fits every candidate rank with multiple restarts, averages the score
across restarts, and selects the largest rank whose mean score clears a
threshold.

Before the core is computed, component weights are folded into the day
factors so that the comparison target really is the *unit* superdiagonal;
this makes the score invariant to the scale indeterminacy of CP factors.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import t as student_t

from tempofact.als import FitConfig, fit_restarts
from tempofact.tensor import DenseTensor3, KruskalTensor

_COND_LIMIT = 1e12
_PINV_RCOND = 1e-12


class DegenerateFactorError(ValueError):
    """A factor matrix is numerically rank deficient, so no core is defined."""

    def __init__(self, factor: str, cond: float):
        self.factor = factor
        self.cond = cond
        super().__init__(
            f"factor {factor} is numerically rank deficient (condition number "
            f"{cond:.3e} > {_COND_LIMIT:.0e})"
        )


@dataclass(frozen=True)
class CoreTensor:
    """Least-squares Tucker core of a fitted model (entries may be negative)."""

    G: np.ndarray
    source_rank: int

    def __post_init__(self) -> None:
        g = np.asarray(self.G, dtype=np.float64)
        r = self.source_rank
        if g.shape != (r, r, r):
            raise ValueError(f"core must have shape ({r}, {r}, {r}), got {g.shape}")
        object.__setattr__(self, "G", g)
        g.setflags(write=False)


def tucker_core(x: DenseTensor3, k: KruskalTensor) -> CoreTensor:
    """Least-squares core of ``x`` for the fixed factors of ``k``.

    Computed as the tensor contracted with the Moore-Penrose pseudoinverse
    of each (weight-folded) factor, which solves the core least squares
    problem without materializing any Kronecker product.  Raises
    :class:`DegenerateFactorError` when a factor's condition number exceeds
    1e12 (a zeroed component at an over-specified rank does this).
    """
    if k.dims != x.dims:
        raise ValueError(f"factor dims {k.dims} do not match tensor dims {x.dims}")
    kn = k.normalize()
    pinvs = []
    for name, mat in (("A", kn.A), ("B", kn.B), ("C", kn.weighted_C)):
        svals = np.linalg.svd(mat, compute_uv=False)
        smin = float(svals[-1])
        smax = float(svals[0])
        cond = np.inf if smin == 0.0 else smax / smin
        if cond > _COND_LIMIT:
            raise DegenerateFactorError(name, cond)
        pinvs.append(np.linalg.pinv(mat, rcond=_PINV_RCOND))
    ap, bp, cp = pinvs
    g = np.einsum("ni,ijk->njk", ap, x.values, optimize=True)
    g = np.einsum("mj,njk->nmk", bp, g, optimize=True)
    g = np.einsum("pk,nmk->nmp", cp, g, optimize=True)
    return CoreTensor(g, k.rank)


def core_consistency(core: CoreTensor) -> float:
    """Score how close a core is to the unit superdiagonal (100 = exact)."""
    r = core.source_rank
    ident = np.zeros((r, r, r))
    idx = np.arange(r)
    ident[idx, idx, idx] = 1.0
    return float(100.0 * (1.0 - ((core.G - ident) ** 2).sum() / r))


@dataclass(frozen=True)
class RankScanRecord:
    """Per-rank scan outcome; ``None`` entries mark failed restarts."""

    rank: int
    cc_values: tuple
    rel_errors: tuple
    cc_mean: float | None
    cc_ci95: tuple | None
    n_failed: int

    @property
    def failed(self) -> bool:
        return self.cc_mean is None


@dataclass(frozen=True)
class RankScanReport:
    """Scan over candidate ranks with the threshold-rule selection applied."""

    records: tuple
    selected_rank: int | None
    l_cc: float
    restarts: int
    seed: int


def _mean_ci95(values: list) -> tuple[float, tuple[float, float]]:
    n = len(values)
    mean = float(np.mean(values))
    if n < 2:
        return mean, (mean, mean)
    half = float(student_t.ppf(0.975, n - 1) * np.std(values, ddof=1) / np.sqrt(n))
    return mean, (mean - half, mean + half)


def rank_scan(
    x: DenseTensor3, r_max: int, l_cc: float, cfg: FitConfig, jobs: int = 1
) -> RankScanReport:
    """Fit ranks 1..r_max with ``cfg.restarts`` restarts each and score them.

    Every restart contributes its own core consistency value; the per-rank
    mean (with a Student-t 95% interval) drives the selection rule: the
    selected rank is the largest one whose mean score exceeds ``l_cc``.
    Restarts whose fit fails or whose core is degenerate are recorded as
    ``None`` and excluded from the mean; a rank fails only if every restart
    does.  Deterministic for fixed (tensor, cfg); independent of ``jobs``.
    """
    if r_max < 1:
        raise ValueError("r_max must be >= 1")
    records = []
    for rank in range(1, r_max + 1):
        fits = fit_restarts(x, replace(cfg, rank=rank), jobs)
        ccs: list = []
        rels: list = []
        n_failed = 0
        for fit in fits:
            if fit is None:
                ccs.append(None)
                rels.append(None)
                n_failed += 1
                continue
            rels.append(fit.rel_error)
            try:
                ccs.append(core_consistency(tucker_core(x, fit.factors)))
            except DegenerateFactorError:
                ccs.append(None)
                n_failed += 1
        ok = [c for c in ccs if c is not None]
        if ok:
            mean, ci = _mean_ci95(ok)
        else:
            mean, ci = None, None
        records.append(
            RankScanRecord(rank, tuple(ccs), tuple(rels), mean, ci, n_failed)
        )
    passing = [rec.rank for rec in records if rec.cc_mean is not None and rec.cc_mean > l_cc]
    selected = max(passing) if passing else None
    return RankScanReport(tuple(records), selected, float(l_cc), cfg.restarts, cfg.seed)
