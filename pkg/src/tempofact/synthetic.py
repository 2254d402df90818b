"""Synthetic temporal market with known multi-timescale structure.

Three groups of banks get distinct intraday and interday behavior, so a
rank-3 decomposition of the resulting activity tensor has a known ground
truth to recover:

* intraday: each group's trading fitness over the day follows a Gaussian
  bump (early / midday / late peak); two participating banks trade in an
  interval with probability equal to the product of their fitness values;
* interday: each bank independently enters the market on a given day with
  a group-specific probability (constant 0.5 / triangular ramp up then
  down / linear ramp up).

Every trade has unit volume, so tensor entry (i, t, d) is the number of
trades bank i made in interval t of day d.  Generation is deterministic
for a fixed config and collecting the trade log does not perturb the draw
sequence, so the logged ledger always reproduces the tensor exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date, datetime, time, timedelta

import numpy as np

from tempofact.ingest import TransactionRecord
from tempofact.tensor import DenseTensor3

# Calendar anchor for exported trade logs: synthetic day 0 maps to this date.
LOG_START_DATE = date(2001, 1, 2)

# Smallest sigma for which raw Gaussian density values stay within [0, 1].
_MIN_RAW_SIGMA = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class SyntheticConfig:
    """Market dimensions, group fitness profiles and participation schedules.

    Defaults follow the reference configuration: 120 banks in three equal
    groups, 20 intraday intervals, 1000 days, Gaussian fitness profiles with
    means (0, T/2, T) and spread T/4.  Profiles are rescaled so each group
    peaks at ``peak_fitness`` (raw density values with ``rescale=False``
    are only valid when they already lie in [0, 1]).
    """

    n_banks: int = 120
    intervals: int = 20
    days: int = 1000
    group_sizes: tuple[int, int, int] | None = None
    sigma: float | None = None
    mus: tuple[float, float, float] | None = None
    peak_fitness: float = 0.8
    rescale: bool = True
    seed: int = 12345

    def __post_init__(self) -> None:
        if self.n_banks < 1:
            raise ValueError("n_banks must be >= 1")
        if self.intervals < 1:
            raise ValueError("intervals must be >= 1")
        if self.days < 1:
            raise ValueError("days must be >= 1")
        sizes = self.resolved_group_sizes
        if len(sizes) != 3 or any(s < 0 for s in sizes):
            raise ValueError(f"group_sizes must be three nonnegative ints, got {sizes!r}")
        if sum(sizes) != self.n_banks:
            raise ValueError(f"group_sizes {sizes} do not sum to n_banks={self.n_banks}")
        if not self.resolved_sigma > 0:
            raise ValueError("sigma must be > 0")
        if len(self.resolved_mus) != 3:
            raise ValueError("mus must have three entries")
        if not 0.0 < self.peak_fitness <= 1.0:
            raise ValueError("peak_fitness must lie in (0, 1]")
        if not self.rescale and self.resolved_sigma < _MIN_RAW_SIGMA:
            raise ValueError(
                f"raw density values exceed 1 for sigma < {_MIN_RAW_SIGMA:.4f}"
            )

    @property
    def resolved_group_sizes(self) -> tuple[int, int, int]:
        if self.group_sizes is not None:
            return tuple(int(s) for s in self.group_sizes)  # type: ignore[return-value]
        third = self.n_banks // 3
        return (third, third, self.n_banks - 2 * third)

    @property
    def resolved_sigma(self) -> float:
        return float(self.sigma) if self.sigma is not None else self.intervals / 4.0

    @property
    def resolved_mus(self) -> tuple[float, float, float]:
        if self.mus is not None:
            return tuple(float(m) for m in self.mus)  # type: ignore[return-value]
        return (0.0, self.intervals / 2.0, float(self.intervals))


@dataclass(frozen=True)
class GroundTruth:
    """What the generator used: group labels, fitness profiles, schedules."""

    groups: np.ndarray            # (N,) int, values 0..2
    fitness_profiles: np.ndarray  # (3, T)
    participation: np.ndarray     # (3, D)

    def __post_init__(self) -> None:
        for name in ("groups", "fitness_profiles", "participation"):
            arr = np.asarray(getattr(self, name))
            object.__setattr__(self, name, arr)
            arr.setflags(write=False)


def fitness_profile(cfg: SyntheticConfig, group: int) -> np.ndarray:
    """Fitness of a group-``group`` bank over intervals t = 1..T.

    A Gaussian density evaluated on the interval grid, rescaled (by default)
    so the grid maximum equals ``cfg.peak_fitness``.
    """
    if group not in (0, 1, 2):
        raise ValueError(f"group must be 0, 1 or 2, got {group!r}")
    sigma = cfg.resolved_sigma
    mu = cfg.resolved_mus[group]
    t = np.arange(1, cfg.intervals + 1, dtype=np.float64)
    pdf = np.exp(-((t - mu) ** 2) / (2.0 * sigma**2)) / (sigma * math.sqrt(2.0 * math.pi))
    if cfg.rescale:
        pdf = pdf * (cfg.peak_fitness / pdf.max())
    return pdf


def participation(cfg: SyntheticConfig, group: int) -> np.ndarray:
    """Daily market-entry probability of a group-``group`` bank, d = 1..D.

    Group 0 sits at 0.5 every day, group 1 ramps linearly to its midpoint
    peak and back down, group 2 ramps linearly up across the whole period.
    """
    if group not in (0, 1, 2):
        raise ValueError(f"group must be 0, 1 or 2, got {group!r}")
    dd = float(cfg.days)
    d = np.arange(1, cfg.days + 1, dtype=np.float64)
    if group == 0:
        q = np.full(cfg.days, 0.5)
    elif group == 1:
        q = np.where(d <= dd / 2.0, (2.0 / dd) * (d - 1.0), (-2.0 / dd) * (d - dd))
    else:
        q = (d - 1.0) / dd
    return np.clip(q, 0.0, 1.0)


def _ground_truth(cfg: SyntheticConfig) -> GroundTruth:
    groups = np.repeat(np.arange(3), cfg.resolved_group_sizes)
    profiles = np.stack([fitness_profile(cfg, s) for s in range(3)])
    schedules = np.stack([participation(cfg, s) for s in range(3)])
    return GroundTruth(groups, profiles, schedules)


def _simulate(cfg: SyntheticConfig, collect_log: bool):
    truth = _ground_truth(cfg)
    n, t_count, d_count = cfg.n_banks, cfg.intervals, cfg.days
    fitness = truth.fitness_profiles[truth.groups]      # (N, T)
    rng = np.random.default_rng(cfg.seed)
    x = np.zeros((n, t_count, d_count))
    log: list[tuple[int, int, int, int]] = []
    for day in range(d_count):
        entered = rng.random(n) < truth.participation[truth.groups, day]
        ids = np.nonzero(entered)[0]
        if ids.size < 2:
            continue
        fit = fitness[ids].T                            # (T, n_active)
        draws = rng.random((t_count, ids.size, ids.size))
        probs = fit[:, :, None] * fit[:, None, :]
        upper = np.triu(np.ones((ids.size, ids.size), dtype=bool), 1)
        trades = (draws < probs) & upper
        counts = trades.sum(axis=2) + trades.sum(axis=1)  # (T, n_active)
        x[ids, :, day] += counts.T
        if collect_log:
            t_idx, i_idx, j_idx = np.nonzero(trades)
            for tt, ii, jj in zip(t_idx, i_idx, j_idx):
                log.append((day, int(tt), int(ids[ii]), int(ids[jj])))
    return DenseTensor3(x, "count"), truth, log


def generate(cfg: SyntheticConfig) -> tuple[DenseTensor3, GroundTruth]:
    """Simulate the market and return its activity tensor with ground truth."""
    tensor, truth, _ = _simulate(cfg, collect_log=False)
    return tensor, truth


def generate_with_log(cfg: SyntheticConfig):
    """Like :func:`generate`, but also return every trade as (day, interval, i, j).

    The same random draws are consumed either way, so the tensor is
    bit-identical to the one from :func:`generate`.
    """
    return _simulate(cfg, collect_log=True)


def bank_label(index: int, n_banks: int) -> str:
    """Stable zero-padded bank identifier; lexicographic order == index order."""
    width = max(3, len(str(n_banks - 1)))
    return f"B{index:0{width}d}"


def log_to_records(
    log: list[tuple[int, int, int, int]], cfg: SyntheticConfig
) -> list[TransactionRecord]:
    """Express simulated trades in the transaction-log schema.

    Timestamps sit at interval midpoints of the 08:00-18:00 trading window
    (requires the interval count to divide 600 minutes); the lower-index
    bank is written as the proposing lender, volumes are 1.0 and all banks
    are flagged domestic.  Intended for pipeline testing: binning these
    records at the matching resolution rebuilds the generated tensor.
    """
    if 600 % cfg.intervals != 0:
        raise ValueError(
            f"cannot place {cfg.intervals} intervals on a 600-minute trading window"
        )
    delta_s = 600 * 60 // cfg.intervals
    records = []
    for day, interval, i, j in log:
        stamp_s = 8 * 3600 + interval * delta_s + delta_s // 2
        ts = datetime.combine(
            LOG_START_DATE + timedelta(days=day),
            time(stamp_s // 3600, stamp_s % 3600 // 60, stamp_s % 60),
        )
        lo, hi = (i, j) if i < j else (j, i)
        records.append(
            TransactionRecord(
                timestamp=ts,
                lender_id=bank_label(lo, cfg.n_banks),
                borrower_id=bank_label(hi, cfg.n_banks),
                amount=1.0,
                proposer="lender",
                maturity="ON",
                lender_domestic=True,
                borrower_domestic=True,
            )
        )
    return records
