"""Interpretive post-processing of a fitted decomposition.

Turns factor matrices into the quantities an analyst actually looks at:
a canonical component ordering, per-day activity shares, the top-decile
bank set of each component, overlaps between those sets, per-bank daily
membership levels, and transaction-role / nationality statistics of the
affiliated banks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import t as student_t

from tempofact.ingest import TensorIndex, TransactionRecord
from tempofact.tensor import KruskalTensor

#: Transaction roles, crossing trade side with which side posted the quote.
#: The aggressor accepted a posted quote; the quoter posted it.
ROLES = ("aggressor_lender", "quoter_borrower", "aggressor_borrower", "quoter_lender")


def morning_window(delta: int, minutes: int = 120) -> np.ndarray:
    """Interval indices covering the first ``minutes`` of the trading day."""
    if delta < 1:
        raise ValueError("delta must be >= 1")
    return np.arange(math.ceil(minutes / delta))


def order_components(k: KruskalTensor, window) -> np.ndarray:
    """Permutation sorting components by early-day activity, ascending.

    The sort key is the sum of the unit-normalized intraday factor over the
    given interval indices, so the ordering is invariant to any positive
    rescaling of factor columns.  Ties keep their original relative order.
    """
    window = np.asarray(window, dtype=int)
    kn = k.normalize()
    sums = kn.B[window, :].sum(axis=0)
    return np.argsort(sums, kind="stable")


def component_share(k: KruskalTensor) -> np.ndarray:
    """Per-day share of each component in total activity (rows sum to 1).

    Shares divide the weight-scaled day factors by their daily total; days
    with zero total activity get NaN rows rather than an arbitrary split.
    """
    cw = k.normalize().weighted_C
    totals = cw.sum(axis=1)
    return np.divide(
        cw, totals[:, None], out=np.full_like(cw, np.nan), where=totals[:, None] > 0
    )


def _percentile_threshold(values: np.ndarray, percentile: float) -> float:
    """Nearest-rank percentile value (the floor(p*n/100)-th order statistic)."""
    n = len(values)
    rank = math.floor(percentile * n / 100.0 + 1e-9)
    rank = min(max(rank, 0), n - 1)
    return float(np.sort(values)[rank])


def affiliate_banks(k: KruskalTensor, percentile: float = 90.0) -> list:
    """Banks loading at or above the per-component percentile threshold.

    With distinct loadings this is the top ``(100 - percentile)%`` of banks
    (29 of 289 at the default); ties at the threshold are all included.
    """
    if not 0.0 <= percentile <= 100.0:
        raise ValueError("percentile must lie in [0, 100]")
    a = k.A
    members = []
    for r in range(k.rank):
        threshold = _percentile_threshold(a[:, r], percentile)
        members.append(np.nonzero(a[:, r] >= threshold)[0])
    return members


def jaccard_overlap(members_a, members_b) -> float:
    """|intersection| / |union| of two bank sets; empty union counts as 0."""
    sa, sb = set(np.asarray(members_a).tolist()), set(np.asarray(members_b).tolist())
    union = sa | sb
    if not union:
        return 0.0
    return len(sa & sb) / len(union)


def jaccard_matrix(memberships) -> np.ndarray:
    out = np.empty((len(memberships), len(memberships)))
    for i, mi in enumerate(memberships):
        for j, mj in enumerate(memberships):
            out[i, j] = jaccard_overlap(mi, mj)
    return out


def membership_level(k: KruskalTensor, r: int) -> np.ndarray:
    """Bank-by-day intensity within component ``r``: the outer product of the
    bank loadings with the weight-scaled day factor."""
    kn = k.normalize()
    return np.outer(kn.A[:, r], kn.weighted_C[:, r])


def membership_mean(k: KruskalTensor, r: int, members) -> np.ndarray:
    """Average membership level of the given banks on each day."""
    members = np.asarray(members, dtype=int)
    if members.size == 0:
        raise ValueError("members must be nonempty")
    return membership_level(k, r)[members].mean(axis=0)


def classify_role(record: TransactionRecord, bank_id: str) -> str:
    """Which of the four roles ``bank_id`` played in ``record``."""
    if bank_id == record.lender_id:
        return "aggressor_lender" if record.proposer == "borrower" else "quoter_lender"
    if bank_id == record.borrower_id:
        return "quoter_borrower" if record.proposer == "borrower" else "aggressor_borrower"
    raise ValueError(f"bank {bank_id!r} is not a side of this record")


@dataclass(frozen=True)
class RoleFrequencies:
    """Across-bank role statistics for one component's bank set."""

    roles: tuple
    bank_indices: np.ndarray   # banks that had at least one transaction
    per_bank: np.ndarray       # (len(bank_indices), 4), rows sum to 1
    mean: np.ndarray           # (4,)
    ci95: np.ndarray           # (4, 2) Student-t interval for the mean
    excluded: tuple            # member banks without any transaction


def attribute_frequencies(records, index: TensorIndex, members) -> RoleFrequencies:
    """Role mix of each member bank, averaged across the member set.

    Every transaction of a member bank (either side) is classified into one
    of :data:`ROLES`; per-bank frequencies are averaged across banks with a
    Student-t 95% confidence interval per role.  Member banks that never
    transact are excluded and reported.
    """
    counts = np.zeros((len(index.bank_ids), len(ROLES)))
    bank_pos = {b: i for i, b in enumerate(index.bank_ids)}
    role_pos = {name: j for j, name in enumerate(ROLES)}
    for r in records:
        for side in (r.lender_id, r.borrower_id):
            pos = bank_pos.get(side)
            if pos is not None:
                counts[pos, role_pos[classify_role(r, side)]] += 1.0

    members = np.asarray(members, dtype=int)
    totals = counts[members].sum(axis=1)
    used = members[totals > 0]
    excluded = tuple(int(b) for b in members[totals == 0])
    if used.size == 0:
        raise ValueError("no member bank has any transaction")
    per_bank = counts[used] / counts[used].sum(axis=1, keepdims=True)
    mean = per_bank.mean(axis=0)
    n = used.size
    if n >= 2:
        half = student_t.ppf(0.975, n - 1) * per_bank.std(axis=0, ddof=1) / math.sqrt(n)
    else:
        half = np.zeros(len(ROLES))
    ci = np.stack([mean - half, mean + half], axis=1)
    return RoleFrequencies(ROLES, used, per_bank, mean, ci, excluded)


def binomial_quantile(q: float, n: int, p: float) -> int:
    """Smallest k with P(Binomial(n, p) <= k) >= q, by direct p.m.f. summation."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    cdf = 0.0
    for k in range(n + 1):
        cdf += math.comb(n, k) * p**k * (1.0 - p) ** (n - k)
        if cdf >= q:
            return k
    return n


@dataclass(frozen=True)
class NationalityBand:
    """Observed domestic share against the random-chance binomial band."""

    observed_share: float
    band: tuple
    outside: bool
    n_members: int
    p: float


def nationality_test(members, domestic_flags, p: float) -> NationalityBand:
    """Compare a bank set's domestic share with chance draws at rate ``p``.

    The band is the central 90% interval of Binomial(|members|, p) / |members|
    (5th to 95th percentile, exact quantiles).
    """
    members = np.asarray(members, dtype=int)
    if members.size == 0:
        raise ValueError("members must be nonempty")
    flags = np.asarray(domestic_flags, dtype=bool)
    n = int(members.size)
    observed = float(flags[members].mean())
    lo = binomial_quantile(0.05, n, p) / n
    hi = binomial_quantile(0.95, n, p) / n
    outside = observed < lo - 1e-12 or observed > hi + 1e-12
    return NationalityBand(observed, (lo, hi), outside, n, float(p))


def domestic_flags_from_records(records, index: TensorIndex):
    """Per-bank domestic flag derived from the ledger (first occurrence wins).

    Returns (flags, conflicts) where conflicts lists banks whose records
    disagree; banks absent from the ledger default to False.
    """
    flags = np.zeros(len(index.bank_ids), dtype=bool)
    seen: dict = {}
    conflicts = set()
    for r in records:
        for bank, flag in ((r.lender_id, r.lender_domestic), (r.borrower_id, r.borrower_domestic)):
            if bank not in seen:
                seen[bank] = flag
            elif seen[bank] != flag:
                conflicts.add(bank)
    for i, bank in enumerate(index.bank_ids):
        flags[i] = seen.get(bank, False)
    return flags, sorted(conflicts)
