"""File formats: binary tensor exchange, JSON reports, plot-ready CSV.

Binary tensor layout (little-endian, documented in docs/FORMATS.md):

    offset  size        content
    0       8           magic b"TENSOR3\\n"
    8       4           uint32 format version (currently 1)
    12      4           uint32 L, byte length of the semantics tag
    16      L           semantics tag, UTF-8
    16+L    24          three uint64 dimensions (N, T, D)
    40+L    8*N*T*D     float64 values, row-major by (bank, interval, day)

All JSON writers emit sorted keys, two-space indent and a trailing newline,
so identical data produces byte-identical files.  NaN (undefined shares) is
serialized as null.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from tempofact.als import FitResult
from tempofact.corcondia import RankScanReport
from tempofact.ingest import TensorIndex
from tempofact.synthetic import GroundTruth, SyntheticConfig
from tempofact.tensor import DenseTensor3, KruskalTensor

TENSOR_MAGIC = b"TENSOR3\n"
TENSOR_FORMAT_VERSION = 1
FIT_SCHEMA_VERSION = 1
RANK_SCAN_SCHEMA_VERSION = 1


class FileFormatError(ValueError):
    """The file exists but does not match the documented layout."""


def write_tensor(path, x: DenseTensor3) -> None:
    tag = x.semantics.encode("utf-8")
    n, t, d = x.dims
    with open(path, "wb") as handle:
        handle.write(TENSOR_MAGIC)
        handle.write(struct.pack("<II", TENSOR_FORMAT_VERSION, len(tag)))
        handle.write(tag)
        handle.write(struct.pack("<QQQ", n, t, d))
        handle.write(np.ascontiguousarray(x.values, dtype="<f8").tobytes())


def read_tensor(path) -> DenseTensor3:
    with open(path, "rb") as handle:
        magic = handle.read(8)
        if magic != TENSOR_MAGIC:
            raise FileFormatError(f"{path}: bad magic {magic!r}")
        version, tag_len = struct.unpack("<II", handle.read(8))
        if version != TENSOR_FORMAT_VERSION:
            raise FileFormatError(f"{path}: unsupported format version {version}")
        tag = handle.read(tag_len).decode("utf-8")
        n, t, d = struct.unpack("<QQQ", handle.read(24))
        payload = handle.read()
    expected = 8 * n * t * d
    if len(payload) != expected:
        raise FileFormatError(
            f"{path}: payload holds {len(payload)} bytes, dims {n}x{t}x{d} need {expected}"
        )
    values = np.frombuffer(payload, dtype="<f8").reshape(n, t, d)
    return DenseTensor3(values.astype(np.float64), tag)


def tensor_debug_dict(x: DenseTensor3) -> dict:
    return {
        "format": "tensor3",
        "version": TENSOR_FORMAT_VERSION,
        "semantics": x.semantics,
        "dims": list(x.dims),
        "values": [float(v) for v in x.values.ravel()],
    }


def tensor_from_debug_dict(data: dict) -> DenseTensor3:
    dims = tuple(data["dims"])
    values = np.asarray(data["values"], dtype=np.float64).reshape(dims)
    return DenseTensor3(values, data["semantics"])


def _sanitize(obj):
    """Make a structure JSON-safe: numpy scalars to Python, NaN to None."""
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_sanitize(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return None if math.isnan(f) else f
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dump_json(path, obj) -> None:
    text = json.dumps(_sanitize(obj), indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _matrix_rows(m: np.ndarray) -> list:
    return [[float(v) for v in row] for row in m]


def fit_result_to_dict(fit: FitResult) -> dict:
    k = fit.factors
    return {
        "format": "fit_result",
        "version": FIT_SCHEMA_VERSION,
        "dims": list(k.dims),
        "rank": k.rank,
        "factors": {
            "bank": _matrix_rows(k.A),
            "intraday": _matrix_rows(k.B),
            "interday": _matrix_rows(k.C),
        },
        "weights": [float(w) for w in k.weights],
        "rel_error": fit.rel_error,
        "sweeps_used": fit.sweeps_used,
        "converged": fit.converged,
        "objective_trace": list(fit.objective_trace),
        "seed": fit.seed,
    }


def fit_result_from_dict(data: dict) -> FitResult:
    if data.get("format") != "fit_result" or data.get("version") != FIT_SCHEMA_VERSION:
        raise FileFormatError("not a supported fit_result document")
    factors = KruskalTensor(
        np.asarray(data["factors"]["bank"], dtype=np.float64),
        np.asarray(data["factors"]["intraday"], dtype=np.float64),
        np.asarray(data["factors"]["interday"], dtype=np.float64),
        np.asarray(data["weights"], dtype=np.float64),
    )
    return FitResult(
        factors=factors,
        rel_error=float(data["rel_error"]),
        sweeps_used=int(data["sweeps_used"]),
        converged=bool(data["converged"]),
        objective_trace=tuple(float(v) for v in data["objective_trace"]),
        seed=int(data["seed"]),
    )


def rank_scan_to_dict(report: RankScanReport) -> dict:
    return {
        "format": "rank_scan",
        "version": RANK_SCAN_SCHEMA_VERSION,
        "l_cc": report.l_cc,
        "restarts": report.restarts,
        "seed": report.seed,
        "selected_rank": report.selected_rank,
        "ranks": [
            {
                "rank": rec.rank,
                "cc_values": list(rec.cc_values),
                "rel_errors": list(rec.rel_errors),
                "cc_mean": rec.cc_mean,
                "cc_ci95": list(rec.cc_ci95) if rec.cc_ci95 is not None else None,
                "n_failed": rec.n_failed,
            }
            for rec in report.records
        ],
    }


def write_rank_scan_csv(path, report: RankScanReport) -> None:
    lines = ["R,cc_mean,cc_lo,cc_hi"]
    for rec in report.records:
        if rec.cc_mean is None:
            lines.append(f"{rec.rank},,,")
        else:
            lo, hi = rec.cc_ci95
            lines.append(f"{rec.rank},{rec.cc_mean!r},{lo!r},{hi!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def ground_truth_to_dict(truth: GroundTruth, cfg: SyntheticConfig) -> dict:
    return {
        "format": "ground_truth",
        "version": 1,
        "groups": [int(g) for g in truth.groups],
        "fitness_profiles": _matrix_rows(truth.fitness_profiles),
        "participation": _matrix_rows(truth.participation),
        "config": {
            "n_banks": cfg.n_banks,
            "intervals": cfg.intervals,
            "days": cfg.days,
            "group_sizes": list(cfg.resolved_group_sizes),
            "sigma": cfg.resolved_sigma,
            "mus": list(cfg.resolved_mus),
            "peak_fitness": cfg.peak_fitness,
            "rescale": cfg.rescale,
            "seed": cfg.seed,
        },
    }


def write_index(path, index: TensorIndex) -> None:
    dump_json(path, index.to_dict())


def read_index(path) -> TensorIndex:
    return TensorIndex.from_dict(load_json(path))
