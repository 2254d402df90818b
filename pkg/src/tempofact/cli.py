"""Command-line pipeline: synth, ingest, fit, corcondia, analyze.

Every command writes its outputs plus a run manifest into --out.  The
manifest records the resolved configuration, input digests, seed and
output digests; rerunning the same command on the same inputs reproduces
every output byte for byte (only the manifest's duration field varies).

Exit codes: 0 success, 1 usage/validation, 2 I/O, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
import time as _time
from datetime import timedelta
from pathlib import Path

import numpy as np

from tempofact import __version__, analysis, io as tfio
from tempofact.als import FitConfig, FitError, fit_restarts
from tempofact.corcondia import rank_scan
from tempofact.ingest import (
    LedgerFormatError,
    TensorIndex,
    build_tensor,
    filter_overnight,
    load_transactions,
    moving_average,
    save_transactions,
)
from tempofact.synthetic import (
    LOG_START_DATE,
    SyntheticConfig,
    bank_label,
    generate,
    generate_with_log,
    log_to_records,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we use 1
        raise UsageError(message)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, config: dict, inputs: dict,
                    seed, started: float, outputs: list) -> None:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "config": config,
        "inputs": {name: {"path": str(p), "sha256": _sha256(Path(p))} for name, p in inputs.items()},
        "seed": seed,
        "duration_s": _time.perf_counter() - started,
        "outputs": {name: _sha256(out_dir / name) for name in sorted(outputs)},
    }
    tfio.dump_json(out_dir / "manifest.json", manifest)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _float_tuple(text: str, n: int, what: str):
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != n:
        raise UsageError(f"{what} needs {n} comma-separated values, got {text!r}")
    return tuple(float(p) for p in parts)


def _build_parser() -> _Parser:
    parser = _Parser(prog="tempofact", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth",
                       help="generate a synthetic market tensor with ground truth")
    p.add_argument("--banks", type=int, default=120)
    p.add_argument("--intervals", type=int, default=20)
    p.add_argument("--days", type=int, default=1000)
    p.add_argument("--group-sizes", type=str, default=None,
                   help="three comma-separated sizes summing to --banks")
    p.add_argument("--sigma", type=float, default=None, help="fitness spread (default T/4)")
    p.add_argument("--mus", type=str, default=None,
                   help="three comma-separated profile means (default 0,T/2,T)")
    p.add_argument("--peak-fitness", type=float, default=0.8)
    p.add_argument("--raw-pdf", action="store_true",
                   help="use raw density values instead of peak rescaling")
    p.add_argument("--seed", type=int, default=12345)
    p.add_argument("--ledger", action="store_true", help="also write the trade log CSV")
    p.add_argument("--debug-json", action="store_true", help="also write the JSON tensor variant")
    p.add_argument("--out", type=str, required=True)

    p = sub.add_parser("ingest",
                       help="bin a transaction-log CSV into a tensor")
    p.add_argument("ledger", type=str)
    p.add_argument("--delta", type=int, default=15, help="interval width in minutes")
    p.add_argument("--out", type=str, required=True)

    for name, extra in (("fit", "fit one rank"), ("corcondia", "scan ranks and select one")):
        p = sub.add_parser(name, help=extra)
        p.add_argument("tensor", type=str)
        if name == "fit":
            p.add_argument("--rank", type=int, required=True)
        else:
            p.add_argument("--rmax", type=int, required=True)
            p.add_argument("--lcc", type=float, default=85.0)
        p.add_argument("--restarts", type=int, default=20)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--max-sweeps", type=int, default=500)
        p.add_argument("--rel-tol", type=float, default=1e-8)
        p.add_argument("--init", type=str, default="random-scaled",
                       choices=("random-scaled", "random-uniform"))
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--out", type=str, required=True)

    p = sub.add_parser("analyze",
                       help="post-process a fit into activity reports")
    p.add_argument("fit", type=str)
    p.add_argument("--index", type=str, required=True)
    p.add_argument("--ledger", type=str, default=None,
                   help="transaction log for role/nationality statistics")
    p.add_argument("--percentile", type=float, default=90.0)
    p.add_argument("--smooth-window", type=int, default=20)
    p.add_argument("--out", type=str, required=True)
    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    handler = {
        "synth": _cmd_synth,
        "ingest": _cmd_ingest,
        "fit": _cmd_fit,
        "corcondia": _cmd_corcondia,
        "analyze": _cmd_analyze,
    }[args.command]
    try:
        return handler(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO
    except FitError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


def _cmd_synth(args) -> int:
    started = _time.perf_counter()
    cfg = SyntheticConfig(
        n_banks=args.banks,
        intervals=args.intervals,
        days=args.days,
        group_sizes=_float_int_tuple(args.group_sizes) if args.group_sizes else None,
        sigma=args.sigma,
        mus=_float_tuple(args.mus, 3, "--mus") if args.mus else None,
        peak_fitness=args.peak_fitness,
        rescale=not args.raw_pdf,
        seed=args.seed,
    )
    out = _out_dir(args)
    outputs = ["tensor.bin", "ground_truth.json"]
    if args.ledger:
        tensor, truth, log = generate_with_log(cfg)
        save_transactions(out / "ledger.csv", log_to_records(log, cfg))
        outputs.append("ledger.csv")
    else:
        tensor, truth = generate(cfg)
    tfio.write_tensor(out / "tensor.bin", tensor)
    tfio.dump_json(out / "ground_truth.json", tfio.ground_truth_to_dict(truth, cfg))
    if 600 % cfg.intervals == 0:
        index = TensorIndex(
            tuple(bank_label(i, cfg.n_banks) for i in range(cfg.n_banks)),
            tuple(_synth_dates(cfg.days)),
            600 // cfg.intervals,
        )
        tfio.write_index(out / "index.json", index)
        outputs.append("index.json")
    if args.debug_json:
        tfio.dump_json(out / "tensor_debug.json", tfio.tensor_debug_dict(tensor))
        outputs.append("tensor_debug.json")
    config = tfio.ground_truth_to_dict(truth, cfg)["config"]
    _write_manifest(out, "synth", config, {}, cfg.seed, started, outputs)
    print(f"synthetic market written to {out} "
          f"(dims {tensor.dims[0]}x{tensor.dims[1]}x{tensor.dims[2]}, "
          f"total mass {tensor.values.sum():.0f})")
    return EXIT_OK


def _float_int_tuple(text: str):
    return tuple(int(p) for p in text.split(","))


def _synth_dates(days: int):
    return [LOG_START_DATE + timedelta(days=k) for k in range(days)]


def _cmd_ingest(args) -> int:
    started = _time.perf_counter()
    out = _out_dir(args)
    try:
        loaded = load_transactions(args.ledger)
    except LedgerFormatError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO
    overnight = filter_overnight(loaded.records)
    tensor, index, excluded = build_tensor(overnight, args.delta)
    tfio.write_tensor(out / "tensor.bin", tensor)
    tfio.write_index(out / "index.json", index)
    report = {
        "rows_parsed": len(loaded.records),
        "rows_rejected": [{"line": i.line, "message": i.message} for i in loaded.issues],
        "overnight_kept": len(overnight),
        "out_of_window": [
            {"timestamp": r.timestamp.isoformat(), "reason": reason} for r, reason in excluded
        ],
        "banks": len(index.bank_ids),
        "days": len(index.day_dates),
        "delta_minutes": args.delta,
        "total_mass": float(tensor.values.sum()),
    }
    tfio.dump_json(out / "ingest_report.json", report)
    _write_manifest(out, "ingest", {"delta": args.delta},
                    {"ledger": args.ledger}, None, started,
                    ["tensor.bin", "index.json", "ingest_report.json"])
    if not overnight:
        print("warning: no overnight transactions; wrote an empty tensor", file=sys.stderr)
    print(f"tensor {tensor.dims[0]}x{tensor.dims[1]}x{tensor.dims[2]} written to {out} "
          f"({len(loaded.issues)} rejected rows, {len(excluded)} out-of-window)")
    return EXIT_OK


def _fit_config(args, rank: int) -> FitConfig:
    return FitConfig(
        rank=rank,
        max_sweeps=args.max_sweeps,
        rel_tol=args.rel_tol,
        restarts=args.restarts,
        seed=args.seed,
        init=args.init,
    )


def _restart_summary(results) -> list:
    rows = []
    for k, res in enumerate(results):
        if res is None:
            rows.append({"restart": k, "failed": True})
        else:
            rows.append({
                "restart": k,
                "seed": res.seed,
                "rel_error": res.rel_error,
                "sweeps_used": res.sweeps_used,
                "converged": res.converged,
            })
    return rows


def _cmd_fit(args) -> int:
    started = _time.perf_counter()
    tensor = tfio.read_tensor(args.tensor)
    cfg = _fit_config(args, args.rank)
    out = _out_dir(args)
    results = fit_restarts(tensor, cfg, jobs=args.jobs)
    ok = [r for r in results if r is not None]
    if not ok:
        raise FitError(f"all {cfg.restarts} restarts failed")
    best = min(ok, key=lambda r: (r.rel_error, r.seed))
    tfio.dump_json(out / "fit.json", tfio.fit_result_to_dict(best))
    tfio.dump_json(out / "restarts.json", _restart_summary(results))
    _write_manifest(out, "fit", _cfg_dict(cfg, args.jobs), {"tensor": args.tensor},
                    cfg.seed, started, ["fit.json", "restarts.json"])
    print(f"rank {cfg.rank}: best rel_error {best.rel_error:.6e} "
          f"(restart seed {best.seed}, {best.sweeps_used} sweeps)")
    return EXIT_OK


def _cfg_dict(cfg: FitConfig, jobs: int) -> dict:
    return {
        "rank": cfg.rank,
        "max_sweeps": cfg.max_sweeps,
        "rel_tol": cfg.rel_tol,
        "restarts": cfg.restarts,
        "seed": cfg.seed,
        "init": cfg.init,
        "jobs": jobs,
    }


def _cmd_corcondia(args) -> int:
    started = _time.perf_counter()
    if args.rmax < 1:
        raise UsageError(f"--rmax must be >= 1, got {args.rmax}")
    tensor = tfio.read_tensor(args.tensor)
    cfg = _fit_config(args, rank=1)
    out = _out_dir(args)
    report = rank_scan(tensor, args.rmax, args.lcc, cfg, jobs=args.jobs)
    tfio.dump_json(out / "rank_scan.json", tfio.rank_scan_to_dict(report))
    tfio.write_rank_scan_csv(out / "rank_scan.csv", report)
    config = _cfg_dict(cfg, args.jobs)
    config.update({"rmax": args.rmax, "lcc": args.lcc})
    del config["rank"]
    _write_manifest(out, "corcondia", config, {"tensor": args.tensor},
                    cfg.seed, started, ["rank_scan.json", "rank_scan.csv"])
    for rec in report.records:
        mean = "failed" if rec.cc_mean is None else f"{rec.cc_mean:.2f}"
        print(f"R={rec.rank}: mean cc {mean} ({rec.n_failed} failed runs)")
    print(f"selected rank: {report.selected_rank if report.selected_rank else 'none'}")
    return EXIT_OK


def _csv_cell(value) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return ""
    return repr(float(value))


def _write_csv(path: Path, header: list, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(c) if isinstance(c, (str, int)) else _csv_cell(c) for c in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cmd_analyze(args) -> int:
    started = _time.perf_counter()
    fit = tfio.fit_result_from_dict(tfio.load_json(args.fit))
    index = tfio.read_index(args.index)
    n, t, d = fit.factors.dims
    if (len(index.bank_ids), index.intervals, len(index.day_dates)) != (n, t, d):
        raise UsageError(
            f"index describes {len(index.bank_ids)} banks x {index.intervals} intervals "
            f"x {len(index.day_dates)} days but the fit has {n}x{t}x{d}"
        )
    out = _out_dir(args)
    inputs = {"fit": args.fit, "index": args.index}

    window = analysis.morning_window(index.delta)
    order = analysis.order_components(fit.factors, window)
    k = fit.factors.permute(order).normalize()
    rank = k.rank
    comp_names = [f"component_{r + 1}" for r in range(rank)]

    outputs = []

    _write_csv(out / "intraday_profiles.csv",
               ["interval_start"] + comp_names,
               ([index.interval_label(j)] + list(k.B[j]) for j in range(t)))
    outputs.append("intraday_profiles.csv")

    cw = k.weighted_C
    smooth = np.column_stack([moving_average(cw[:, r], args.smooth_window) for r in range(rank)])
    _write_csv(out / "interday_activity.csv",
               ["date"] + comp_names + [f"{c}_smoothed" for c in comp_names],
               ([index.day_dates[j].isoformat()] + list(cw[j]) + list(smooth[j])
                for j in range(d)))
    outputs.append("interday_activity.csv")

    shares = analysis.component_share(k)
    shares_smooth = np.column_stack(
        [moving_average(shares[:, r], args.smooth_window) for r in range(rank)]
    )
    _write_csv(out / "component_shares.csv",
               ["date"] + comp_names + [f"{c}_smoothed" for c in comp_names],
               ([index.day_dates[j].isoformat()] + list(shares[j]) + list(shares_smooth[j])
                for j in range(d)))
    outputs.append("component_shares.csv")

    members = analysis.affiliate_banks(k, args.percentile)
    _write_csv(out / "affiliation_sizes.csv", ["component", "n_banks"],
               ([comp_names[r], len(members[r])] for r in range(rank)))
    outputs.append("affiliation_sizes.csv")

    jac = analysis.jaccard_matrix(members)
    _write_csv(out / "jaccard.csv", ["component"] + comp_names,
               ([comp_names[r]] + list(jac[r]) for r in range(rank)))
    outputs.append("jaccard.csv")

    means = np.column_stack([analysis.membership_mean(k, r, members[r]) for r in range(rank)])
    _write_csv(out / "membership_means.csv", ["date"] + comp_names,
               ([index.day_dates[j].isoformat()] + list(means[j]) for j in range(d)))
    outputs.append("membership_means.csv")

    bundle = {
        "format": "analysis",
        "version": 1,
        "component_order": [int(v) for v in order],
        "morning_window_intervals": [int(j) for j in window],
        "percentile": args.percentile,
        "smooth_window": args.smooth_window,
        "affiliation": {
            comp_names[r]: [index.bank_ids[i] for i in members[r]] for r in range(rank)
        },
        "jaccard": [[float(v) for v in row] for row in jac],
        "roles": None,
        "nationality": None,
    }

    if args.ledger is not None:
        inputs["ledger"] = args.ledger
        loaded = load_transactions(args.ledger)
        overnight = filter_overnight(loaded.records)
        known = set(index.bank_ids)
        usable = [r for r in overnight if r.lender_id in known and r.borrower_id in known]
        flags, conflicts = analysis.domestic_flags_from_records(usable, index)
        p_domestic = float(flags.mean())
        role_rows, nat_rows = [], []
        roles_bundle, nat_bundle = {}, {}
        for r in range(rank):
            stats = analysis.attribute_frequencies(usable, index, members[r])
            for j, role in enumerate(stats.roles):
                role_rows.append([comp_names[r], role, stats.mean[j],
                                  stats.ci95[j][0], stats.ci95[j][1]])
            roles_bundle[comp_names[r]] = {
                "mean": [float(v) for v in stats.mean],
                "ci95": [[float(a), float(b)] for a, b in stats.ci95],
                "n_banks": int(stats.bank_indices.size),
                "excluded": [index.bank_ids[i] for i in stats.excluded],
            }
            band = analysis.nationality_test(members[r], flags, p_domestic)
            nat_rows.append([comp_names[r], band.n_members, band.observed_share,
                             band.band[0], band.band[1], str(band.outside).lower(), band.p])
            nat_bundle[comp_names[r]] = {
                "n_members": band.n_members,
                "observed_share": band.observed_share,
                "band": [band.band[0], band.band[1]],
                "outside": band.outside,
            }
        _write_csv(out / "role_frequencies.csv",
                   ["component", "role", "mean", "ci_lo", "ci_hi"], role_rows)
        _write_csv(out / "nationality.csv",
                   ["component", "n_members", "observed_share", "band_lo", "band_hi",
                    "outside", "p"], nat_rows)
        outputs += ["role_frequencies.csv", "nationality.csv"]
        bundle["roles"] = roles_bundle
        bundle["nationality"] = {"p": p_domestic, "flag_conflicts": conflicts,
                                 "components": nat_bundle}

    tfio.dump_json(out / "analysis.json", bundle)
    outputs.append("analysis.json")
    config = {"percentile": args.percentile, "smooth_window": args.smooth_window,
              "ledger_provided": args.ledger is not None}
    _write_manifest(out, "analyze", config, inputs, None, started, outputs)
    print(f"analysis reports written to {out} ({rank} components)")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
