"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data validation error, 3 numeric failure.
Reports are JSON unless ``--format csv`` is given for a tabular command.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from robustks import __version__
from robustks.ecdf import MIN_DKW_SAMPLES, dkw_threshold, ecdf_from_samples, ks_distance
from robustks.errors import DataValidationError, NumericalFailure
from robustks.formats import AlphaReport, file_sha256, load_gaps, save_wide
from robustks.model_metrics import (
    LogitGapMatrix,
    auto_edges,
    churn,
    ensemble_gaps,
    histogram_envelope,
    looe_gaps,
    test_accuracy,
)
from robustks.robust_test import estimate_alpha
from robustks.toytrain import Scenario, TrainConfig, run_scenario
from robustks.trimming import min_trimmed_ks

log = logging.getLogger("robustks")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_alphas(text: str) -> list:
    """``START:STOP:STEP`` with STOP included, e.g. ``0:0.5:0.01`` gives 51 levels."""
    try:
        start, stop, step = (float(p) for p in text.split(":"))
    except ValueError:
        raise UsageError(f"--alphas expects START:STOP:STEP, got {text!r}") from None
    if step <= 0 or stop < start:
        raise UsageError("--alphas needs STEP > 0 and STOP >= START")
    count = int(round((stop - start) / step)) + 1
    return [round(start + i * step, 12) for i in range(count)]


def _model_index(matrix: LogitGapMatrix, k: int, flag: str) -> int:
    if not 0 <= k < matrix.n_models:
        raise UsageError(f"{flag} {k} out of range: file has {matrix.n_models} models")
    return k


def _load(args, attr="gaps") -> LogitGapMatrix:
    return load_gaps(getattr(args, attr), args.gaps_format)


def _reference_vector(matrix, a, b):
    """Gap vector named by ``--b``: a model index or ``looe`` (leave-one-out of ``a``)."""
    if b == "looe":
        return looe_gaps(matrix, a), "looe"
    try:
        k = int(b)
    except ValueError:
        raise UsageError(f"--b must be a model index or 'looe', got {b!r}") from None
    return matrix.gaps[_model_index(matrix, k, "--b")], matrix.model_ids[k]


def _emit(args, report: dict, table: list | None = None) -> None:
    if args.format == "csv":
        rows = table if table is not None else [
            {k: v for k, v in report.items() if not isinstance(v, (dict, list))}
        ]
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        text = buf.getvalue()
    else:
        if table is not None:
            report = {**report, "table": table}
        text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if getattr(args, "out", None):
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_alpha(args) -> int:
    matrix = _load(args)
    k = _model_index(matrix, args.model_index, "--model-index")
    reference = load_gaps(args.reference, args.gaps_format) if args.reference else None
    if matrix.n_points < MIN_DKW_SAMPLES:
        raise DataValidationError(
            f"{matrix.n_points} test points: the DKW threshold with C=2 needs N' > 458"
        )
    grid = parse_alphas(args.alphas)
    est = estimate_alpha(
        matrix, k, delta=args.delta, B=args.bootstrap, alpha_grid=grid, seed=args.seed,
        reference=reference, paired=args.paired, n_jobs=args.jobs,
    )
    config = {
        "command": "alpha",
        "gaps": str(args.gaps),
        "gaps_sha256": file_sha256(args.gaps),
        "gaps_format": args.gaps_format,
        "reference": str(args.reference) if args.reference else None,
        "reference_sha256": file_sha256(args.reference) if args.reference else None,
        "model_index": k,
        "delta": args.delta,
        "bootstrap": args.bootstrap,
        "alphas": args.alphas,
        "seed": args.seed,
        "paired": args.paired,
    }
    report = AlphaReport.from_estimate(est, matrix, k, config)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text)
    print(repr(report.alpha_hat))
    return EXIT_OK


def cmd_replay(args) -> int:
    """Re-run the configuration stored in an alpha report and compare."""
    old = AlphaReport.from_json(Path(args.report).read_text())
    cfg = old.config
    if cfg.get("command") != "alpha":
        raise DataValidationError("report does not embed an alpha configuration")
    for key in ("gaps", "reference"):
        if cfg.get(key) and file_sha256(cfg[key]) != cfg[f"{key}_sha256"]:
            raise DataValidationError(f"{cfg[key]} changed since the report was written")
    matrix = load_gaps(cfg["gaps"], cfg["gaps_format"])
    reference = load_gaps(cfg["reference"], cfg["gaps_format"]) if cfg.get("reference") else None
    est = estimate_alpha(
        matrix, cfg["model_index"], delta=cfg["delta"], B=cfg["bootstrap"],
        alpha_grid=parse_alphas(cfg["alphas"]), seed=cfg["seed"],
        reference=reference, paired=cfg["paired"],
    )
    new = AlphaReport.from_estimate(est, matrix, cfg["model_index"], cfg)
    new.tool_version = old.tool_version
    same = new.to_json() == old.to_json()
    print("identical" if same else "MISMATCH")
    return EXIT_OK if same else EXIT_DATA


def cmd_ks(args) -> int:
    matrix = _load(args)
    a = _model_index(matrix, args.a, "--a")
    other, other_name = _reference_vector(matrix, a, args.b)
    stat = ks_distance(ecdf_from_samples(matrix.gaps[a]), ecdf_from_samples(other))
    report = {"a": matrix.model_ids[a], "b": other_name, "statistic": stat, "delta": args.delta,
              "n_points": matrix.n_points}
    if matrix.n_points >= MIN_DKW_SAMPLES:
        tau = dkw_threshold(matrix.n_points, args.delta)
        report.update(tau=tau, reject=bool(stat > tau))
    else:
        report.update(tau=None, reject=None)
    _emit(args, report)
    return EXIT_OK


def cmd_trim_curve(args) -> int:
    matrix = _load(args)
    k = _model_index(matrix, args.model_index, "--model-index")
    reference = load_gaps(args.reference, args.gaps_format) if args.reference else matrix
    target = ecdf_from_samples(looe_gaps(reference, k))
    source = ecdf_from_samples(matrix.gaps[k])
    tau = dkw_threshold(matrix.n_points, args.delta) if matrix.n_points >= MIN_DKW_SAMPLES else None
    table = []
    for alpha in parse_alphas(args.alphas):
        d = min_trimmed_ks(target, source, alpha).distance
        table.append({"alpha": alpha, "distance": d, "reject": None if tau is None else bool(d > tau)})
    _emit(args, {"model_index": k, "model_id": matrix.model_ids[k], "tau": tau, "delta": args.delta}, table)
    return EXIT_OK


def cmd_churn(args) -> int:
    matrix = _load(args)
    a = _model_index(matrix, args.a, "--a")
    other, other_name = _reference_vector(matrix, a, args.b)
    _emit(args, {"a": matrix.model_ids[a], "b": other_name, "churn": churn(matrix.gaps[a], other)})
    return EXIT_OK


def cmd_accuracy(args) -> int:
    matrix = _load(args)
    indices = range(matrix.n_models) if args.model_index is None else [
        _model_index(matrix, args.model_index, "--model-index")
    ]
    table = [{"model_id": matrix.model_ids[k], "accuracy": test_accuracy(matrix.gaps[k], matrix.labels)}
             for k in indices]
    report = {"ensemble_accuracy": test_accuracy(ensemble_gaps(matrix), matrix.labels),
              "n_points": matrix.n_points}
    _emit(args, report, table)
    return EXIT_OK


def cmd_ensemble(args) -> int:
    matrix = _load(args)
    if args.exclude is None:
        gaps, name = ensemble_gaps(matrix), "ensemble"
    else:
        k = _model_index(matrix, args.exclude, "--exclude")
        gaps, name = looe_gaps(matrix, k), f"looe_{matrix.model_ids[k]}"
    if args.out_gaps:
        save_wide(LogitGapMatrix(gaps, matrix.labels, [name], matrix.point_ids), args.out_gaps)
    table = [{"model_id": mid, "churn_vs_" + name: churn(row, gaps)}
             for mid, row in zip(matrix.model_ids, matrix.gaps)]
    report = {"name": name, "accuracy": test_accuracy(gaps, matrix.labels), "n_models": matrix.n_models}
    _emit(args, report, table)
    return EXIT_OK


def cmd_hist(args) -> int:
    matrix = _load(args)
    if args.range:
        try:
            lo, hi = (float(p) for p in args.range.split(":"))
        except ValueError:
            raise UsageError("--range expects LO:HI") from None
        if not hi > lo:
            raise UsageError("--range needs HI > LO")
        edges = np.linspace(lo, hi, args.bins + 1)
    else:
        edges = auto_edges(matrix.gaps, args.bins)
    h = histogram_envelope(matrix, edges, clip=args.clip)
    table = [
        {"bin_left": float(edges[i]), "bin_right": float(edges[i + 1]),
         "ensemble": float(h.probabilities[i]), "envelope_min": float(h.envelope_min[i]),
         "envelope_max": float(h.envelope_max[i])}
        for i in range(args.bins)
    ]
    _emit(args, {"bins": args.bins, "n_models": matrix.n_models}, table)
    return EXIT_OK


def cmd_toy_experiment(args) -> int:
    snapshots = None if args.snapshots is None else [int(e) for e in args.snapshots.split(",")]
    config = TrainConfig(
        scenario=Scenario(args.scenario), M=args.models, epochs=args.epochs,
        batch_size=args.batch_size, learning_rate=args.lr,
        hidden_widths=tuple(int(w) for w in args.hidden.split(",")),
        n_train=args.n_train, n_test=args.n_test, master_seed=args.seed,
        snapshot_epochs=snapshots,
    )
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    mats = run_scenario(config, args.test_seed, n_jobs=args.jobs)
    files = []
    for epoch, matrix in mats.items():
        path = outdir / f"epoch_{epoch:03d}.csv"
        save_wide(matrix, path)
        accs = [test_accuracy(row, matrix.labels) for row in matrix.gaps]
        files.append({"epoch": epoch, "file": path.name, "sha256": file_sha256(path),
                      "mean_accuracy": float(np.mean(accs))})
    manifest = {
        "tool_version": __version__,
        "scenario": config.scenario.value,
        "config": {
            "M": config.M, "epochs": config.epochs, "batch_size": config.batch_size,
            "learning_rate": config.learning_rate, "widths": list(config.widths),
            "n_train": config.n_train, "n_test": config.n_test, "master_seed": config.master_seed,
            "test_seed": args.test_seed, "snapshot_epochs": list(config.snapshot_epochs),
            "blobs": {"mean0": list(config.blobs.mean0), "mean1": list(config.blobs.mean1),
                      "cov0": [list(r) for r in config.blobs.cov0],
                      "cov1": [list(r) for r in config.blobs.cov1], "p1": config.blobs.p1},
        },
        "files": files,
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    _emit(args, {"outdir": str(outdir), "n_files": len(files)}, files)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="robustks", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help, gaps=True):
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=func)
        if gaps:
            p.add_argument("--gaps", required=True, help="gap file")
            p.add_argument("--gaps-format", choices=("wide", "long"), default="wide")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--out", help="write the report here instead of stdout")
        return p

    p = add("alpha", cmd_alpha, "bootstrap alpha-hat of one model against its LOOE")
    p.add_argument("--model-index", type=int, required=True)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--bootstrap", type=int, default=100)
    p.add_argument("--alphas", default="0:0.5:0.01")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reference", help="gap file whose LOOE is the comparison target")
    p.add_argument("--paired", action="store_true", help="reuse one bootstrap index set for both CDFs")
    p.add_argument("--jobs", type=int, default=1)

    p = add("replay", cmd_replay, "re-run an alpha report and check it reproduces", gaps=False)
    p.add_argument("report")

    p = add("ks", cmd_ks, "classical KS distance/test between a model and another model or its LOOE")
    p.add_argument("--a", type=int, required=True)
    p.add_argument("--b", default="looe")
    p.add_argument("--delta", type=float, default=0.05)

    p = add("trim-curve", cmd_trim_curve, "trimmed KS distance to the LOOE over a grid of alphas")
    p.add_argument("--model-index", type=int, required=True)
    p.add_argument("--alphas", default="0:0.5:0.05")
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--reference")

    p = add("churn", cmd_churn, "prediction disagreement between two models (or a model and its LOOE)")
    p.add_argument("--a", type=int, required=True)
    p.add_argument("--b", required=True)

    p = add("accuracy", cmd_accuracy, "test accuracy per model and of the full ensemble")
    p.add_argument("--model-index", type=int)

    p = add("ensemble", cmd_ensemble, "full or leave-one-out ensemble gaps")
    p.add_argument("--exclude", type=int)
    p.add_argument("--out-gaps", help="write the ensemble gaps as a one-model wide file")

    p = add("hist", cmd_hist, "ensemble logit-gap histogram with per-model envelope")
    p.add_argument("--bins", type=int, default=30)
    p.add_argument("--range", help="LO:HI (defaults to the data range)")
    p.add_argument("--clip", action="store_true")

    p = add("toy-experiment", cmd_toy_experiment, "train toy MLPs and write per-epoch gap files", gaps=False)
    p.add_argument("--scenario", choices=[s.value for s in Scenario], default="all")
    p.add_argument("--models", type=int, default=20)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--hidden", default="32", help="comma-separated hidden widths")
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-seed", type=int, default=1)
    p.add_argument("--snapshots", help="comma-separated epochs (default: every epoch)")
    p.add_argument("--outdir", required=True)
    p.add_argument("--jobs", type=int, default=1)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"robustks: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataValidationError as exc:
        print(f"robustks: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalFailure as exc:
        print(f"robustks: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
