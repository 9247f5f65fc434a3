"""Command-line surface: score, evaluate, explain, synth, convert.

Outputs are deterministic for fixed inputs, seed and flags; the thread count
never changes bytes. Exit codes: 0 success, 2 I/O, 3 validation/format,
4 degenerate input.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import synth as synth_mod
from .data import (
    FeatureDataset,
    LinearHead,
    csv_to_cfod_stream,
    csv_to_dataset,
    dataset_to_csv,
    load_dataset,
    load_from_manifest,
    load_head,
    save_dataset,
)
from .errors import (
    DegenerateInputError,
    EmptyClassError,
    FormatError,
    SearchError,
    ToolkitError,
    ValidationError,
)
from .explain import build_report, render_text
from .index import build_index
from .metrics import evaluate_detection
from .scoring import ScoreConfig, compute_mu_train, score_batch

EXIT_OK = 0
EXIT_IO = 2
EXIT_VALIDATION = 3
EXIT_DEGENERATE = 4

THREADS_ENV = "CF_OOD_THREADS"


@dataclass(frozen=True)
class RunConfig:
    """Parsed invocation for the scoring-family subcommands."""

    subcommand: str
    train: str
    test: str
    head: Optional[str] = None
    ood: tuple[str, ...] = ()
    out: Optional[str] = None
    csv_out: Optional[str] = None
    method: str = "nnce"
    k_classes: Optional[int] = None
    normalize: bool = True
    average: bool = True
    filter_misclassified: bool = True
    k_neighbours: int = 4
    tau: float = 0.0
    rows: Optional[str] = None
    text: bool = False
    threads: int = 1
    time_enabled: bool = False

    def score_config(self) -> ScoreConfig:
        return ScoreConfig(
            method=self.method,
            k_classes=self.k_classes,
            normalize=self.normalize,
            average=self.average,
        )


def _default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError(f"{THREADS_ENV} must be an integer, got {env!r}")
    return 1


def _load_train(cfg: RunConfig) -> tuple[FeatureDataset, LinearHead]:
    ds, head, _ = _load_any(cfg.train)
    if cfg.head:
        head = load_head(cfg.head)
    if head is None:
        raise ValidationError(
            "no head available: pass --head or reference one in the train manifest"
        )
    return ds, head


def _load_any(path: str) -> tuple[FeatureDataset, Optional[LinearHead], Optional[object]]:
    """Accept either a manifest (.json) or a bare CFOD file."""
    if str(path).endswith(".json"):
        ds, head, manifest = load_from_manifest(path)
        return ds, head, manifest
    return load_dataset(path), None, None


def _open_out(path: Optional[str]):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", encoding="utf-8"), True


def _cfg_from_args(args: argparse.Namespace) -> RunConfig:
    threads = args.threads if args.threads is not None else _default_threads()
    return RunConfig(
        subcommand=args.subcommand,
        train=args.train,
        test=args.test,
        head=getattr(args, "head", None),
        ood=tuple(getattr(args, "ood", []) or []),
        out=getattr(args, "out", None),
        csv_out=getattr(args, "csv", None),
        method=args.method,
        k_classes=args.k_classes,
        normalize=not args.no_normalize,
        average=not args.no_average,
        filter_misclassified=not args.include_misclassified,
        k_neighbours=getattr(args, "k_neighbours", 4),
        tau=getattr(args, "tau", 0.0),
        rows=getattr(args, "rows", None),
        text=getattr(args, "text", False),
        threads=threads,
        time_enabled=getattr(args, "time", False),
    )


def _score_records(cfg: RunConfig) -> tuple[list[dict], float]:
    train_ds, head = _load_train(cfg)
    test_ds, _, _ = _load_any(cfg.test)
    idx = build_index(train_ds, head, filter_misclassified=cfg.filter_misclassified)
    stats = compute_mu_train(train_ds)
    started = time.perf_counter()
    scored = score_batch(test_ds, idx, head, stats, cfg.score_config(), cfg.threads)
    elapsed_ms = (time.perf_counter() - started) * 1000.0
    records = []
    for i, s in enumerate(scored):
        records.append(
            {
                "row": i,
                "predicted_class": s.predicted_class,
                "score": s.score,
                "per_class_distances": {str(c): d for c, d in sorted(s.per_class_distances.items())},
                "normalizer": s.normalizer,
            }
        )
    return records, elapsed_ms


def cmd_score(args: argparse.Namespace) -> int:
    cfg = _cfg_from_args(args)
    records, elapsed_ms = _score_records(cfg)
    out, close = _open_out(cfg.out)
    try:
        for rec in records:
            out.write(json.dumps(rec, sort_keys=True))
            out.write("\n")
    finally:
        if close:
            out.close()
    if cfg.time_enabled:
        n = len(records)
        print(
            f"timing: scored {n} inputs in {elapsed_ms:.3f} ms total, "
            f"{elapsed_ms / n:.3f} ms/input (threads={cfg.threads})",
            file=sys.stderr,
        )
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _cfg_from_args(args)
    if not cfg.ood:
        raise ValidationError("evaluate needs at least one --ood manifest")
    train_ds, head = _load_train(cfg)
    idx = build_index(train_ds, head, filter_misclassified=cfg.filter_misclassified)
    stats = compute_mu_train(train_ds)
    score_cfg = cfg.score_config()

    def _scores(path: str) -> list[float]:
        ds, _, _ = _load_any(path)
        return [s.score for s in score_batch(ds, idx, head, stats, score_cfg, cfg.threads)]

    id_scores = _scores(cfg.test)
    per_dataset = []
    for ood_path in cfg.ood:
        m = evaluate_detection(id_scores, _scores(ood_path))
        per_dataset.append({"name": Path(ood_path).stem, **m.to_dict()})
    report = {
        "method": cfg.method,
        "k_classes": cfg.k_classes,
        "normalize": cfg.normalize,
        "average": cfg.average,
        "id_count": len(id_scores),
        "datasets": per_dataset,
        "average": {
            "auroc": float(np.mean([d["auroc"] for d in per_dataset])),
            "fpr95": float(np.mean([d["fpr95"] for d in per_dataset])),
        },
    }
    out, close = _open_out(cfg.out)
    try:
        json.dump(report, out, indent=2, sort_keys=True)
        out.write("\n")
    finally:
        if close:
            out.close()
    if cfg.csv_out:
        with open(cfg.csv_out, "w", encoding="utf-8") as f:
            f.write("dataset,fpr95,auroc\n")
            for d in per_dataset:
                f.write(f"{d['name']},{d['fpr95']!r},{d['auroc']!r}\n")
            f.write(
                f"average,{report['average']['fpr95']!r},{report['average']['auroc']!r}\n"
            )
    return EXIT_OK


def cmd_explain(args: argparse.Namespace) -> int:
    cfg = _cfg_from_args(args)
    train_ds, head = _load_train(cfg)
    test_ds, _, _ = _load_any(cfg.test)
    idx = build_index(train_ds, head, filter_misclassified=cfg.filter_misclassified)
    stats = compute_mu_train(train_ds)
    if cfg.rows:
        try:
            rows = [int(r) for r in cfg.rows.split(",") if r.strip() != ""]
        except ValueError:
            raise ValidationError(f"--rows must be comma-separated integers, got {cfg.rows!r}")
        bad = [r for r in rows if not 0 <= r < test_ds.row_count]
        if bad:
            raise ValidationError(f"--rows out of range [0, {test_ds.row_count}): {bad}")
    else:
        rows = list(range(test_ds.row_count))
    reports = []
    for i in rows:
        ref = test_ds.input_refs[i] if test_ds.input_refs else f"row:{i}"
        reports.append(
            build_report(
                idx,
                head,
                stats,
                test_ds.features[i],
                ref,
                cfg.k_neighbours,
                cfg.tau,
                cfg.score_config(),
            )
        )
    out, close = _open_out(cfg.out)
    try:
        for rep in reports:
            out.write(json.dumps(rep.to_dict(), sort_keys=True))
            out.write("\n")
    finally:
        if close:
            out.close()
    if cfg.text:
        for rep in reports:
            print(render_text(rep))
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    spec = synth_mod.SynthSpec(
        classes=args.classes,
        dim=args.dim,
        per_class=args.per_class,
        test_count=args.test_count,
        ood_mid_count=args.ood_mid,
        ood_far_count=args.ood_far,
        separation=args.separation,
        jitter=args.jitter,
        seed=args.seed,
    )
    result = synth_mod.generate(args.out_dir, spec)
    summary = {
        "out_dir": result.out_dir,
        "train_manifest": result.train_manifest,
        "test_manifest": result.test_manifest,
        "ood_mid_manifest": result.ood_mid_manifest,
        "ood_far_manifest": result.ood_far_manifest,
        "head_path": result.head_path,
        "head_train_accuracy": result.head_train_accuracy,
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_convert(args: argparse.Namespace) -> int:
    if args.to == "cfod":
        if args.stream:
            csv_to_cfod_stream(args.input, args.output, class_count=args.classes)
        else:
            save_dataset(csv_to_dataset(args.input, class_count=args.classes), args.output)
    else:
        dataset_to_csv(load_dataset(args.input), args.output)
    return EXIT_OK


def _add_scoring_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=("nnce", "nice"), default="nnce")
    p.add_argument("--k-classes", type=int, default=None, dest="k_classes",
                   help="score only the k most probable non-predicted classes")
    p.add_argument("--no-normalize", action="store_true",
                   help="skip dividing by the distance to the training mean")
    p.add_argument("--no-average", action="store_true",
                   help="sum per-class distances instead of averaging")
    p.add_argument("--include-misclassified", action="store_true",
                   help="keep head-misclassified training rows in the search pool")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (default: ${THREADS_ENV} or 1)")


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfood",
        description="Counterfactual-distance out-of-distribution detection toolkit",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("score", help="score a test set against a training set")
    p.add_argument("--train", required=True, help="train manifest (.json) or .cfod file")
    p.add_argument("--head", help="CFHD file (overrides the manifest's head)")
    p.add_argument("--test", required=True, help="test manifest or .cfod file")
    p.add_argument("--out", help="JSON-lines output path (default: stdout)")
    p.add_argument("--time", action="store_true", help="report ms/input on stderr")
    _add_scoring_flags(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="compute AUROC/FPR95 for ID vs OOD sets")
    p.add_argument("--train", required=True)
    p.add_argument("--head")
    p.add_argument("--test", required=True, help="ID test manifest or .cfod file")
    p.add_argument("--ood", action="append", required=True,
                   help="OOD manifest or .cfod file (repeatable)")
    p.add_argument("--out", help="metrics JSON path (default: stdout)")
    p.add_argument("--csv", help="optional CSV table path")
    _add_scoring_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("explain", help="emit neighbour reports for query rows")
    p.add_argument("--train", required=True)
    p.add_argument("--head")
    p.add_argument("--test", required=True, help="query manifest or .cfod file")
    p.add_argument("--rows", help="comma-separated row indices (default: all)")
    p.add_argument("--k-neighbours", type=int, default=4, dest="k_neighbours")
    p.add_argument("--tau", type=float, required=True, help="ID/OOD threshold")
    p.add_argument("--out", help="JSON-lines output path (default: stdout)")
    p.add_argument("--text", action="store_true", help="also print text reports")
    _add_scoring_flags(p)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("synth", help="generate a seeded synthetic benchmark")
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--per-class", type=int, default=500, dest="per_class")
    p.add_argument("--test-count", type=int, default=500, dest="test_count")
    p.add_argument("--ood-mid", type=int, default=500, dest="ood_mid")
    p.add_argument("--ood-far", type=int, default=0, dest="ood_far")
    p.add_argument("--separation", type=float, default=10.0,
                   help="distance between the closest cluster means, in sigmas")
    p.add_argument("--jitter", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("convert", help="convert between CSV and CFOD")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--to", choices=("cfod", "csv"), required=True,
                   help="output format")
    p.add_argument("--classes", type=int, default=None,
                   help="class count override for CSV input")
    p.add_argument("--stream", action="store_true",
                   help="stream CSV input instead of buffering it")
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except DegenerateInputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (FormatError, ValidationError, EmptyClassError, SearchError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except ToolkitError as e:  # pragma: no cover - safety net
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
