"""Command-line surface: train, predict, evaluate, ablate, synth.

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 internal error.
``DSNA_THREADS`` caps prediction parallelism (output order always matches
input order).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .approx import dsna_predict
from .core import (
    CLASSIFICATION,
    REGRESSION,
    ConfigError,
    DatasetError,
    DsnaConfig,
    ForestConfig,
    evaluate_metrics,
    load_dataset,
)
from .forest import train_forest
from .harness import (
    SyntheticSpec,
    gen_imbalanced_gaussians,
    gen_imbalanced_regression,
    run_ablation,
    write_ablation_report,
)
from .model_io import FORMAT_VERSION, ModelFile, load_model, save_model

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


def _fmt(value, task):
    if task == CLASSIFICATION:
        return str(int(value))
    return f"{float(value):.6g}"


def _forest_config_from_args(args):
    return ForestConfig(
        tree_count=args.trees,
        max_depth=args.max_depth,
        min_node_size=args.min_node_size,
        min_gain=args.min_gain,
        svm_cost=args.svm_cost,
        svr_margin=args.svr_margin,
        label_bins=args.label_bins,
        candidate_factor=args.candidate_factor,
        seed=args.seed,
        cost_sensitive=not args.plain,
    )


def _dsna_config_from_args(args):
    radius = args.radius
    if radius != "adaptive":
        radius = float(radius)
    return DsnaConfig(
        cluster_count=args.clusters,
        overlap_slack=args.overlap_slack,
        sparsity_penalty=args.sparsity,
        prior_penalty=args.prior_weight,
        distance_tradeoff=args.tradeoff,
        prior_decay=args.decay,
        neighbor_radius=radius,
        vote_threshold=args.vote_threshold,
        max_outer_iters=args.max_outer_iters,
        label_tol=args.label_tol,
    )


def _cmd_train(args):
    dataset = load_dataset(args.data, args.label_col, args.task)
    forest = train_forest(dataset, _forest_config_from_args(args))
    model = ModelFile(
        format_version=FORMAT_VERSION,
        label_name=args.label_col,
        forest=forest,
        dsna_config=_dsna_config_from_args(args),
    )
    save_model(model, args.out)
    print(
        f"trained {forest.config.tree_count} trees on {dataset.n} samples "
        f"(D={dataset.dimension}, task={dataset.task}) -> {args.out}"
    )
    return EXIT_OK


def _load_queries(path, model):
    """Read feature rows; a column named like the model's label is dropped unread."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty query file") from None
        drop = header.index(model.label_name) if model.label_name in header else None
        expected = len(header) - (drop is not None)
        if expected != model.forest.dimension:
            raise DatasetError(
                f"{path}: query file has {expected} feature columns, "
                f"model expects {model.forest.dimension}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise DatasetError(
                    f"{path} line {lineno}: expected {len(header)} columns, got {len(row)}"
                )
            try:
                rows.append(
                    [float(c) for i, c in enumerate(row) if i != drop]
                )
            except ValueError:
                raise DatasetError(f"{path} line {lineno}: non-numeric feature") from None
    if not rows:
        raise DatasetError(f"{path}: no query rows")
    return np.asarray(rows, dtype=np.float64)


def _thread_count():
    env = os.environ.get("DSNA_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


def _cmd_predict(args):
    model = load_model(args.model)
    queries = _load_queries(args.data, model)
    forest, cfg = model.forest, model.dsna_config

    def one(row):
        return dsna_predict(forest, row, cfg)

    threads = _thread_count()
    if threads > 1 and len(queries) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            solutions = list(pool.map(one, queries))
    else:
        solutions = [one(row) for row in queries]

    lines = []
    for sol in solutions:
        if args.trace:
            trace = ",".join(f"{v:.6g}" for v in sol.objective_trace)
            lines.append(
                f"{_fmt(sol.label, forest.task)}\titerations={sol.outer_iterations}"
                f"\tcluster={sol.cluster_index}\tconverged={sol.outer_converged}"
                f"\tobjective={trace}"
            )
        else:
            lines.append(_fmt(sol.label, forest.task))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_evaluate(args):
    model = load_model(args.model)
    label_col = args.label_col or model.label_name
    dataset = load_dataset(args.data, label_col, model.forest.task)
    if dataset.dimension != model.forest.dimension:
        raise DatasetError(
            f"evaluation data has D={dataset.dimension}, model expects {model.forest.dimension}"
        )
    preds = [dsna_predict(model.forest, row, model.dsna_config).label for row in dataset.features]
    report = evaluate_metrics(preds, dataset.labels, model.forest.task)
    for key, value in sorted(report.as_dict().items()):
        if isinstance(value, float):
            print(f"{key} = {value:.6g}")
        elif isinstance(value, dict):
            for sub, v in sorted(value.items()):
                print(f"{key}[{sub}] = {v:.6g}")
        elif key != "bin_edges":
            print(f"{key} = {value}")
    if args.out:
        Path(args.out).write_text(json.dumps(report.as_dict(), indent=2), encoding="utf-8")
    return EXIT_OK


def read_spec_file(path):
    """Parse a flat ``key = value`` spec file (# comments, optional quotes)."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path} line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip().strip("\"'")
    return values


def _spec_from_mapping(values):
    task = values.get("task")
    if task is None:
        raise ConfigError("spec file must set 'task'")
    kwargs = {"task": task, "sample_count": int(values.get("samples", 200))}
    if "seed" in values:
        kwargs["seed"] = int(values["seed"])
    if "ratio" in values:
        kwargs["imbalance_ratio"] = tuple(int(p) for p in values["ratio"].split(":"))
    for key, conv in (
        ("overlap", float),
        ("dimension", int),
        ("curve", str),
        ("curve_scale", float),
        ("noise_sd", float),
        ("skew", float),
    ):
        if key in values:
            kwargs[key] = conv(values[key])
    if "x_range" in values:
        lo, hi = values["x_range"].split(",")
        kwargs["x_range"] = (float(lo), float(hi))
    if "hole" in values:
        lo, hi = values["hole"].split(",")
        kwargs["hole"] = (float(lo), float(hi))
    return SyntheticSpec(**kwargs)


def _generate(spec, seed=None):
    if spec.task == CLASSIFICATION:
        return gen_imbalanced_gaussians(spec, seed)
    return gen_imbalanced_regression(spec, seed)


def _cmd_synth(args):
    spec = _spec_from_mapping(read_spec_file(args.spec))
    dataset = _generate(spec, args.seed)
    with open(args.out, "w", encoding="utf-8") as fh:
        names = [f"x{i + 1}" for i in range(dataset.dimension)]
        fh.write(",".join(names + ["label"]) + "\n")
        for row, label in zip(dataset.features, dataset.labels):
            cells = [repr(float(v)) for v in row]
            cells.append(_fmt(label, dataset.task) if dataset.task == CLASSIFICATION else repr(float(label)))
            fh.write(",".join(cells) + "\n")
    print(f"wrote {dataset.n} rows (D={dataset.dimension}, task={dataset.task}) -> {args.out}")
    return EXIT_OK


def _config_overrides(values, prefix, base_kwargs):
    out = dict(base_kwargs)
    for key, value in values.items():
        if not key.startswith(prefix):
            continue
        name = key[len(prefix):]
        if name in out:
            kind = type(out[name])
            out[name] = kind(value) if kind is not bool else value.lower() == "true"
        else:
            out[name] = value
    return out


def _cmd_ablate(args):
    values = read_spec_file(args.spec)
    spec = _spec_from_mapping(values)
    dataset = _generate(spec)
    from dataclasses import asdict

    forest_cfg = ForestConfig(**_config_overrides(values, "forest.", asdict(ForestConfig())))
    dsna_kwargs = _config_overrides(values, "dsna.", asdict(DsnaConfig()))
    if isinstance(dsna_kwargs.get("neighbor_radius"), str) and dsna_kwargs["neighbor_radius"] != "adaptive":
        dsna_kwargs["neighbor_radius"] = float(dsna_kwargs["neighbor_radius"])
    dsna_cfg = DsnaConfig(**dsna_kwargs)
    seeds = [spec.seed + i for i in range(args.seeds)]
    report = run_ablation(dataset, forest_cfg, dsna_cfg, seeds)
    summary_path = write_ablation_report(report, args.out)
    print(f"ablation over seeds {seeds} -> {summary_path.parent}")
    for method in report.methods:
        parts = [
            f"{key}={mean:.6g}+/-{sd:.6g}"
            for key, (mean, sd) in sorted(report.aggregates[method].items())
        ]
        print(f"  {method}: " + "  ".join(parts))
    return EXIT_OK


def _parser():
    p = argparse.ArgumentParser(
        prog="dsna",
        description="Cost-sensitive forest + discriminative sparse neighbor approximation",
    )
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a delimited dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--label-col", required=True)
    t.add_argument("--task", required=True, choices=[CLASSIFICATION, REGRESSION])
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--trees", type=int, default=20)
    t.add_argument("--max-depth", type=int, default=10)
    t.add_argument("--min-node-size", type=int, default=5)
    t.add_argument("--min-gain", type=float, default=1e-7)
    t.add_argument("--svm-cost", type=float, default=1.0)
    t.add_argument("--svr-margin", type=float, default=0.0)
    t.add_argument("--label-bins", type=int, default=10)
    t.add_argument("--candidate-factor", type=int, default=2)
    t.add_argument("--plain", action="store_true", help="disable cost-sensitive weighting")
    t.add_argument("--clusters", type=int, default=3)
    t.add_argument("--overlap-slack", type=float, default=1.1)
    t.add_argument("--sparsity", type=float, default=0.01)
    t.add_argument("--prior-weight", type=float, default=0.1)
    t.add_argument("--tradeoff", type=float, default=1.0)
    t.add_argument("--decay", type=float, default=1.0)
    t.add_argument("--radius", default="adaptive")
    t.add_argument("--vote-threshold", type=float, default=0.1)
    t.add_argument("--max-outer-iters", type=int, default=50)
    t.add_argument("--label-tol", type=float, default=1e-3)
    t.set_defaults(func=_cmd_train)

    pr = sub.add_parser("predict", help="predict labels for query rows")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--out")
    pr.add_argument("--trace", action="store_true", help="append per-query diagnostics")
    pr.set_defaults(func=_cmd_predict)

    ev = sub.add_parser("evaluate", help="score a model on a labelled dataset")
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--label-col")
    ev.add_argument("--out")
    ev.set_defaults(func=_cmd_evaluate)

    ab = sub.add_parser("ablate", help="run the four-arm ablation on a synthetic spec")
    ab.add_argument("--spec", required=True)
    ab.add_argument("--seeds", type=int, default=5)
    ab.add_argument("--out", default="ablation")
    ab.set_defaults(func=_cmd_ablate)

    sy = sub.add_parser("synth", help="generate a synthetic dataset file")
    sy.add_argument("--spec", required=True)
    sy.add_argument("--out", required=True)
    sy.add_argument("--seed", type=int)
    sy.set_defaults(func=_cmd_synth)
    return p


def main(argv=None):
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage/help
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort boundary
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
