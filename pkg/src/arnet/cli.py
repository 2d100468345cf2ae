"""Command-line entry point: ``arnet [global flags] <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import costs, evaluation, synth, training
from .actions import DEFAULT_SKIPS, action_names
from .model import ARNet
from .router import read_traces, write_traces

METRICS_SCHEMA = "arnet-metrics"
TABLE_SCHEMA = "arnet-compare-rl"
SCHEMA_VERSION = 1

log = logging.getLogger("arnet")


def _write_text(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8")) if path else {}


def _cost_table(name: str | None, model: ARNet) -> costs.CostTable:
    return training.cost_table_for(name or "paper", model)


def _metrics_doc(metrics: evaluation.Metrics, label: str, **extra) -> dict:
    return {"schema": METRICS_SCHEMA, "version": SCHEMA_VERSION, "label": label, "metrics": metrics.to_dict(), **extra}


def _load_data(args) -> synth.Dataset:
    if args.data:
        return synth.load_dataset(args.data)
    return synth.generate(synth.DatasetSpec(), seed=args.seed if args.seed is not None else 0)


def _train_config(args) -> training.TrainConfig:
    config = training.TrainConfig.from_dict(_read_json(getattr(args, "config", None)))
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.epoch_scale is not None:
        changes["epoch_scale"] = args.epoch_scale
    if args.cost_table is not None:
        changes["cost_table"] = args.cost_table
    if getattr(args, "method", None):
        changes["method"] = args.method
    return config.with_(**changes) if changes else config


# -- commands ---------------------------------------------------------------------


def cmd_gen(args) -> int:
    spec = synth.DatasetSpec.from_dict(_read_json(args.spec))
    ds = synth.generate(spec, seed=args.seed if args.seed is not None else 0)
    synth.save_dataset(ds, args.out)
    _write_text(args.stats, _dump_json(synth.frame_stats(ds)))
    return 0


def cmd_train(args) -> int:
    ds = _load_data(args)
    config = _train_config(args)
    model, rows = training.train_three_stage(ds, config, progress=lambda r: log.info(training.format_row(r)))
    model.meta["config"] = config.to_dict()
    model.save(args.out)
    _write_text(args.log, training.log_to_csv(rows))
    return 0


def cmd_eval(args) -> int:
    ds = _load_data(args)
    model = ARNet.load(args.checkpoint)
    table = _cost_table(args.cost_table, model)
    metrics, traces = evaluation.evaluate(model, ds, args.accounting or "paper", table, split=args.split)
    if args.traces:
        write_traces(traces, args.traces)
    label = args.label or f"{model.meta.get('method', 'arnet')}-seed{model.meta.get('seed', 0)}"
    doc = _metrics_doc(metrics, label, accounting=args.accounting or "paper", cost_table=table.provenance, split=args.split)
    _write_text(args.out, _dump_json(doc))
    return 0


def cmd_baseline(args) -> int:
    ds = _load_data(args)
    model = ARNet.load(args.checkpoint)
    table = _cost_table(args.cost_table, model)
    evaluation.check_compatible(model, ds)
    seed = args.seed if args.seed is not None else 0
    metrics, traces = evaluation.evaluate_model(
        model, getattr(ds, args.split), args.kind, table, rng=np.random.default_rng(seed), return_traces=True
    )
    if args.accounting == "full":
        metrics.gflops_f, metrics.gflops_v = metrics.gflops_f_full, metrics.gflops_v_full
    if args.traces:
        write_traces(traces, args.traces)
    doc = _metrics_doc(metrics, args.label or f"{args.kind}-seed{seed}", accounting=args.accounting or "paper", cost_table=table.provenance, split=args.split)
    _write_text(args.out, _dump_json(doc))
    return 0


def cmd_hist(args) -> int:
    traces = read_traces(args.traces)
    names = action_names(traces[0].num_actions - len(DEFAULT_SKIPS)) if traces else None
    rows = evaluation.policy_histogram(traces, args.group_by, names)
    hit, base = evaluation.informative_hit_rate(traces)
    _write_text(args.out, evaluation.rows_to_csv(rows))
    log.info("level-0 hit rate on informative frames %.4f (base rate %.4f)", hit, base)
    return 0


def cmd_curve(args) -> int:
    runs = []
    for path in args.metrics:
        doc = _read_json(path)
        if doc.get("schema") != METRICS_SCHEMA:
            raise SystemExit(f"{path}: not an arnet metrics file")
        runs.append((doc.get("label") or Path(path).stem, evaluation.Metrics(**doc["metrics"])))
    _write_text(args.out, evaluation.curve_export(runs))
    return 0


def compare_rl(dataset, config: training.TrainConfig, table_name: str | None = None):
    """Train the Gumbel and REINFORCE variants on the same data; return table rows and models."""
    rows, models = [], {}
    for method in ("arnet", "reinforce"):
        model, _ = training.train_three_stage(dataset, config.with_(method=method))
        table = _cost_table(table_name or config.cost_table, model)
        metrics = evaluation.evaluate_model(model, dataset.test, method, table)
        rows.append(
            {
                "method": "Gumbel Softmax" if method == "arnet" else "Policy Gradient",
                "accuracy": metrics.top1,
                "mAP": metrics.mAP,
                "gflops_f": metrics.gflops_f,
                "gflops_v": metrics.gflops_v,
                "dataset": model.meta["dataset"],
            }
        )
        models[method] = model
    return rows, models


def cmd_compare_rl(args) -> int:
    ds = _load_data(args)
    config = _train_config(args)
    rows, models = compare_rl(ds, config, args.cost_table)
    if args.checkpoints:
        out = Path(args.checkpoints)
        out.mkdir(parents=True, exist_ok=True)
        for method, model in models.items():
            model.save(out / f"{method}.json")
    doc = {"schema": TABLE_SCHEMA, "version": SCHEMA_VERSION, "config": config.to_dict(), "rows": rows}
    _write_text(args.out, _dump_json(doc))
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arnet", description="Adaptive-resolution video classification toolkit.")
    parser.add_argument("--seed", type=int, default=None, help="seed for generation, training and random baselines")
    parser.add_argument("--cost-table", choices=("analytic", "paper"), default=None, help="GFLOPS lookup table (default: paper)")
    parser.add_argument("--accounting", choices=("paper", "full"), default=None, help="cost accounting for reported GFLOPS")
    parser.add_argument("--epoch-scale", type=float, default=None, help="multiplier on the full-length stage epochs")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--spec", help="dataset spec JSON (defaults for missing keys)")
    p.add_argument("--out", required=True, help="dataset file to write")
    p.add_argument("--stats", default=None, help="write frame statistics JSON here")
    p.set_defaults(func=cmd_gen)

    def data_arg(q):
        q.add_argument("--data", help="dataset file (default: regenerate the default spec)")

    p = sub.add_parser("train", help="three-stage training")
    data_arg(p)
    p.add_argument("--config", help="training config JSON")
    p.add_argument("--method", choices=training.METHODS, default=None)
    p.add_argument("--out", required=True, help="checkpoint to write")
    p.add_argument("--log", default="-", help="per-epoch CSV log (default: stdout)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    data_arg(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", default="-", help="metrics JSON (default: stdout)")
    p.add_argument("--traces", default=None, help="write per-frame traces (JSONL)")
    p.add_argument("--label", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="evaluate a fixed routing baseline")
    data_arg(p)
    p.add_argument("--kind", required=True, choices=[k.value for k in evaluation.BaselineKind])
    p.add_argument("--checkpoint", required=True, help="checkpoint providing the backbones")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", default="-")
    p.add_argument("--traces", default=None)
    p.add_argument("--label", default=None)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("hist", help="policy usage report from traces")
    p.add_argument("--traces", required=True)
    p.add_argument("--group-by", choices=("dataset", "class"), default="dataset")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_hist)

    p = sub.add_parser("curve", help="GFLOPS/accuracy CSV from metrics files")
    p.add_argument("metrics", nargs="+", help="metrics JSON files from eval or baseline")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("compare-rl", help="Gumbel vs REINFORCE under one budget")
    data_arg(p)
    p.add_argument("--config", help="training config JSON shared by both runs")
    p.add_argument("--out", default="-")
    p.add_argument("--checkpoints", default=None, help="directory for both checkpoints")
    p.set_defaults(func=cmd_compare_rl)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s", stream=sys.stderr)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
