"""Command-line entry point.

Subcommands: synth, train, eval, compare, export. Every command is
driven by a JSON config (see ``--print-config`` for the defaults with
all keys), is deterministic given (config, seed), and refuses to
overwrite existing outputs unless ``--force`` is given. Figures render
next to each delimited output unless ``--no-figures``.

Exit codes: 0 success, 2 usage/config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import ConfigError, RunConfig
from .data import make_windows, save_csv
from .trainer import (
    NumericalAbort,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

ABLATION_CHOICES = ("full", "no_ddp", "common_only", "rare_only",
                    "fusion=additive", "fusion=mean")


class OutputExists(ConfigError):
    pass


def _guard_outputs(paths, force: bool) -> None:
    existing = [str(p) for p in paths if os.path.exists(p)]
    if existing and not force:
        raise OutputExists(
            f"output exists (use --force to overwrite): {', '.join(existing)}")


def _apply_ablation(rc: RunConfig, ablation: str | None) -> RunConfig:
    if not ablation or ablation == "full":
        return rc
    if ablation.startswith("fusion="):
        return rc.with_variant("full", fusion=ablation.split("=", 1)[1])
    return rc.with_variant(ablation)


def _variant_label(rc: RunConfig) -> str:
    if rc.variant == "no_ddp":
        return "backbone-only"
    if rc.variant == "full" and rc.routing.fusion != "adaptive":
        return f"full(fusion={rc.routing.fusion})"
    return rc.variant


def _build_dataset(rc: RunConfig):
    frame, events = rc.load_frame()
    split = rc.data.split_spec(frame.length)
    dataset = make_windows(frame, split, rc.look_back, rc.horizon, rc.data.stride)
    return frame, events, dataset


def cmd_synth(args) -> int:
    rc = RunConfig.from_file(args.config)
    if args.seed is not None:
        rc = rc.with_seed(args.seed)
    out_dir = args.out or rc.output_dir
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "series.csv")
    events_path = os.path.join(out_dir, "events.json")
    _guard_outputs([csv_path, events_path], args.force)

    frame, events = rc.load_frame()
    save_csv(frame, csv_path)
    with open(events_path, "w") as fh:
        json.dump(events, fh, indent=2)
        fh.write("\n")
    if not args.no_figures:
        from .report import render_series
        render_series(frame.values, events, os.path.join(out_dir, "series.png"))
    print(json.dumps({"csv": csv_path, "events": events_path,
                      "rows": frame.length, "channels": frame.channels,
                      "n_events": len(events)}))
    return EXIT_OK


def cmd_train(args) -> int:
    rc = RunConfig.from_file(args.config)
    if args.seed is not None:
        rc = rc.with_seed(args.seed)
    rc = _apply_ablation(rc, args.ablation)
    out_dir = args.out or rc.output_dir
    _guard_outputs([os.path.join(out_dir, "config.json")], args.force)

    frame, events, dataset = _build_dataset(rc)
    model = rc.build_model()
    history, _ = train(model, dataset, rc.train, rc.loss, events=events)
    metrics = evaluate(model, dataset, "test", events=events)

    save_checkpoint(out_dir, model, rc.to_dict(), history)
    if not args.no_figures:
        from .report import render_history
        render_history(history, os.path.join(out_dir, "history.png"))

    summary = {"variant": _variant_label(rc), "seed": rc.seed,
               "epochs_run": len(history),
               "test_mse": metrics.mse, "test_mae": metrics.mae,
               "rare_event_mse": metrics.rare_event_mse,
               "checkpoint": out_dir}
    print(json.dumps(summary))
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        model, raw_config = load_checkpoint(args.checkpoint)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load checkpoint {args.checkpoint}: {exc}") from None
    rc = RunConfig.from_dict(raw_config)
    frame, events, dataset = _build_dataset(rc)
    collect = args.traces is not None
    metrics = evaluate(model, dataset, args.split, events=events,
                       collect_traces=collect)
    if collect:
        _guard_outputs([args.traces], args.force)
        with open(args.traces, "w") as fh:
            for record in metrics.traces:
                fh.write(json.dumps(record) + "\n")
    out = metrics.to_dict()
    out["split"] = args.split
    out["variant"] = _variant_label(rc)
    print(json.dumps(out))
    return EXIT_OK


def _train_one(rc: RunConfig, dataset, events):
    model = rc.build_model()
    history, _ = train(model, dataset, rc.train, rc.loss, events=events)
    metrics = evaluate(model, dataset, "test", events=events)
    return metrics


def cmd_compare(args) -> int:
    rc = RunConfig.from_file(args.config)
    if args.seed is not None:
        rc = rc.with_seed(args.seed)
    out_dir = args.out or rc.output_dir
    os.makedirs(out_dir, exist_ok=True)
    report_path = os.path.join(out_dir, "comparison.json")
    _guard_outputs([report_path], args.force)

    repeats = args.repeats
    seeds = [rc.seed + i for i in range(repeats)]
    threads = max(int(os.environ.get("DPAD_THREADS", "1")), 1)

    def run_repeat(seed: int):
        rc_seed = rc.with_seed(seed)
        frame, events, dataset = _build_dataset(rc_seed)
        base = _train_one(rc_seed.with_variant("no_ddp"), dataset, events)
        dpad = _train_one(rc_seed.with_variant("full"), dataset, events)
        return base, dpad

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_repeat, seeds))
    else:
        results = [run_repeat(s) for s in seeds]

    def summarize(metrics_list):
        mses = [m.mse for m in metrics_list]
        maes = [m.mae for m in metrics_list]
        rares = [m.rare_event_mse for m in metrics_list if m.rare_event_mse is not None]
        return {
            "test_mse": mses, "test_mae": maes,
            "rare_event_mse": rares if rares else None,
            "test_mse_mean": float(np.mean(mses)),
            "test_mse_std": float(np.std(mses)),
            "test_mae_mean": float(np.mean(maes)),
            "test_mae_std": float(np.std(maes)),
            "rare_event_mse_mean": float(np.mean(rares)) if rares else None,
        }

    base_summary = summarize([r[0] for r in results])
    dpad_summary = summarize([r[1] for r in results])

    def rel_improvement(base, enhanced):
        if base is None or enhanced is None or base == 0:
            return None
        return (base - enhanced) / base

    report = {
        "repeats": repeats,
        "seeds": seeds,
        "variants": {"backbone_only": base_summary, "dpad": dpad_summary},
        "improvement": {
            "mse": rel_improvement(base_summary["test_mse_mean"],
                                   dpad_summary["test_mse_mean"]),
            "mae": rel_improvement(base_summary["test_mae_mean"],
                                   dpad_summary["test_mae_mean"]),
            "rare_event_mse": rel_improvement(base_summary["rare_event_mse_mean"],
                                              dpad_summary["rare_event_mse_mean"]),
        },
    }
    with open(report_path, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    if not args.no_figures:
        from .report import render_comparison
        render_comparison(report, os.path.join(out_dir, "comparison.png"))
    print(json.dumps(report["improvement"]))
    return EXIT_OK


def cmd_export(args) -> int:
    try:
        model, raw_config = load_checkpoint(args.checkpoint)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load checkpoint {args.checkpoint}: {exc}") from None
    rc = RunConfig.from_dict(raw_config)
    out_dir = args.out or args.checkpoint

    if args.what == "prototypes":
        if model.bank is None:
            raise ConfigError("checkpoint has no prototype bank (backbone-only variant)")
        path = os.path.join(out_dir, "prototypes.csv")
        _guard_outputs([path], args.force)
        bank = model.bank
        length = bank.common_bases.data.shape[1]
        with open(path, "w") as fh:
            fh.write("kind,index," + ",".join(f"v{i}" for i in range(length)) + "\n")
            for i, row in enumerate(bank.common_bases.data):
                fh.write(f"common,{i}," + ",".join(repr(float(v)) for v in row) + "\n")
            for j, row in enumerate(bank.rare_bases.data):
                fh.write(f"rare,{j}," + ",".join(repr(float(v)) for v in row) + "\n")
        if not args.no_figures:
            from .report import render_prototypes
            render_prototypes(bank.common_bases.data, bank.rare_bases.data,
                              os.path.join(out_dir, "prototypes.png"))
        print(json.dumps({"prototypes": path,
                          "rows": bank.num_common + bank.num_rare}))
        return EXIT_OK

    # traces
    path = os.path.join(out_dir, "traces.jsonl")
    _guard_outputs([path], args.force)
    frame, events, dataset = _build_dataset(rc)
    metrics = evaluate(model, dataset, "test", events=events, collect_traces=True)
    with open(path, "w") as fh:
        for record in metrics.traces:
            fh.write(json.dumps(record) + "\n")
    print(json.dumps({"traces": path, "records": len(metrics.traces)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpad",
        description="Dual-prototype context-aware forecasting toolkit")
    parser.add_argument("--print-config", action="store_true",
                        help="print the default config JSON and exit")
    sub = parser.add_subparsers(dest="command")

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--force", action="store_true", help="overwrite outputs")
        p.add_argument("--no-figures", action="store_true", help="skip figure rendering")
        p.add_argument("--seed", type=int, default=None, help="seed override")

    p_synth = sub.add_parser("synth", help="generate the synthetic dataset")
    common(p_synth)

    p_train = sub.add_parser("train", help="train one model")
    common(p_train)
    p_train.add_argument("--ablation", choices=ABLATION_CHOICES, default=None)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--split", choices=("train", "val", "test"), default="test")
    p_eval.add_argument("--traces", default=None, help="write routing traces JSONL here")
    p_eval.add_argument("--force", action="store_true")

    p_cmp = sub.add_parser("compare", help="backbone-only vs full model over repeated seeds")
    common(p_cmp)
    p_cmp.add_argument("--repeats", type=int, default=3)

    p_exp = sub.add_parser("export", help="export prototypes or routing traces")
    p_exp.add_argument("--checkpoint", required=True)
    p_exp.add_argument("--what", choices=("prototypes", "traces"), required=True)
    p_exp.add_argument("--out", default=None)
    p_exp.add_argument("--force", action="store_true")
    p_exp.add_argument("--no-figures", action="store_true")
    return parser


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
            "compare": cmd_compare, "export": cmd_export}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_config:
        print(json.dumps(RunConfig().to_dict(), indent=2))
        return EXIT_OK
    if not args.command:
        parser.print_help()
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
