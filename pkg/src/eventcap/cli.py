"""Command-line entry point.

Subcommands: synth-data, train, eval, infer, gradcheck, inspect. Exit codes:
0 success, 2 usage/config error, 3 data error, 4 numeric failure. Errors are
single lines on stderr prefixed with "error:".
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .data import SynthParams, load_dataset, synth_generate, write_dataset
from .diagnostics import run_gradcheck
from .errors import ConfigError, DataError, TrainingDiverged
from .evaluation import (
    EvalConfig,
    evaluate_dense_captions,
    read_predictions,
    records_to_gt,
    write_predictions,
)
from .data import load_annotations
from .training import ExperimentConfig, Trainer, build_trainer, overlap_statistics

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eventcap",
        description="Dense event localization and captioning toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--videos", type=int, default=120)
    p.add_argument("--val-fraction", type=float, default=1.0 / 6.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--events-min", type=int, default=3)
    p.add_argument("--events-max", type=int, default=5)
    p.add_argument("--frames-min", type=int, default=160)
    p.add_argument("--frames-max", type=int, default=200)
    p.add_argument("--dim", type=int, default=128, help="feature width D_in")
    p.add_argument("--overlap-stress", action="store_true")
    p.add_argument("--force", action="store_true", help="overwrite an existing dataset")

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--config", default=None, help="INI config file")
    p.add_argument("--out", default="runs/train", help="output directory")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--d-model", type=int, default=None)
    p.add_argument("--queries", type=int, default=None)
    p.add_argument("--dec-layers", type=int, default=None)
    p.add_argument("--frames", type=int, default=None)
    for flag in ("rsqi", "ctca", "osl", "cg"):
        p.add_argument(f"--{flag}", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")

    p = sub.add_parser("eval", help="evaluate a prediction file")
    p.add_argument("--preds", required=True)
    p.add_argument("--gt", required=True, help="annotation JSON file")
    p.add_argument("--thresholds", default="0.3,0.5,0.7,0.9")
    p.add_argument("--out", default=None, help="write the JSON report here")

    p = sub.add_parser("infer", help="run inference with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val"), default="val")
    p.add_argument("--out", required=True, help="prediction file path")
    p.add_argument("--topk", type=int, default=None, help="override event count")

    p = sub.add_parser("gradcheck", help="finite-difference loss verification")
    p.add_argument("--loss", choices=("osl", "ctca", "both"), default="both")
    p.add_argument("--configs", type=int, default=24)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("inspect", help="dump attention rows and overlap stats")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val"), default="val")
    p.add_argument("--video", default=None, help="restrict to one video id")
    p.add_argument("--out", required=True, help="dump file path")
    return parser


def cmd_synth_data(args) -> int:
    params = SynthParams(
        n_videos=args.videos,
        val_fraction=args.val_fraction,
        frames_range=(args.frames_min, args.frames_max),
        events_range=(args.events_min, args.events_max),
        d_in=args.dim,
        overlap_stress=args.overlap_stress,
        seed=args.seed,
    )
    dataset = synth_generate(params)
    os.makedirs(args.out, exist_ok=True)
    write_dataset(dataset, args.out, force=args.force)
    print(
        f"wrote {len(dataset.train)} train / {len(dataset.val)} val videos "
        f"to {args.out} (d_in={params.d_in}, seed={params.seed})"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    dataset = load_dataset(args.data)
    overrides = {"model": {}, "train": {}}
    overrides["model"]["d_in"] = dataset.params.d_in
    for cli_name, section, key in (
        ("epochs", "train", "epochs"),
        ("batch_size", "train", "batch_size"),
        ("seed", "train", "seed"),
        ("d_model", "model", "d_model"),
        ("queries", "model", "n_queries"),
        ("dec_layers", "model", "n_dec_layers"),
        ("frames", "model", "n_frames"),
        ("rsqi", "train", "use_rsqi"),
        ("ctca", "train", "use_ctca"),
        ("osl", "train", "use_osl"),
        ("cg", "train", "use_cg"),
    ):
        value = getattr(args, cli_name)
        if value is not None:
            overrides[section][key] = value
    cfg = ExperimentConfig.from_ini(path=args.config, overrides=overrides)

    print("# resolved configuration")
    print(cfg.to_ini())
    os.makedirs(args.out, exist_ok=True)
    cfg.to_ini(os.path.join(args.out, "config.ini"))

    if args.resume:
        trainer = Trainer.load(args.resume)
    else:
        trainer = build_trainer(dataset, cfg)
    result = trainer.fit(dataset, out_dir=args.out, log=print)
    final_f1 = result["best_f1"]
    print(f"val_f1={final_f1:.4f}" if final_f1 is not None else "val_f1=-")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        thresholds = tuple(float(t) for t in args.thresholds.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad --thresholds value {args.thresholds!r}") from exc
    cfg = EvalConfig(tiou_thresholds=thresholds)
    preds = read_predictions(args.preds)
    records, errors = load_annotations(args.gt)
    if errors:
        raise DataError(f"{args.gt}: {len(errors)} bad records, first: {errors[0]}")
    report = evaluate_dense_captions(preds, records_to_gt(records), cfg)
    print(report.to_json())
    print(report.csv_header())
    print(report.csv_row())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
    return EXIT_OK


def cmd_infer(args) -> int:
    trainer = Trainer.load(args.ckpt)
    dataset = load_dataset(args.data)
    records = dataset.split(args.split)
    preds = trainer.predict(records, top_n=args.topk)
    write_predictions(args.out, preds)
    n_events = sum(len(v) for v in preds.values())
    print(f"wrote {n_events} events over {len(preds)} videos to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    targets = ("osl", "ctca") if args.loss == "both" else (args.loss,)
    all_passed = True
    for name in targets:
        report = run_gradcheck(name, n_configs=args.configs, seed=args.seed)
        status = "PASS" if report["passed"] else "FAIL"
        print(
            f"{name}: {status} max_rel_err={report['max_rel_err']:.3e} "
            f"configs={report['n_configs']} elapsed={report['elapsed_s']:.2f}s"
        )
        all_passed = all_passed and report["passed"]
    if not all_passed:
        print("error: gradient check failed", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_inspect(args) -> int:
    trainer = Trainer.load(args.ckpt)
    dataset = load_dataset(args.data)
    records = dataset.split(args.split)
    if args.video is not None:
        records = [r for r in records if r.video_id == args.video]
        if not records:
            raise DataError(f"video {args.video!r} not in split {args.split}")
    trainer.model.eval()
    import torch

    n_rows = 0
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("# video\tlayer\trole\tquery\tattention row over frames\n")
        with torch.no_grad():
            for record in records:
                tgt = trainer._prepare(record)
                out = trainer.model(tgt.features, tgt.pad_mask)
                chosen = trainer.model.selected_indices(out).tolist()
                for layer_idx, rec in enumerate(out.dec.attn_records):
                    for role, key in (("loc", "cross_loc"), ("cap", "cross_cap")):
                        for qi in chosen:
                            row = " ".join(f"{w:.6f}" for w in rec[key][qi].tolist())
                            fh.write(
                                f"{record.video_id}\t{layer_idx}\t{role}\t{qi}\t{row}\n"
                            )
                            n_rows += 1
        stats = overlap_statistics(trainer.predict(records))
        fh.write("# overlap_stats " + json.dumps(stats, sort_keys=True) + "\n")
    print(f"wrote {n_rows} attention rows to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "synth-data": cmd_synth_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "gradcheck": cmd_gradcheck,
    "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"error: {exc} (dump: {exc.dump_path})", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
