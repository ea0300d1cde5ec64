"""``epic`` command line: generate corpora, run experiments, replay evaluations.

Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 no data,
5 numeric failure, 6 checkpoint fingerprint mismatch.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import platform
import sys
import time
from collections import Counter
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .encoding import encode_dataset, read_records, write_records
from .exceptions import (
    CheckpointFormatError,
    ConfigError,
    FingerprintMismatch,
    NoData,
    NumericFailure,
    SequenceTooLong,
    UnknownLabel,
)
from .metrics import compute
from .nn import load_checkpoint, predict, save_checkpoint
from .orchestrator import CENTRALIZED, run_epic, train_centralized
from .partition import build_plan


EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NODATA, EXIT_NUMERIC, EXIT_FINGERPRINT = 0, 2, 3, 4, 5, 6


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def cmd_gen(config_path, out_path) -> int:
    cfg = load_config(config_path)
    spec = cfg.synthetic_spec()
    records = cfg.corpus()
    try:
        n = write_records(
            out_path,
            records,
            cfg.study_start,
            comments=[f"synthetic corpus, seed {cfg.seed}, {spec.total_samples} samples"],
        )
    except OSError as exc:
        print(f"error: cannot write {out_path}: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {n} records to {out_path}")
    counts = Counter(r.lineage for r in records)
    for name in spec.lineage_names:
        print(f"  {name}\t{counts.get(name, 0)}")
    return EXIT_OK


def _month_dir(cfg: RunConfig, month: int) -> str:
    from .encoding import month_label

    return f"month_{month:02d}_{month_label(month, cfg.study_start)}"


def cmd_run(config_path, out_dir, parallel: int = 1) -> int:
    cfg = load_config(config_path)
    cfg.validate_for_run()
    records = cfg.corpus()
    if not records:
        raise NoData("dataset is empty")
    ctx = cfg.encoding_context()
    spec = cfg.model_spec(ctx)
    split_cfg = cfg.split_config()
    countries, months = cfg.countries(), cfg.months()
    plan = build_plan(records, countries, months, split_cfg)

    out = Path(out_dir)
    ckpt_dir = out / "checkpoints"
    try:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        (out / "config.toml").write_text(cfg.text, encoding="utf-8")
        (out / "plan.json").write_text(plan.dumps() + "\n", encoding="utf-8")
        (out / "seeds.json").write_text(_dump_json({"master": cfg.seed, **cfg.seeds()}), encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot write run directory {out}: {exc}", file=sys.stderr)
        return EXIT_IO

    def hook(month, model, weights):
        d = ckpt_dir / _month_dir(cfg, month)
        d.mkdir(exist_ok=True)
        save_checkpoint(d / f"{model}.epicw", weights)

    started = time.time()
    report = run_epic(
        records, countries, months, split_cfg, spec, cfg.train_config(), cfg.fed_config(),
        ctx=ctx, plan=plan, parallel=parallel, checkpoint_hook=hook,
    )
    seconds = dict(report.train_seconds)
    if cfg.run_centralized:
        central = train_centralized(records, split_cfg, spec, cfg.train_config(), ctx=ctx, plan=plan)
        report.centralized = central.report
        report.histories[CENTRALIZED] = [(-1, central.history)]
        seconds[CENTRALIZED] = central.seconds
        save_checkpoint(ckpt_dir / f"{CENTRALIZED}.epicw", central.weights)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["model", "month", "epoch", "accuracy", "loss"])
    for model, month, epoch, acc, loss in report.history_rows():
        writer.writerow([model, "all" if month < 0 else month, epoch, repr(float(acc)), repr(float(loss))])
    (out / "history.csv").write_text(buf.getvalue(), encoding="utf-8")
    (out / "report.json").write_text(_dump_json(report.to_dict()), encoding="utf-8")
    write_records(out / "global_test.tsv", [records[i] for i in plan.global_test], cfg.study_start)
    (out / "local_test").mkdir(exist_ok=True)
    for c in countries:
        write_records(out / "local_test" / f"{c}.tsv", [records[i] for i in plan.local_test[c]], cfg.study_start)
    (out / "metadata.json").write_text(
        _dump_json(
            {
                "started_unix": started,
                "finished_unix": time.time(),
                "train_seconds": seconds,
                "parallel": parallel,
                "version": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
            }
        ),
        encoding="utf-8",
    )
    if report.global_ is not None:
        print(f"global: {report.global_.summary()}")
    if report.centralized is not None:
        print(f"centralized: {report.centralized.summary()}")
    return EXIT_OK


def cmd_eval(checkpoint_path, data_path, config_path) -> int:
    cfg = load_config(config_path)
    ctx = cfg.encoding_context()
    spec = cfg.model_spec(ctx)
    try:
        weights = load_checkpoint(checkpoint_path)
    except OSError as exc:
        print(f"error: cannot read checkpoint {checkpoint_path}: {exc}", file=sys.stderr)
        return EXIT_IO
    if weights.fingerprint != spec.fingerprint():
        raise FingerprintMismatch(
            f"checkpoint {checkpoint_path} was produced by a different model spec than {config_path} describes"
        )
    try:
        records, _ = read_records(data_path, cfg.study_start)
    except OSError as exc:
        print(f"error: cannot read dataset {data_path}: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    data = encode_dataset(records, ctx)
    if len(data) == 0:
        raise NoData(f"{data_path} contains no records")
    pred, probs = predict(weights, spec, data)
    report = compute(data.class_indices, pred, probs.astype(np.float64), spec.num_classes)
    sys.stdout.write(_dump_json(report.to_dict(ctx.label_set)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epic", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="write a synthetic corpus as TSV")
    gen.add_argument("--config", required=True)
    gen.add_argument("--out", required=True)

    run = sub.add_parser("run", help="run the federated protocol (and the centralized baseline)")
    run.add_argument("--config", required=True)
    run.add_argument("--out-dir", required=True)
    run.add_argument("--parallel", type=int, default=1, help="train up to N clients concurrently")

    ev = sub.add_parser("eval", help="score a checkpoint on a dataset")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--config", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "gen":
            return cmd_gen(args.config, args.out)
        if args.command == "run":
            if args.parallel < 1:
                raise ConfigError("--parallel must be at least 1")
            return cmd_run(args.config, args.out_dir, args.parallel)
        return cmd_eval(args.checkpoint, args.data, args.config)
    except (ConfigError, UnknownLabel, SequenceTooLong) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoData as exc:
        print(f"no data: {exc}", file=sys.stderr)
        return EXIT_NODATA
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FingerprintMismatch as exc:
        print(f"fingerprint mismatch: {exc}", file=sys.stderr)
        return EXIT_FINGERPRINT
    except CheckpointFormatError as exc:
        print(f"bad checkpoint: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
