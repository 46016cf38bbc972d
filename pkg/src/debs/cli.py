"""Command-line entry point: ``debs {gen-data,train,probe,pca,compare}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import torch

from .config import PROFILES, RunConfig
from .data import Dataset, generate_dataset, load_records, read_csv, write_csv, write_records
from .errors import ConfigError, DataError, DebsError
from .evaluation import extract_representations, pca, separation_scores, write_scores_csv, write_svg_scatter
from .experiment import (
    Comparison,
    accuracy_curve,
    evaluate_probe,
    make_eval_hook,
    reference_cohorts,
    representation_structure,
)
from .trainer import load_network, read_metrics, run_training

log = logging.getLogger("debs")


# ---------------------------------------------------------------------------
# configuration


def load_config(args) -> RunConfig:
    """Profile defaults, then the JSON config file, then command-line flags."""
    config = PROFILES[args.profile]()
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            overrides = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e
        if not isinstance(overrides, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        config = config.override(**overrides)
    train: dict = {}
    if args.seed is not None:
        train["seed"] = args.seed
    if getattr(args, "mode", None):
        train["mode"] = args.mode
    if train:
        config = config.override(train=train)
    if args.seed is not None and args.command == "gen-data":
        config = config.override(data={"seed": args.seed})
    if args.out_dir:
        config = config.override(out_dir=args.out_dir)
    return config


def load_dataset(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    return read_csv(path) if path.suffix == ".csv" else load_records(path)


def _require(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{what} not found: {path}")
    return path


def _probe_cohorts(args, config: RunConfig):
    """Explicit probe datasets if given (flags, then config), else the reference held-out cohorts."""
    train = args.train_data or config.probe_train_data
    evald = args.eval_data or config.probe_eval_data
    if train and evald:
        return load_dataset(train), load_dataset(evald)
    if train or evald:
        raise ConfigError("probe needs both a train and an eval dataset, or neither")
    cohorts = reference_cohorts(config.data)
    return cohorts.probe_train, cohorts.probe_eval


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    config = load_config(args)
    spec = config.data
    if args.subjects is not None:
        spec = config.override(data={"n_subjects": args.subjects}).data
    out = Path(args.output or Path(config.out_dir) / "data.debs")
    out.parent.mkdir(parents=True, exist_ok=True)
    ds = generate_dataset(spec, first_subject_id=args.first_subject_id)
    (write_csv if out.suffix == ".csv" else write_records)(ds, out)
    print(f"wrote {len(ds.subjects)} subjects, {ds.n_segments} segments to {out}")
    return 0


def cmd_train(args) -> int:
    config = load_config(args)
    data_path = args.data or config.train_data
    dataset = load_dataset(data_path) if data_path else reference_cohorts(config.data).pretrain
    out = Path(config.out_dir)
    hook = None
    if config.train.eval_every:
        probe_train, probe_eval = _probe_cohorts(args, config)
        hook = make_eval_hook(probe_train, probe_eval)
    resume = _require(args.resume, "checkpoint") if args.resume else None
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", config.to_dict())
    trainer = run_training(config, dataset, out, resume=resume, stop_at=args.stop_at, eval_hook=hook, force=args.force)
    print(f"iteration {trainer.iteration} (phase {trainer.phase}); checkpoint and metrics in {out}")
    return 0


def cmd_probe(args) -> int:
    net, config, meta = load_network(_require(args.checkpoint, "checkpoint"))
    probe_train, probe_eval = _probe_cohorts(args, config)
    result = evaluate_probe(net, probe_train, probe_eval)
    report = {"checkpoint": str(args.checkpoint), "iteration": meta["iteration"], **result.to_dict()}
    out = Path(args.output or Path(args.checkpoint).with_name("probe.json"))
    _write_json(out, report)
    print(
        f"accuracy {result.accuracy:.1f}%  sensitivity {result.sensitivity:.1f}%  "
        f"specificity {result.specificity:.1f}%  -> {out}"
    )
    return 0


def cmd_pca(args) -> int:
    net, config, _ = load_network(_require(args.checkpoint, "checkpoint"))
    data = args.data or config.probe_eval_data
    dataset = load_dataset(data) if data else reference_cohorts(config.data).probe_eval
    reps = extract_representations(net, dataset)
    _, sid, idx, labels = dataset.stacked()
    result = pca(reps, args.k)
    out = Path(args.out_dir or Path(args.checkpoint).parent)
    out.mkdir(parents=True, exist_ok=True)
    write_scores_csv(out / "pca.csv", result, sid, idx, labels)
    scores = separation_scores(result, sid, labels)
    cx, cy = args.components
    if max(cx, cy) > args.k:
        raise ConfigError(f"--components {cx} {cy} exceed k={args.k}")
    write_svg_scatter(out / "pca_subjects.svg", result, cx - 1, cy - 1, sid, title="coloured by subject")
    write_svg_scatter(out / "pca_events.svg", result, cx - 1, cy - 1, labels, title="coloured by event label")
    if args.k >= 2 and len(reps) > 2:
        structure = representation_structure(net, dataset, k=args.k)
        _write_json(out / "separation.json", structure.to_dict())
    print(
        f"subject separation peaks at PC{scores.best_subject_component + 1}, "
        f"event separation at PC{scores.best_event_component + 1}; files in {out}"
    )
    return 0


def cmd_compare(args) -> int:
    debs_net, config, _ = load_network(_require(args.debs, "checkpoint"))
    sim_net, _, _ = load_network(_require(args.similarity_only, "checkpoint"))
    probe_train, probe_eval = _probe_cohorts(args, config)
    curves = {}
    for name, path in (("debs", args.debs_metrics), ("similarity_only", args.sim_metrics)):
        if path:
            curves[name] = accuracy_curve(read_metrics(_require(path, "metrics file")))
    cmp = Comparison(
        evaluate_probe(debs_net, probe_train, probe_eval),
        evaluate_probe(sim_net, probe_train, probe_eval),
        curves,
    )
    out = Path(args.output or Path(args.debs).with_name("compare.json"))
    _write_json(out, cmp.to_dict())
    print(f"DEBS            {cmp.debs.accuracy:6.1f}%")
    print(f"similarity-only {cmp.similarity_only.accuracy:6.1f}%")
    print(f"delta           {cmp.delta:+6.1f} points  -> {out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of per-section overrides")
    common.add_argument("--profile", choices=sorted(PROFILES), default="toy")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="debs", description="Two-path self-supervised ECG representation learning.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="write a synthetic cohort")
    g.add_argument("-o", "--output", help="record file (.debs) or .csv; default <out-dir>/data.debs")
    g.add_argument("--subjects", type=int)
    g.add_argument("--first-subject-id", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="pre-train an encoder")
    t.add_argument("--data", help="training cohort; default: synthesize from the data section")
    t.add_argument("--mode", choices=["debs", "similarity-only"])
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--force", action="store_true", help="resume despite a config hash mismatch")
    t.add_argument("--stop-at", type=int)
    t.add_argument("--train-data", help="probe-train cohort for periodic evaluation")
    t.add_argument("--eval-data", help="probe-eval cohort for periodic evaluation")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("probe", parents=[common], help="linear event probe on frozen representations")
    pr.add_argument("checkpoint")
    pr.add_argument("--train-data")
    pr.add_argument("--eval-data")
    pr.add_argument("-o", "--output")
    pr.set_defaults(func=cmd_probe)

    pc = sub.add_parser("pca", parents=[common], help="principal components of the representations")
    pc.add_argument("checkpoint")
    pc.add_argument("--data")
    pc.add_argument("-k", type=int, default=8)
    pc.add_argument("--components", type=int, nargs=2, default=(1, 2), metavar=("X", "Y"))
    pc.set_defaults(func=cmd_pca)

    c = sub.add_parser("compare", parents=[common], help="probe two checkpoints under the same protocol")
    c.add_argument("debs")
    c.add_argument("similarity_only")
    c.add_argument("--train-data")
    c.add_argument("--eval-data")
    c.add_argument("--debs-metrics")
    c.add_argument("--sim-metrics")
    c.add_argument("-o", "--output")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    threads = os.environ.get("DEBS_NUM_THREADS")
    if threads:
        try:
            torch.set_num_threads(max(1, int(threads)))
        except ValueError:
            print(f"error: DEBS_NUM_THREADS must be an integer, got {threads!r}", file=sys.stderr)
            return ConfigError.exit_code
    try:
        return args.func(args)
    except DebsError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
