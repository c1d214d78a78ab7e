"""Operator command line.

Subcommands: generate-data (synthetic corpus), train (single run), evaluate
(checkpoint on a split), tune (ASHA sweep), report (aggregate comparison
table). All randomness flows from --seed. Exit codes: 0 success, 1
user/config error, 2 runtime/training failure.

A run directory written by ``train`` contains: config.txt (echo of the full
configuration), history.jsonl (one record per epoch), checkpoint.avck (best
validation model), report.json and report.txt.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import data as D
from .config import (ConfigParseError, PRESETS, format_config, load_config,
                     parse_config, parse_entries, preset)
from .models import ConfigError, build_model, count_parameters, read_checkpoint, save_checkpoint
from .training import evaluate_model, per_video_evaluation, train
from .tuning import tune

DATA_ENV_VAR = "AVAFFECT_DATA"

GROUP_TITLES = {
    "rnn": "Recurrent Models (RNNs)",
    "sa": "Self-Attention (SA) Models",
    "cma": "Cross-Modal Attention (CMA) Models",
}


class CliError(Exception):
    """User/configuration error (exit code 1)."""


def _resolve_manifest(data_arg: str | None) -> Path:
    raw = data_arg or os.environ.get(DATA_ENV_VAR)
    if not raw:
        raise CliError(f"no data directory given (use --data or ${DATA_ENV_VAR})")
    path = Path(raw)
    if path.is_dir():
        path = path / "manifest.tsv"
    if not path.exists():
        raise CliError(f"manifest not found: {path}")
    return path


def _method_name(model_cfg) -> str:
    prefix = {"audio": "Aud", "visual": "Vis", "audiovisual": "AV"}[model_cfg.modality]
    name = f"{prefix}-{model_cfg.arch.upper()}"
    return f"E2E-{name}" if model_cfg.end_to_end else name


def _load_windows(manifest: Path, split: str, dilation: int):
    corpus = D.load_corpus(manifest)
    if not corpus.has_split(split):
        raise CliError(f"unsupported split: corpus has no {split!r} videos")
    return D.corpus_windows(corpus, split, length=16, dilation=dilation)


# -- generate-data ---------------------------------------------------------------


def cmd_generate_data(args) -> int:
    corpus = D.synth_generate(
        seed=args.seed, n_videos=args.videos, frames_per_video=args.frames,
        smoothness=args.smoothness, noise=args.noise,
    )
    if args.videos == 0:
        print("warning: generating an empty corpus", file=sys.stderr)
    manifest = D.write_corpus(corpus, args.out)
    print(f"wrote {len(corpus.videos)} videos to {manifest}")
    return 0


# -- train -----------------------------------------------------------------------


def _write_run_outputs(out_dir: Path, model_cfg, train_cfg, model, result) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    config_text = format_config(model_cfg, train_cfg)
    (out_dir / "config.txt").write_text(config_text)
    with open(out_dir / "history.jsonl", "w") as fh:
        for record in result.history:
            fh.write(json.dumps(record) + "\n")
    save_checkpoint(out_dir / "checkpoint.avck", config_text, model)
    counts = count_parameters(model)
    report = {
        "method": _method_name(model_cfg),
        "arch": model_cfg.arch,
        "modality": model_cfg.modality,
        "end_to_end": model_cfg.end_to_end,
        "ccc_valence": result.best_eval.ccc_valence if result.best_eval else None,
        "ccc_arousal": result.best_eval.ccc_arousal if result.best_eval else None,
        "average": result.best_eval.average if result.best_eval else None,
        "params_sequence": counts["sequence"],
        "params_total": counts["total"],
        "best_epoch": result.best_epoch,
        "epochs_run": result.epochs_run,
        "status": result.status,
    }
    (out_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    lines = [
        f"{'Method':<14}{'Valence':>9}{'Arousal':>9}{'Avg.':>8}{'P_seq':>10}{'P_total':>10}",
        f"{report['method']:<14}"
        f"{report['ccc_valence'] if report['ccc_valence'] is not None else float('nan'):>9.3f}"
        f"{report['ccc_arousal'] if report['ccc_arousal'] is not None else float('nan'):>9.3f}"
        f"{report['average'] if report['average'] is not None else float('nan'):>8.3f}"
        f"{report['params_sequence']:>10}{report['params_total']:>10}",
    ]
    (out_dir / "report.txt").write_text("\n".join(lines) + "\n")
    return report


def cmd_train(args) -> int:
    if bool(args.config) == bool(args.preset):
        raise CliError("exactly one of --config or --preset is required")
    overrides = dict(kv.split("=", 1) for kv in args.set or [])
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.config:
        model_cfg, train_cfg = load_config(args.config)
        if overrides:
            merged = format_config(model_cfg, train_cfg)
            entries = dict(line.split(" = ", 1) for line in merged.strip().splitlines())
            entries.update(overrides)
            model_cfg, train_cfg = parse_entries(entries)
    else:
        model_cfg, train_cfg = preset(args.preset, overrides)

    manifest = _resolve_manifest(args.data)
    corpus = D.load_corpus(manifest)
    for split in ("train", "validation"):
        if not corpus.has_split(split):
            raise CliError(f"corpus has no {split!r} split")
    train_windows = D.corpus_windows(corpus, "train", length=16, dilation=train_cfg.dilation)
    val_windows = D.corpus_windows(corpus, "validation", length=16, dilation=1)

    model = build_model(model_cfg, seed=train_cfg.seed)
    result = train(model, train_windows, val_windows, train_cfg)
    report = _write_run_outputs(Path(args.out), model_cfg, train_cfg, model, result)
    if result.status != "completed":
        print(f"training failed: {result.failure}", file=sys.stderr)
        return 2
    print(f"{report['method']}: best validation CCC "
          f"{report['ccc_valence']:.3f} / {report['ccc_arousal']:.3f} / {report['average']:.3f} "
          f"(epoch {report['best_epoch']}); parameters {report['params_sequence']} sequence"
          f" / {report['params_total']} total")
    print(f"outputs in {args.out}")
    return 0


# -- evaluate ---------------------------------------------------------------------


def cmd_evaluate(args) -> int:
    try:
        config_text, arrays = read_checkpoint(args.checkpoint)
    except (OSError, ValueError) as exc:
        raise CliError(str(exc)) from None
    model_cfg, train_cfg = parse_config(config_text)
    model = build_model(model_cfg, seed=train_cfg.seed)
    try:
        model.load_state_arrays(arrays)
    except ValueError as exc:
        raise CliError(f"checkpoint/config mismatch: {exc}") from None

    manifest = _resolve_manifest(args.data)
    windows = _load_windows(manifest, args.split, dilation=1)
    result = evaluate_model(model, windows, batch_size=train_cfg.batch_size)
    print(f"{'Method':<14}{'Valence':>9}{'Arousal':>9}{'Avg.':>8}")
    print(f"{_method_name(model_cfg):<14}{result.ccc_valence:>9.3f}"
          f"{result.ccc_arousal:>9.3f}{result.average:>8.3f}")
    if args.per_video:
        per_video = per_video_evaluation(model, windows, batch_size=train_cfg.batch_size)
        for vid, res in per_video.items():
            print(f"  {vid:<12}{res.ccc_valence:>9.3f}{res.ccc_arousal:>9.3f}{res.average:>8.3f}")
    return 0


# -- tune -------------------------------------------------------------------------


def cmd_tune(args) -> int:
    manifest = _resolve_manifest(args.data)
    corpus = D.load_corpus(manifest)
    for split in ("train", "validation"):
        if not corpus.has_split(split):
            raise CliError(f"corpus has no {split!r} split")
    train_windows = D.corpus_windows(corpus, "train", length=16, dilation=1)
    val_windows = D.corpus_windows(corpus, "validation", length=16, dilation=1)
    overrides = dict(kv.split("=", 1) for kv in args.set or [])

    results = tune(
        args.arch, train_windows, val_windows, n_trials=args.trials,
        max_budget_epochs=args.budget, grace=args.grace,
        reduction_factor=args.reduction, parallelism=args.parallelism,
        seed=args.seed, overrides=overrides or None,
    )

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rungs = sorted({r for res in results for r in res.rung_cccs})
    keys = sorted({k for res in results for k in res.entries})
    with open(out_dir / "trials.tsv", "w") as fh:
        header = ["trial", "status"] + [f"ccc@{r}" for r in rungs] + keys
        fh.write("\t".join(header) + "\n")
        for res in results:
            row = [str(res.trial_id), res.status]
            row += [f"{res.rung_cccs[r]:.6f}" if r in res.rung_cccs else "" for r in rungs]
            row += [res.entries.get(k, "") for k in keys]
            fh.write("\t".join(row) + "\n")

    top_k = min(args.top_k, len(results))
    for rank in range(top_k):
        res = results[rank]
        merged = dict(res.entries)
        merged.update(overrides)
        model_cfg, train_cfg = parse_entries(merged)
        text = format_config(model_cfg, train_cfg)
        (out_dir / f"best-{rank}.config").write_text(text)
        if rank == 0:
            print(f"# top config (trial {res.trial_id}, best CCC {res.best_ccc:.3f}):")
            print(text, end="")
    halted = sum(1 for r in results if r.status == "halted-by-asha")
    print(f"# {len(results)} trials: {halted} halted early, "
          f"{sum(1 for r in results if r.status == 'failed')} failed; table in {out_dir / 'trials.tsv'}")
    return 0


# -- report -----------------------------------------------------------------------


def cmd_report(args) -> int:
    rows: dict[str, dict] = {}
    for run_dir in args.runs:
        path = Path(run_dir) / "report.json"
        if not path.exists():
            print(f"warning: skipping {run_dir} (no report.json)", file=sys.stderr)
            continue
        try:
            report = json.loads(path.read_text())
        except json.JSONDecodeError:
            print(f"warning: skipping {run_dir} (malformed report.json)", file=sys.stderr)
            continue
        run_id = Path(run_dir).name
        if run_id in rows:
            print(f"warning: duplicate run id {run_id!r}, keeping the last one", file=sys.stderr)
        report["run_id"] = run_id
        rows[run_id] = report

    print(f"{'Method':<16}{'Valence':>9}{'Arousal':>9}{'Avg.':>8}{'P_seq':>11}{'P_total':>11}")
    for arch in ("rnn", "sa", "cma"):
        group = [r for r in rows.values() if r.get("arch") == arch]
        if not group:
            continue
        print(GROUP_TITLES[arch])
        for r in sorted(group, key=lambda r: -(r.get("average") or -np.inf)):
            avg = r.get("average")
            print(f"  {r['method']:<14}"
                  f"{r.get('ccc_valence') if r.get('ccc_valence') is not None else float('nan'):>9.3f}"
                  f"{r.get('ccc_arousal') if r.get('ccc_arousal') is not None else float('nan'):>9.3f}"
                  f"{avg if avg is not None else float('nan'):>8.3f}"
                  f"{r.get('params_sequence', 0):>11}{r.get('params_total', 0):>11}")
    return 0


# -- argument wiring ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avaffect",
        description="Train and compare audiovisual affect-fusion sequence models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write a synthetic multimodal corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--videos", type=int, default=50)
    p.add_argument("--frames", type=int, default=480)
    p.add_argument("--smoothness", type=int, default=24)
    p.add_argument("--noise", type=float, default=0.05)
    p.set_defaults(fn=cmd_generate_data)

    p = sub.add_parser("train", help="train one model from a config file or preset")
    p.add_argument("--config", help="flat key=value run configuration file")
    p.add_argument("--preset", choices=sorted(PRESETS), help="shipped configuration")
    p.add_argument("--data", help=f"corpus directory or manifest (default ${DATA_ENV_VAR})")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help=f"corpus directory or manifest (default ${DATA_ENV_VAR})")
    p.add_argument("--split", default="validation", choices=("train", "validation", "test"))
    p.add_argument("--per-video", action="store_true", help="also report per-video CCC")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("tune", help="run an ASHA hyperparameter sweep")
    p.add_argument("--arch", required=True, choices=("rnn", "sa", "cma"))
    p.add_argument("--trials", type=int, default=16)
    p.add_argument("--budget", type=int, default=16, help="maximum epochs per trial")
    p.add_argument("--grace", type=int, default=1)
    p.add_argument("--reduction", type=int, default=4)
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--data", help=f"corpus directory or manifest (default ${DATA_ENV_VAR})")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--top-k", type=int, default=3)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="fix a config key for every trial (repeatable)")
    p.set_defaults(fn=cmd_tune)

    p = sub.add_parser("report", help="aggregate run directories into one table")
    p.add_argument("--runs", nargs="*", default=[], help="run directories written by train")
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, ConfigParseError, ConfigError, D.CorpusError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RuntimeError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
