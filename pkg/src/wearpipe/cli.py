"""Command-line entry point: ``wearpipe <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .augment import MODES, apply_mode
from .errors import ConfigError, LengthMismatch, WearPipeError
from .evaluation import macro_f1
from .ingest import WEAR_VOCABULARY, Recording, Vocabulary, audit_orientation, load_recording, write_orientation_csv
from .model import GbdtModel
from .pipeline import PipelineConfig, extract_cohort, predict_recordings, run_cv, train_model
from .postprocess import read_sample_labels, write_sample_labels
from .synth import SynthConfig, generate, load_cohort, write_cohort

log = logging.getLogger("wearpipe")


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


def read_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    return data


def pipeline_config(args) -> PipelineConfig:
    raw = {k: v for k, v in args.config_data.items() if k != "synth"}
    cfg = PipelineConfig.from_dict(raw)
    return cfg.with_overrides(mode=args.mode, seed=args.seed, threads=args.threads)


def _existing(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


def load_inputs(path: str, vocabulary: str | None = None) -> tuple[list[Recording], Vocabulary]:
    """A cohort directory or a single recording CSV."""
    p = _existing(path, "input")
    vocab = Vocabulary.load(_existing(vocabulary, "vocabulary")) if vocabulary else None
    if p.is_dir():
        recs, vocab = load_cohort(p, vocab)
        if not recs:
            raise ConfigError(f"no recordings found in {p}")
        return recs, vocab
    vocab = vocab or WEAR_VOCABULARY
    return [load_recording(p, vocab)], vocab


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_synth(args) -> int:
    opts = dict(args.config_data.get("synth", {}))
    if args.seed is not None:
        opts["seed"] = args.seed
    for key in ("subjects", "classes"):
        if getattr(args, key) is not None:
            opts[key] = getattr(args, key)
    if args.flip_prob is not None:
        opts["orientation_flip_prob"] = args.flip_prob
    if args.swap_prob is not None:
        opts["limb_swap_prob"] = args.swap_prob
    cohort = generate(SynthConfig.from_dict(opts))
    write_cohort(cohort, args.out)
    print(f"wrote {len(cohort.recordings)} recordings to {args.out}")
    return 0


def cmd_audit(args) -> int:
    recs, _ = load_inputs(args.input, args.vocabulary)
    reports = audit_orientation(recs)
    write_orientation_csv(reports, args.out)
    n = sum(len(r.flags) for r in reports)
    print(f"{n} flagged entries written to {args.out}")
    return 0


def cmd_extract(args) -> int:
    cfg = pipeline_config(args)
    recs, _ = load_inputs(args.input, args.vocabulary)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_cols = 0
    for rec, m in zip(recs, extract_cohort(recs, cfg.plan, cfg.channel_config, cfg.threads, cfg.cache_dir)):
        m = apply_mode(m, cfg.mode)
        m.save(out / f"{rec.subject_id}.npz")
        n_cols = m.n_columns
    print(f"{len(recs)} feature matrices with {n_cols} columns written to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = pipeline_config(args)
    recs, vocab = load_inputs(args.input, args.vocabulary)
    model = train_model(recs, cfg, vocab)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    model.save(args.out)
    print(f"trained {model.n_iterations} iterations x {model.n_classes} classes -> {args.out}")
    return 0


def cmd_cv(args) -> int:
    cfg = pipeline_config(args)
    recs, vocab = load_inputs(args.input, args.vocabulary)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_cv(recs, cfg, vocab, progress=lambda f, m: log.info("fold %d done", f))
    for fold, model in enumerate(result.models):
        model.save(out / f"model_fold{fold}.npz")
    result.report.save(out / "report.json")
    result.report_pp.save(out / "report_pp.json")
    result.report_boost.save(out / "report_pp_boost.json")
    result.report_pp.save_confusion_csv(out / "confusion_pp.csv")
    result.oof.save(out / "oof_probabilities.npz")
    (out / "summary.json").write_text(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n")
    print(f"macro F1 {result.f1:.4f}  F1_PP {result.f1_pp:.4f}")
    return 0


def cmd_predict(args) -> int:
    cfg = pipeline_config(args)
    models = [GbdtModel.load(_existing(p, "model")) for p in args.models]
    recs, vocab = load_inputs(args.input, args.vocabulary)
    if not args.vocabulary and models[0].class_names:
        vocab = Vocabulary(models[0].class_names)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for pred in predict_recordings(models, recs, cfg):
        write_sample_labels(out / f"{pred.recording_id}.csv", pred.sample_labels, vocab)
    print(f"{len(recs)} prediction files written to {out}")
    return 0


def cmd_evaluate(args) -> int:
    recs, vocab = load_inputs(args.truth, args.vocabulary)
    pred_dir = _existing(args.pred, "prediction directory")
    truth, pred, subjects = [], [], []
    for rec in recs:
        if rec.labels is None:
            raise ConfigError(f"recording {rec.subject_id} has no labels")
        p = read_sample_labels(_existing(str(pred_dir / f"{rec.subject_id}.csv"), "prediction file"), vocab)
        if len(p) != rec.n_samples:
            raise LengthMismatch(f"{rec.subject_id}: {len(p)} predicted samples, {rec.n_samples} labeled")
        truth.append(rec.labels)
        pred.append(p)
        subjects.append(np.full(rec.n_samples, rec.subject_id, dtype=object))
    report = macro_f1(np.concatenate(truth), np.concatenate(pred), len(vocab), np.concatenate(subjects),
                      list(vocab.names))
    if args.out:
        report.save(args.out)
        report.save_confusion_csv(Path(args.out).with_suffix(".confusion.csv"))
    print(f"macro F1 {report.macro_f1:.4f}")
    return 0


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--mode", choices=MODES)
    common.add_argument("--threads", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="wearpipe", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "generate a synthetic cohort")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--flip-prob", type=float)
    p.add_argument("--swap-prob", type=float)

    p = add("audit", cmd_audit, "per-half orientation audit")
    p.add_argument("--input", required=True)
    p.add_argument("--vocabulary")
    p.add_argument("--out", required=True)

    for name, func, help_ in (("extract", cmd_extract, "extract feature matrices"),
                              ("train", cmd_train, "train one model on all recordings"),
                              ("cv", cmd_cv, "grouped cross-validation")):
        p = add(name, func, help_)
        p.add_argument("--input", required=True)
        p.add_argument("--vocabulary")
        p.add_argument("--out", required=True)

    p = add("predict", cmd_predict, "per-sample predictions with full post-processing")
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--vocabulary")
    p.add_argument("--out", required=True)

    p = add("evaluate", cmd_evaluate, "score prediction files against labeled recordings")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--vocabulary")
    p.add_argument("--out")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.config_data = read_config(args.config)
        return args.func(args)
    except WearPipeError as exc:
        print(f"wearpipe: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"wearpipe: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
