"""Command-line entry point: ``mmsd <command> ...``.

Exit codes: 0 success, 2 usage or input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import data as D
from .attention import ConfigError
from .configfile import coerce, field_names, read_flat
from .gradcheck import model_gradient_check
from .model import TOY_CONFIG, FormatError, ModelConfig, init_params, load_checkpoint, predict_proba, save_checkpoint
from .training import (
    PRESETS,
    TrainConfig,
    TrainingDiverged,
    evaluate,
    metrics_from_predictions,
    train,
    zero_modalities,
)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
GRAD_TOL = 1e-4


class UsageError(Exception):
    pass


def _print_config(command: str, **sections) -> None:
    print(f"[{command}] config: " + json.dumps(sections, sort_keys=True, default=str))


def _need_file(path: str | None, what: str) -> Path:
    if path is None:
        raise UsageError(f"missing {what}")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------


def _train_and_model_config(config_path: str | None, dataset) -> tuple[TrainConfig, ModelConfig]:
    raw = read_flat(_need_file(config_path, "config file")) if config_path else {}
    preset = raw.pop("preset", "default")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    known = field_names(TrainConfig) | field_names(ModelConfig)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    tcfg = replace(PRESETS[preset], **coerce(TrainConfig, raw))
    model_kw = coerce(ModelConfig, raw)
    if dataset:
        s0 = dataset[0]
        model_kw.setdefault("d_v", s0.video.shape[1])
        model_kw.setdefault("d_a", s0.audio.shape[1])
        model_kw.setdefault("L_v", max(s.video.shape[0] for s in dataset))
        model_kw.setdefault("L_a", max(s.audio.shape[0] for s in dataset))
        model_kw.setdefault("L_t", max(s.tokens.size for s in dataset))
    return tcfg, ModelConfig(**model_kw)


def _load_data(path: str | None, vocab: int | None = None):
    p = _need_file(path, "data file")
    dataset = D.read_dataset(p, vocab)
    mpath = D.manifest_path(p)
    splits = None
    if mpath.is_file():
        rows = D.read_manifest(mpath)
        if len(rows) != len(dataset):
            raise FormatError(f"manifest lists {len(rows)} samples, data file has {len(dataset)}", 0)
        splits = {r["id"]: r["split"] for r in rows}
    return dataset, splits


def _subset(dataset, splits, which: str):
    if splits is None or which == "all":
        return list(dataset)
    return [s for i, s in enumerate(dataset) if splits[i] == which]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    raw = read_flat(_need_file(args.spec, "spec file")) if args.spec else {}
    unknown = set(raw) - field_names(D.SynthSpec)
    if unknown:
        raise ConfigError(f"unknown spec keys: {sorted(unknown)}")
    spec = D.SynthSpec(**coerce(D.SynthSpec, raw))
    _print_config("gen-data", spec=asdict(spec), out=args.out)
    dataset = D.generate(spec)
    _, test_ids = D.split_indices([s.label for s in dataset], spec.test_fraction, spec.seed)
    out = Path(args.out)
    offsets = D.write_dataset(dataset, out)
    D.write_manifest(D.manifest_path(out), dataset, offsets, set(test_ids))
    n_pos = sum(s.label for s in dataset)
    oracle = metrics_from_predictions([D.rule_detector(s) for s in dataset], [s.label for s in dataset])
    print(f"samples {len(dataset)}  stuttered {n_pos}  fluent {len(dataset) - n_pos}  test {len(test_ids)}")
    print(f"rule-detector (audio hold >= 3 frames): {oracle.table_row()}")
    print(f"wrote {out} sha256={_sha256(out)}")
    return EXIT_OK


def cmd_train(args) -> int:
    dataset, splits = _load_data(args.data)
    train_set = _subset(dataset, splits, "train")
    tcfg, mcfg = _train_and_model_config(args.config, dataset)
    log_path = Path(args.log or f"{args.out}.log.jsonl")
    _print_config("train", train=asdict(tcfg), model=asdict(mcfg), samples=len(train_set), log=str(log_path))
    for s in dataset:
        s.validate(mcfg)
    with log_path.open("w") as fh:

        def on_log(rec):
            fh.write(json.dumps(rec) + "\n")
            if "f1" in rec:
                print(f"epoch {rec['epoch']:>3}  step {rec['step']:>5}  loss {rec['loss']:.4f}  train F1 {100 * rec['f1']:.2f}")

        try:
            params, records = train(init_params(mcfg, tcfg.seed), train_set, mcfg, tcfg, on_log=on_log)
        except TrainingDiverged as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_NUMERIC
    save_checkpoint(args.out, params, mcfg)
    print(f"final train {records[-1]['f1'] * 100:.2f} F1; wrote {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    params, mcfg = load_checkpoint(_need_file(args.checkpoint, "checkpoint"))
    dataset, splits = _load_data(args.data, mcfg.vocab)
    which = args.split or ("test" if splits else "all")
    subset = _subset(dataset, splits, which)
    _print_config("eval", split=which, samples=len(subset), model=asdict(mcfg))
    if not subset:
        raise UsageError(f"split {which!r} is empty")
    report = evaluate(params, subset, mcfg)
    print(report.table_row())
    print(f"tp {report.tp}  fp {report.fp}  fn {report.fn}  tn {report.tn}  accuracy {100 * report.accuracy:.2f}")
    return EXIT_OK


def cmd_infer(args) -> int:
    params, mcfg = load_checkpoint(_need_file(args.checkpoint, "checkpoint"))
    dataset = D.read_dataset(_need_file(args.sample, "sample file"), mcfg.vocab)
    indices = [args.index] if args.index is not None else range(len(dataset))
    _print_config("infer", samples=len(dataset), index=args.index)
    for i in indices:
        if not 0 <= i < len(dataset):
            raise UsageError(f"index {i} out of range for {len(dataset)} samples")
        p = predict_proba(dataset[i], params, mcfg)
        cls = "stuttered" if p > 0.5 else "fluent"
        print(f"{i}\t{cls}\tp={max(p, 1 - p):.4f}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    raw = read_flat(_need_file(args.config, "config file")) if args.config else {}
    unknown = set(raw) - field_names(ModelConfig) - {"seed", "h_step"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = replace(TOY_CONFIG, **coerce(ModelConfig, raw))
    seed = int(raw.get("seed", 0))
    step = float(raw.get("h_step", 1e-5))
    _print_config("grad-check", model=asdict(cfg), seed=seed, h_step=step)
    err = model_gradient_check(cfg, seed, step)
    if err < GRAD_TOL:
        print(f"PASS max_rel_err={err:.3e} < {GRAD_TOL:g}")
        return EXIT_OK
    print(f"FAIL max_rel_err={err:.3e} >= {GRAD_TOL:g}")
    return EXIT_NUMERIC


ABLATIONS = (
    ("audio-only", ("audio",)),
    ("video-only", ("video",)),
    ("full", ("video", "audio", "text")),
)


def run_ablation(train_set, test_set, mcfg: ModelConfig, tcfg: TrainConfig) -> dict[str, object]:
    """Train one model per modality subset from the same seed; return test reports."""
    reports = {}
    for name, keep in ABLATIONS:
        params, _ = train(init_params(mcfg, tcfg.seed), zero_modalities(train_set, keep), mcfg, tcfg)
        reports[name] = evaluate(params, zero_modalities(test_set, keep), mcfg)
    return reports


def cmd_ablate(args) -> int:
    dataset, splits = _load_data(args.data)
    if splits is None:
        raise UsageError("ablate needs a manifest with train/test splits next to the data file")
    tcfg, mcfg = _train_and_model_config(args.config, dataset)
    train_set, test_set = _subset(dataset, splits, "train"), _subset(dataset, splits, "test")
    _print_config("ablate", train=asdict(tcfg), model=asdict(mcfg), n_train=len(train_set), n_test=len(test_set))
    try:
        reports = run_ablation(train_set, test_set, mcfg, tcfg)
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"{'model':<12}{'P':>8}{'R':>8}{'F1':>8}")
    for name, r in reports.items():
        print(f"{name:<12}{100 * r.precision:>8.2f}{100 * r.recall:>8.2f}{100 * r.f1:>8.2f}")
    gain = reports["full"].f1 - reports["audio-only"].f1
    print(f"multi-modal F1 gain over audio-only: {100 * gain:+.2f}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmsd", description="Multi-modal stuttering detection toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset and manifest")
    p.add_argument("--spec", help="flat key = value file of SynthSpec fields (defaults if omitted)")
    p.add_argument("--out", required=True, help="dataset file to write")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="flat key = value file: TrainConfig/ModelConfig fields, optional preset")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="JSON-lines training log (default: <out>.log.jsonl)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="precision / recall / F1 of a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "test", "all"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="classify samples from a dataset file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sample", required=True, help="dataset file holding the sample(s)")
    p.add_argument("--index", type=int)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("grad-check", help="finite-difference check of the full model")
    p.add_argument("--config", help="ModelConfig overrides (toy config if omitted)")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("ablate", help="audio-only vs video-only vs full model")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, FormatError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
