"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime or data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import persistence
from .evaluation import benchmark_latency, evaluate, export_features
from .model import DESK_CONFIG, ModelConfig, init_params, predict, with_classes
from .persistence import ModelBundle
from .synthdata import SynthSpec, generate, generate_rows
from .text import DatasetError, build_vocabulary, encode, load_dataset, read_jsonl, tokenize, EncodedRecord, LabelMap
from .training import TrainConfig, TrainingError, grad_check_report, max_relative_error, train

GRADCHECK_TOL = 1e-4
GRADCHECK_FC_TOL = 1e-6
DESK_LEARNING_RATE = 0.5

_MODEL_KEYS = {"embedding_dim", "seq_len", "heights", "kernels_per_height"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"model"}
_PATH_KEYS = {"data", "out", "heldout"}
RUN_CONFIG_KEYS = _MODEL_KEYS | _TRAIN_KEYS | _PATH_KEYS


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def load_run_config(path, desk: bool = False) -> tuple[TrainConfig, dict]:
    """Read a flat RunConfig JSON; returns (TrainConfig, paths).

    ``num_classes`` is left at its default and fixed later from the data.
    """
    raw = {}
    if path is not None:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ValueError("config must be a JSON object")
        unknown = set(raw) - RUN_CONFIG_KEYS
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
    base = TrainConfig(model=DESK_CONFIG, learning_rate=DESK_LEARNING_RATE) if desk else TrainConfig()
    model = replace(base.model, **{k: raw[k] for k in _MODEL_KEYS if k in raw})
    config = replace(base, model=model, **{k: raw[k] for k in _TRAIN_KEYS if k in raw})
    return config, {k: raw[k] for k in _PATH_KEYS if k in raw}


def cmd_synth(args) -> int:
    spec = SynthSpec()
    if args.spec:
        raw = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        known = {f.name for f in fields(SynthSpec)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown synth spec keys: {sorted(unknown)}")
        if "tokens_per_doc" in raw:
            raw["tokens_per_doc"] = tuple(raw["tokens_per_doc"])
        spec = SynthSpec(**raw)
    train_path, test_path = generate(spec, args.out_dir)
    print(f"wrote {train_path} ({spec.num_classes * spec.train_per_class} records)")
    print(f"wrote {test_path} ({spec.num_classes * spec.test_per_class} records)")
    return 0


def cmd_train(args) -> int:
    config, paths = load_run_config(args.config, desk=args.desk)
    data = args.data or paths.get("data")
    out = args.out or paths.get("out")
    heldout_path = args.heldout or paths.get("heldout")
    if not data or not out:
        raise UsageError("train needs --data and --out (or 'data'/'out' in the config)")
    records, vocab, label_map = load_dataset(data, seq_len=config.model.seq_len, min_count=config.min_count)
    config = replace(config, model=with_classes(config.model, len(label_map)))
    heldout = None
    if heldout_path:
        heldout, _, _ = load_dataset(heldout_path, vocab, label_map, seq_len=config.model.seq_len)

    def progress(s):
        held = f" heldout_acc={s.heldout_accuracy:.4f}" if s.heldout_accuracy is not None else ""
        print(f"epoch {s.epoch:3d} loss={s.loss:.6f} train_acc={s.train_accuracy:.4f}{held} ({s.seconds:.2f}s)",
              file=sys.stderr)

    params, history = train(records, config, len(vocab), heldout=heldout, on_epoch=progress)
    nbytes = persistence.save(ModelBundle(params, vocab, label_map, config), out)
    print(f"vocabulary={len(vocab)} classes={len(label_map)} records={len(records)}")
    print(f"final loss={history.epochs[-1].loss:.6f} first loss={history.epochs[0].loss:.6f}")
    print(f"saved {out} ({nbytes} bytes)")
    return 0


def cmd_evaluate(args) -> int:
    bundle = persistence.load(args.model)
    records, _, _ = load_dataset(args.data, bundle.vocab, bundle.label_map, seq_len=bundle.params.config.seq_len)
    if not records:
        raise DatasetError(f"{args.data}: no records")
    report = evaluate(bundle, records)
    texts = [text for text, _ in read_jsonl(args.data)]
    report.latency = benchmark_latency(bundle, texts, args.repetitions)
    print(report.format_table())
    if args.json:
        Path(args.json).write_text(report.to_json(), encoding="utf-8")
    return 0


def cmd_predict(args) -> int:
    bundle = persistence.load(args.model)
    label, P = predict(args.text, bundle.params, bundle.vocab, bundle.label_map)
    for lab, p in zip(bundle.label_map.labels, P):
        print(f"{lab}\t{p:.6f}")
    print(f"prediction\t{label}")
    return 0


def cmd_export(args) -> int:
    bundle = persistence.load(args.model)
    records, _, _ = load_dataset(args.data, bundle.vocab, bundle.label_map, seq_len=bundle.params.config.seq_len)
    n = export_features(bundle, records, args.out)
    print(f"wrote {n} rows x {bundle.params.config.feature_dim} features to {args.out}")
    return 0


def gradcheck_setup(seed: int, batch_size: int = 4):
    """Desk-config parameters and a batch drawn from the default synthetic corpus."""
    rows, _ = generate_rows(SynthSpec())
    docs = [tokenize(t) for t, _ in rows]
    vocab = build_vocabulary(docs, 5)
    label_map = LabelMap.from_labels(lab for _, lab in rows)
    config = with_classes(DESK_CONFIG, len(label_map))
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(rows), size=batch_size, replace=False)
    batch = [EncodedRecord(tuple(encode(docs[i], vocab, config.seq_len)), label_map.id_of(rows[i][1])) for i in picks]
    return init_params(config, len(vocab), seed), batch


def cmd_gradcheck(args) -> int:
    params, batch = gradcheck_setup(args.seed, args.batch_size)
    report = grad_check_report(params, batch, eps=args.eps, l2_coeff=1e-4, seed=args.seed)
    worst = max_relative_error(report)
    fc = max_relative_error(report, "fc.")
    ncoords = sum(len(rows) for rows in report["groups"].values())
    for name, rows in report["groups"].items():
        print(f"{name:<14} coords={len(rows):3d} max_rel_err={max(r[3] for r in rows):.3e}")
    print(f"coordinates={ncoords} kinks_skipped={report['kinks']} eps={args.eps:g}")
    print(f"max relative error {worst:.3e} (fc path {fc:.3e})")
    ok = worst < GRADCHECK_TOL and fc < GRADCHECK_FC_TOL
    print(("PASS" if ok else "FAIL") + f" (tolerance {GRADCHECK_TOL:g}, fc path {GRADCHECK_FC_TOL:g})")
    return 0 if ok else 2


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="textcnn", description="Multi-kernel convolutional text classifier")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    s.add_argument("--spec", help="JSON file with SynthSpec fields")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--data")
    s.add_argument("--config", help="RunConfig JSON")
    s.add_argument("--out")
    s.add_argument("--heldout", help="optional JSONL for per-epoch held-out accuracy")
    s.add_argument("--desk", action="store_true", help="small preset: D=32, N=40, heights 2/3/4, K=16")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="metrics and latency on a labeled file")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--json", help="also write the metrics as JSON here")
    s.add_argument("--repetitions", type=int, default=1)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("predict", help="classify one text")
    s.add_argument("--model", required=True)
    s.add_argument("--text", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("export-features", help="write pooled feature vectors as TSV")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("gradcheck", help="finite-difference check of backpropagation")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--eps", type=float, default=1e-5)
    s.add_argument("--batch-size", type=int, default=4)
    s.set_defaults(func=cmd_gradcheck)
    return p


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"textcnn: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, DatasetError, TrainingError, persistence.ModelFormatError) as exc:
        print(f"textcnn: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
