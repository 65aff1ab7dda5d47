"""Command-line entry point.

Exit codes: 0 success, 1 contract/validation failure, 2 I/O failure.
Options may come from ``--config file.yaml``; explicit flags win.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, fields

import numpy as np
import yaml

from . import kernels
from .data import parse_dataset, read_dataset, type_pairs, write_dataset
from .encoder import EncoderConfig, Vocab, build_vocab
from .errors import ReldescError, SchemaError
from .gradcheck import check_model, randomize, tiny_setup
from .model import ModelConfig, RelationModel
from .schema import load_schema, save_schema
from .train import (
    DEFAULT_SWEEP_ALPHAS,
    TrainConfig,
    ablate,
    alpha_sweep,
    evaluate,
    format_table,
    predict_pairs,
    train,
)

log = logging.getLogger("reldesc")

CHECKPOINT = "checkpoint"
TRAIN_LOG = "train_log.jsonl"
EVAL_REPORT = "eval_report.json"
PREDICTIONS = "predictions.jsonl"


class CLIError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    train: str = None
    dev: str = None
    test: str = None
    data: str = None
    schema: str = None
    vocab: str = None
    checkpoint: str = None
    out_dir: str = "runs/latest"
    # encoder
    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 64
    d_ff: int = 128
    max_len: int = 128
    min_freq: int = 1
    # model
    d: int = 32
    alpha: float = 0.5
    temperature: float = 1.0
    use_cls_concat: bool = True
    use_ce_loss: bool = True
    dual_encoder: bool = True
    desc_init: str = "copy"
    desc_max_len: int = 64
    # training
    epochs: int = 10
    batch_size: int = 4
    lr: float = 3e-4
    seed: int = 0
    null_cap: int = 3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_grad_norm: float = 1.0
    type_filter: bool = False
    alphas: list = None

    def model_config(self):
        return ModelConfig(d=self.d, alpha=self.alpha, use_cls_concat=self.use_cls_concat,
                           use_ce_loss=self.use_ce_loss, dual_encoder=self.dual_encoder,
                           temperature=self.temperature, desc_init=self.desc_init,
                           desc_max_len=self.desc_max_len)

    def train_config(self):
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.lr,
                           seed=self.seed, null_cap=self.null_cap, beta1=self.beta1,
                           beta2=self.beta2, eps=self.eps, type_filter=self.type_filter,
                           max_grad_norm=self.max_grad_norm)

    def encoder_config(self, vocab_size):
        return EncoderConfig(vocab_size=vocab_size, n_layers=self.n_layers, n_heads=self.n_heads,
                             d_model=self.d_model, d_ff=self.d_ff, max_len=self.max_len)

    def preflight(self, *required):
        """Validate numeric fields and required paths before any work starts."""
        self.model_config()
        self.train_config()
        self.encoder_config(vocab_size=8)
        for name in required:
            path = getattr(self, name)
            if path is None:
                raise CLIError(f"missing required option --{name.replace('_', '-')}", 1)
            if not os.path.exists(path):
                raise CLIError(f"{name}: no such file {path}", 2)


_FIELD_NAMES = {f.name for f in fields(RunConfig)}


def resolve_config(args):
    values = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                loaded = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise CLIError(f"cannot read config {args.config}: {exc}", 2) from None
        if not isinstance(loaded, dict):
            raise CLIError("config file must be a mapping", 1)
        unknown = sorted(set(loaded) - _FIELD_NAMES)
        if unknown:
            raise CLIError(f"unknown config keys: {unknown}", 1)
        values.update(loaded)
    for name in _FIELD_NAMES:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    return RunConfig(**values)


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate(args):
    paths = args.data or []
    try:
        schema = load_schema(args.schema)
    except OSError as exc:
        raise CLIError(f"cannot read schema: {exc}", 2) from None
    except SchemaError as exc:
        for v in exc.violations:
            print(f"{args.schema}: {v}")
        print(f"{len(exc.violations)} violations")
        return 1
    violations = []
    for path in paths:
        try:
            instances, problems = read_dataset(path, schema)
        except OSError as exc:
            raise CLIError(f"cannot read dataset: {exc}", 2) from None
        violations.extend(problems)
        violations.extend(f"{path}: {v}" for v in schema.coverage_violations(type_pairs(instances)))
    for v in violations:
        print(v)
    print(f"{len(violations)} violations")
    return 0 if not violations else 1


def _load_schema_and(paths, rc):
    schema = load_schema(rc.schema)
    sets = []
    for p in paths:
        insts = parse_dataset(p, schema) if p else []
        problems = schema.coverage_violations(type_pairs(insts))
        if problems:
            raise SchemaError(problems)
        sets.append(insts)
    return schema, sets


def _vocab_for(rc, train_set, schema):
    if rc.vocab:
        return Vocab.load(rc.vocab)
    return build_vocab(train_set, schema, rc.min_freq)


def cmd_build_vocab(args):
    rc = resolve_config(args)
    rc.preflight("train", "schema")
    schema, (train_set,) = _load_schema_and([rc.train], rc)
    vocab = build_vocab(train_set, schema, rc.min_freq)
    out = args.out or os.path.join(rc.out_dir, "vocab.txt")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    vocab.save(out)
    print(f"wrote {len(vocab)} tokens to {out}")
    return 0


def cmd_train(args):
    rc = resolve_config(args)
    rc.preflight("train", "dev", "schema")
    schema, (train_set, dev_set) = _load_schema_and([rc.train, rc.dev], rc)
    vocab = _vocab_for(rc, train_set, schema)
    os.makedirs(rc.out_dir, exist_ok=True)
    result = train(train_set, dev_set, schema, rc.model_config(), rc.train_config(), vocab,
                   rc.encoder_config(len(vocab)), log_path=os.path.join(rc.out_dir, TRAIN_LOG))
    result.model.save(os.path.join(rc.out_dir, CHECKPOINT))
    vocab.save(os.path.join(rc.out_dir, "vocab.txt"))
    rep = result.best_dev
    print(f"best epoch {result.best_epoch}: dev P={rep.micro_precision:.4f} "
          f"R={rep.micro_recall:.4f} F1={rep.micro_f1:.4f}")
    return 0


def _load_model(rc):
    if not rc.checkpoint:
        raise CLIError("missing required option --checkpoint", 1)
    try:
        return RelationModel.load(rc.checkpoint)
    except OSError as exc:
        raise CLIError(f"cannot read checkpoint: {exc}", 2) from None


def cmd_eval(args):
    rc = resolve_config(args)
    rc.preflight("data")
    model = _load_model(rc)
    data = parse_dataset(rc.data, model.schema)
    report = evaluate(model, data)
    os.makedirs(rc.out_dir, exist_ok=True)
    with open(os.path.join(rc.out_dir, EVAL_REPORT), "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    text = report.to_text()
    with open(os.path.join(rc.out_dir, "eval_report.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")
    return 0


def cmd_predict(args):
    rc = resolve_config(args)
    rc.preflight("data")
    model = _load_model(rc)
    data = parse_dataset(rc.data, model.schema)
    preds = predict_pairs(model, data)
    os.makedirs(rc.out_dir, exist_ok=True)
    out = os.path.join(rc.out_dir, PREDICTIONS)
    names = model.schema.predicates
    with open(out, "w", encoding="utf-8") as fh:
        for pair, k, sims in preds:
            fh.write(json.dumps({
                "instance_id": pair.instance_id,
                "subject": pair.subject,
                "object": pair.object,
                "gold": pair.label,
                "predicted": names[k],
                "predicted_index": k,
                "predicates": names,
                "similarities": None if sims is None else [float(s) for s in sims],
            }) + "\n")
    print(f"wrote {len(preds)} predictions to {out}")
    return 0


def cmd_gradcheck(args):
    rc = resolve_config(args)
    if args.tiny:
        model, batch = tiny_setup(seed=rc.seed)
        max_entries = None
    else:
        rc.preflight()
        from .synthetic import make_corpus, synthetic_schema
        from .data import generate_pairs, make_batch

        schema = synthetic_schema()
        inst = make_corpus(1, seed=rc.seed)[0]
        vocab = build_vocab([inst], schema)
        model = RelationModel.initialize(vocab, schema, rc.encoder_config(len(vocab)),
                                         rc.model_config(), seed=rc.seed)
        randomize(model.params, np.random.default_rng(rc.seed + 1), scale=0.1)
        pair = generate_pairs(inst, schema)[0]
        batch = make_batch([pair], [inst], schema, vocab, model.encoder_config.max_len,
                           model.config.desc_max_len)
        max_entries = args.max_entries
    results = check_model(model, batch, tol=args.tol, max_entries=max_entries, seed=rc.seed)
    rows = [{"group": r.name, "checked": r.n_checked, "max_rel_error": f"{r.max_rel_error:.2e}",
             "status": "pass" if r.passed else "FAIL"} for r in results]
    print(format_table(rows, ["group", "checked", "max_rel_error", "status"]), end="")
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} parameter groups pass (tol {args.tol:g})")
    return 0 if not failed else 1


def _write_table(out_dir, stem, rows, columns):
    os.makedirs(out_dir, exist_ok=True)
    text = format_table(rows, columns)
    with open(os.path.join(out_dir, stem + ".txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    with open(os.path.join(out_dir, stem + ".json"), "w", encoding="utf-8") as fh:
        json.dump({"rows": rows}, fh, indent=2)
        fh.write("\n")
    print(text, end="")


def cmd_sweep(args):
    rc = resolve_config(args)
    rc.preflight("train", "dev", "schema")
    alphas = rc.alphas if rc.alphas is not None else list(DEFAULT_SWEEP_ALPHAS)
    for a in alphas:
        if not 0.0 <= a <= 1.0:
            raise CLIError(f"alpha {a} outside [0, 1]", 1)
    schema, (train_set, dev_set) = _load_schema_and([rc.train, rc.dev], rc)
    vocab = _vocab_for(rc, train_set, schema)
    rows = alpha_sweep(train_set, dev_set, schema, alphas, rc.model_config(), rc.train_config(),
                       vocab, rc.encoder_config(len(vocab)))
    _write_table(rc.out_dir, "sweep", rows, ["alpha", "precision", "recall", "f1"])
    return 0


def cmd_ablate(args):
    rc = resolve_config(args)
    rc.preflight("train", "dev", "test", "schema")
    schema, (train_set, dev_set, test_set) = _load_schema_and([rc.train, rc.dev, rc.test], rc)
    vocab = _vocab_for(rc, train_set, schema)
    rows = ablate(train_set, dev_set, test_set, schema, rc.model_config(), rc.train_config(),
                  vocab, rc.encoder_config(len(vocab)))
    _write_table(rc.out_dir, "ablation", rows, ["label", "precision", "recall", "f1"])
    return 0


def cmd_synth(args):
    from .synthetic import make_splits, synthetic_schema

    os.makedirs(args.out_dir, exist_ok=True)
    splits = make_splits(args.n_train, args.n_dev, args.n_test, seed=args.seed)
    for name, insts in zip(("train", "dev", "test"), splits):
        write_dataset(insts, os.path.join(args.out_dir, f"{name}.jsonl"))
    save_schema(synthetic_schema(), os.path.join(args.out_dir, "schema.yaml"))
    print(f"wrote synthetic corpus to {args.out_dir}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _add_run_options(p, paths=()):
    p.add_argument("--config", help="YAML file with run options (flags override it)")
    for name in paths:
        p.add_argument(f"--{name.replace('_', '-')}", dest=name)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--seed", type=int)


def _add_model_options(p):
    p.add_argument("--alpha", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--null-cap", dest="null_cap", type=int)
    p.add_argument("--no-cls-concat", dest="use_cls_concat", action="store_const", const=False)
    p.add_argument("--no-ce-loss", dest="use_ce_loss", action="store_const", const=False)
    p.add_argument("--shared-encoder", dest="dual_encoder", action="store_const", const=False)
    p.add_argument("--type-filter", dest="type_filter", action="store_const", const=True)
    p.add_argument("--temperature", type=float)
    p.add_argument("--d", type=int, help="projection width")
    p.add_argument("--d-model", dest="d_model", type=int)
    p.add_argument("--n-layers", dest="n_layers", type=int)
    p.add_argument("--n-heads", dest="n_heads", type=int)
    p.add_argument("--d-ff", dest="d_ff", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--min-freq", dest="min_freq", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="reldesc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check dataset files against a schema")
    p.add_argument("--schema", required=True)
    p.add_argument("--data", action="append", help="JSONL dataset (repeatable)")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("build-vocab", help="build the shared vocabulary")
    _add_run_options(p, ("train", "schema"))
    p.add_argument("--min-freq", dest="min_freq", type=int)
    p.add_argument("--out", help="vocab file (default OUT_DIR/vocab.txt)")
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train", help="train and save the best-dev checkpoint")
    _add_run_options(p, ("train", "dev", "schema", "vocab"))
    _add_model_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="micro P/R/F1 of a checkpoint on a dataset")
    _add_run_options(p, ("checkpoint", "data"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="per-pair predictions with similarity vectors")
    _add_run_options(p, ("checkpoint", "data"))
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check per parameter group")
    _add_run_options(p)
    _add_model_options(p)
    p.add_argument("--tiny", action="store_true",
                   help="d_model=8, one layer, d=4, three predicates; check every entry")
    p.add_argument("--max-entries", dest="max_entries", type=int, default=12,
                   help="entries sampled per group for the default config")
    p.add_argument("--tol", type=float, default=1e-3)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="one run per alpha, dev P/R/F1 table")
    _add_run_options(p, ("train", "dev", "schema", "vocab"))
    _add_model_options(p)
    p.add_argument("--alphas", type=_floats, help="comma-separated, default 0.1,0.3,0.5,0.7")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="the four ablation variants, test F1 table")
    _add_run_options(p, ("train", "dev", "test", "schema", "vocab"))
    _add_model_options(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", help="write a synthetic cue-word corpus and schema")
    p.add_argument("--out-dir", dest="out_dir", default="data/synthetic")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", dest="n_train", type=int, default=200)
    p.add_argument("--n-dev", dest="n_dev", type=int, default=50)
    p.add_argument("--n-test", dest="n_test", type=int, default=50)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.debug("kernel backend: %s", kernels.backend())
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ReldescError as exc:
        violations = getattr(exc, "violations", None)
        if violations and len(violations) > 1:
            print("error:", file=sys.stderr)
            for v in violations:
                print(f"  {v}", file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
