"""Training loop, evaluation, alpha sweep and ablation runs."""

import json
import logging
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import tensor as T
from .data import collate, generate_pairs, gold_type_pairs, mark_pair
from .encoder import EncoderConfig, build_vocab
from .errors import ContractError, TrainingError
from .metrics import EvalReport
from .model import ModelConfig, RelationModel, argmax_lowest
from .schema import NULL

log = logging.getLogger(__name__)

DEFAULT_SWEEP_ALPHAS = (0.1, 0.3, 0.5, 0.7)

# (variant name, row label, ModelConfig overrides)
ABLATION_VARIANTS = (
    ("full", "Full dual-encoder model", {}),
    ("no_cls_concat", "w/o [CLS] concatenation", {"use_cls_concat": False}),
    ("no_ce_loss", "w/o cross-entropy loss", {"use_ce_loss": False}),
    ("shared_encoder", "w/o dual-encoder", {"dual_encoder": False}),
)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 4
    learning_rate: float = 3e-4
    seed: int = 0
    null_cap: int = 3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    type_filter: bool = False
    eval_batch_size: int = 32
    max_grad_norm: float = 1.0  # global-norm clipping; 0 disables

    def __post_init__(self):
        if self.epochs < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ContractError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.null_cap is not None and self.null_cap < 0:
            raise ContractError(f"null_cap must be >= 0, got {self.null_cap}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ContractError("invalid adaptive-moment hyperparameters")
        if self.max_grad_norm < 0:
            raise ContractError("max_grad_norm must be >= 0")

    def to_dict(self):
        return asdict(self)


class Adam:
    def __init__(self, named_params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(named_params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(t.data) for k, t in self.params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in self.params.items()}
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_grad_norm(grads, max_norm):
    """Scale all gradients by one factor so their global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        grads = {k: g * scale for k, g in grads.items()}
    return grads, total


class PairMarker:
    """Memoised marking of candidate pairs (inputs and descriptions never change)."""

    def __init__(self, instances, schema, vocab, max_len, desc_max_len):
        self.by_id = {inst.id: inst for inst in instances}
        self.schema, self.vocab = schema, vocab
        self.max_len, self.desc_max_len = max_len, desc_max_len
        self._cache = {}

    def batch(self, pairs):
        marked = []
        for p in pairs:
            key = (p.instance_id, p.subject, p.object)
            if key not in self._cache:
                self._cache[key] = mark_pair(
                    p, self.by_id[p.instance_id], self.schema, self.vocab,
                    self.max_len, self.desc_max_len,
                )
            marked.append(self._cache[key])
        return collate(pairs, marked, self.schema)


def epoch_pairs(instances, schema, null_cap, seed, epoch, allowed_type_pairs=None):
    pairs = []
    for k, inst in enumerate(instances):
        pairs.extend(
            generate_pairs(inst, schema, null_cap, rng_seed=[seed, k],
                           allowed_type_pairs=allowed_type_pairs)
        )
    order = np.random.default_rng([seed, epoch]).permutation(len(pairs))
    return [pairs[i] for i in order]


def predict_pairs(model, instances, allowed_type_pairs=None, batch_size=32, marker=None):
    """Full E x E predictions: list of (pair, predicted index, similarity vector or None).

    Pairs dropped by the optional type filter are predicted NULL without scoring.
    """
    marker = marker or PairMarker(instances, model.schema, model.vocab,
                                  model.encoder_config.max_len, model.config.desc_max_len)
    out = []
    scored = []
    for inst in instances:
        for pair in generate_pairs(inst, model.schema):
            m_s = inst.mentions[pair.subject].type
            m_o = inst.mentions[pair.object].type
            if allowed_type_pairs is not None and (m_s, m_o) not in allowed_type_pairs:
                out.append([pair, 0, None])
            else:
                out.append([pair, None, None])
                scored.append(len(out) - 1)
    for start in range(0, len(scored), batch_size):
        chunk = scored[start:start + batch_size]
        sims = model.similarities(marker.batch([out[i][0] for i in chunk]))
        preds = argmax_lowest(sims)
        for row, i in enumerate(chunk):
            out[i][1] = int(preds[row])
            out[i][2] = sims[row]
    return [tuple(r) for r in out]


def evaluate(model, instances, allowed_type_pairs=None, batch_size=32, marker=None):
    preds = predict_pairs(model, instances, allowed_type_pairs, batch_size, marker)
    schema = model.schema
    gold = [schema.index(p.label) for p, _, _ in preds]
    pred = [k for _, k, _ in preds]
    return EvalReport.from_predictions(gold, pred, schema.predicates, schema.index(NULL))


@dataclass
class TrainResult:
    model: RelationModel
    log: list
    best_epoch: int
    best_dev: EvalReport


def train(train_set, dev_set, schema, model_config=None, train_config=None, vocab=None,
          encoder_config=None, log_path=None):
    """Optimise the unified loss; return the parameters of the best dev-F1 epoch."""
    model_config = model_config or ModelConfig()
    train_config = train_config or TrainConfig()
    if not train_set:
        raise ContractError("train set is empty")
    vocab = vocab or build_vocab(train_set, schema)
    if encoder_config is None:
        encoder_config = EncoderConfig(vocab_size=len(vocab))
    elif encoder_config.vocab_size != len(vocab):
        encoder_config = replace(encoder_config, vocab_size=len(vocab))
    tc = train_config
    model = RelationModel.initialize(vocab, schema, encoder_config, model_config, seed=tc.seed)
    named = model.params.named()
    opt = Adam(named, tc.learning_rate, tc.beta1, tc.beta2, tc.eps)
    allowed = gold_type_pairs(train_set) if tc.type_filter else None
    marker = PairMarker(list(train_set) + list(dev_set or []), schema, vocab,
                        encoder_config.max_len, model_config.desc_max_len)

    records, best_f1, best_epoch, best_state, best_report = [], -1.0, 0, None, None
    if log_path is not None:
        open(log_path, "w").close()
    for epoch in range(1, tc.epochs + 1):
        pairs = epoch_pairs(train_set, schema, tc.null_cap, tc.seed, epoch, allowed)
        l_ce_hist, l_ct_hist, l_u_hist = [], [], []
        for b, start in enumerate(range(0, len(pairs), tc.batch_size)):
            chunk = pairs[start:start + tc.batch_size]
            batch = marker.batch(chunk)
            model.params.zero_grad()
            out = model.forward(batch)
            loss = out.loss.item()
            if not math.isfinite(loss):
                ids = sorted({p.instance_id for p in chunk})
                raise TrainingError(
                    f"non-finite loss {loss} at epoch {epoch}, batch {b} (instances {ids})"
                )
            out.loss.backward()
            grads, _ = clip_grad_norm(model.params.grads(), tc.max_grad_norm)
            opt.step(grads)
            l_ce_hist.append(float(out.l_ce.data.mean()))
            l_ct_hist.append(float(out.l_ct.data.mean()))
            l_u_hist.append(loss)

        if dev_set:
            report = evaluate(model, dev_set, allowed, tc.eval_batch_size, marker)
        else:
            report = None
        rec = {
            "epoch": epoch,
            "mean_l_ce": float(np.mean(l_ce_hist)),
            "mean_l_ct": float(np.mean(l_ct_hist)),
            "mean_l_u": float(np.mean(l_u_hist)),
            "dev_p": report.micro_precision if report else None,
            "dev_r": report.micro_recall if report else None,
            "dev_f1": report.micro_f1 if report else None,
        }
        records.append(rec)
        log.info("epoch %d  L_u=%.4f  L_ce=%.4f  L_ct=%.4f  dev_f1=%s", epoch,
                 rec["mean_l_u"], rec["mean_l_ce"], rec["mean_l_ct"], rec["dev_f1"])
        if log_path is not None:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec) + "\n")
        score = report.micro_f1 if report else float(epoch)
        if score > best_f1:
            best_f1, best_epoch, best_state, best_report = score, epoch, model.params.state(), report
    model.params.load_state(best_state)
    return TrainResult(model, records, best_epoch, best_report)


def alpha_sweep(train_set, dev_set, schema, alphas=DEFAULT_SWEEP_ALPHAS, model_config=None,
                train_config=None, vocab=None, encoder_config=None):
    """One training run per alpha with identical seed and data; rows sorted by alpha."""
    model_config = model_config or ModelConfig()
    vocab = vocab or build_vocab(train_set, schema)
    rows = []
    for alpha in sorted(alphas):
        if not 0.0 <= alpha <= 1.0:
            raise ContractError(f"alpha {alpha} outside [0, 1]")
        try:
            res = train(train_set, dev_set, schema, replace(model_config, alpha=alpha),
                        train_config, vocab, encoder_config)
        except Exception as exc:
            raise type(exc)(f"alpha={alpha}: {exc}") from exc
        rep = res.best_dev
        rows.append({"alpha": alpha, "precision": rep.micro_precision,
                     "recall": rep.micro_recall, "f1": rep.micro_f1})
    return rows


def ablation_configs(model_config):
    return [(name, label, replace(model_config, **over)) for name, label, over in ABLATION_VARIANTS]


def ablate(train_set, dev_set, test_set, schema, model_config=None, train_config=None,
           vocab=None, encoder_config=None):
    """Run the four ablation variants with identical seeds and data; test micro-F1 each."""
    model_config = model_config or ModelConfig()
    train_config = train_config or TrainConfig()
    vocab = vocab or build_vocab(train_set, schema)
    allowed = gold_type_pairs(train_set) if train_config.type_filter else None
    rows = []
    for name, label, cfg in ablation_configs(model_config):
        res = train(train_set, dev_set, schema, cfg, train_config, vocab, encoder_config)
        rep = evaluate(res.model, test_set, allowed, train_config.eval_batch_size)
        rows.append({"variant": name, "label": label, "precision": rep.micro_precision,
                     "recall": rep.micro_recall, "f1": rep.micro_f1})
    return rows


def format_table(rows, columns, floatfmt=".4f"):
    """Aligned plain-text table."""
    cells = [[c for c in columns]]
    for r in rows:
        cells.append([format(r[c], floatfmt) if isinstance(r[c], float) else str(r[c])
                      for c in columns])
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    lines = ["  ".join(v.ljust(w) if i == 0 else v.rjust(w) for i, (v, w) in
                       enumerate(zip(row, widths))) for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
