"""Dual-encoder relation model: pair and description representations, losses, inference."""

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .encoder import EncoderConfig, Vocab, encode_batch, init_encoder_params
from .errors import ContractError, InputError
from .schema import PredicateSchema

CHECKPOINT_MAGIC = b"RELDESC-CKPT v1\n"


@dataclass(frozen=True)
class ModelConfig:
    d: int = 32
    alpha: float = 0.5
    use_cls_concat: bool = True
    use_ce_loss: bool = True
    dual_encoder: bool = True
    temperature: float = 1.0
    desc_init: str = "copy"  # "copy" of the input encoder or "independent"
    desc_max_len: int = 64

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.temperature > 0:
            raise ContractError(f"temperature must be positive, got {self.temperature}")
        if self.d < 1:
            raise ContractError(f"projection width d must be >= 1, got {self.d}")
        if self.desc_init not in ("copy", "independent"):
            raise ContractError(f"desc_init must be 'copy' or 'independent', got {self.desc_init!r}")
        if self.desc_max_len < 8:
            raise ContractError("desc_max_len must be >= 8")

    def to_dict(self):
        return asdict(self)


class ModelParams:
    """All learnable arrays. In shared mode ``enc_D`` is the very same dict as ``enc_T``."""

    def __init__(self, enc_T, enc_D, W_T, W_D, W_ce, b_ce):
        self.enc_T = enc_T
        self.enc_D = enc_D
        self.W_T = W_T
        self.W_D = W_D
        self.W_ce = W_ce
        self.b_ce = b_ce

    @property
    def shared(self):
        return self.enc_D is self.enc_T

    def named(self):
        out = {f"enc_T.{k}": v for k, v in self.enc_T.items()}
        if not self.shared:
            out.update({f"enc_D.{k}": v for k, v in self.enc_D.items()})
        out["W_T"] = self.W_T
        out["W_D"] = self.W_D
        out["W_ce"] = self.W_ce
        out["b_ce"] = self.b_ce
        return out

    def tensors(self):
        return list(self.named().values())

    def zero_grad(self):
        for t in self.tensors():
            t.grad = None

    def grads(self):
        """Name -> gradient; unreached parameters get zeros."""
        return {
            k: (np.zeros_like(t.data) if t.grad is None else t.grad)
            for k, t in self.named().items()
        }

    def state(self):
        return {k: t.data.copy() for k, t in self.named().items()}

    def load_state(self, state):
        named = self.named()
        if set(named) != set(state):
            missing = sorted(set(named) - set(state))
            extra = sorted(set(state) - set(named))
            raise ContractError(f"state mismatch: missing {missing}, unexpected {extra}")
        for k, t in named.items():
            if state[k].shape != t.data.shape:
                raise ContractError(f"{k}: shape {state[k].shape} != {t.data.shape}")
            t.data = np.array(state[k], dtype=np.float64)

    def n_parameters(self):
        return int(sum(t.size for t in self.tensors()))


def _projection(rng, fan_in, fan_out, name):
    return T.parameter(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)), name=name)


def init_params(encoder_config, config, n_predicates, seed):
    ss = np.random.SeedSequence(seed)
    enc_seed, desc_seed, head_seed = ss.spawn(3)
    enc_T = init_encoder_params(encoder_config, np.random.default_rng(enc_seed))
    if not config.dual_encoder:
        enc_D = enc_T
    elif config.desc_init == "copy":
        enc_D = {k: T.parameter(v.data.copy(), name=k) for k, v in enc_T.items()}
    else:
        enc_D = init_encoder_params(encoder_config, np.random.default_rng(desc_seed))
    rng = np.random.default_rng(head_seed)
    dm, d = encoder_config.d_model, config.d
    W_T = _projection(rng, 2 * dm, d, "W_T")
    W_D = _projection(rng, 3 * dm, d, "W_D")
    W_ce = _projection(rng, d, n_predicates, "W_ce")
    b_ce = T.parameter(np.zeros(n_predicates), name="b_ce")
    return ModelParams(enc_T, enc_D, W_T, W_D, W_ce, b_ce)


# ---------------------------------------------------------------------------
# representations


def _gather_positions(H, positions, name):
    positions = np.asarray(positions, dtype=np.int64)
    n, length, _ = H.shape
    if positions.shape != (n,) or positions.min() < 0 or positions.max() >= length:
        raise ContractError(f"{name} marker positions out of range for sequences of length {length}")
    return H[np.arange(n), positions]


def pair_representation(H_in, sub_pos, obj_pos, params):
    """Project the concatenated subject/object start-marker embeddings: [B, L, dm] -> [B, d]."""
    e_sub = _gather_positions(H_in, sub_pos, "subject")
    e_obj = _gather_positions(H_in, obj_pos, "object")
    return T.concat([e_sub, e_obj], axis=-1) @ params.W_T


def description_representation(H_desc, sub_pos, obj_pos, cls_rows, params, config):
    """Project [CLS of input || subject marker || object marker] per description row.

    ``cls_rows`` is a Tensor [N, dm] already aligned with the rows of H_desc.
    With ``use_cls_concat`` off the CLS slot is zeros of the same width.
    """
    d_sub = _gather_positions(H_desc, sub_pos, "subject")
    d_obj = _gather_positions(H_desc, obj_pos, "object")
    if not config.use_cls_concat:
        cls_rows = T.Tensor(np.zeros(d_sub.shape))
    return T.concat([cls_rows, d_sub, d_obj], axis=-1) @ params.W_D


def rho_T(input_seq, params, encoder_config):
    """Single-sequence pair representation, shape [d]."""
    H = encode_batch(np.array([input_seq.ids]), None, params.enc_T, encoder_config)
    return pair_representation(H, [input_seq.sub_start_pos], [input_seq.obj_start_pos], params)[0]


def input_cls(input_seq, params, encoder_config):
    H = encode_batch(np.array([input_seq.ids]), None, params.enc_T, encoder_config)
    return H[0, 0]


def rho_D(desc_seq, cls_from_input, params, encoder_config, config):
    """Single-description representation, shape [d]."""
    H = encode_batch(np.array([desc_seq.ids]), None, params.enc_D, encoder_config)
    cls_rows = T.as_tensor(cls_from_input).reshape(1, -1)
    rep = description_representation(
        H, [desc_seq.sub_start_pos], [desc_seq.obj_start_pos], cls_rows, params, config
    )
    return rep[0]


# ---------------------------------------------------------------------------
# losses and inference


def _stack(rho_d_all):
    if isinstance(rho_d_all, T.Tensor):
        return rho_d_all
    rows = [T.as_tensor(r).reshape(1, -1) for r in rho_d_all]
    return T.concat(rows, axis=0)


def _check_gold(gold, n):
    gold = np.asarray(gold, dtype=np.int64)
    if gold.size and (gold.min() < 0 or gold.max() >= n):
        raise ContractError(f"gold predicate index out of range [0, {n})")
    return gold


def contrastive_from_sims(sims, gold, temperature=1.0):
    """-log softmax(sims / temperature)[gold] along the last axis; sims [..., R]."""
    gold = _check_gold(gold, sims.shape[-1])
    scaled = sims * (1.0 / temperature)
    lse = T.logsumexp(scaled, axis=-1)
    if sims.ndim == 1:
        return lse - scaled[int(gold)]
    return lse - scaled[np.arange(sims.shape[0]), gold]


def contrastive_loss(rho_t, rho_d_all, gold, temperature=1.0):
    rd = _stack(rho_d_all)
    if rd.shape[0] < 1:
        raise ContractError("need at least one description representation")
    sims = T.cosine(T.as_tensor(rho_t).reshape(1, -1), rd)
    return contrastive_from_sims(sims, gold, temperature)


def ce_from_logits(logits, gold):
    gold = _check_gold(gold, logits.shape[-1])
    lse = T.logsumexp(logits, axis=-1)
    if logits.ndim == 1:
        return lse - logits[int(gold)]
    return lse - logits[np.arange(logits.shape[0]), gold]


def ce_logits(rho_t, params):
    return rho_t @ params.W_ce + params.b_ce


def ce_loss(rho_t, gold, params):
    logits = ce_logits(T.as_tensor(rho_t).reshape(1, -1), params).reshape(-1)
    return ce_from_logits(logits, gold)


def unified_loss(l_ce, l_ct, alpha, use_ce_loss=True):
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha must lie in [0, 1], got {alpha}")
    if not use_ce_loss:
        return l_ct
    return alpha * l_ce + (1.0 - alpha) * l_ct


def argmax_lowest(scores):
    """Index of the maximum along the last axis; ties go to the lowest index."""
    return np.argmax(np.asarray(scores), axis=-1)


def predict(rho_t, rho_d_all):
    """Return (predicate index, cosine similarity vector)."""
    rd = _stack(rho_d_all)
    with T.no_grad():
        sims = T.cosine(T.as_tensor(rho_t).reshape(1, -1), rd).data
    return int(argmax_lowest(sims)), sims


# ---------------------------------------------------------------------------
# batched model


@dataclass
class ForwardOutput:
    sims: T.Tensor  # [B, R]
    rho_t: T.Tensor  # [B, d]
    rho_d: T.Tensor  # [B, R, d]
    logits: T.Tensor  # [B, R]
    l_ct: T.Tensor  # [B]
    l_ce: T.Tensor  # [B]
    loss: T.Tensor  # scalar


class RelationModel:
    def __init__(self, vocab, schema, encoder_config, config, params):
        if encoder_config.vocab_size != len(vocab):
            raise ContractError(
                f"encoder vocab_size {encoder_config.vocab_size} != vocab length {len(vocab)}"
            )
        if config.desc_max_len > encoder_config.max_len:
            raise ContractError("desc_max_len exceeds the encoder max_len")
        self.vocab = vocab
        self.schema = schema
        self.encoder_config = encoder_config
        self.config = config
        self.params = params

    @classmethod
    def initialize(cls, vocab, schema, encoder_config, config, seed=0):
        params = init_params(encoder_config, config, schema.n_predicates, seed)
        return cls(vocab, schema, encoder_config, config, params)

    @property
    def n_predicates(self):
        return self.schema.n_predicates

    def forward(self, batch, config=None):
        cfg = config or self.config
        p = self.params
        B, R = len(batch), batch.n_predicates
        if R != self.n_predicates:
            raise ContractError(f"batch built for {R} predicates, model has {self.n_predicates}")
        H_in = encode_batch(batch.input_ids, batch.input_mask, p.enc_T, self.encoder_config)
        rho_t = pair_representation(H_in, batch.input_sub, batch.input_obj, p)
        cls_rows = H_in[np.repeat(np.arange(B), R), np.zeros(B * R, dtype=np.int64)]
        H_d = encode_batch(batch.desc_ids, batch.desc_mask, p.enc_D, self.encoder_config)
        rho_d = description_representation(
            H_d, batch.desc_sub, batch.desc_obj, cls_rows, p, cfg
        ).reshape(B, R, cfg.d)
        sims = T.cosine(rho_t.reshape(B, 1, cfg.d), rho_d)
        l_ct = contrastive_from_sims(sims, batch.labels, cfg.temperature)
        logits = ce_logits(rho_t, p)
        l_ce = ce_from_logits(logits, batch.labels)
        loss = unified_loss(l_ce.mean(), l_ct.mean(), cfg.alpha, cfg.use_ce_loss)
        return ForwardOutput(sims, rho_t, rho_d, logits, l_ct, l_ce, loss)

    def similarities(self, batch):
        with T.no_grad():
            return self.forward(batch).sims.data

    # checkpoint ---------------------------------------------------------

    def save(self, path):
        named = self.params.named()
        arrays, offset, chunks = [], 0, []
        for name, t in named.items():
            raw = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
            arrays.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
            chunks.append(raw)
            offset += len(raw)
        header = {
            "format": "reldesc-checkpoint",
            "version": 1,
            "dtype": "<f8",
            "encoder_config": self.encoder_config.to_dict(),
            "model_config": self.config.to_dict(),
            "vocab": self.vocab.tokens,
            "schema": self.schema.to_dict(),
            "arrays": arrays,
        }
        blob = json.dumps(header, ensure_ascii=False).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(f"{len(blob)}\n".encode("ascii"))
            fh.write(blob)
            fh.write(b"\n")
            for c in chunks:
                fh.write(c)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            if fh.readline() != CHECKPOINT_MAGIC:
                raise InputError(f"{path}: not a reldesc checkpoint")
            n = int(fh.readline().decode("ascii"))
            header = json.loads(fh.read(n).decode("utf-8"))
            fh.read(1)
            payload = fh.read()
        enc_cfg = EncoderConfig(**header["encoder_config"])
        cfg = ModelConfig(**header["model_config"])
        vocab = Vocab(header["vocab"])
        schema = PredicateSchema.from_dict(header["schema"])
        model = cls.initialize(vocab, schema, enc_cfg, cfg, seed=0)
        state = {}
        for a in header["arrays"]:
            buf = payload[a["offset"]: a["offset"] + a["nbytes"]]
            state[a["name"]] = np.frombuffer(buf, dtype="<f8").reshape(a["shape"]).copy()
        model.params.load_state(state)
        return model
