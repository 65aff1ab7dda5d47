"""Vocabulary, word-level tokenizer and a small pre-norm transformer encoder."""

import re
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, InputError

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
RESERVED = (PAD, UNK, CLS, SEP)
MARKER_ROLES = ("SUB", "/SUB", "OBJ", "/OBJ")
INIT_STD = 0.02

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def marker_token(role, entity_type):
    if role not in MARKER_ROLES:
        raise ValueError(f"unknown marker role {role!r}")
    return f"[{role}:{entity_type}]"


def split_words(text):
    """Lowercase and split; punctuation becomes separate tokens. Empty text gives []."""
    return _TOKEN_RE.findall(text.lower())


def normalize_token(token):
    return token.lower()


class Vocab:
    """Dense token <-> id map. ``[PAD]`` is always id 0."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tokens[: len(RESERVED)] != list(RESERVED):
            raise ContractError(f"vocab must start with {RESERVED}")
        index = {}
        for i, tok in enumerate(tokens):
            if tok in index:
                raise ContractError(f"duplicate vocab token {tok!r}")
            index[tok] = i
        self.tokens = tokens
        self._index = index

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._index

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.tokens == other.tokens

    @property
    def pad_id(self):
        return 0

    @property
    def unk_id(self):
        return self._index[UNK]

    @property
    def cls_id(self):
        return self._index[CLS]

    @property
    def sep_id(self):
        return self._index[SEP]

    def id(self, token):
        return self._index.get(token, self._index[UNK])

    def token(self, idx):
        return self.tokens[idx]

    def marker_id(self, role, entity_type):
        tok = marker_token(role, entity_type)
        if tok not in self._index:
            raise InputError(f"vocab has no marker {tok}")
        return self._index[tok]

    def marker_ids(self):
        return {i for i, t in enumerate(self.tokens) if t.startswith("[") and ":" in t}

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(line.rstrip("\n") for line in fh if line.rstrip("\n"))


def tokenize(text, vocab):
    words = split_words(text)
    if not words:
        raise InputError("cannot tokenize empty text")
    return [vocab.id(w) for w in words]


def build_vocab(corpus, schema, min_freq=1):
    """Build a vocab from instance tokens plus the schema's template words.

    Template words are kept regardless of ``min_freq`` so that description
    text never degrades to ``[UNK]``.
    """
    if not corpus:
        raise InputError("build_vocab needs a non-empty corpus")
    counts = Counter()
    for inst in corpus:
        counts.update(normalize_token(t) for t in inst.tokens)
    template_words = set()
    for template in schema.templates.values():
        words = split_words(template.replace("@subject@", " ").replace("@object@", " "))
        counts.update(words)
        template_words.update(words)
    tokens = list(RESERVED)
    for etype in schema.entity_types:
        tokens.extend(marker_token(role, etype) for role in MARKER_ROLES)
    taken = set(tokens)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    for word, freq in ranked:
        if word in taken:
            continue
        if freq >= min_freq or word in template_words:
            tokens.append(word)
            taken.add(word)
    return Vocab(tokens)


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 64
    d_ff: int = 128
    max_len: int = 128
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ContractError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.max_len < 8:
            raise ContractError(f"max_len must be >= 8, got {self.max_len}")
        if self.vocab_size < len(RESERVED):
            raise ContractError("vocab_size too small")
        if self.n_layers < 0 or self.d_ff < 1:
            raise ContractError("n_layers must be >= 0 and d_ff >= 1")

    def to_dict(self):
        return asdict(self)


def init_encoder_params(config, rng):
    """Return an ordered name -> parameter dict (names relative to the encoder)."""
    d, f = config.d_model, config.d_ff

    def w(*shape):
        return rng.normal(0.0, INIT_STD, size=shape)

    names = {}
    names["tok_emb"] = w(config.vocab_size, d)
    names["pos_emb"] = w(config.max_len, d)
    for i in range(config.n_layers):
        p = f"layer{i}."
        names[p + "ln1.g"] = np.ones(d)
        names[p + "ln1.b"] = np.zeros(d)
        for m in ("q", "k", "v", "o"):
            names[p + f"attn.W{m}"] = w(d, d)
            names[p + f"attn.b{m}"] = np.zeros(d)
        names[p + "ln2.g"] = np.ones(d)
        names[p + "ln2.b"] = np.zeros(d)
        names[p + "ffn.W1"] = w(d, f)
        names[p + "ffn.b1"] = np.zeros(f)
        names[p + "ffn.W2"] = w(f, d)
        names[p + "ffn.b2"] = np.zeros(d)
    names["ln_f.g"] = np.ones(d)
    names["ln_f.b"] = np.zeros(d)
    return {k: T.parameter(v, name=k) for k, v in names.items()}


def _split_heads(x, n_heads):
    n, length, d = x.shape
    return x.reshape(n, length, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    n, h, length, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(n, length, h * dh)


def encode_batch(ids, mask, params, config, return_attention=False):
    """Encode a padded batch.

    ids: int array [N, L]; mask: bool array [N, L] (True = real token).
    Returns a Tensor [N, L, d_model]; with ``return_attention`` also the
    list of per-layer attention-weight Tensors [N, heads, L, L].
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2:
        raise ContractError(f"encode_batch expects [N, L] ids, got shape {ids.shape}")
    n, length = ids.shape
    if length > config.max_len:
        raise InputError(f"sequence length {length} exceeds max_len {config.max_len}")
    if mask is None:
        mask = np.ones_like(ids, dtype=bool)
    key_mask = np.asarray(mask, dtype=bool)[:, None, None, :]

    x = T.embedding(params["tok_emb"], ids) + params["pos_emb"][:length]
    attn_maps = []
    for i in range(config.n_layers):
        p = f"layer{i}."
        h = T.layer_norm(x, params[p + "ln1.g"], params[p + "ln1.b"], config.ln_eps)
        q = _split_heads(h @ params[p + "attn.Wq"] + params[p + "attn.bq"], config.n_heads)
        k = _split_heads(h @ params[p + "attn.Wk"] + params[p + "attn.bk"], config.n_heads)
        v = _split_heads(h @ params[p + "attn.Wv"] + params[p + "attn.bv"], config.n_heads)
        ctx, weights = T.scaled_dot_product_attention(q, k, v, key_mask, return_weights=True)
        attn_maps.append(weights)
        x = x + (_merge_heads(ctx) @ params[p + "attn.Wo"] + params[p + "attn.bo"])
        h = T.layer_norm(x, params[p + "ln2.g"], params[p + "ln2.b"], config.ln_eps)
        h = T.gelu(h @ params[p + "ffn.W1"] + params[p + "ffn.b1"])
        x = x + (h @ params[p + "ffn.W2"] + params[p + "ffn.b2"])
    out = T.layer_norm(x, params["ln_f.g"], params["ln_f.b"], config.ln_eps)
    if return_attention:
        return out, attn_maps
    return out


def encode(ids, params, config):
    """Encode one unpadded sequence; returns a Tensor [len, d_model]."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise InputError("encode expects a non-empty 1-D id sequence")
    if ids.size > config.max_len:
        raise InputError(f"sequence length {ids.size} exceeds max_len {config.max_len}")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise InputError("token id outside the vocabulary")
    out = encode_batch(ids[None, :], None, params, config)
    return out.reshape(ids.size, config.d_model)
