"""Central finite-difference checks of analytic gradients."""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import REInstance, generate_pairs, make_batch
from .encoder import EncoderConfig, build_vocab
from .model import ModelConfig, RelationModel
from .schema import Mention, PredicateSchema

H = 1e-5
# Below this magnitude differences are effectively absolute. Central
# differences at h=1e-5 carry up to ~1e-10 roundoff, which must stay well
# under tolerance for structurally-zero gradients (attention key biases).
REL_FLOOR = 1e-6


def relative_error(analytic, numeric, floor=REL_FLOOR):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return np.abs(a - n) / denom


def numerical_grad(f, array, indices=None, h=H):
    """Central differences of scalar ``f()`` w.r.t. entries of ``array`` (mutated in place)."""
    flat = array.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    out = []
    for i in indices:
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out.append((fp - fm) / (2.0 * h))
    return np.array(out)


def check_function(fn, inputs, h=H, seed=0):
    """Max relative error of d(sum(w * fn(*inputs)))/d(inputs) against finite differences.

    ``inputs`` are numpy arrays; a fixed random weighting ``w`` makes the
    scalar objective sensitive to every output entry.
    """
    rng = np.random.default_rng(seed)
    leaves = [T.Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    out = fn(*leaves)
    w = rng.uniform(-1.0, 1.0, size=out.shape)
    T.tsum(out * w).backward()

    def f():
        with T.no_grad():
            return float((fn(*leaves).data * w).sum())

    worst = 0.0
    for leaf in leaves:
        analytic = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad
        numeric = numerical_grad(f, leaf.data, h=h).reshape(leaf.shape)
        worst = max(worst, float(relative_error(analytic, numeric).max(initial=0.0)))
    return worst


@dataclass
class GroupResult:
    name: str
    n_checked: int
    max_rel_error: float
    passed: bool


def check_model(model, batch, h=H, tol=1e-3, max_entries=None, seed=0):
    """Check every named parameter group of ``model`` on the unified loss of ``batch``.

    With ``max_entries`` set, larger groups are sampled: the largest-magnitude
    analytic entries plus uniformly drawn ones.
    """
    rng = np.random.default_rng(seed)
    model.params.zero_grad()
    model.forward(batch).loss.backward()
    grads = model.params.grads()

    def f():
        with T.no_grad():
            return model.forward(batch).loss.item()

    results = []
    for name, tensor in model.params.named().items():
        g = grads[name].reshape(-1)
        if max_entries is None or g.size <= max_entries:
            idx = np.arange(g.size)
        else:
            top = np.argsort(-np.abs(g), kind="stable")[: max_entries // 2]
            rest = rng.choice(g.size, max_entries - top.size, replace=False)
            idx = np.unique(np.concatenate([top, rest]))
        numeric = numerical_grad(f, tensor.data, idx, h=h)
        err = float(relative_error(g[idx], numeric).max(initial=0.0))
        results.append(GroupResult(name, int(idx.size), err, err < tol))
    model.params.zero_grad()
    return results


def randomize(params, rng, scale=0.3):
    """Move every parameter away from its structured init so all paths carry signal."""
    for name, t in params.named().items():
        noise = rng.normal(0.0, scale, size=t.shape)
        if name.endswith(".g"):
            t.data = 1.0 + noise
        else:
            t.data = t.data + noise


TINY_SCHEMA = {
    "predicates": ["NULL", "TREATS", "CAUSES"],
    "entity_types": ["Chemical", "Disease"],
    "templates": {
        "NULL": "There are no relations between the @subject@ and @object@.",
        "TREATS": "Applies a @subject@ remedy with the object of effecting a cure "
                  "or managing a @object@ condition.",
        "CAUSES": "The @subject@ may induce the @object@.",
    },
}


def tiny_instance():
    tokens = "Tamoxifen is the common therapy for women with breast cancer .".split()
    mentions = (Mention(0, 1, "Chemical"), Mention(8, 10, "Disease"))
    return REInstance("tiny-0", tuple(tokens), mentions, ((0, 1, "TREATS"),))


def tiny_setup(seed=0, dual_encoder=True, use_cls_concat=True, use_ce_loss=True, alpha=0.5):
    """Random toy model (d_model=8, one layer, d=4, three predicates) and a one-pair batch."""
    schema = PredicateSchema.from_dict(TINY_SCHEMA)
    inst = tiny_instance()
    vocab = build_vocab([inst], schema)
    enc = EncoderConfig(vocab_size=len(vocab), n_layers=1, n_heads=2, d_model=8, d_ff=16,
                        max_len=32)
    cfg = ModelConfig(d=4, alpha=alpha, dual_encoder=dual_encoder, use_cls_concat=use_cls_concat,
                      use_ce_loss=use_ce_loss, desc_init="independent", desc_max_len=32)
    model = RelationModel.initialize(vocab, schema, enc, cfg, seed=seed)
    randomize(model.params, np.random.default_rng(seed + 1))
    pair = generate_pairs(inst, schema)[0]
    batch = make_batch([pair], [inst], schema, vocab, enc.max_len, cfg.desc_max_len)
    return model, batch
