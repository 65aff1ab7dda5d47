"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line."""

import json
import math
import time

import numpy as np
import pytest

from reldesc import tensor as T
from reldesc.cli import main
from reldesc.data import REInstance, generate_pairs, make_batch
from reldesc.encoder import CLS, PAD, SEP, UNK, Vocab, build_vocab, marker_token
from reldesc.errors import SchemaError
from reldesc.gradcheck import check_function, check_model, tiny_setup
from reldesc.metrics import EvalReport
from reldesc.model import (
    ModelConfig,
    RelationModel,
    ce_loss,
    contrastive_from_sims,
    contrastive_loss,
    predict,
    rho_D,
)
from reldesc.schema import MarkedSequence, Mention, PredicateSchema, mark_input, strip_markers
from reldesc.synthetic import cue_oracle, make_splits, synthetic_schema
from reldesc.train import ABLATION_VARIANTS, TrainConfig, ablate, evaluate, train

from test_tensor import _primitive_cases

pytestmark = pytest.mark.acceptance


def test_criterion_1_gradient_fidelity(acceptance):
    start = time.perf_counter()
    model, batch = tiny_setup(seed=0)
    assert len(batch) == 1 and model.n_predicates == 3
    assert model.encoder_config.d_model == 8 and model.config.d == 4
    results = check_model(model, batch, h=1e-5)  # every entry of every group
    worst_group = max(r.max_rel_error for r in results)
    worst_prim = 0.0
    for name in _primitive_cases(np.random.default_rng(0)):
        fn, inputs = _primitive_cases(np.random.default_rng(0))[name]
        worst_prim = max(worst_prim, check_function(fn, inputs))
    elapsed = time.perf_counter() - start
    ok = worst_group < 1e-3 and worst_prim < 1e-4 and elapsed < 60
    acceptance(1, ok, f"{len(results)} groups max rel err {worst_group:.2e} (<1e-3), "
                      f"primitives {worst_prim:.2e} (<1e-4), {elapsed:.1f}s (<60s)")
    assert ok


def _brute_contrastive(rho_t, rho_d, gold, tau=1.0):
    def cos(u, v):
        dot = sum(a * b for a, b in zip(u, v))
        nu = math.sqrt(sum(a * a for a in u))
        nv = math.sqrt(sum(b * b for b in v))
        return dot / (nu * nv)
    sims = [cos(rho_t, r) for r in rho_d]
    return -math.log(math.exp(sims[gold] / tau) / sum(math.exp(s / tau) for s in sims))


def _brute_ce(logits, gold):
    return -math.log(math.exp(logits[gold]) / sum(math.exp(z) for z in logits))


def test_criterion_2_loss_oracles(acceptance, small_model):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        R = int(rng.integers(1, 8))
        gold = int(rng.integers(R))
        rho_t = rng.normal(size=4)
        rho_d = [rng.normal(size=4) for _ in range(R)]
        got = contrastive_loss(rho_t, rho_d, gold).item()
        worst = max(worst, abs(got - _brute_contrastive(list(rho_t), [list(r) for r in rho_d],
                                                        gold)))
        sims = rng.uniform(-1, 1, size=R)
        brute = -math.log(math.exp(sims[gold]) / sum(math.exp(s) for s in sims))
        worst = max(worst, abs(contrastive_from_sims(T.Tensor(sims), gold).item() - brute))
        params = small_model.params
        gold3 = int(rng.integers(small_model.n_predicates))
        logits = [sum(rho_t[i] * params.W_ce.data[i, k] for i in range(4)) + params.b_ce.data[k]
                  for k in range(small_model.n_predicates)]
        worst = max(worst, abs(ce_loss(rho_t, gold3, params).item() - _brute_ce(logits, gold3)))
    a1 = abs(contrastive_from_sims(T.Tensor([0.2, 0.2, 0.2]), 0).item() - math.log(3))
    a2 = abs(contrastive_from_sims(T.Tensor([1.0, 0.0, 0.0]), 0).item() - math.log(1 + 2 / math.e))
    ok = worst < 1e-9 and a1 < 1e-9 and a2 < 1e-9
    acceptance(2, ok, f"300 brute-force comparisons max |diff| {worst:.1e}; "
                      f"ln3 anchor {a1:.1e}, ln(1+2/e) anchor {a2:.1e} (<1e-9)")
    assert ok


@pytest.fixture(scope="module")
def synthetic():
    return make_splits(200, 50, 50, seed=0), synthetic_schema()


def test_criterion_3_synthetic_separability(acceptance, synthetic):
    (tr, dv, te), schema = synthetic
    gold = [schema.index(p.label) for inst in dv for p in generate_pairs(inst, schema)]
    oracle = [schema.index(cue_oracle(inst, p.subject, p.object))
              for inst in dv for p in generate_pairs(inst, schema)]
    oracle_f1 = EvalReport.from_predictions(gold, oracle, schema.predicates).micro_f1
    assert oracle_f1 == 1.0
    start = time.perf_counter()
    res = train(tr, dv, schema)  # library defaults
    elapsed = time.perf_counter() - start
    f1 = res.best_dev.micro_f1
    losses = [r["mean_l_u"] for r in res.log]
    rises = sum(b > a for a, b in zip(losses[1:], losses[2:]))  # epochs 3..10
    ok = len(res.log) == 10 and f1 >= 0.95 and elapsed < 600 and rises <= 1
    acceptance(3, ok, f"cue oracle F1 {oracle_f1:.2f}; dev micro-F1 {f1:.4f} (>=0.95) "
                      f"at epoch {res.best_epoch}/10, {elapsed:.0f}s (<600s); "
                      f"loss rises after epoch 2: {rises} (<=1)")
    assert ok


def test_criterion_4_ablation_mechanics(acceptance, synthetic, vocab, schema,
                                        small_encoder_config, corpus):
    (tr, dv, te), syn_schema = synthetic
    rows = ablate(tr, dv, te, syn_schema, train_config=TrainConfig(epochs=1))
    ran = [r["variant"] for r in rows] == [v[0] for v in ABLATION_VARIANTS]
    ran = ran and all(0.0 <= r["f1"] <= 1.0 for r in rows)

    # CLS-off: description representation ignores the CLS vector
    m = RelationModel.initialize(vocab, schema, small_encoder_config,
                                 ModelConfig(d=4, desc_max_len=32, use_cls_concat=False), seed=1)
    pair = generate_pairs(corpus[0])[0]
    b = make_batch([pair], corpus, schema, vocab, 32, 32)
    desc = MarkedSequence(tuple(b.desc_ids[1][b.desc_mask[1]]), int(b.desc_sub[1]),
                          int(b.desc_obj[1]), 0, 0)
    rng = np.random.default_rng(0)
    cls_ok = all(
        rho_D(desc, rng.normal(size=8) * s, m.params, m.encoder_config, m.config).data.tobytes()
        == rho_D(desc, np.zeros(8), m.params, m.encoder_config, m.config).data.tobytes()
        for s in (1.0, 10.0, 1e3))

    # CE-off: zero gradient reaching the CE head
    m = RelationModel.initialize(vocab, schema, small_encoder_config,
                                 ModelConfig(d=4, desc_max_len=32, use_ce_loss=False), seed=1)
    m.forward(b).loss.backward()
    g = m.params.grads()
    ce_ok = not np.any(g["W_ce"]) and not np.any(g["b_ce"])

    # shared encoder: one parameter set
    m = RelationModel.initialize(vocab, schema, small_encoder_config,
                                 ModelConfig(d=4, desc_max_len=32, dual_encoder=False), seed=1)
    shared_ok = m.params.shared and not any(k.startswith("enc_D.") for k in m.params.named())

    # copy-initialised dual encoder equals the shared forward bit for bit
    dual = RelationModel.initialize(vocab, schema, small_encoder_config,
                                    ModelConfig(d=4, desc_max_len=32, desc_init="copy"), seed=1)
    copy_ok = dual.forward(b).loss.data.tobytes() == m.forward(b).loss.data.tobytes() and \
        dual.similarities(b).tobytes() == m.similarities(b).tobytes()

    ok = ran and cls_ok and ce_ok and shared_ok and copy_ok
    acceptance(4, ok, f"4 variants ran={ran}; cls-off invariant={cls_ok}; ce-off zero grad={ce_ok}; "
                      f"shared single encoder={shared_ok}; copy-init == shared={copy_ok}")
    assert ok


SWEEP_SMALL = ["--d-model", "16", "--n-layers", "1", "--n-heads", "2", "--d-ff", "32",
               "--d", "8", "--epochs", "2", "--batch-size", "8", "--lr", "3e-3"]


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synthetic")
    assert main(["synth", "--out-dir", str(d), "--n-train", "40", "--n-dev", "12",
                 "--n-test", "12"]) == 0
    return d


def test_criterion_5_alpha_sweep(acceptance, synth_dir, tmp_path):
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        code = main(["sweep", "--train", str(synth_dir / "train.jsonl"),
                     "--dev", str(synth_dir / "dev.jsonl"), "--schema",
                     str(synth_dir / "schema.yaml"), "--alphas", "0.1,0.3,0.5,0.7",
                     "--out-dir", str(out), *SWEEP_SMALL])
        assert code == 0
        outputs.append(((out / "sweep.json").read_bytes(), (out / "sweep.txt").read_bytes()))
    rows = json.loads(outputs[0][0])["rows"]
    four = [r["alpha"] for r in rows] == [0.1, 0.3, 0.5, 0.7]
    cols = all(set(r) == {"alpha", "precision", "recall", "f1"} for r in rows)
    same = outputs[0] == outputs[1]
    ok = four and cols and same
    acceptance(5, ok, f"rows alpha={[r['alpha'] for r in rows]} columns (alpha,P,R,F1)={cols}; "
                      f"two runs byte-identical={same}")
    assert ok


def test_criterion_6_inference_invariances(acceptance):
    rng = np.random.default_rng(6)
    violations = 0
    for _ in range(1000):
        R, d = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        rho_t = rng.normal(size=d)
        rho_d = [rng.normal(size=d) for _ in range(R)]
        k, sims = predict(rho_t, rho_d)
        k_scaled, _ = predict(rho_t * rng.uniform(1e-3, 1e3),
                              [r * rng.uniform(1e-3, 1e3) for r in rho_d])
        transforms = (lambda s: np.exp(s), lambda s: s ** 3 + 2 * s, lambda s: np.arctan(5 * s),
                      lambda s: 1 / (1 + np.exp(-s)))
        kt = [int(np.argmax(f(sims))) for f in transforms]
        # exact ties: duplicate a random description into every other slot
        tie_src = int(rng.integers(R))
        tied = [rho_d[tie_src].copy() for _ in range(R)]
        k_tie, _ = predict(rho_t, tied)
        violations += (k_scaled != k) + sum(x != k for x in kt) + (k_tie != 0)
    ok = violations == 0
    acceptance(6, ok, f"1000 trials (scaling, 4 increasing transforms, exact ties): "
                      f"{violations} violations")
    assert ok


def test_criterion_7_structural_invariants(acceptance):
    rng = np.random.default_rng(7)
    n_cases = 10_000
    markers = [marker_token(r, t) for t in ("X", "Y") for r in ("SUB", "/SUB", "OBJ", "/OBJ")]
    words = [f"w{i}" for i in range(10)]
    vocab = Vocab([PAD, UNK, CLS, SEP, *markers, *words])
    bad = {"pairs": 0, "markers": 0, "templates": 0, "counts": 0}
    for _ in range(n_cases):
        # pair-count law
        n = int(rng.integers(0, 8))
        ms = tuple(Mention(i, i + 1, "X") for i in range(n))
        all_pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
        k = int(rng.integers(0, len(all_pairs) + 1))
        chosen = rng.permutation(len(all_pairs))[:k]
        gold = tuple((*all_pairs[c], "R") for c in chosen)
        pairs = generate_pairs(REInstance("r", tuple(["w0"] * n), ms, gold))
        if len(pairs) != n * (n - 1) or sum(p.label != "NULL" for p in pairs) != k:
            bad["pairs"] += 1

        # marker round trip
        L = int(rng.integers(2, 20))
        toks = [words[i] for i in rng.integers(0, 10, size=L)]
        cuts = np.sort(rng.choice(L + 1, size=4, replace=True))
        if cuts[0] == cuts[1] or cuts[2] == cuts[3]:
            cuts = np.array([0, 1, L - 1, L])
        a, b = Mention(int(cuts[0]), int(cuts[1]), "X"), Mention(int(cuts[2]), int(cuts[3]), "Y")
        if rng.random() < 0.5:
            a, b = Mention(b.start, b.end, "X"), Mention(a.start, a.end, "Y")
        seq = mark_input(toks, a, b, vocab, 64)
        if strip_markers(seq) != [vocab.id(t) for t in toks] or len(seq) != L + 6 or \
                seq.ids[seq.sub_start_pos + 1] != vocab.id(toks[a.start]) or \
                seq.ids[seq.obj_start_pos + 1] != vocab.id(toks[b.start]):
            bad["markers"] += 1

        # template placeholder validation
        n_s, n_o = int(rng.integers(0, 3)), int(rng.integers(0, 3))
        parts = ["@subject@"] * n_s + ["@object@"] * n_o + ["text"] * int(rng.integers(0, 3))
        tpl = " ".join(parts[i] for i in rng.permutation(len(parts))) or "empty"
        try:
            PredicateSchema(["NULL"], ["X"], {"NULL": tpl})
            accepted = True
        except SchemaError:
            accepted = False
        if accepted != (n_s == 1 and n_o == 1):
            bad["templates"] += 1

        # counting identity
        m = int(rng.integers(1, 30))
        g = rng.integers(0, 4, size=m)
        p = np.where(rng.random(m) < 0.5, g, rng.integers(0, 4, size=m))
        rep = EvalReport.from_predictions(g, p, ["NULL", "A", "B", "C"])
        if rep.tp + rep.fn != int(np.sum(g != 0)) or rep.tp + rep.fp != int(np.sum(p != 0)):
            bad["counts"] += 1
    total = sum(bad.values())
    acceptance(7, total == 0, f"{n_cases} cases x 4 properties, violations {bad}")
    assert total == 0


def test_criterion_8_determinism(acceptance, synth_dir, tmp_path):
    args = ["--train", str(synth_dir / "train.jsonl"), "--dev", str(synth_dir / "dev.jsonl"),
            "--schema", str(synth_dir / "schema.yaml"), "--epochs", "2", "--seed", "11"]
    files = {}
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["train", *args, "--out-dir", str(out)]) == 0
        ck = str(out / "checkpoint")
        assert main(["eval", "--checkpoint", ck, "--data", str(synth_dir / "test.jsonl"),
                     "--out-dir", str(out)]) == 0
        assert main(["predict", "--checkpoint", ck, "--data", str(synth_dir / "test.jsonl"),
                     "--out-dir", str(out)]) == 0
        files[run] = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
    names = sorted(files["a"])
    same = names == sorted(files["b"]) and all(files["a"][n] == files["b"][n] for n in names)
    ok = same and {"checkpoint", "train_log.jsonl", "eval_report.json",
                   "predictions.jsonl"} <= set(names)
    acceptance(8, ok, f"two seeded runs, {len(names)} files byte-identical={same} ({', '.join(names)})")
    assert ok
