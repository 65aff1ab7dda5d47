"""Compare the numba kernels with their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 50] [--no-step]

Kernel timings run both paths in this process. The training-step timing
spawns one subprocess per backend because the choice is made at import
time from RELDESC_DISABLE_NUMBA.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from reldesc import kernels as K

STEP_SNIPPET = """
import timeit
from reldesc import kernels
from reldesc.data import generate_pairs, make_batch
from reldesc.encoder import build_vocab, EncoderConfig
from reldesc.model import ModelConfig, RelationModel
from reldesc.synthetic import make_corpus, synthetic_schema
schema = synthetic_schema()
insts = make_corpus(8, seed=0)
vocab = build_vocab(insts, schema)
model = RelationModel.initialize(vocab, schema, EncoderConfig(vocab_size=len(vocab)),
                                 ModelConfig(), seed=0)
pairs = [p for i in insts for p in generate_pairs(i, schema)][:4]
batch = make_batch(pairs, insts, schema, vocab, 128)
def step():
    model.params.zero_grad()
    model.forward(batch).loss.backward()
step()
print(kernels.backend(), min(timeit.repeat(step, number=1, repeat=REPEAT)))
"""


def _best(fn, repeat):
    fn()  # compile / warm caches
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_cases(rng):
    x = rng.normal(size=(4 * 4 * 64, 64))  # attention scores: batch*heads*L rows
    h = rng.normal(size=(4 * 64, 64))
    g, b = np.ones(64), np.zeros(64)
    y = K.np_softmax_rows(x)
    _, xhat, rstd = K.np_layernorm_rows(h, g, b, 1e-5)
    f = rng.normal(size=(4, 64, 128))
    idx = rng.integers(0, 500, size=4 * 64)
    return {
        "softmax_rows": (lambda m: m.softmax_rows(x)),
        "softmax_rows_backward": (lambda m: m.softmax_rows_backward(y, x)),
        "logsumexp_rows": (lambda m: m.logsumexp_rows(x)),
        "layernorm_rows": (lambda m: m.layernorm_rows(h, g, b, 1e-5)),
        "layernorm_rows_backward": (lambda m: m.layernorm_rows_backward(h, xhat, rstd, g)),
        "gelu": (lambda m: m.gelu(f)),
        "gelu_backward": (lambda m: m.gelu_backward(f, f)),
        "scatter_add_rows": (lambda m: m.scatter_add_rows(500, idx, h)),
    }


class _Paths:
    def __init__(self, prefix):
        for name in ("softmax_rows", "softmax_rows_backward", "logsumexp_rows", "layernorm_rows",
                     "layernorm_rows_backward", "gelu", "gelu_backward", "scatter_add_rows"):
            setattr(self, name, getattr(K, f"{prefix}_{name}"))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--no-step", action="store_true", help="skip the training-step comparison")
    args = ap.parse_args(argv)

    if not K.HAS_NUMBA:
        sys.exit("numba is not installed; nothing to compare")
    numpy_path, numba_path = _Paths("np"), _Paths("nb")
    print(f"{'kernel':<26}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, call in kernel_cases(np.random.default_rng(0)).items():
        t_np = _best(lambda: call(numpy_path), args.repeat) * 1e3
        t_nb = _best(lambda: call(numba_path), args.repeat) * 1e3
        print(f"{name:<26}{t_np:>10.3f}{t_nb:>10.3f}{t_np / t_nb:>8.2f}x")

    if args.no_step:
        return
    print("\nforward+backward, default model, 4 pairs:")
    code = STEP_SNIPPET.replace("REPEAT", str(max(3, args.repeat // 10)))
    for flag in ("0", "1"):
        env = dict(os.environ, RELDESC_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                             text=True, check=True).stdout.split()
        print(f"  {out[0]:<8}{float(out[1]) * 1e3:9.1f} ms")


if __name__ == "__main__":
    main()
