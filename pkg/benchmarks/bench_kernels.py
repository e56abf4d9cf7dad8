"""Time each kernel under the numba and numpy backends, plus one training epoch.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from spantag import kernels
from spantag.heads import enumerate_spans, span_arrays


def kernel_cases(rng):
    n, d = 40, 64
    x = rng.normal(size=(8 * n, d))
    g, b = np.ones(d), np.zeros(d)
    y, xhat, inv_std = kernels.numpy_backend.layer_norm_forward(x, g, b, 1e-5)
    logits = rng.normal(size=(8 * n, n))
    p = kernels.numpy_backend.softmax_rows(logits)
    starts, ends = span_arrays([(s.start, s.end) for s in enumerate_spans(n, 10)])
    h = rng.normal(size=(n, d))
    pooled, arg = kernels.numpy_backend.segment_max(h, starts, ends)
    idx = rng.integers(0, n, size=400)
    src = rng.normal(size=(400, d))
    return {
        "layer_norm_forward": lambda k: k.layer_norm_forward(x, g, b, 1e-5),
        "layer_norm_backward": lambda k: k.layer_norm_backward(y, xhat, inv_std, g),
        "softmax_rows": lambda k: k.softmax_rows(logits),
        "softmax_rows_backward": lambda k: k.softmax_rows_backward(logits, p),
        "segment_max (spans)": lambda k: k.segment_max(h, starts, ends),
        "segment_max_backward": lambda k: k.segment_max_backward(pooled, arg, n),
        "scatter_add_rows": lambda k: k.scatter_add_rows(n, idx, src),
    }


EPOCH_SNIPPET = """
import time
from spantag.config import RunConfig
from spantag.experiment import embed_documents, fit
from spantag.synth import templated_corpus
from dataclasses import replace
cfg = RunConfig()
ds = templated_corpus(50)
emb = embed_documents(ds.documents, cfg.embedder_config())
fit(ds, emb, cfg.model_config(), replace(cfg.train, epochs=1))  # warm-up / compile
t = time.perf_counter()
fit(ds, emb, cfg.model_config(), replace(cfg.train, epochs=2))
print((time.perf_counter() - t) / 2)
"""


def epoch_seconds(disable_jit: bool) -> float:
    env = dict(os.environ, SPANTAG_DISABLE_JIT="1" if disable_jit else "0")
    out = subprocess.run([sys.executable, "-c", EPOCH_SNIPPET], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=200)
    parser.add_argument("--skip-epoch", action="store_true", help="only time the kernels")
    args = parser.parse_args()

    if kernels.numba_backend is None:
        sys.exit("numba backend unavailable (not installed, or SPANTAG_DISABLE_JIT is set)")
    cases = kernel_cases(np.random.default_rng(0))
    print(f"{'kernel':<24}{'numpy us':>12}{'numba us':>12}{'speedup':>10}")
    for name, fn in cases.items():
        fn(kernels.numba_backend)  # compile
        t_np = min(timeit.repeat(lambda: fn(kernels.numpy_backend), number=args.repeat, repeat=3)) / args.repeat
        t_nb = min(timeit.repeat(lambda: fn(kernels.numba_backend), number=args.repeat, repeat=3)) / args.repeat
        print(f"{name:<24}{t_np * 1e6:>12.1f}{t_nb * 1e6:>12.1f}{t_np / t_nb:>9.2f}x")
    if not args.skip_epoch:
        t_np, t_nb = epoch_seconds(True), epoch_seconds(False)
        print(f"{'training epoch (s)':<24}{t_np:>12.3f}{t_nb:>12.3f}{t_np / t_nb:>9.2f}x")


if __name__ == "__main__":
    main()
