"""Compare the compiled sampler against the pure-numpy fallback.

Measures wall time for the autoregressive response sampler (the hot
path: hundreds of thousands of tiny forward passes per training run)
and reports token-stream agreement between the two backends. Run as

    python3 benchmarks/bench_backends.py [--decisions 200] [--responses 8]
"""

import argparse
import time

import numpy as np

from tsclab._kernels import get_backend
from tsclab.phases import Vocabulary, feature_length
from tsclab.policy import TokenPolicy
from tsclab.sim import build_topology


def run(backend_name, policy, features_list, keys_list, temperature):
    backend = get_backend(backend_name)
    t0 = time.perf_counter()
    tokens_out = []
    n_tokens = 0
    for features, keys in zip(features_list, keys_list):
        tokens, lengths, _ = policy.sample(features, keys, temperature=temperature, backend=backend)
        tokens_out.append((tokens, lengths))
        n_tokens += int(lengths.sum())
    return time.perf_counter() - t0, n_tokens, tokens_out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--decisions", type=int, default=200)
    ap.add_argument("--responses", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--temperature", type=float, default=1.0)
    args = ap.parse_args()

    topo = build_topology("toy8")
    vocab = Vocabulary.for_topology(topo)
    rng = np.random.Generator(np.random.PCG64(args.seed))
    policy = TokenPolicy(vocab.size, feature_length(topo), vocab.eos_id, rng=rng)

    from tsclab._kernels import derive_key

    features_list = [
        rng.uniform(0.0, 5.0, size=feature_length(topo)) for _ in range(args.decisions)
    ]
    keys_list = [
        [derive_key(args.seed, d, r) for r in range(args.responses)]
        for d in range(args.decisions)
    ]

    results = {}
    for name in ("numpy", "cython"):
        try:
            elapsed, n_tokens, tokens = run(name, policy, features_list, keys_list, args.temperature)
        except ImportError:
            print(f"{name:>7}: unavailable (extension not built)")
            continue
        results[name] = (elapsed, n_tokens, tokens)
        rate = n_tokens / elapsed if elapsed > 0 else float("inf")
        print(f"{name:>7}: {elapsed * 1e3:8.1f} ms for {n_tokens} tokens ({rate:,.0f} tok/s)")

    if len(results) == 2:
        e_np, _, toks_np = results["numpy"]
        e_cy, _, toks_cy = results["cython"]
        agree = all(
            np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
            for a, b in zip(toks_np, toks_cy)
        )
        print(f"speedup: {e_np / e_cy:.1f}x, token streams identical: {agree}")


if __name__ == "__main__":
    main()
