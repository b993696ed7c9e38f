"""Compare the compiled kernel backend against the NumPy fallback.

Times the three hot kernels in isolation and a full training step of the
default model, then prints a per-case table with the speedup.  Run as

    python3 benchmarks/bench_kernels.py [--repeats N] [--batch N]
"""

import argparse
import time

import numpy as np

from nettriage import kernels
from nettriage.layers import softmax_xent
from nettriage.model import build, mini_vgg_spec
from nettriage.optim import SGDMomentum


def timeit(fn, repeats):
    """Best-of-N wall time; the minimum is the least noisy estimator on a
    shared machine."""
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_kernels(batch, repeats):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(batch, 32, 32, 8)).astype(np.float32)
    cols = kernels.im2col3x3(x)
    pooled, idx = kernels.maxpool2x2_forward(x)
    dy = rng.normal(size=pooled.shape).astype(np.float32)
    n, h, w, c = x.shape

    cases = {
        "im2col 3x3": lambda: kernels.im2col3x3(x),
        "col2im 3x3": lambda: kernels.col2im3x3(cols, n, h, w, c),
        "maxpool fwd": lambda: kernels.maxpool2x2_forward(x),
        "maxpool bwd": lambda: kernels.maxpool2x2_backward(dy, idx, h, w),
    }
    return {name: timeit(fn, repeats) for name, fn in cases.items()}


def bench_training_step(batch, repeats):
    net = build(mini_vgg_spec(num_classes=10), seed=0)
    opt = SGDMomentum(0.001, rho=0.9, weight_decay=0.001)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(batch, 32, 32, 1)).astype(np.float32)
    y = rng.integers(0, 10, size=batch)

    def step():
        logits = net.forward(x, mode="train")
        _, d = softmax_xent(logits, y)
        net.backward(d)
        opt.step(net.registry(), net.grad_registry())

    step()  # warm caches before timing
    return timeit(step, repeats)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--batch", type=int, default=64)
    args = parser.parse_args()

    backends = kernels.available_backends()
    if len(backends) < 2:
        print(f"only {backends} available; build the extension to compare")

    results = {}
    for name in backends:
        kernels.set_backend(name)
        results[name] = bench_kernels(args.batch, args.repeats)
        results[name]["training step"] = bench_training_step(
            args.batch, args.repeats)

    rows = list(next(iter(results.values())))
    width = max(len(r) for r in rows)
    both = "native" in results and "numpy" in results
    header = f"{'case':<{width}}  " + "".join(f"{b:>12}" for b in backends)
    if both:
        header += f"{'native gain':>13}"
    print(f"batch {args.batch}, best of {args.repeats}")
    print(header)
    print("-" * len(header))
    for row in rows:
        line = f"{row:<{width}}  "
        line += "".join(f"{results[b][row] * 1e3:>10.2f}ms" for b in backends)
        if both:
            line += f"{results['numpy'][row] / results['native'][row]:>12.2f}x"
        print(line)


if __name__ == "__main__":
    main()
