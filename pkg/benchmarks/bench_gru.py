"""Time the GRU recurrence kernels: compiled Cython vs numpy fallback.

    python3 benchmarks/bench_gru.py [--batch 32] [--length 60] [--hidden 64] [--repeat 20]

Each backend runs forward + backward over the same inputs; results are also
checked for agreement.
"""
import argparse
import time

import numpy as np

from admtl._kernels import BACKENDS, get_backend


def make_inputs(batch, length, hidden, seed=0):
    rng = np.random.default_rng(seed)
    xs = [rng.normal(0, 0.5, (batch, length, hidden)) for _ in range(3)]
    vs = [rng.normal(0, 1 / np.sqrt(hidden), (hidden, hidden)) for _ in range(3)]
    lengths = rng.integers(length // 2, length + 1, size=batch)
    mask = (np.arange(length)[None, :] < lengths[:, None]).astype(np.float64)
    dstates = rng.normal(size=(batch, length, hidden))
    return xs, vs, mask, dstates


def run(kernel, xs, vs, mask, dstates, reverse=False):
    states, hprev, z, r, c = kernel.gru_forward(*xs, *vs, mask, reverse)
    grads = kernel.gru_backward(dstates, hprev, z, r, c, *vs, mask, reverse)
    return states, grads


def bench(kernel, args, inputs):
    run(kernel, *inputs)  # warm-up
    times = []
    for _ in range(args.repeat):
        t = time.perf_counter()
        run(kernel, *inputs)
        times.append(time.perf_counter() - t)
    return np.median(times), np.min(times)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--length", type=int, default=60)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--repeat", type=int, default=20)
    args = p.parse_args(argv)
    inputs = make_inputs(args.batch, args.length, args.hidden)
    print(f"batch={args.batch} length={args.length} hidden={args.hidden} repeat={args.repeat}")
    results = {}
    kernels = sorted(BACKENDS.items())
    if "cython" in BACKENDS:
        picked = get_backend("auto", args.batch, args.hidden)
        kernels.append(("auto", picked))
    for name, kernel in kernels:
        med, best = bench(kernel, args, inputs)
        results[name] = run(kernel, *inputs)
        print(f"{name:>7}: median {med * 1e3:8.3f} ms  best {best * 1e3:8.3f} ms  (forward + backward)")
    if "cython" in results:
        (s_a, g_a), (s_b, g_b) = results["cython"], results["python"]
        diff = max(np.max(np.abs(s_a - s_b)), *(np.max(np.abs(a - b)) for a, b in zip(g_a, g_b)))
        print(f"   auto picks {'cython' if picked is BACKENDS['cython'] else 'python'}")
        print(f"max |cython - python| = {diff:.3e}")
    else:
        print("compiled kernel not built; only the numpy backend was timed")


if __name__ == "__main__":
    main()
