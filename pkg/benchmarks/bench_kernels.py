"""Time the GRU recurrence kernels (compiled vs numpy fallback).

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

For each shape the forward and backward passes of every available backend
are timed, and the backends are checked to agree to 1e-10.
"""

import argparse
import json
import sys
import timeit

import numpy as np

from kneeattn import _kernels

# (sequences, timesteps, hidden): a toy case, a desk-scale training batch
# (27 cells x 30 cycles over the combined grid), and a full-size batch.
SHAPES = [(8, 20, 3), (27 * 30, 120, 3), (27 * 100, 120, 3), (27 * 30, 120, 7)]


def make_inputs(b, t, h, seed=0):
    rng = np.random.default_rng(seed)
    ax = rng.normal(0, 0.5, (b, t, 3 * h))
    wh = rng.uniform(-1 / np.sqrt(h), 1 / np.sqrt(h), (h, 3 * h))
    h0 = np.zeros((b, h))
    dhs = rng.normal(size=(b, t, h))
    return ax, wh, h0, dhs


def bench_backend(name, inputs, repeat):
    mod = _kernels._BACKENDS[name]
    ax, wh, h0, dhs = inputs
    hs, cache = mod.gru_forward(ax, wh, h0)
    fwd = min(timeit.repeat(lambda: mod.gru_forward(ax, wh, h0), number=1, repeat=repeat))
    bwd = min(timeit.repeat(lambda: mod.gru_backward(dhs, wh, h0, hs, cache), number=1, repeat=repeat))
    return fwd, bwd, hs, mod.gru_backward(dhs, wh, h0, hs, cache)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)

    backends = _kernels.available_backends()
    rows = []
    print(f"backends: {', '.join(backends)}")
    print(f"{'shape (B,T,h)':>18} {'backend':>8} {'forward ms':>11} {'backward ms':>12} {'speedup':>8}")
    for shape in SHAPES:
        inputs = make_inputs(*shape)
        results = {name: bench_backend(name, inputs, args.repeat) for name in backends}
        ref = results["python"]
        for name, (fwd, bwd, hs, grads) in results.items():
            err = max(float(np.max(np.abs(hs - ref[2]))),
                      *(float(np.max(np.abs(a - b))) for a, b in zip(grads, ref[3])))
            if err > 1e-10:
                print(f"backend {name} disagrees with python by {err:.2e}", file=sys.stderr)
                return 1
            speedup = (ref[0] + ref[1]) / (fwd + bwd)
            print(f"{str(shape):>18} {name:>8} {fwd * 1e3:11.2f} {bwd * 1e3:12.2f} {speedup:7.1f}x")
            rows.append({"shape": shape, "backend": name, "forward_s": fwd, "backward_s": bwd,
                         "speedup_vs_python": speedup, "max_abs_diff": err})
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
