#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Times the raw conv/pool kernels at the layer shapes the staging model
actually runs, plus a full forward+backward training step. Run:

    python benchmarks/bench_backends.py [--batch 8] [--windows 60] [--reps 5]
"""

import argparse
import time

import numpy as np

from ppgsleep import backend, model
from ppgsleep import tensorcore as tc


def best_of(fn, reps):
    out = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return min(out)


def layer_shapes(spec, batch, windows):
    length = windows * spec.window_len
    in_ch = 1
    for f in spec.feature_filters:
        yield ("feature", batch, length, in_ch, f, spec.feature_kernel, 1)
        yield ("feature", batch, length, f, f, spec.feature_kernel, 1)
        length //= 2
        in_ch = f
    for d in spec.tcn_dilations:
        yield ("temporal", batch, windows, spec.tcn_filters, spec.tcn_filters,
               spec.tcn_kernel, d)


def bench_kernels(names, spec, batch, windows, reps):
    rng = np.random.default_rng(0)
    rows = []
    for kind, b, length, ci, co, k, d in layer_shapes(spec, batch, windows):
        x = rng.standard_normal((b, length, ci)).astype(np.float32)
        w = rng.standard_normal((k, ci, co)).astype(np.float32)
        gy = rng.standard_normal((b, length, co)).astype(np.float32)
        span = (k - 1) * d
        pl, pr = span // 2, span - span // 2
        timings = {}
        for name in names:
            kb = backend._BACKENDS[name]
            kb.conv1d_fwd(x, w, d, pl, pr)  # warm
            fwd = best_of(lambda: kb.conv1d_fwd(x, w, d, pl, pr), reps)
            bwd = best_of(lambda: kb.conv1d_bwd(x, w, gy, d, pl, pr), reps)
            timings[name] = (fwd, bwd)
        rows.append((kind, length, ci, co, k, d, timings))
    return rows


def bench_model_step(names, spec, batch, windows, reps):
    params = model.init_params(spec, seed=42)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((batch, windows * spec.window_len)).astype(np.float32)
    labels = rng.integers(0, 4, (batch, windows))
    valid = np.ones((batch, windows), bool)

    def step():
        logits = model.forward_logits(params, spec, tc.Tensor(x))
        loss = tc.masked_softmax_ce(logits, labels, valid)
        params.zero_grad()
        loss.backward()

    out = {}
    for name in names:
        with backend.use_backend(name):
            step()
            out[name] = best_of(step, reps)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--batch", type=int, default=8)
    ap.add_argument("--windows", type=int, default=60)
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--full-width", action="store_true",
                    help="benchmark the full-width model instead of reduced")
    args = ap.parse_args()

    names = backend.available()
    if "compiled" not in names:
        print("note: compiled backend unavailable, timing the fallback only")
    spec = model.ModelSpec() if args.full_width else model.ModelSpec.reduced_width()

    print(f"kernel timings (best of {args.reps}), batch={args.batch}, "
          f"windows={args.windows}:")
    header = f"{'layer':>9} {'L':>7} {'Ci':>4} {'Co':>4} {'K':>2} {'dil':>3}"
    for name in names:
        header += f"  {name + ' fwd':>13} {name + ' bwd':>13}"
    print(header)
    totals = {name: 0.0 for name in names}
    for kind, length, ci, co, k, d, timings in bench_kernels(
            names, spec, args.batch, args.windows, args.reps):
        line = f"{kind:>9} {length:>7} {ci:>4} {co:>4} {k:>2} {d:>3}"
        for name in names:
            fwd, bwd = timings[name]
            totals[name] += fwd + bwd
            line += f"  {fwd * 1e3:>10.2f} ms {bwd * 1e3:>10.2f} ms"
        print(line)
    for name in names:
        print(f"  {name}: conv total {totals[name] * 1e3:.1f} ms")

    print("\nfull training step (forward + masked CE + backward):")
    for name, t in bench_model_step(names, spec, args.batch,
                                    args.windows, args.reps).items():
        print(f"  {name}: {t * 1e3:.1f} ms")


if __name__ == "__main__":
    main()
