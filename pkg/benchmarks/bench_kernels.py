#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the NumPy fallback.

Times the three hot operations on training-realistic shapes, then a full
training run of the direct network shape used on the 118-bus system
(82 features -> 3 x 164 hidden -> 490 outputs, batch 64).

Usage: python benchmarks/bench_kernels.py [repeats]
"""

import sys
import time

import numpy as np

from flowcast import kernels, nn


def time_op(fn, repeats):
    fn()  # warm up
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def bench_ops(backend, repeats):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((64, 164))
    w = rng.standard_normal((164, 164))
    b = rng.standard_normal(164)
    act = backend.affine(x, w, b, True)
    delta = rng.standard_normal((64, 164))
    p = rng.standard_normal((164, 164))
    g = rng.standard_normal((164, 164))
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    step = [0]

    def adam():
        step[0] += 1
        backend.adam_step(p, g, m, v, step[0], 1e-3, 0.9, 0.999, 1e-8)

    return {
        "affine+relu": time_op(lambda: backend.affine(x, w, b, True), repeats),
        "backprop_layer": time_op(lambda: backend.backprop_layer(delta, x, w, act),
                                  repeats),
        "adam_step": time_op(adam, repeats),
    }


def bench_training(backend_name, epochs=3):
    import importlib
    import os
    import subprocess
    import sys as _sys
    script = (
        "import time, numpy as np\n"
        "from flowcast import nn, kernels\n"
        "rng = np.random.default_rng(0)\n"
        "x = rng.standard_normal((5000, 82)); y = rng.standard_normal((5000, 490))\n"
        "cfg = nn.TrainConfig(epochs={epochs}, seed=1)\n"
        "net = nn.init_network(nn.layer_dims_for(82, 490, cfg), seed=1)\n"
        "t0 = time.perf_counter()\n"
        "nn.train(net, x[:4500], y[:4500], x[4500:], y[4500:], cfg)\n"
        "print((time.perf_counter() - t0) / {epochs})\n"
    ).format(epochs=epochs)
    env = dict(os.environ, FLOWCAST_KERNELS=backend_name)
    out = subprocess.run([_sys.executable, "-c", script], capture_output=True,
                         text=True, env=env, check=True)
    return float(out.stdout.strip())


def main():
    repeats = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
    names = kernels.available_backends()
    print(f"available backends: {names}\n")

    rows = {name: bench_ops(kernels.get_backend(name), repeats) for name in names}
    ops = list(next(iter(rows.values())))
    print(f"{'op':16s}" + "".join(f"{n:>14s}" for n in names)
          + ("      speedup" if len(names) == 2 else ""))
    for op in ops:
        line = f"{op:16s}" + "".join(f"{rows[n][op] * 1e6:11.1f} us" for n in names)
        if len(names) == 2:
            line += f"{rows[names[1]][op] / rows[names[0]][op]:12.2f}x"
        print(line)

    print("\nfull training epoch (82 -> 3x164 -> 490, batch 64, 4500 rows):")
    for name in names:
        seconds = bench_training(name)
        print(f"  {name:10s} {seconds:7.3f} s/epoch")


if __name__ == "__main__":
    main()
