"""Compiled vs numpy kernel timings, plus one supernet training step per backend.

    python benchmarks/bench_kernels.py [--repeat 20] [--no-step]
"""
import argparse
import time

import numpy as np

from snnas import kernels


def _best(fn, repeat):
    fn()
    ts = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t)
    return min(ts)


def kernel_cases(rng):
    x = rng.standard_normal((64, 16, 16, 16, 2)).astype(np.float32)
    w3 = rng.standard_normal((16, 3, 3)).astype(np.float32)
    w5 = rng.standard_normal((16, 5, 5)).astype(np.float32)
    g16 = rng.standard_normal(x.shape).astype(np.float32)
    g8 = rng.standard_normal((64, 16, 8, 8, 2)).astype(np.float32)
    lx = rng.standard_normal((64 * 16 * 16 * 16, 2)).astype(np.float32)
    k = kernels
    _, idx = k.maxpool_forward(x, 3, 1, 1, 16, 16)
    u, o = k.lif_forward(lx, 0.2, 0.5, 1.0, False)
    return {
        "dwconv 3x3 s1 fwd": lambda: k.dwconv_forward(x, w3, 1, 1, 1, 1, 16, 16),
        "dwconv 3x3 s1 bwd": lambda: k.dwconv_backward(g16, x, w3, 1, 1, 1, 1),
        "dwconv 5x5 s2 fwd": lambda: k.dwconv_forward(x, w5, 2, 2, 2, 1, 8, 8),
        "dwconv 5x5 s2 bwd": lambda: k.dwconv_backward(g8, x, w5, 2, 2, 2, 1),
        "dilconv 5x5 d2 fwd": lambda: k.dwconv_forward(x, w5, 1, 4, 4, 2, 16, 16),
        "maxpool 3x3 fwd": lambda: k.maxpool_forward(x, 3, 1, 1, 16, 16),
        "maxpool 3x3 bwd": lambda: k.maxpool_backward(g16, idx, 16, 16),
        "avgpool 3x3 fwd": lambda: k.avgpool_forward(x, 3, 1, 1, 16, 16),
        "avgpool 3x3 bwd": lambda: k.avgpool_backward(g16, 16, 16, 3, 1, 1),
        "lif fwd": lambda: k.lif_forward(lx, 0.2, 0.5, 1.0, False),
        "lif bwd": lambda: k.lif_backward(lx, u, o, 0.2, 0.5, 1.0),
    }


def supernet_step():
    from snnas.supernet import MacroConfig, Network
    from snnas.train import cross_entropy
    rng = np.random.default_rng(0)
    net = Network(MacroConfig(layers=2, init_channels=8, classes=4), seed=0)
    x = rng.standard_normal((64, 3, 16, 16, 1)).astype(np.float32)
    y = rng.integers(0, 4, 64)

    def step():
        net.zero_grad()
        logits, aux, _ = net(x)
        cross_entropy(logits, y, aux).backward()
    return step


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=10)
    ap.add_argument("--no-step", action="store_true", help="skip the full supernet step")
    args = ap.parse_args()
    backends = ["python"]
    try:
        kernels.use_backend("compiled")
        backends.insert(0, "compiled")
    except ImportError:
        print("compiled extension not built; timing the numpy fallback only")
    results = {}
    for b in backends:
        kernels.use_backend(b)
        cases = kernel_cases(np.random.default_rng(0))
        if not args.no_step:
            cases["supernet fwd+bwd (batch 64)"] = supernet_step()
        for name, fn in cases.items():
            reps = max(2, args.repeat // 5) if name.startswith("supernet") else args.repeat
            results.setdefault(name, {})[b] = _best(fn, reps)
    print(f"{'case':32s}" + "".join(f"{b:>12s}" for b in backends)
          + ("     speedup" if len(backends) == 2 else ""))
    for name, r in results.items():
        line = f"{name:32s}" + "".join(f"{r[b] * 1e3:10.2f}ms" for b in backends)
        if len(backends) == 2:
            line += f"{r['python'] / r['compiled']:11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
