#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Times each hot kernel on training-shaped inputs and, optionally, one full
pretraining step end to end under each backend:

    python benchmarks/bench_kernels.py            # kernel microbenchmarks
    python benchmarks/bench_kernels.py --step     # adds the training-step run

The training-step comparison re-executes this script in subprocesses with
ECGALIGN_KERNELS forced, since the backend is chosen at import time.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

# training-shaped inputs: [tokens x dim] activations, attention score rows,
# and a large parameter block for the optimizer update
SHAPES = {
    "gelu": (114, 256),
    "softmax": (4 * 114, 114),
    "layer_norm": (114, 64),
    "adamw": (200_000,),
}
REPEATS = 300


def _time(fn, repeats=REPEATS) -> float:
    fn()  # warm up
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats * 1e6  # us/op


def bench_kernels() -> None:
    from ecgalign.kernels import _numpy as np_impl

    try:
        from ecgalign.kernels import _compiled as c_impl
    except ImportError:
        c_impl = None
        print("compiled extension not built; showing numpy fallback only\n")

    rng = np.random.default_rng(0)
    rows = []
    for dtype in (np.float32, np.float64):
        x = rng.standard_normal(SHAPES["gelu"]).astype(dtype)
        dy = rng.standard_normal(SHAPES["gelu"]).astype(dtype)
        sx = rng.standard_normal(SHAPES["softmax"]).astype(dtype)
        lx = rng.standard_normal(SHAPES["layer_norm"]).astype(dtype)
        p = rng.standard_normal(SHAPES["adamw"]).astype(dtype)
        g = rng.standard_normal(SHAPES["adamw"]).astype(dtype)
        m, v = np.zeros_like(p), np.zeros_like(p)

        cases = {
            f"gelu_fwd {SHAPES['gelu']}": lambda impl: impl.gelu_fwd(x),
            f"gelu_bwd {SHAPES['gelu']}": lambda impl: impl.gelu_bwd(x, dy),
            f"softmax_fwd {SHAPES['softmax']}": lambda impl: impl.softmax_fwd(sx),
            f"layer_norm_fwd {SHAPES['layer_norm']}": lambda impl: impl.layer_norm_fwd(lx, 1e-5),
            f"adamw {SHAPES['adamw']}": lambda impl: impl.adamw_update(
                p, g, m, v, 1, 1e-3, 0.9, 0.999, 1e-8, 1e-2),
        }
        for name, call in cases.items():
            t_np = _time(lambda: call(np_impl))
            t_c = _time(lambda: call(c_impl)) if c_impl else float("nan")
            rows.append((f"{name} {np.dtype(dtype).name}", t_np, t_c))

    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':{width}}  {'numpy us':>10}  {'compiled us':>12}  {'speedup':>8}")
    for name, t_np, t_c in rows:
        speedup = t_np / t_c if t_c == t_c else float("nan")
        print(f"{name:{width}}  {t_np:10.1f}  {t_c:12.1f}  {speedup:7.2f}x")


def bench_training_step() -> None:
    print("\nfull pretraining step (20 steps, desk config, 64 records):")
    script = (
        "import time, tempfile; from pathlib import Path;"
        "from ecgalign import kernels;"
        "from ecgalign.synthetic import generate_synthetic;"
        "from ecgalign.mining import RuleBasedClient, mine_corpus;"
        "from ecgalign.model import ModelConfig;"
        "from ecgalign.training import PretrainConfig, pretrain;"
        "tmp = Path(tempfile.mkdtemp());"
        "ds = generate_synthetic(64, 4, 7, tmp / 'd', valid_fraction=0.0, test_fraction=0.0);"
        "vocab, labels = mine_corpus(ds.manifest, RuleBasedClient(ds.rule_tables), tmp / 'm');"
        "t0 = time.monotonic();"
        "pretrain(ds.manifest, vocab, labels, ModelConfig(num_segments=50),"
        " PretrainConfig(total_steps=20, eval_every=999), tmp / 'p');"
        "dt = (time.monotonic() - t0) / 20 * 1000;"
        "print(f'  {kernels.BACKEND:8s} {dt:7.1f} ms/step')"
    )
    env = dict(os.environ)
    env["PYTHONPATH"] = str(Path(__file__).parent.parent / "src")
    for backend in ("numpy", "compiled"):
        env["ECGALIGN_KERNELS"] = backend
        proc = subprocess.run([sys.executable, "-c", script], env=env,
                              capture_output=True, text=True)
        if proc.returncode != 0:
            print(f"  {backend:8s} failed: {proc.stderr.strip().splitlines()[-1]}")
        else:
            print(proc.stdout, end="")


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--step", action="store_true",
                        help="also benchmark a full training step per backend")
    args = parser.parse_args()
    bench_kernels()
    if args.step:
        bench_training_step()
