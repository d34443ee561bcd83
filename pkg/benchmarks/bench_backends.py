#!/usr/bin/env python3
"""Benchmark the compiled vs pure-Python SE(3) kernel backends.

Runs the hot kernels (exp/log/adjoint/tangent/tangent_and_dirs) and a
full desk-scene equilibrium solve under both backends and prints a timing
table.  Backend choice is per-process (selected at import), so each half
runs in a subprocess with HDLO_BACKEND set.

Usage: python3 benchmarks/bench_backends.py [--repeat N]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time
from pathlib import Path

SCENE = Path(__file__).resolve().parent.parent / "src" / "hdlo" / "scenes" / "desk.yaml"


def run_one_backend(repeat: int) -> dict:
    import numpy as np

    from hdlo.backend import BACKEND_NAME, lie
    from hdlo import assembly as am, scene as sc, statics as st

    rng = np.random.default_rng(0)
    xis = rng.standard_normal((2000, 6))
    dirs = rng.standard_normal((6, 8))

    out = {"backend": BACKEND_NAME}

    def bench(name, fn):
        fn()  # warm up
        t0 = time.perf_counter()
        for _ in range(repeat):
            fn()
        out[name] = (time.perf_counter() - t0) / repeat

    bench("exp_se3", lambda: [lie.exp_se3(x) for x in xis])
    bench("log_se3", lambda: [lie.log_se3(*lie.exp_se3(x)) for x in xis])
    bench("adjoint", lambda: [lie.adjoint(*lie.exp_se3(x)) for x in xis])
    bench("tangent", lambda: [lie.tangent(x) for x in xis])
    bench("tangent_and_dirs", lambda: [lie.tangent_and_dirs(x, dirs) for x in xis])

    scene = sc.load_scene(str(SCENE))
    asm = scene.assembly
    q_a = np.array([0.1, -0.05, 0.08, -0.02])

    def equilibrium():
        st.solve_forward_statics(asm, q_a, st.zero_state(asm))

    bench("desk_equilibrium", equilibrium)
    bench("desk_fk_second_order",
          lambda: am.forward_kinematics(asm, np.zeros(asm.n_d), second_order=True))
    return out


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--_child", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args._child:
        print(json.dumps(run_one_backend(args.repeat)))
        return

    results = []
    for backend in ("python", "cython"):
        env = dict(os.environ, HDLO_BACKEND=backend)
        proc = subprocess.run(
            [sys.executable, __file__, "--_child", "--repeat", str(args.repeat)],
            env=env, capture_output=True, text=True,
        )
        if proc.returncode != 0:
            print(f"{backend} backend failed:\n{proc.stderr}", file=sys.stderr)
            continue
        results.append(json.loads(proc.stdout.strip().splitlines()[-1]))

    if len(results) < 2:
        sys.exit(1)
    py, cy = results
    names = [k for k in py if k != "backend"]
    width = max(len(n) for n in names)
    print(f"{'kernel':<{width}}  {'python (ms)':>12}  {'cython (ms)':>12}  {'speedup':>8}")
    for n in names:
        print(f"{n:<{width}}  {py[n] * 1e3:>12.3f}  {cy[n] * 1e3:>12.3f}  "
              f"{py[n] / cy[n]:>7.2f}x")


if __name__ == "__main__":
    main()
