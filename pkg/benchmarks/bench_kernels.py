"""Compare the compiled and pure-numpy kernel backends.

Run with ``python3 benchmarks/bench_kernels.py``. Each kernel is timed on
both backends with the same inputs, and the outputs are checked to agree
before any timing is printed.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from vadr import kernels, quat


def _inputs(n, steps, seed):
    rng = np.random.default_rng(seed)
    a = quat.random(rng, n)
    b = quat.random(rng, n)
    omega = rng.normal(0.0, 3.0, size=(n, 3))
    dist = rng.uniform(0.0, 0.3, size=n)
    traj = quat.random(rng, steps)
    goals = quat.random(rng, max(steps // 20, 1))
    starts = np.arange(goals.shape[0], dtype=np.int64) * 20
    return a, b, omega, dist, traj, goals, starts


def _cases(mod, a, b, omega, dist, traj, goals, starts):
    n = a.shape[0]

    def step():
        hold = np.zeros(n, dtype=np.int64)
        succ = np.zeros(n, dtype=np.int64)
        stuck = np.zeros(n, dtype=np.int64)
        return mod.protocol_step(dist, 0.1, 5, hold, succ, stuck, 2400)

    return {
        "rotation_distance": lambda: mod.rotation_distance(a, b),
        "integrate_orientation": lambda: mod.integrate_orientation(a, omega, 1.0 / 30.0),
        "protocol_step": step,
        "replay_frame_hold": lambda: mod.replay_frame_hold(traj, goals, starts, 3.2, 2, 10**9),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--envs", type=int, default=4096)
    ap.add_argument("--steps", type=int, default=20000, help="trajectory length for the replay kernel")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    data = _inputs(args.envs, args.steps, args.seed)
    available = kernels.backends()
    cases = {name: _cases(mod, *data) for name, mod in available.items()}

    for kernel in cases["python"]:
        outs = [cases[b][kernel]() for b in available]
        for other in outs[1:]:
            for x, y in zip(np.atleast_1d(outs[0]), np.atleast_1d(other)):
                np.testing.assert_allclose(np.asarray(x, dtype=float), np.asarray(y, dtype=float), atol=1e-12)

    print(f"backends: {', '.join(available)}  (default: {kernels.BACKEND})")
    print(f"{'kernel':24s}" + "".join(f"{b:>14s}" for b in available) + "   speedup")
    for kernel in cases["python"]:
        times = {}
        for b in available:
            fn = cases[b][kernel]
            number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
            best = min(timeit.repeat(fn, number=number, repeat=args.repeat)) / number
            times[b] = best
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{kernel:24s}" + "".join(f"{times[b] * 1e6:12.1f}us" for b in available) + f"   {speed:6.2f}x")


if __name__ == "__main__":
    main()
