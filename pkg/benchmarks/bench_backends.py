"""Timing comparison: numba kernels vs the pure-numpy fallbacks.

Runs each hot kernel under both backends (switched in-process) and reports
the best-of-N wall time plus the speedup. Invoke from the repo root:

    python benchmarks/bench_backends.py [--repeat N] [--samples M]

The numbers cover the three layers where the backend matters: raw
counter-based normal generation, forward path simulation, and the
branching-diffusion estimator; a full training iteration is included to show
the amortized effect once autograd (backend-independent BLAS) dominates.
"""

import argparse
import time

import numpy as np

from acpde import backend, nn, oracles, philox, problems, sde, solver


def best_of(fn, repeat, warmup=1):
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeat):
        started = time.perf_counter()
        fn()
        times.append(time.perf_counter() - started)
    return min(times)


def bench_normals(problem, batch):
    rows = batch * problem.num_steps
    return lambda: philox.normals_grid(0, philox.STREAM_PATHS, 1, rows, problem.d)


def bench_paths(problem, batch):
    return lambda: sde.sample_paths(problem, batch, seed=0, tag=1)


def bench_branching(samples):
    ac = problems.make_problem("allen_cahn")
    return lambda: oracles.allen_cahn_reference(
        ac.total_time, np.asarray(ac.start), samples=samples, seed=0)


def bench_training(problem):
    model = solver.ActorCriticModel(problem, seed=0)
    opt = nn.Adam(model.parameters(), lr=problem.learning_rate)
    state = {"it": 0}

    def step():
        state["it"] += 1
        solver.train_iteration(problem, model, opt, seed=0, iteration=state["it"])

    return step


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--samples", type=int, default=50_000,
                        help="branching-estimator sample count")
    args = parser.parse_args()

    if not backend.NUMBA_AVAILABLE:
        print("numba is not importable; only the numpy backend can be timed")
        return

    hjb = problems.make_problem("hjb")
    cases = [
        (f"normal grid ({512 * hjb.num_steps}x{hjb.d})", bench_normals(hjb, 512)),
        (f"path batch (B=512, N={hjb.num_steps}, d={hjb.d})", bench_paths(hjb, 512)),
        (f"branching estimator (M={args.samples})", bench_branching(args.samples)),
        (f"training iteration (hjb, B={hjb.batch_size})", bench_training(hjb)),
    ]

    original = backend.backend_name()
    print(f"{'kernel':<42}{'numba s':>10}{'numpy s':>10}{'speedup':>9}")
    try:
        for label, make in cases:
            timings = {}
            for name in ("numba", "numpy"):
                backend.set_backend(name)
                timings[name] = best_of(make, args.repeat)
            print(f"{label:<42}{timings['numba']:>10.4f}{timings['numpy']:>10.4f}"
                  f"{timings['numpy'] / timings['numba']:>8.2f}x")
    finally:
        backend.set_backend(original)


if __name__ == "__main__":
    main()
