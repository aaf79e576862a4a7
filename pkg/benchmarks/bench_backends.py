"""Compare the numba and numpy kernel backends.

Times each hot kernel on both backends with identical inputs, checks that
they agree, then times one full WES run per backend in a subprocess (the
backend is fixed at import, so the end-to-end timing needs a fresh
interpreter).

    python3 benchmarks/bench_backends.py --particles 2000 --history 200
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from freqwes import _numba_kernels as nb
from freqwes import _numpy_kernels as npk

END_TO_END = """
import json, time
from freqwes import kernels
from freqwes.simulate import RunConfig, TrueSystem, run_estimation
from freqwes.strategies import StrategyConfig, StrategyKind
cfg = RunConfig(strategy=StrategyConfig(kind=StrategyKind.WES), K={K}, cet_budget={budget}, seed=3)
run_estimation(TrueSystem(1.0), RunConfig(strategy=cfg.strategy, K={K}, cet_budget=50.0, seed=3))
t0 = time.perf_counter()
trace = run_estimation(TrueSystem(1.0), cfg)
print(json.dumps({{"backend": kernels.BACKEND, "seconds": time.perf_counter() - t0,
                  "estimate": trace.final.estimate}}))
"""


def make_inputs(K, n_history, n_candidates, seed):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0.0, np.pi / 2, K))
    w = rng.random(K)
    w /= w.sum()
    times = rng.uniform(0.0, 200.0, n_history)
    shots = rng.integers(1, 11, n_history)
    ones = rng.binomial(shots, 0.5)
    cand = rng.uniform(0.0, 400.0, n_candidates)
    return x, w, times, shots, ones, cand


def kernel_cases(x, w, times, shots, ones, cand, tc):
    return {
        "record_loglik": lambda m: m.record_loglik(x, float(times[0]), int(shots[0]), int(ones[0]), tc),
        "history_loglik": lambda m: m.history_loglik(x, times, shots, ones, tc),
        "variance_utilities": lambda m: m.variance_utilities(x, w, cand, tc),
        "ess_utilities": lambda m: m.ess_utilities(x, w, cand, tc, 0.5 * len(x)),
        "systematic_indices": lambda m: m.systematic_indices(w, 0.37),
    }


def best_of(fn, repeat):
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat=repeat, number=number)) / number


def end_to_end(backend, K, budget):
    env = dict(os.environ, FREQWES_BACKEND=backend)
    out = subprocess.run(
        [sys.executable, "-c", END_TO_END.format(K=K, budget=budget)],
        env=env, check=True, capture_output=True, text=True,
    )
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--particles", type=int, default=2000)
    ap.add_argument("--history", type=int, default=200)
    ap.add_argument("--candidates", type=int, default=50)
    ap.add_argument("--coherence-time", type=float, default=None)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--cet-budget", type=float, default=1e4)
    ap.add_argument("--skip-end-to-end", action="store_true")
    ap.add_argument("--json", help="write results here")
    args = ap.parse_args(argv)

    inputs = make_inputs(args.particles, args.history, args.candidates, seed=0)
    cases = kernel_cases(*inputs, args.coherence_time or 0.0)
    results = {"kernels": {}, "end_to_end": {}}
    print(f"{'kernel':<20} {'numpy [s]':>11} {'numba [s]':>11} {'speed-up':>9} {'max |diff|':>11}")
    for name, call in cases.items():
        call(nb)  # compile outside the timed region
        ref, fast = np.asarray(call(npk)), np.asarray(call(nb))
        diff = float(np.max(np.abs(ref.astype(float) - fast.astype(float)), initial=0.0))
        t_np, t_nb = best_of(lambda: call(npk), args.repeat), best_of(lambda: call(nb), args.repeat)
        results["kernels"][name] = {"numpy": t_np, "numba": t_nb, "max_abs_diff": diff}
        print(f"{name:<20} {t_np:>11.3e} {t_nb:>11.3e} {t_np / t_nb:>8.1f}x {diff:>11.2e}")

    if not args.skip_end_to_end:
        for backend in ("numpy", "numba"):
            results["end_to_end"][backend] = end_to_end(backend, args.particles, args.cet_budget)
        e2e = results["end_to_end"]
        print(
            f"one WES run (K={args.particles}, CET {args.cet_budget:g}): "
            f"numpy {e2e['numpy']['seconds']:.2f}s, numba {e2e['numba']['seconds']:.2f}s, "
            f"estimates {e2e['numpy']['estimate']!r} / {e2e['numba']['estimate']!r}"
        )

    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
