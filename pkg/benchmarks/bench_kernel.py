"""Time the compiled Gibbs kernel against the numpy fallback.

    python3 benchmarks/bench_kernel.py --geographies 1000 --iterations 300

Both backends run the same chains, so the posteriors must match bit for bit;
the script checks that before reporting timings.
"""
import argparse
import time

import numpy as np

from fbisg import SamplerConfig, run_fbisg
from fbisg.kernel import compiled_run_chains
from fbisg.synth import SynthConfig, generate_population


def timed(records, dicts, table, config, backend, repeats):
    best, probs = np.inf, None
    for _ in range(repeats):
        t0 = time.perf_counter()
        probs = run_fbisg(records, dicts, table, config, backend=backend).probs
        best = min(best, time.perf_counter() - t0)
    return best, probs


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--geographies", type=int, default=1000)
    p.add_argument("--population-mean", type=float, default=60.0)
    p.add_argument("--iterations", type=int, default=300)
    p.add_argument("--burnin", type=int, default=100)
    p.add_argument("--estimator", choices=("label_frequency", "rao_blackwell"),
                   default="label_frequency")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    pop = generate_population(SynthConfig(n_geographies=args.geographies,
                                          population_mean=args.population_mean, seed=args.seed))
    config = SamplerConfig(iterations_total=args.iterations, burn_in=args.burnin,
                           posterior_estimator=args.estimator, seed=args.seed)
    n = len(pop.records)
    sweeps = n * args.iterations
    print(f"{n} records, {args.geographies} geographies, {args.iterations} sweeps "
          f"({sweeps:.3g} record updates), estimator={args.estimator}")

    results = {}
    backends = ["python"] + (["compiled"] if compiled_run_chains is not None else [])
    for backend in backends:
        secs, probs = timed(pop.records, pop.dictionaries, pop.true_table, config, backend,
                            args.repeats)
        results[backend] = (secs, probs)
        print(f"  {backend:>8}: {secs:8.3f} s   {sweeps / secs / 1e6:8.2f} M updates/s")
    if "compiled" in results:
        same = np.array_equal(results["python"][1], results["compiled"][1])
        print(f"  speedup compiled/python: {results['python'][0] / results['compiled'][0]:.1f}x, "
              f"identical posteriors: {same}")
        if not same:
            raise SystemExit("backends disagree")
    else:
        print("  compiled kernel not built; only the fallback was timed")


if __name__ == "__main__":
    main()
