"""Compare the compiled and numpy particle kernels.

    python3 benchmarks/bench_kernels.py [--particles 1000] [--repeat 5]

Times the per-cloud eigendecomposition, the per-record likelihood sweep and
one full training run with each backend, and checks that both agree.
"""

import argparse
import time

import numpy as np

from oqmla import data, inference, kernels, quantum
from oqmla.models import Model, build_primitive_set

BENCH_A = "0.5*C[XI],1.3*C[ZZ],0.2*D[-+],0.3*D[YX]"


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--particles", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--budget", type=int, default=100)
    args = ap.parse_args()

    backends = {"python": kernels.load_backend("python")}
    try:
        backends["cython"] = kernels.load_backend("cython")
    except ImportError:
        print("compiled extension not built; timing the numpy backend only")

    rng = np.random.default_rng(0)
    true = data.TrueModel.from_spec(BENCH_A)
    pset = build_primitive_set(2)
    model = Model.from_terms(list(true.terms), pset)
    gens = np.stack([quantum.pauli_generator(p.kind, p.label, 2) for p in model.primitives])
    particles = inference.init_prior(model, inference.PriorConfig(), args.particles, rng).particles
    R = np.ascontiguousarray(np.tensordot(particles, gens, axes=1))
    records = data.generate_dataset(true, data.log_time_grid(0.01, 35.0, 40), 50, seed=1).records

    print(f"{args.particles} particles, {model.size} rates, 16x16 generators")
    print(f"{'backend':<8}{'eigen (ms)':>12}{'40 records (ms)':>18}{'train (s)':>12}")
    results = {}
    for name, mod in backends.items():
        eig = best_time(lambda: mod.eigen_batch(R, kernels.COND_LIMIT), args.repeat)
        w, V, Vi, ok = mod.eigen_batch(R, kernels.COND_LIMIT)

        def sweep():
            return [mod.propagate_loglikes(w, V, Vi, np.ascontiguousarray(r.pauli_state), r.measurement_map,
                                           r.counts_vector, r.time, inference.LIKELIHOOD_FLOOR) for r in records]

        prop = best_time(sweep, args.repeat)
        results[name] = np.concatenate(sweep())

        def train():
            r = np.random.default_rng(1)
            session = data.DatasetSession(records * 10, r)
            inference.train(model, session, inference.InferenceConfig(budget=args.budget), r, backend=name)

        tr = best_time(train, max(1, args.repeat // 2))
        print(f"{name:<8}{1e3 * eig:>12.1f}{1e3 * prop:>18.2f}{tr:>12.2f}")

    if len(results) == 2:
        diff = np.max(np.abs(results["python"] - results["cython"]))
        print(f"max |log-likelihood difference| between backends: {diff:.2e}")


if __name__ == "__main__":
    main()
