import numpy as np

from oqmla.models import Model, build_primitive_set

def random_density_matrix(n_qubits, rng, rank=None):
    d = 2**n_qubits
    rank = rank or d
    a = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def random_model(n_qubits, rng, max_terms=4, scale=1.5):
    pset = build_primitive_set(n_qubits)
    k = rng.integers(0, max_terms + 1)
    idx = rng.choice(len(pset), size=k, replace=False)
    chrom = np.zeros(len(pset), dtype=bool)
    chrom[idx] = True
    model = Model.zeros(chrom, pset)
    rates = [scale * (rng.random() if p.kind == "dissipative" else rng.uniform(-1, 1)) for p in model.primitives]
    return model.with_rates(rates)
