"""Named dataset presets for the simulated benchmark systems."""

SCENARIOS = {
    # two interacting qubits, arbitrary states and bases
    "bench-a": {
        "model": "0.5*C[XI],1.3*C[ZZ],0.2*D[-+],0.3*D[YX]",
        "mode": "arbitrary",
        "noise": [0.0, 0.0],
        "threshold": 180.0,
    },
    # separable inputs and product measurement rotations only
    "local": {
        "model": "-0.3*C[ZI],-1.5*C[ZX],0.2*D[-I]",
        "mode": "local",
        "noise": [0.0, 0.0],
        "threshold": 180.0,
    },
    # 2% readout bit flips in both directions
    "noisy": {
        "model": "1.5*C[XZ],0.3*D[I-],0.2*D[Y+]",
        "mode": "arbitrary",
        "noise": [0.02, 0.02],
        "threshold": 180.0,
    },
    # jump operator outside the primitive set
    "approx": {
        "model": "1.0*C[IZ],0.6*D[0.3*YX+0.7*ZI]",
        "mode": "mixed:0.5",
        "noise": [0.0, 0.0],
        "threshold": 180.0,
    },
}

GENERATE_DEFAULTS = {
    "shots": 10000,
    "n_times": 500,
    "t_min": 0.01,
    "t_max": 35.0,
    "designs_per_time": 3,
    "seed": 0,
    "mode": "arbitrary",
    "noise": [0.0, 0.0],
}

RUN_DEFAULTS = {
    "replicates": 1,
    "population": 20,
    "target_primitives": 7,
    "p_one_to_zero": 0.1,
    "crossover_p": 0.8,
    "beta": 1.0,
    "max_generations": 20,
    "threshold": 180.0,
    "reduce_ratio": 3.0,
    "particles": None,
    "budget": 300,
    "shots": 50,
    "lw_a": 0.95,
    "ess_threshold": 0.5,
    "test_fraction": 0.2,
    "discrete": False,
    "seed": 0,
}
