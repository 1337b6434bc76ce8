import math

import numpy as np
import pytest

from oqmla import data, inference
from oqmla.inference import (
    InferenceConfig, ParticleCloud, PosteriorSummary, PriorConfig, bayes_update, init_prior, pgh_time,
    record_likelihood, resample, train,
)
from oqmla.models import Model, Term, build_primitive_set

PSET1 = build_primitive_set(1)


def one_term(label, kind, rate=0.0):
    return Model.from_terms([Term(label, kind, rate)], PSET1)


def record(state, counts, time=1.0, unitary=None):
    state = np.asarray(state, complex)
    U = np.eye(len(state), dtype=complex) if unitary is None else unitary
    return data.ExperimentRecord(0, state, U, time, sum(counts.values()), counts)


def cloud_of(points, weights=None, dissipative=(False,)):
    pts = np.asarray(points, float).reshape(len(points), -1)
    w = np.full(len(pts), 1 / len(pts)) if weights is None else np.asarray(weights, float)
    return ParticleCloud(pts, w, np.array(dissipative))


def test_uniform_prior_mean():
    cloud = init_prior(one_term("-", "dissipative"), PriorConfig(dissipative_bounds=(0.0, 1.0)), 1000,
                       np.random.default_rng(0))
    assert abs(cloud.mean()[0] - 0.5) < 0.03
    assert np.allclose(cloud.weights, 1e-3)


def test_prior_needs_two_particles(rng):
    with pytest.raises(ValueError):
        init_prior(one_term("X", "coherent"), PriorConfig(), 1, rng)


def test_prior_rejects_negative_dissipative_bounds(rng):
    with pytest.raises(inference.InvalidPrior):
        init_prior(one_term("-", "dissipative"), PriorConfig(dissipative_bounds=(-1.0, 1.0)), 10, rng)


def test_gaussian_prior_centred_at_8khz(rng):
    prior = PriorConfig(kind="gaussian", mean=8.0, std=1.0)
    model = Model.from_terms([Term("X", "coherent", 0), Term("-", "dissipative", 0)], PSET1)
    cloud = init_prior(model, prior, 2000, rng)
    np.testing.assert_allclose(cloud.mean(), [8.0, 8.0], atol=0.1)
    assert (cloud.particles[:, 1] >= 0).all()


def test_particle_schedule():
    assert inference.particle_count(1) == 1000
    assert inference.particle_count(4) == 1000
    assert inference.particle_count(7) == 700
    assert inference.particle_count(20) == 200


def test_single_shot_likelihood():
    state = [math.cos(math.pi / 6), math.sin(math.pi / 6)]  # q = (0.75, 0.25)
    rec = record(state, {"1": 1}, time=0.0)
    assert record_likelihood(one_term("X", "coherent"), [0.0], rec) == pytest.approx(math.log(0.25), abs=1e-12)


def test_impossible_outcome_is_floored():
    rec = record([1, 0], {"1": 3}, time=0.0)
    ll = record_likelihood(one_term("X", "coherent"), [0.0], rec)
    assert np.isfinite(ll) and ll == pytest.approx(3 * math.log(inference.LIKELIHOOD_FLOOR))


def test_proportional_counts_maximize_likelihood():
    from itertools import permutations

    # q = (0.5, 0.3, 0.2, 0)
    amps = np.sqrt([0.5, 0.3, 0.2, 0.0])
    model = Model.zeros(np.zeros(50, bool), build_primitive_set(2))
    counts = (50, 30, 20, 0)
    values = {}
    for perm in set(permutations(counts)):
        c = {format(j, "02b"): v for j, v in enumerate(perm) if v}
        values[perm] = record_likelihood(model, [], record(amps, c, 0.0))
    assert max(values, key=values.get) == counts


def test_likelihood_shape_error():
    rec = record([1, 0, 0, 0], {"00": 1})
    with pytest.raises(inference.ShapeError):
        record_likelihood(one_term("X", "coherent"), [0.1], rec)


def test_constant_likelihood_leaves_weights():
    # dephasing of |0> leaves the X-basis outcome uniform at every rate
    H = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
    rec = record([1, 0], {"0": 3, "1": 2}, 1.0, unitary=H)
    cloud = cloud_of([[0.1], [0.7], [1.5]], [0.2, 0.3, 0.5], (True,))
    out = bayes_update(cloud, one_term("Z", "dissipative"), rec)
    np.testing.assert_allclose(out.weights, cloud.weights, atol=1e-12)


def test_bayes_ratio_four_to_one():
    rec = record([1, 0], {"0": 1}, 1.0)
    cloud = cloud_of([[0.0], [math.pi / 3]])
    out = bayes_update(cloud, one_term("X", "coherent"), rec)
    np.testing.assert_allclose(out.weights, [0.8, 0.2], atol=1e-12)
    assert out.particles is cloud.particles


def test_degenerate_posterior():
    rec = record([1, 0], {"1": 5000}, 0.0)
    cloud = cloud_of([[0.0], [0.0]])
    with pytest.raises(inference.DegeneratePosterior):
        cloud = ParticleCloud(cloud.particles, np.array([0.0, 0.0]), cloud.dissipative)
        bayes_update(cloud, one_term("X", "coherent"), rec)


def test_updates_contract_posterior():
    true = data.TrueModel(1, (Term("-", "dissipative", 0.2),))
    model = one_term("-", "dissipative")
    shrunk = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        cloud = init_prior(model, PriorConfig(), 500, rng)
        start = cloud.summary().sigma
        for _ in range(50):
            design = data.sample_design(data.DesignMode(), 1, rng)
            rec = data.simulate_record(true, design, float(rng.uniform(1, 10)), 50, rng)
            cloud = resample(bayes_update(cloud, model, rec), 0.5, 0.95, rng)
        shrunk += cloud.summary().sigma < start
    assert shrunk >= 19


def test_resample_identity_above_threshold(rng):
    cloud = cloud_of(rng.normal(size=(100, 1)))
    assert resample(cloud, 0.5, 0.95, rng) is cloud


def test_resample_degenerate_weights(rng):
    w = np.zeros(100)
    w[7] = 1
    cloud = cloud_of(rng.normal(size=(100, 2)), w, (False, False))
    out = resample(cloud, 0.5, 0.95, rng)
    np.testing.assert_allclose(out.particles, np.tile(cloud.particles[7], (100, 1)), atol=1e-6)
    np.testing.assert_allclose(out.weights.sum(), 1.0, atol=1e-12)


def test_resample_argument_checks(rng):
    cloud = cloud_of([[0.0], [1.0]])
    with pytest.raises(ValueError):
        resample(cloud, 1.5, 0.95, rng)
    with pytest.raises(ValueError):
        resample(cloud, 0.5, 1.0, rng)


def test_resample_preserves_mean_in_expectation():
    rng = np.random.default_rng(21)
    base = rng.normal(size=(200, 2))
    w = rng.random(200) ** 4
    w /= w.sum()
    cloud = ParticleCloud(base, w, np.array([False, False]))
    drifts = np.array([resample(cloud, 0.99, 0.95, rng).mean() - cloud.mean() for _ in range(1000)])
    se = drifts.std(axis=0, ddof=1) / math.sqrt(len(drifts))
    assert np.all(np.abs(drifts.mean(axis=0)) < 2 * se + 1e-15)


def test_resample_keeps_dissipative_non_negative(rng):
    pts = np.abs(rng.normal(scale=0.01, size=(300, 1)))
    w = rng.random(300) ** 8
    cloud = cloud_of(pts, w / w.sum(), (True,))
    out = resample(cloud, 0.99, 0.5, rng)
    assert (out.particles >= 0).all()
    assert abs(out.weights.sum() - 1) < 1e-12


@pytest.mark.parametrize("sigma,expected", [(0.5, 2.0), (0.0, 35.0), (1e-6, 35.0), (1e3, 0.01)])
def test_pgh_time(sigma, expected):
    assert pgh_time(PosteriorSummary(np.zeros(1), np.zeros(1), sigma), 0.01, 35.0) == pytest.approx(expected)


def test_pgh_discrete_rounding():
    t = pgh_time(PosteriorSummary(np.zeros(1), np.zeros(1), 1 / 0.23), 0.0, 35.0, discrete=True)
    assert t == pytest.approx(0.2)
    assert inference.gate_pairs(t) == 2
    assert pgh_time(PosteriorSummary(np.zeros(1), np.zeros(1), 1 / 0.25), 0.0, 35.0, discrete=True) == pytest.approx(0.3)


def test_train_recovers_decay_rate(decay_dataset):
    rng = np.random.default_rng(0)
    session = data.DatasetSession(decay_dataset.records, rng, shots=50)
    trained = train(one_term("-", "dissipative"), session, InferenceConfig(), rng)
    assert trained.rates[0] == pytest.approx(0.2, rel=0.05)
    assert len(trained.experiments) <= 300
    assert len({rid for rid, _ in trained.experiments}) == len(trained.experiments)


def test_train_zero_budget_rejected(decay_dataset, rng):
    with pytest.raises(ValueError):
        train(one_term("-", "dissipative"), data.DatasetSession(decay_dataset.records, rng),
              InferenceConfig(budget=0), rng)


def test_train_empty_model(decay_dataset, rng):
    session = data.DatasetSession(decay_dataset.records, rng)
    trained = train(Model.zeros(np.zeros(len(PSET1), bool), PSET1), session, InferenceConfig(), rng)
    assert trained.sigma == 0 and trained.experiments == [] and session.remaining() == len(decay_dataset.records)


def test_train_truncates_on_exhaustion(decay_dataset, rng):
    session = data.DatasetSession(decay_dataset.records[:5], rng)
    trained = train(one_term("-", "dissipative"), session, InferenceConfig(), rng)
    assert trained.truncated and len(trained.experiments) == 5


def test_train_deterministic(decay_dataset):
    def run():
        rng = np.random.default_rng(3)
        return train(one_term("-", "dissipative"), data.DatasetSession(decay_dataset.records, rng, 50),
                     InferenceConfig(budget=60), rng)

    a, b = run(), run()
    assert a.rates == b.rates and a.experiments == b.experiments and a.sigma == b.sigma


def test_posterior_contracts_with_budget(decay_dataset):
    medians = []
    for budget in (50, 150, 300):
        sigmas = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            session = data.DatasetSession(decay_dataset.records, rng, shots=50)
            sigmas.append(train(one_term("-", "dissipative"), session, InferenceConfig(budget=budget), rng).sigma)
        medians.append(np.median(sigmas))
    assert medians[0] > medians[1] > medians[2]


def test_config_round_trip():
    cfg = InferenceConfig(budget=10, prior=PriorConfig(kind="gaussian", mean=8.0))
    assert InferenceConfig.from_dict(cfg.to_dict()) == cfg
