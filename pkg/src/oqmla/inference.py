"""Sequential Monte Carlo estimation of a fixed model's rates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import quantum
from .data import ExperimentRecord, SourceExhausted
from .kernels import COND_LIMIT, load_backend
from .models import Model

LIKELIHOOD_FLOOR = 1e-12


class InvalidPrior(ValueError):
    pass


class DegeneratePosterior(RuntimeError):
    """Every particle weight vanished after an update."""


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class PriorConfig:
    """Uniform box prior, or a Gaussian truncated at zero for dissipative rates."""

    kind: str = "uniform"
    coherent_bounds: tuple[float, float] = (-2.0, 2.0)
    dissipative_bounds: tuple[float, float] = (0.0, 2.0)
    mean: float = 0.0
    std: float = 1.0

    def to_dict(self) -> dict:
        return {"kind": self.kind, "coherent_bounds": list(self.coherent_bounds),
                "dissipative_bounds": list(self.dissipative_bounds), "mean": self.mean, "std": self.std}

    @classmethod
    def from_dict(cls, d: dict) -> "PriorConfig":
        return cls(d.get("kind", "uniform"), tuple(d.get("coherent_bounds", (-2.0, 2.0))),
                   tuple(d.get("dissipative_bounds", (0.0, 2.0))), d.get("mean", 0.0), d.get("std", 1.0))


@dataclass(frozen=True)
class InferenceConfig:
    budget: int = 300
    shots: int = 50
    n_particles: int | None = None  # None: size-dependent schedule
    ess_threshold: float = 0.5
    lw_a: float = 0.95
    convergence_sigma: float = 1e-3
    prior: PriorConfig = PriorConfig()
    discrete: bool = False

    def to_dict(self) -> dict:
        return {"budget": self.budget, "shots": self.shots, "n_particles": self.n_particles,
                "ess_threshold": self.ess_threshold, "lw_a": self.lw_a,
                "convergence_sigma": self.convergence_sigma, "prior": self.prior.to_dict(),
                "discrete": self.discrete}

    @classmethod
    def from_dict(cls, d: dict) -> "InferenceConfig":
        d = dict(d)
        d["prior"] = PriorConfig.from_dict(d.get("prior", {}))
        return cls(**d)


def particle_count(n_rates: int) -> int:
    """Default cloud size, shrinking for large models."""
    if n_rates <= 4:
        return 1000
    return max(200, 1000 - 100 * (n_rates - 4))


@dataclass(frozen=True)
class PosteriorSummary:
    mean: np.ndarray
    stds: np.ndarray
    sigma: float


@dataclass(eq=False)
class ParticleCloud:
    particles: np.ndarray
    weights: np.ndarray
    dissipative: np.ndarray

    @property
    def n_particles(self) -> int:
        return len(self.weights)

    @property
    def ess(self) -> float:
        return 1.0 / float(np.sum(self.weights**2))

    def mean(self) -> np.ndarray:
        return self.weights @ self.particles

    def covariance(self) -> np.ndarray:
        centered = self.particles - self.mean()
        return (centered * self.weights[:, None]).T @ centered

    def summary(self) -> PosteriorSummary:
        mean = self.mean()
        sq = (self.particles - mean) ** 2
        var = self.weights @ sq if self.particles.shape[1] else np.zeros(0)
        sigma = math.sqrt(max(float(np.sum(var)), 0.0))
        return PosteriorSummary(mean, np.sqrt(np.maximum(var, 0.0)), sigma)


def init_prior(model: Model, prior: PriorConfig, n_particles: int,
               rng: np.random.Generator) -> ParticleCloud:
    if n_particles < 2:
        raise ValueError(f"a particle cloud needs at least 2 particles, got {n_particles}")
    mask = model.dissipative_mask
    d = model.size
    if prior.kind == "uniform":
        lo_c, hi_c = prior.coherent_bounds
        lo_d, hi_d = prior.dissipative_bounds
        if lo_d < 0:
            raise InvalidPrior(f"dissipative prior bounds {prior.dissipative_bounds} allow negative rates")
        if hi_c < lo_c or hi_d < lo_d:
            raise InvalidPrior("prior bounds must be ordered (low, high)")
        lo = np.where(mask, lo_d, lo_c)
        hi = np.where(mask, hi_d, hi_c)
        particles = lo + (hi - lo) * rng.random((n_particles, d))
    elif prior.kind == "gaussian":
        if prior.std <= 0:
            raise InvalidPrior("Gaussian prior needs a positive standard deviation")
        if np.any(mask) and prior.mean + 5 * prior.std < 0:
            raise InvalidPrior("Gaussian prior puts no mass on non-negative dissipative rates")
        particles = prior.mean + prior.std * rng.normal(size=(n_particles, d))
        # truncate dissipative components at zero by redrawing
        bad = (particles < 0) & mask
        while bad.any():
            particles[bad] = prior.mean + prior.std * rng.normal(size=int(bad.sum()))
            bad = (particles < 0) & mask
    else:
        raise InvalidPrior(f"unknown prior kind {prior.kind!r}")
    return ParticleCloud(particles, np.full(n_particles, 1.0 / n_particles), mask)


def _check_record(model: Model, record: ExperimentRecord) -> None:
    if record.n_qubits != model.n_qubits:
        raise ShapeError(f"record acts on {record.n_qubits} qubits, model on {model.n_qubits}")


def record_likelihood(model: Model, rates, record: ExperimentRecord) -> float:
    """Multinomial log-likelihood (without the combinatorial constant) of one record."""
    _check_record(model, record)
    rho = quantum.evolve(record.rho0, model.with_rates(rates), record.time)
    q = quantum.outcome_probabilities(rho, record.unitary)
    c = record.counts_vector
    nz = c > 0
    return float(c[nz] @ np.log(np.maximum(q[nz], LIKELIHOOD_FLOOR)))


class LikelihoodEngine:
    """Batched log-likelihoods for every particle of a cloud.

    Each particle's real Pauli-basis generator is diagonalized once per
    particle set; evaluating a record then only costs two small matrix-vector
    products per particle.  Particles whose eigenvectors are ill-conditioned
    fall back to a dense matrix exponential.
    """

    def __init__(self, model: Model, backend=None):
        self.model = model
        self.kernels = load_backend(backend) if isinstance(backend, (str, type(None))) else backend
        n = model.n_qubits
        if model.size:
            self.generators = np.stack([quantum.pauli_generator(p.kind, p.label, n) for p in model.primitives])
        else:
            self.generators = np.zeros((0, 4**n, 4**n))
        self._particles = None

    def prepare(self, particles: np.ndarray) -> None:
        self._particles = particles
        self.R = np.ascontiguousarray(np.tensordot(particles, self.generators, axes=1))
        self.w, self.V, self.Vi, self.ok = self.kernels.eigen_batch(self.R, COND_LIMIT)
        self.bad = np.flatnonzero(~self.ok)

    def loglikes(self, particles: np.ndarray, record: ExperimentRecord) -> np.ndarray:
        _check_record(self.model, record)
        if particles is not self._particles:
            self.prepare(particles)
        r0 = np.ascontiguousarray(record.pauli_state)
        M = record.measurement_map
        counts = np.ascontiguousarray(record.counts_vector, dtype=float)
        ll = self.kernels.propagate_loglikes(self.w, self.V, self.Vi, r0, M, counts,
                                             float(record.time), LIKELIHOOD_FLOOR)
        if self.bad.size:
            r = scipy.linalg.expm(self.R[self.bad] * record.time) @ r0
            q = np.maximum(r @ M.T, LIKELIHOOD_FLOOR)
            nz = counts > 0
            ll[self.bad] = np.log(q[:, nz]) @ counts[nz]
        return ll


def bayes_update(cloud: ParticleCloud, model: Model, record: ExperimentRecord,
                 engine: LikelihoodEngine | None = None) -> ParticleCloud:
    """Reweight every particle by the likelihood of ``record``."""
    if engine is None:
        engine = LikelihoodEngine(model)
    ll = engine.loglikes(cloud.particles, record)
    with np.errstate(divide="ignore"):
        logw = np.log(cloud.weights) + ll
    top = np.max(logw)
    if not np.isfinite(top):
        raise DegeneratePosterior("all particle weights vanished")
    w = np.exp(logw - top)
    total = w.sum()
    if total <= 0 or not np.isfinite(total):
        raise DegeneratePosterior("all particle weights vanished")
    return ParticleCloud(cloud.particles, w / total, cloud.dissipative)


def resample(cloud: ParticleCloud, ess_threshold: float, lw_a: float,
             rng: np.random.Generator) -> ParticleCloud:
    """Liu-West resampling when the effective sample size drops below ``ess_threshold * N``.

    Returns ``cloud`` itself when no resampling is needed.
    """
    if not 0 < ess_threshold < 1:
        raise ValueError("ess_threshold must lie in (0, 1)")
    if not 0 < lw_a < 1:
        raise ValueError("lw_a must lie in (0, 1)")
    if cloud.ess >= ess_threshold * cloud.n_particles:
        return cloud
    return liu_west(cloud, lw_a, rng)


def liu_west(cloud: ParticleCloud, lw_a: float, rng: np.random.Generator) -> ParticleCloud:
    """Unconditional Liu-West step: weighted ancestors, shrinkage toward the mean, Gaussian jitter."""
    n = cloud.n_particles
    mean = cloud.mean()
    cov = cloud.covariance()
    ancestors = rng.choice(n, size=n, p=cloud.weights)
    try:
        chol = np.linalg.cholesky((1 - lw_a**2) * cov)
    except np.linalg.LinAlgError:
        chol = None
    if chol is None:
        scale = 1e-9 * (1.0 + np.abs(mean))
        new = cloud.particles[ancestors] + scale * rng.normal(size=cloud.particles.shape)
    else:
        mu = lw_a * cloud.particles[ancestors] + (1 - lw_a) * mean
        new = mu + rng.normal(size=cloud.particles.shape) @ chol.T
    new[:, cloud.dissipative] = np.maximum(new[:, cloud.dissipative], 0.0)
    return ParticleCloud(new, np.full(n, 1.0 / n), cloud.dissipative)


def _ess(logw: np.ndarray) -> float:
    w = np.exp(logw - logw.max())
    return float(w.sum() ** 2 / np.sum(w**2))


def _next_exponent(weights: np.ndarray, ll: np.ndarray, remaining: float, target: float) -> float:
    """Largest fraction of ``ll`` (at most ``remaining``) keeping the ESS above ``target``."""
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    if _ess(logw + remaining * ll) >= target:
        return remaining
    lo, hi = 0.0, remaining
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if _ess(logw + mid * ll) >= target:
            lo = mid
        else:
            hi = mid
    return max(lo, 1e-6 * remaining)


def _reweight(cloud: ParticleCloud, ll: np.ndarray) -> ParticleCloud:
    with np.errstate(divide="ignore"):
        logw = np.log(cloud.weights) + ll
    top = np.max(logw)
    if not np.isfinite(top):
        raise DegeneratePosterior("all particle weights vanished")
    w = np.exp(logw - top)
    return ParticleCloud(cloud.particles, w / w.sum(), cloud.dissipative)


def tempered_update(cloud: ParticleCloud, model: Model, record: ExperimentRecord,
                    engine: LikelihoodEngine, config: InferenceConfig,
                    rng: np.random.Generator, max_stages: int = 20) -> ParticleCloud:
    """Bayes update applied in likelihood fractions so the ESS never collapses in one step.

    Whenever the full remaining likelihood would push the effective sample
    size below ``ess_threshold * N``, only the largest fraction that keeps it
    at the threshold is applied, the cloud is moved with Liu-West, and the
    likelihood is re-evaluated at the new particles.  The final posterior is
    the same as a single update.
    """
    target = config.ess_threshold * cloud.n_particles
    remaining = 1.0
    ll = engine.loglikes(cloud.particles, record)
    for _ in range(max_stages - 1):
        phi = _next_exponent(cloud.weights, ll, remaining, target)
        cloud = _reweight(cloud, phi * ll)
        remaining -= phi
        if remaining <= 1e-12:
            return cloud
        cloud = liu_west(cloud, config.lw_a, rng)
        ll = engine.loglikes(cloud.particles, record)
    return _reweight(cloud, remaining * ll)


def pgh_time(summary: PosteriorSummary, t_min: float, t_max: float, discrete: bool = False) -> float:
    """Next evolution time from the posterior dispersion, ``1/sigma`` clamped to the data range.

    In discrete mode the time is rounded half-up to one decimal, i.e. a whole
    number of tenths (gate pairs ``m = 10 t``).
    """
    if summary.sigma < 0:
        raise ValueError("dispersion must be non-negative")
    t = t_max if summary.sigma == 0 else 1.0 / summary.sigma
    if discrete:
        t = math.floor(t * 10 + 0.5) / 10
    return float(min(max(t, t_min), t_max))


def gate_pairs(t: float) -> int:
    """CNOT-pair count for a discrete-mode time (ten pairs per time unit)."""
    return int(math.floor(t * 10 + 0.5))


@dataclass
class TrainedModel:
    model: Model
    stds: np.ndarray
    sigma: float
    experiments: list = field(default_factory=list)  # (record id, time) in consumption order
    truncated: bool = False
    n_particles: int = 0

    @property
    def rates(self) -> tuple:
        return self.model.rates


def train(model: Model, source, config: InferenceConfig, rng: np.random.Generator,
          backend=None) -> TrainedModel:
    """Adaptive Bayesian estimation of ``model``'s rates from records served by ``source``.

    ``source`` provides ``serve(time)``, ``t_min`` and ``t_max``; it raises
    :class:`SourceExhausted` when empty, in which case the best estimate so far
    is returned with ``truncated`` set.
    """
    if config.budget < 1:
        raise ValueError("training budget must be at least one experiment")
    if model.size == 0:
        return TrainedModel(model, np.zeros(0), 0.0, [], False, 0)
    n_particles = config.n_particles or particle_count(model.size)
    cloud = init_prior(model, config.prior, n_particles, rng)
    engine = LikelihoodEngine(model, backend)
    engine.prepare(cloud.particles)
    consumed = []
    truncated = False
    for _ in range(config.budget):
        summary = cloud.summary()
        if summary.sigma < config.convergence_sigma:
            break
        t = pgh_time(summary, source.t_min, source.t_max, config.discrete)
        try:
            record = source.serve(t)
        except SourceExhausted:
            truncated = True
            break
        consumed.append((record.id, record.time))
        try:
            cloud = tempered_update(cloud, model, record, engine, config, rng)
        except DegeneratePosterior:
            cloud = init_prior(model, config.prior, n_particles, rng)
            continue
        cloud = resample(cloud, config.ess_threshold, config.lw_a, rng)
    summary = cloud.summary()
    return TrainedModel(model.with_rates(summary.mean), summary.stds, summary.sigma,
                        consumed, truncated, n_particles)
