"""RMSE-based fitness of trained models on held-out records."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from . import quantum
from .data import ExperimentRecord

RMSE_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class TestSet:
    records: tuple[ExperimentRecord, ...]
    n_qubits: int

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if not self.records:
            raise ValueError("test set is empty")
        if any(r.n_qubits != self.n_qubits for r in self.records):
            raise ValueError(f"every test record must act on {self.n_qubits} qubits")

    @classmethod
    def from_records(cls, records: Sequence[ExperimentRecord]) -> "TestSet":
        if not records:
            raise ValueError("test set is empty")
        return cls(tuple(records), records[0].n_qubits)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def empirical(self) -> np.ndarray:
        try:
            return self._empirical
        except AttributeError:
            p = np.stack([empirical_probabilities(r) for r in self.records])
            object.__setattr__(self, "_empirical", p)
            return p


@dataclass
class FitnessReport:
    model_id: str
    rmse: float
    fitness: float
    residuals: np.ndarray = field(repr=False)  # per-record RMS over the scored components


def empirical_probabilities(record: ExperimentRecord) -> np.ndarray:
    if record.shots < 1:
        raise ValueError("record has no shots")
    return record.counts_vector / record.shots


def predicted_probabilities(model, tests: TestSet) -> np.ndarray:
    """Outcome distributions predicted by ``model`` for every test record."""
    gen = quantum.assemble_liouvillian(model, tests.n_qubits)
    out = np.empty((len(tests), 2**tests.n_qubits))
    for i, rec in enumerate(tests.records):
        rho = quantum.unvec(scipy.linalg.expm(gen * rec.time) @ quantum.vec(rec.rho0)) if rec.time else rec.rho0
        out[i] = quantum.outcome_probabilities(0.5 * (rho + rho.conj().T), rec.unitary)
    return out


def rmse_from_probabilities(q: np.ndarray, p: np.ndarray) -> float:
    """Root mean squared difference over all but the last outcome of each record."""
    if q.shape != p.shape or q.ndim != 2 or q.shape[0] == 0:
        raise ValueError(f"probability tables must match and be non-empty, got {q.shape} and {p.shape}")
    diff = q[:, :-1] - p[:, :-1]
    return float(np.sqrt(np.sum(diff**2) / diff.size))


def rmse(model, tests: TestSet) -> float:
    model_qubits = getattr(model, "n_qubits", tests.n_qubits)
    if model_qubits != tests.n_qubits:
        raise ValueError(f"model acts on {model_qubits} qubits, test set on {tests.n_qubits}")
    return rmse_from_probabilities(predicted_probabilities(model, tests), tests.empirical)


def fitness_from_rmse(value: float) -> float:
    return 1.0 / max(value, RMSE_FLOOR)


def fitness_score(model, tests: TestSet, model_id: str = "") -> FitnessReport:
    model = getattr(model, "model", model)  # accept TrainedModel
    q = predicted_probabilities(model, tests)
    p = tests.empirical
    err = rmse_from_probabilities(q, p)
    residuals = np.sqrt(np.mean((q[:, :-1] - p[:, :-1]) ** 2, axis=1))
    return FitnessReport(model_id, err, fitness_from_rmse(err), residuals)


def rank_reports(reports: Sequence[FitnessReport]) -> list[FitnessReport]:
    """Sort by fitness, best first; exact ties fall back to model id."""
    return sorted(reports, key=lambda r: (-r.fitness, r.model_id))


def evaluate_generation(models: Sequence, tests: TestSet, ids: Sequence[str] | None = None) -> list[FitnessReport]:
    if not models:
        raise ValueError("no models to evaluate")
    if ids is None:
        ids = [f"m{i}" for i in range(len(models))]
    return rank_reports([fitness_score(m, tests, mid) for m, mid in zip(models, ids)])
