"""Simulated experiment records, readout noise, dataset files and serving."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import quantum
from .models import Term, parse_model_spec
from .quantum import COHERENT, DISSIPATIVE

FORMAT_VERSION = 1


class FormatError(ValueError):
    """Dataset file is malformed or has an unsupported version."""


class SourceExhausted(RuntimeError):
    """Every record of a serving session has been used."""


@dataclass(frozen=True)
class NoiseConfig:
    p: float = 0.0  # 0 -> 1
    q: float = 0.0  # 1 -> 0

    def __post_init__(self):
        for name in ("p", "q"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"noise probability {name} must lie in [0, 1], got {v}")

    @property
    def is_null(self) -> bool:
        return self.p == 0.0 and self.q == 0.0


@dataclass(frozen=True)
class DesignMode:
    """``arbitrary``, ``local`` or ``mixed`` with the given fraction of local designs."""

    kind: str = "arbitrary"
    local_fraction: float = 0.0

    def __post_init__(self):
        if self.kind not in ("arbitrary", "local", "mixed"):
            raise ValueError(f"unknown design mode {self.kind!r}")
        if not 0.0 <= self.local_fraction <= 1.0:
            raise ValueError(f"local fraction must lie in [0, 1], got {self.local_fraction}")

    @classmethod
    def parse(cls, text: str) -> "DesignMode":
        if text.startswith("mixed"):
            _, _, frac = text.partition(":")
            return cls("mixed", float(frac) if frac else 0.5)
        if text == "local":
            return cls("local", 1.0)
        if text == "arbitrary":
            return cls("arbitrary", 0.0)
        raise ValueError(f"unknown design mode {text!r}")

    def __str__(self) -> str:
        return f"mixed:{self.local_fraction!r}" if self.kind == "mixed" else self.kind


@dataclass(frozen=True, eq=False)
class Design:
    """Input state and measurement rotation of one experiment (time unset)."""

    state: np.ndarray
    unitary: np.ndarray
    local: tuple | None = None  # per-qubit 2x2 unitaries when the rotation is a product

    @property
    def is_local(self) -> bool:
        return self.local is not None


@dataclass(frozen=True, eq=False)
class ExperimentRecord:
    id: int
    state: np.ndarray
    unitary: np.ndarray
    time: float
    shots: int
    counts: dict
    local: tuple | None = None

    def __post_init__(self):
        if self.shots < 1:
            raise ValueError("a record needs at least one shot")
        if sum(self.counts.values()) != self.shots:
            raise ValueError(f"record {self.id}: counts sum to {sum(self.counts.values())}, not {self.shots}")
        if any(len(b) != self.n_qubits for b in self.counts):
            raise ValueError(f"record {self.id}: outcome bitstrings must have {self.n_qubits} bits")

    @property
    def n_qubits(self) -> int:
        return int(round(math.log2(len(self.state))))

    @cached_property
    def rho0(self) -> np.ndarray:
        return np.outer(self.state, self.state.conj())

    @cached_property
    def counts_vector(self) -> np.ndarray:
        vec = np.zeros(2**self.n_qubits)
        for bits, c in self.counts.items():
            vec[int(bits, 2)] += c
        return vec

    @cached_property
    def pauli_state(self) -> np.ndarray:
        return quantum.pauli_vector(self.rho0)

    @cached_property
    def measurement_map(self) -> np.ndarray:
        return np.ascontiguousarray(quantum.measurement_map(self.unitary))

    def with_counts(self, counts: dict, shots: int | None = None) -> "ExperimentRecord":
        return ExperimentRecord(
            self.id, self.state, self.unitary, self.time,
            sum(counts.values()) if shots is None else shots, counts, self.local,
        )


def counts_from_vector(vec, n_qubits: int) -> dict:
    return {format(j, f"0{n_qubits}b"): int(c) for j, c in enumerate(vec) if c > 0}


# -- designs -----------------------------------------------------------------


def haar_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return psi / np.linalg.norm(psi)


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def _kron_all(factors) -> np.ndarray:
    out = factors[0]
    for f in factors[1:]:
        out = np.kron(out, f)
    return out


def sample_design(mode: DesignMode, n_qubits: int, rng: np.random.Generator) -> Design:
    local = mode.kind == "local" or (mode.kind == "mixed" and rng.random() < mode.local_fraction)
    if local:
        states = [haar_state(2, rng) for _ in range(n_qubits)]
        rots = tuple(haar_unitary(2, rng) for _ in range(n_qubits))
        return Design(_kron_all(states), _kron_all(rots), rots)
    dim = 2**n_qubits
    return Design(haar_state(dim, rng), haar_unitary(dim, rng))


# -- simulation ----------------------------------------------------------------


@dataclass(frozen=True)
class TrueModel:
    """Hidden generator of a dataset; jump operators need not be primitives."""

    n_qubits: int
    terms: tuple[Term, ...]

    @classmethod
    def from_spec(cls, spec: str) -> "TrueModel":
        terms = parse_model_spec(spec)
        return cls(quantum.label_qubits(terms[0].label), tuple(terms))


def simulate_record(true_model, design: Design, time: float, shots: int,
                    rng: np.random.Generator, record_id: int = 0) -> ExperimentRecord:
    if shots < 1:
        raise ValueError("shots must be at least 1")
    rho = quantum.evolve(np.outer(design.state, design.state.conj()), true_model, time)
    probs = quantum.outcome_probabilities(rho, design.unitary)
    counts = rng.multinomial(shots, probs)
    n_qubits = int(round(math.log2(len(probs))))
    return ExperimentRecord(record_id, design.state, design.unitary, float(time), int(shots),
                            counts_from_vector(counts, n_qubits), design.local)


def readout_transition(noise: NoiseConfig, n_qubits: int) -> np.ndarray:
    """``T[i, j]`` = probability that true outcome ``i`` is read as ``j``."""
    single = np.array([[1 - noise.p, noise.p], [noise.q, 1 - noise.q]])
    return _kron_all([single] * n_qubits)


def apply_readout_noise(record: ExperimentRecord, noise: NoiseConfig,
                        rng: np.random.Generator) -> ExperimentRecord:
    """Flip every bit of every shot independently (0->1 w.p. p, 1->0 w.p. q).

    Shots sharing a true outcome are redistributed with one multinomial draw,
    which has the same law as flipping them one at a time.
    """
    if noise.is_null:
        return record
    n = record.n_qubits
    T = readout_transition(noise, n)
    noisy = np.zeros(2**n, dtype=np.int64)
    for j, c in enumerate(record.counts_vector.astype(np.int64)):
        if c:
            noisy += rng.multinomial(c, T[j])
    return record.with_counts(counts_from_vector(noisy, n), record.shots)


# -- dataset files -------------------------------------------------------------


def _fmt(x) -> str:
    """JSON text for plain data; floats keep 17 significant digits."""
    if isinstance(x, bool) or x is None:
        return json.dumps(x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            raise ValueError("non-finite value in dataset")
        return format(x, ".17g")
    if isinstance(x, str):
        return json.dumps(x)
    if isinstance(x, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_fmt(v)}" for k, v in x.items()) + "}"
    if isinstance(x, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in x) + "]"
    if isinstance(x, np.ndarray):
        return _fmt(x.tolist())
    raise TypeError(f"cannot serialize {type(x).__name__}")


dumps = _fmt


def _complex_list(arr) -> list:
    arr = np.asarray(arr)
    if arr.ndim == 1:
        return [[float(z.real), float(z.imag)] for z in arr]
    return [_complex_list(row) for row in arr]


def _complex_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


def record_to_dict(rec: ExperimentRecord) -> dict:
    unitary = {"local": [_complex_list(u) for u in rec.local]} if rec.local is not None else _complex_list(rec.unitary)
    counts = {k: int(rec.counts[k]) for k in sorted(rec.counts)}
    return {"id": rec.id, "state": _complex_list(rec.state), "unitary": unitary,
            "time": float(rec.time), "shots": int(rec.shots), "counts": counts}


def record_from_dict(d: dict) -> ExperimentRecord:
    try:
        state = _complex_array(d["state"])
        if isinstance(d["unitary"], dict):
            local = tuple(_complex_array(u) for u in d["unitary"]["local"])
            unitary = _kron_all(local)
        else:
            local = None
            unitary = _complex_array(d["unitary"])
        return ExperimentRecord(int(d["id"]), state, unitary, float(d["time"]), int(d["shots"]),
                                {str(k): int(v) for k, v in d["counts"].items()}, local)
    except (KeyError, TypeError, IndexError) as exc:
        raise FormatError(f"malformed record: {exc}") from None


def terms_to_json(terms: Iterable[Term]) -> list:
    return [{"label": t.label, "kind": t.kind, "rate": float(t.rate)} for t in terms]


def terms_from_json(items) -> tuple[Term, ...]:
    terms = []
    for it in items:
        if it["kind"] not in (COHERENT, DISSIPATIVE):
            raise FormatError(f"unknown term kind {it['kind']!r}")
        terms.append(Term(str(it["label"]), it["kind"], float(it["rate"])))
    return tuple(terms)


@dataclass
class Dataset:
    manifest: dict
    records: list[ExperimentRecord] = field(default_factory=list)

    @property
    def n_qubits(self) -> int:
        return int(self.manifest["n_qubits"])

    @property
    def true_model(self) -> TrueModel | None:
        if self.manifest.get("true_model") is None:
            return None
        return TrueModel(self.n_qubits, terms_from_json(self.manifest["true_model"]))

    def write(self, path) -> None:
        path = Path(path)
        with open(path, "w") as fh:
            fh.write(_fmt(self.manifest) + "\n")
            for rec in self.records:
                fh.write(_fmt(record_to_dict(rec)) + "\n")

    @classmethod
    def read(cls, path) -> "Dataset":
        with open(path) as fh:
            lines = [ln for ln in fh if ln.strip()]
        if not lines:
            raise FormatError(f"{path}: empty dataset file")
        try:
            manifest = json.loads(lines[0])
            raw = [json.loads(ln) for ln in lines[1:]]
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(manifest, dict) or manifest.get("format_version") != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported dataset format version "
                              f"{manifest.get('format_version') if isinstance(manifest, dict) else None!r}")
        ds = cls(manifest, [record_from_dict(d) for d in raw])
        for rec in ds.records:
            if rec.n_qubits != ds.n_qubits:
                raise FormatError(f"record {rec.id} acts on {rec.n_qubits} qubits, manifest says {ds.n_qubits}")
        return ds


def log_time_grid(t_min: float = 0.01, t_max: float = 35.0, n: int = 500) -> np.ndarray:
    return np.geomspace(t_min, t_max, n)


def generate_dataset(true_model: TrueModel, times: Sequence[float], shots: int,
                     mode: DesignMode = DesignMode(), noise: NoiseConfig = NoiseConfig(),
                     seed: int = 0, designs_per_time: int = 1, path=None,
                     extra_manifest: dict | None = None) -> Dataset:
    """Simulate ``designs_per_time`` records at every grid time and optionally write them."""
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise ValueError("time grid is empty")
    if np.any(times < 0):
        raise ValueError("time grid contains negative times")
    rng = np.random.default_rng(seed)
    n = true_model.n_qubits
    records = []
    for t in times:
        for _ in range(designs_per_time):
            design = sample_design(mode, n, rng)
            rec = simulate_record(true_model, design, float(t), shots, rng, len(records))
            records.append(apply_readout_noise(rec, noise, rng))
    manifest = {
        "format_version": FORMAT_VERSION,
        "n_qubits": n,
        "true_model": terms_to_json(true_model.terms),
        "noise": {"p": noise.p, "q": noise.q},
        "seed": int(seed),
        "mode": str(mode),
        "shots": int(shots),
        "designs_per_time": int(designs_per_time),
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    ds = Dataset(manifest, records)
    if path is not None:
        ds.write(path)
    return ds


def split_records(records: Sequence[ExperimentRecord], test_fraction: float,
                  rng: np.random.Generator) -> tuple[list, list]:
    """Disjoint (train, test) split holding out ``test_fraction`` of the records."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test fraction must lie in (0, 1), got {test_fraction}")
    n_test = max(1, int(round(test_fraction * len(records))))
    if n_test >= len(records):
        raise ValueError("too few records to hold out a test set")
    perm = rng.permutation(len(records))
    test_idx = set(perm[:n_test].tolist())
    train = [r for i, r in enumerate(records) if i not in test_idx]
    test = [r for i, r in enumerate(records) if i in test_idx]
    return train, test


class DatasetSession:
    """Serves records nearest to a requested time, never twice per session.

    When ``shots`` is set, records holding more shots are served as a
    without-replacement subsample of that size.
    """

    def __init__(self, records: Sequence[ExperimentRecord], rng: np.random.Generator,
                 shots: int | None = None):
        if not records:
            raise ValueError("cannot serve from an empty record list")
        self.records = list(records)
        self.times = np.array([r.time for r in self.records])
        self.used = np.zeros(len(self.records), dtype=bool)
        self.rng = rng
        self.shots = shots
        self.t_min = float(self.times.min())
        self.t_max = float(self.times.max())

    def remaining(self) -> int:
        return int((~self.used).sum())

    def serve(self, target_time: float) -> ExperimentRecord:
        free = np.flatnonzero(~self.used)
        if free.size == 0:
            raise SourceExhausted("all records of this session have been used")
        dist = np.abs(self.times[free] - target_time)
        best = free[dist == dist.min()]
        idx = best[0] if best.size == 1 else self.rng.choice(best)
        self.used[idx] = True
        rec = self.records[idx]
        if self.shots is not None and rec.shots > self.shots:
            sub = self.rng.multivariate_hypergeometric(rec.counts_vector.astype(np.int64), self.shots)
            rec = rec.with_counts(counts_from_vector(sub, rec.n_qubits), self.shots)
        return rec
