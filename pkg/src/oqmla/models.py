"""Primitive sets, chromosome encoding and model reduction."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import Iterable, Sequence

import numpy as np

from .quantum import ALL_TAGS, COHERENT, DISSIPATIVE, PAULI_TAGS, label_qubits, parse_combination

MAX_QUBITS = 3


class UnsupportedSize(ValueError):
    pass


class NotInSet(KeyError):
    """A term is not a member of the primitive set."""


class ModelSpecError(ValueError):
    """Malformed model specification string."""


@dataclass(frozen=True)
class Primitive:
    label: str
    kind: str

    def __str__(self) -> str:
        return f"{'C' if self.kind == COHERENT else 'D'}[{self.label}]"


@dataclass(frozen=True)
class Term:
    """A rate-weighted primitive.  ``label`` may be an operator combination."""

    label: str
    kind: str
    rate: float

    @property
    def primitive(self) -> Primitive:
        return Primitive(self.label, self.kind)


@dataclass(frozen=True)
class PrimitiveSet:
    n_qubits: int
    primitives: tuple[Primitive, ...]
    _index: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {p: i for i, p in enumerate(self.primitives)})

    def __len__(self) -> int:
        return len(self.primitives)

    def __getitem__(self, i: int) -> Primitive:
        return self.primitives[i]

    def __iter__(self):
        return iter(self.primitives)

    def index(self, primitive: Primitive) -> int:
        try:
            return self._index[primitive]
        except KeyError:
            raise NotInSet(f"{primitive} is not in the primitive set") from None

    @property
    def kinds(self) -> np.ndarray:
        return np.array([p.kind == DISSIPATIVE for p in self.primitives])


@lru_cache(maxsize=None)
def build_primitive_set(n_qubits: int) -> PrimitiveSet:
    """All non-identity Pauli strings as coherent terms, then all non-identity
    strings over ``I X Y Z + -`` as jump operators.

    Within each block labels follow ``itertools.product`` order over the tag
    alphabet, so the layout is stable across runs and files.
    """
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise UnsupportedSize(f"n_qubits must be in [1, {MAX_QUBITS}], got {n_qubits}")
    identity = "I" * n_qubits
    coherent = [Primitive("".join(t), COHERENT) for t in product(PAULI_TAGS, repeat=n_qubits)]
    dissipative = [Primitive("".join(t), DISSIPATIVE) for t in product(ALL_TAGS, repeat=n_qubits)]
    prims = [p for p in coherent + dissipative if p.label != identity]
    return PrimitiveSet(n_qubits, tuple(prims))


def encode(terms: Iterable[Primitive], pset: PrimitiveSet) -> np.ndarray:
    chrom = np.zeros(len(pset), dtype=bool)
    for p in terms:
        chrom[pset.index(Primitive(p.label, p.kind))] = True
    return chrom


def decode(chromosome, pset: PrimitiveSet) -> list[Primitive]:
    chromosome = np.asarray(chromosome, dtype=bool)
    if chromosome.shape != (len(pset),):
        raise ValueError(f"chromosome length {chromosome.size} != |S| = {len(pset)}")
    return [pset[i] for i in np.flatnonzero(chromosome)]


def chromosome_to_str(chromosome) -> str:
    return "".join("1" if b else "0" for b in chromosome)


def chromosome_from_str(bits: str) -> np.ndarray:
    if set(bits) - {"0", "1"}:
        raise ValueError(f"chromosome string must be 0/1, got {bits!r}")
    return np.array([c == "1" for c in bits], dtype=bool)


def random_chromosome(target: float, set_size: int, rng: np.random.Generator) -> np.ndarray:
    """Each bit set independently with probability ``target / set_size``."""
    if not 0 < target < set_size:
        raise ValueError(f"target must lie in (0, {set_size}), got {target}")
    return rng.random(set_size) < target / set_size


@dataclass(frozen=True)
class Model:
    """A chromosome over a primitive set with one rate per present primitive."""

    pset: PrimitiveSet
    chromosome: tuple[bool, ...]
    rates: tuple[float, ...]

    def __post_init__(self):
        chrom = tuple(bool(b) for b in self.chromosome)
        rates = tuple(float(r) for r in self.rates)
        object.__setattr__(self, "chromosome", chrom)
        object.__setattr__(self, "rates", rates)
        if len(chrom) != len(self.pset):
            raise ValueError(f"chromosome length {len(chrom)} != |S| = {len(self.pset)}")
        if len(rates) != sum(chrom):
            raise ValueError(f"{len(rates)} rates for {sum(chrom)} primitives")
        for p, r in zip(self.primitives, rates):
            if p.kind == DISSIPATIVE and r < 0:
                raise ValueError(f"dissipative rate of {p} is negative ({r})")

    @classmethod
    def from_terms(cls, terms: Sequence[Term], pset: PrimitiveSet) -> "Model":
        chrom = encode([t.primitive for t in terms], pset)
        by_index = {pset.index(t.primitive): t.rate for t in terms}
        return cls(pset, chrom, [by_index[i] for i in sorted(by_index)])

    @classmethod
    def zeros(cls, chromosome, pset: PrimitiveSet) -> "Model":
        return cls(pset, chromosome, [0.0] * int(np.sum(chromosome)))

    @property
    def n_qubits(self) -> int:
        return self.pset.n_qubits

    @property
    def primitives(self) -> list[Primitive]:
        return decode(self.chromosome, self.pset)

    @property
    def terms(self) -> list[Term]:
        return [Term(p.label, p.kind, r) for p, r in zip(self.primitives, self.rates)]

    @property
    def dissipative_mask(self) -> np.ndarray:
        return np.array([p.kind == DISSIPATIVE for p in self.primitives], dtype=bool)

    @property
    def size(self) -> int:
        return len(self.rates)

    def with_rates(self, rates) -> "Model":
        return Model(self.pset, self.chromosome, rates)

    def bits(self) -> str:
        return chromosome_to_str(self.chromosome)

    def __str__(self) -> str:
        if not self.rates:
            return "0"
        return " + ".join(f"{r:.4g}*{p}" for p, r in zip(self.primitives, self.rates))


def reduce_model(model: Model, stds, threshold_ratio: float = 1.0) -> Model:
    """Drop terms whose ``|rate| < threshold_ratio * std``; survivors keep their rates."""
    stds = np.asarray(stds, dtype=float)
    if stds.shape != (model.size,):
        raise ValueError(f"expected {model.size} standard deviations, got {stds.shape}")
    rates = np.asarray(model.rates)
    keep = np.abs(rates) >= threshold_ratio * stds
    chrom = np.array(model.chromosome)
    chrom[np.flatnonzero(chrom)[~keep]] = False
    return Model(model.pset, chrom, rates[keep])


# Model specification grammar: ``<rate>*<K>[<label>]`` separated by commas,
# e.g. ``0.5*C[XI],1.3*C[ZZ],0.2*D[-+],0.3*D[YX]``.  Jump operators may be
# combinations such as ``0.6*D[0.3*YX+0.7*ZI]``.
_SPEC_TERM = re.compile(r"^\s*([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)\s*\*\s*([CD])\[([^\]]+)\]\s*$")


def parse_model_spec(spec: str) -> list[Term]:
    terms = []
    for chunk in _split_spec(spec):
        m = _SPEC_TERM.match(chunk)
        if m is None:
            raise ModelSpecError(f"cannot parse model term {chunk.strip()!r}")
        rate, kind, label = float(m.group(1)), m.group(2), m.group(3).strip()
        kind = COHERENT if kind == "C" else DISSIPATIVE
        try:
            parts = parse_combination(label)
        except ValueError as exc:
            raise ModelSpecError(f"invalid label {label!r}: {exc}") from None
        if kind == COHERENT and any(c not in PAULI_TAGS for _, lab in parts for c in lab):
            raise ModelSpecError(f"invalid label {label!r}: coherent terms take only I, X, Y, Z")
        if kind == DISSIPATIVE and rate < 0:
            raise ModelSpecError(f"dissipative rate for {label!r} must be non-negative")
        terms.append(Term(label, kind, rate))
    if not terms:
        raise ModelSpecError("empty model specification")
    if len({label_qubits(t.label) for t in terms}) != 1:
        raise ModelSpecError("model terms act on different numbers of qubits")
    return terms


def _split_spec(spec: str) -> list[str]:
    # commas inside brackets never occur in valid labels, so a plain split works
    return [c for c in spec.split(",") if c.strip()]


def format_model_spec(terms: Iterable[Term]) -> str:
    return ",".join(f"{t.rate!r}*{'C' if t.kind == COHERENT else 'D'}[{t.label}]" for t in terms)
