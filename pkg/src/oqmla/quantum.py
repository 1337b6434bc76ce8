"""Dense Lindblad kernel: generators, time evolution and measurement statistics.

Conventions used throughout the package:

* Operator labels are strings with one tag per qubit drawn from ``I X Y Z + -``
  (``+`` is the raising operator ``|1><0|``, ``-`` the lowering operator
  ``|0><1|``).  The leftmost tag acts on qubit 0.
* Qubit 0 is the most significant bit of a computational-basis index, so a
  label ``AB`` is the matrix ``kron(A, B)``.
* Superoperators act on the column-stacked vectorization ``rho.flatten("F")``.
"""

from __future__ import annotations

import re
from functools import lru_cache
from typing import Iterable

import numpy as np
import scipy.linalg

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-9
POSITIVITY_TOL = 1e-9
UNITARY_TOL = 1e-10

COHERENT = "coherent"
DISSIPATIVE = "dissipative"

PAULI_TAGS = "IXYZ"
ALL_TAGS = "IXYZ+-"

_SINGLE = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
    "+": np.array([[0, 0], [1, 0]], dtype=complex),
    "-": np.array([[0, 1], [0, 0]], dtype=complex),
}

_COMBO_TERM = re.compile(r"\s*([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)\s*\*\s*")


class LabelError(ValueError):
    """Malformed operator label."""


class InvalidCoherentLabel(LabelError):
    """Coherent terms need a Hermitian (Pauli-only) label."""


class NonPhysicalRate(ValueError):
    """A dissipative rate is negative or a rate is not finite."""


class NegativeTime(ValueError):
    pass


class InvalidBasis(ValueError):
    """Measurement basis matrix is not unitary."""


class InvalidState(ValueError):
    pass


def validate_label(label: str, n_qubits: int | None = None) -> str:
    if not label or any(c not in ALL_TAGS for c in label):
        raise LabelError(f"invalid operator label {label!r}")
    if n_qubits is not None and len(label) != n_qubits:
        raise LabelError(f"label {label!r} does not act on {n_qubits} qubit(s)")
    return label


def parse_combination(label: str) -> list[tuple[float, str]]:
    """Split a label such as ``0.3*YX+0.7*ZI`` into ``[(0.3, "YX"), (0.7, "ZI")]``.

    A plain label ``YX`` gives ``[(1.0, "YX")]``.  Tag characters ``+``/``-``
    are unambiguous because every coefficient is followed by ``*``.
    """
    if "*" not in label:
        return [(1.0, validate_label(label))]
    parts = []
    pos = 0
    while pos < len(label):
        m = _COMBO_TERM.match(label, pos)
        if m is None:
            raise LabelError(f"cannot parse operator combination {label!r}")
        coeff = float(m.group(1))
        pos = m.end()
        end = pos
        while end < len(label) and label[end] in ALL_TAGS:
            end += 1
        # a trailing '+'/'-' belongs to the next coefficient when one follows
        while end > pos and label[end - 1] in "+-" and _COMBO_TERM.match(label, end - 1):
            end -= 1
        parts.append((coeff, validate_label(label[pos:end])))
        pos = end
    if len({len(lab) for _, lab in parts}) != 1:
        raise LabelError(f"mixed qubit counts in {label!r}")
    return parts


def label_qubits(label: str) -> int:
    return len(parse_combination(label)[0][1])


@lru_cache(maxsize=None)
def _operator(label: str) -> np.ndarray:
    mat = None
    for coeff, lab in parse_combination(label):
        term = _SINGLE[lab[0]]
        for tag in lab[1:]:
            term = np.kron(term, _SINGLE[tag])
        mat = coeff * term if mat is None else mat + coeff * term
    mat.setflags(write=False)
    return mat


def operator(label: str) -> np.ndarray:
    """Matrix of a (possibly combined) operator label; returned read-only."""
    return _operator(label)


def is_hermitian_label(label: str) -> bool:
    return all(c in PAULI_TAGS for _, lab in parse_combination(label) for c in lab)


def _check_size(label: str, n_qubits: int) -> None:
    if label_qubits(label) != n_qubits:
        raise LabelError(f"label {label!r} does not act on {n_qubits} qubit(s)")


@lru_cache(maxsize=None)
def coherent_superop(label: str, n_qubits: int) -> np.ndarray:
    """Generator of ``rho -> -i[h, rho]`` for the Pauli string ``h``."""
    _check_size(label, n_qubits)
    if not is_hermitian_label(label):
        raise InvalidCoherentLabel(f"coherent label {label!r} must use only I, X, Y, Z")
    h = operator(label)
    eye = np.eye(h.shape[0])
    sup = -1j * (np.kron(eye, h) - np.kron(h.T, eye))
    sup.setflags(write=False)
    return sup


@lru_cache(maxsize=None)
def dissipative_superop(label: str, n_qubits: int) -> np.ndarray:
    """Generator of ``rho -> L rho L^dag - {L^dag L, rho}/2``."""
    _check_size(label, n_qubits)
    L = operator(label)
    LdL = L.conj().T @ L
    eye = np.eye(L.shape[0])
    sup = np.kron(L.conj(), L) - 0.5 * (np.kron(eye, LdL) + np.kron(LdL.T, eye))
    sup.setflags(write=False)
    return sup


def term_superop(kind: str, label: str, n_qubits: int) -> np.ndarray:
    if kind == COHERENT:
        return coherent_superop(label, n_qubits)
    if kind == DISSIPATIVE:
        return dissipative_superop(label, n_qubits)
    raise ValueError(f"unknown term kind {kind!r}")


def _terms_of(model) -> Iterable:
    return model.terms if hasattr(model, "terms") else model


def assemble_liouvillian(model, n_qubits: int | None = None) -> np.ndarray:
    """Sum of rate-weighted generators for every term of ``model``.

    ``model`` is anything exposing ``terms`` (an iterable of objects with
    ``kind``, ``label`` and ``rate``) or such an iterable itself.
    """
    terms = list(_terms_of(model))
    if n_qubits is None:
        n_qubits = getattr(model, "n_qubits", None)
        if n_qubits is None:
            if not terms:
                raise ValueError("n_qubits required for an empty term list")
            n_qubits = label_qubits(terms[0].label)
    dim = 4**n_qubits
    gen = np.zeros((dim, dim), dtype=complex)
    for term in terms:
        if not np.isfinite(term.rate):
            raise NonPhysicalRate(f"rate of {term.label} is not finite")
        if term.kind == DISSIPATIVE and term.rate < 0:
            raise NonPhysicalRate(f"dissipative rate of {term.label} is negative ({term.rate})")
        gen += term.rate * term_superop(term.kind, term.label, n_qubits)
    return gen


def vec(rho: np.ndarray) -> np.ndarray:
    return rho.flatten(order="F")


def unvec(v: np.ndarray) -> np.ndarray:
    d = int(round(np.sqrt(v.size)))
    return v.reshape((d, d), order="F")


def pure_state(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    norm = np.linalg.norm(psi)
    if not np.isclose(norm, 1.0, atol=1e-10):
        raise InvalidState(f"state vector has norm {norm}")
    return np.outer(psi, psi.conj())


def basis_state(bits: str) -> np.ndarray:
    """Density matrix of the computational basis state ``|bits>``."""
    psi = np.zeros(2 ** len(bits), dtype=complex)
    psi[int(bits, 2)] = 1.0
    return np.outer(psi, psi)


def check_density_matrix(rho: np.ndarray, atol: float = POSITIVITY_TOL) -> None:
    """Raise :class:`InvalidState` unless ``rho`` is Hermitian, unit trace and PSD."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise InvalidState(f"density matrix must be square, got shape {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > HERMITIAN_TOL:
        raise InvalidState("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > TRACE_TOL:
        raise InvalidState(f"density matrix trace is {np.trace(rho)}")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -atol:
        raise InvalidState("density matrix is not positive semidefinite")


def evolve(rho0: np.ndarray, model, t: float) -> np.ndarray:
    """State at time ``t`` under the Lindblad generator of ``model``."""
    if t < 0:
        raise NegativeTime(f"evolution time must be non-negative, got {t}")
    rho0 = np.asarray(rho0, dtype=complex)
    n_qubits = int(np.log2(rho0.shape[0]))
    gen = assemble_liouvillian(model, n_qubits)
    if t == 0:
        return rho0.copy()
    rho = unvec(scipy.linalg.expm(gen * t) @ vec(rho0))
    return 0.5 * (rho + rho.conj().T)


def check_unitary(U: np.ndarray) -> None:
    U = np.asarray(U)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        raise InvalidBasis(f"basis matrix must be square, got shape {U.shape}")
    if np.max(np.abs(U @ U.conj().T - np.eye(U.shape[0]))) > UNITARY_TOL:
        raise InvalidBasis("basis matrix is not unitary")


def outcome_probabilities(rho: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Computational-basis outcome distribution after rotating ``rho`` by ``U``.

    Index ``j`` reads its most significant bit as qubit 0's outcome.
    """
    check_unitary(U)
    probs = np.real(np.einsum("ji,ik,jk->j", U, rho, U.conj()))
    probs = np.clip(probs, 0.0, None)
    return probs / probs.sum()


# Real Pauli-transfer representation used by the particle kernels.


@lru_cache(maxsize=None)
def pauli_labels(n_qubits: int) -> tuple[str, ...]:
    from itertools import product

    return tuple("".join(p) for p in product(PAULI_TAGS, repeat=n_qubits))


@lru_cache(maxsize=None)
def _pauli_frame(n_qubits: int) -> np.ndarray:
    # columns are vec(P_a) for every Pauli string P_a
    return np.stack([vec(operator(lab)) for lab in pauli_labels(n_qubits)], axis=1)


def pauli_vector(rho: np.ndarray) -> np.ndarray:
    """Coefficients ``tr(P_a rho)``; ``rho = sum_a r_a P_a / d``."""
    n_qubits = int(np.log2(rho.shape[0]))
    return np.real(_pauli_frame(n_qubits).conj().T @ vec(rho))


@lru_cache(maxsize=None)
def pauli_generator(kind: str, label: str, n_qubits: int) -> np.ndarray:
    """Real matrix of one term's generator acting on Pauli coefficient vectors."""
    T = _pauli_frame(n_qubits)
    R = T.conj().T @ term_superop(kind, label, n_qubits) @ T / 2**n_qubits
    R = np.ascontiguousarray(R.real)
    R.setflags(write=False)
    return R


def measurement_map(U: np.ndarray) -> np.ndarray:
    """Matrix ``M`` with ``probs = M @ pauli_vector(rho)`` for basis ``U``."""
    d = U.shape[0]
    n_qubits = int(np.log2(d))
    cols = [np.real(np.einsum("ji,ik,jk->j", U, operator(lab), U.conj())) for lab in pauli_labels(n_qubits)]
    return np.stack(cols, axis=1) / d
