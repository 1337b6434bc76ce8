import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oqmla.models import (
    Model, ModelSpecError, NotInSet, Primitive, Term, UnsupportedSize, build_primitive_set,
    chromosome_from_str, chromosome_to_str, decode, encode, format_model_spec, parse_model_spec,
    random_chromosome, reduce_model,
)

BENCH_A = "0.5*C[XI],1.3*C[ZZ],0.2*D[-+],0.3*D[YX]"


@pytest.mark.parametrize("n", [1, 2, 3])
def test_primitive_set_cardinality_formula(n):
    assert len(build_primitive_set(n)) == (4**n - 1) + (6**n - 1)


def test_two_qubit_set_has_fifty():
    assert len(build_primitive_set(2)) == 50


def test_primitive_set_blocks_and_order():
    pset = build_primitive_set(2)
    kinds = [p.kind for p in pset]
    assert kinds == ["coherent"] * 15 + ["dissipative"] * 35
    assert pset[0] == Primitive("IX", "coherent")
    assert pset[15] == Primitive("IX", "dissipative")
    assert len(set(pset)) == len(pset)
    assert all(p.label != "II" for p in pset)


def test_primitive_set_deterministic():
    build_primitive_set.cache_clear()
    first = build_primitive_set(2).primitives
    build_primitive_set.cache_clear()
    assert build_primitive_set(2).primitives == first


@pytest.mark.parametrize("n", [0, 4])
def test_unsupported_size(n):
    with pytest.raises(UnsupportedSize):
        build_primitive_set(n)


def test_encode_empty():
    assert not encode([], build_primitive_set(2)).any()


def test_encode_benchmark_model():
    pset = build_primitive_set(2)
    terms = parse_model_spec(BENCH_A)
    chrom = encode([t.primitive for t in terms], pset)
    assert chrom.sum() == 4
    assert set(decode(chrom, pset)) == {t.primitive for t in terms}


def test_encode_unknown_term():
    with pytest.raises(NotInSet):
        encode([Primitive("+-", "coherent")], build_primitive_set(2))


def test_round_trip_random_chromosomes(rng):
    pset = build_primitive_set(2)
    for _ in range(100):
        chrom = rng.random(len(pset)) < 0.2
        np.testing.assert_array_equal(encode(decode(chrom, pset), pset), chrom)
        np.testing.assert_array_equal(chromosome_from_str(chromosome_to_str(chrom)), chrom)


def test_decode_length_checked():
    with pytest.raises(ValueError):
        decode(np.zeros(10, bool), build_primitive_set(2))


def test_random_chromosome_mean_popcount():
    rng = np.random.default_rng(3)
    counts = [random_chromosome(7, 50, rng).sum() for _ in range(10000)]
    assert abs(np.mean(counts) - 7) < 0.25


def test_random_chromosome_replay():
    a = random_chromosome(7, 50, np.random.default_rng(11))
    b = random_chromosome(7, 50, np.random.default_rng(11))
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("target", [0, 50, -1])
def test_random_chromosome_bounds(target):
    with pytest.raises(ValueError):
        random_chromosome(target, 50, np.random.default_rng(0))


def test_model_invariants():
    pset = build_primitive_set(1)
    chrom = encode([Primitive("X", "coherent"), Primitive("-", "dissipative")], pset)
    with pytest.raises(ValueError):
        Model(pset, chrom, (0.1,))
    with pytest.raises(ValueError):
        Model(pset, chrom, (0.1, -0.2))
    m = Model(pset, chrom, (-0.1, 0.2))
    assert m.size == 2 and m.n_qubits == 1
    assert [t.rate for t in m.terms] == [-0.1, 0.2]
    assert list(m.dissipative_mask) == [False, True]


def test_reduce_keeps_large_rates():
    pset = build_primitive_set(2)
    model = Model.from_terms(parse_model_spec(BENCH_A), pset)
    assert reduce_model(model, [0.01] * 4) == model


def test_reduce_drops_small_rate():
    pset = build_primitive_set(1)
    model = Model.from_terms([Term("X", "coherent", 0.8), Term("-", "dissipative", 0.001)], pset)
    reduced = reduce_model(model, [0.05, 0.05], 1.0)
    assert [str(p) for p in reduced.primitives] == ["C[X]"]
    assert reduced.rates == (0.8,)


def test_reduce_can_empty_model():
    pset = build_primitive_set(1)
    model = Model.from_terms([Term("Z", "coherent", 0.0)], pset)
    assert reduce_model(model, [0.1]).size == 0


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), ratio=st.floats(0.0, 5.0))
def test_reduce_never_grows_and_keeps_rates(seed, ratio):
    rng = np.random.default_rng(seed)
    pset = build_primitive_set(2)
    chrom = rng.random(50) < 0.2
    model = Model.zeros(chrom, pset)
    rates = [rng.random() if p.kind == "dissipative" else rng.normal() for p in model.primitives]
    model = model.with_rates(rates)
    stds = rng.random(model.size)
    reduced = reduce_model(model, stds, ratio)
    assert reduced.size <= model.size
    lookup = {p: r for p, r in zip(model.primitives, model.rates)}
    assert all(lookup[p] == r for p, r in zip(reduced.primitives, reduced.rates))


def test_parse_spec_benchmark():
    terms = parse_model_spec(BENCH_A)
    assert [(t.label, t.kind, t.rate) for t in terms] == [
        ("XI", "coherent", 0.5), ("ZZ", "coherent", 1.3),
        ("-+", "dissipative", 0.2), ("YX", "dissipative", 0.3)]
    assert parse_model_spec(format_model_spec(terms)) == terms


def test_parse_spec_negative_coherent_and_combination():
    terms = parse_model_spec("-0.3*C[ZI],-1.5*C[ZX],0.6*D[0.3*YX+0.7*ZI]")
    assert terms[0].rate == -0.3 and terms[2].label == "0.3*YX+0.7*ZI"


@pytest.mark.parametrize("spec", ["", "0.5*C[+I]", "0.5*Q[XI]", "-0.1*D[X]", "0.1*C[X],0.2*C[XX]", "abc", "0.5*C[XW]"])
def test_parse_spec_errors(spec):
    with pytest.raises(ModelSpecError):
        parse_model_spec(spec)
