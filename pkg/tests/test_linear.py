import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from sketchattack.composable import brute_force_axioms, peel
from sketchattack.core import KeySet
from sketchattack.linear import (QQ, ChangeOfBasis, Echelon, GreedyBasisSketchMap, PrimeField,
                                 PrimeFieldMatrix, QueryVector, RealAuxParams, RealMatrix,
                                 SpanSketchMap, aux_fp, aux_real_large, aux_real_small,
                                 basis_pool, exp_mantissas, gamma0_estimate, greedy_basis,
                                 is_prime, linear_pool_cap, load_matrix, log_magnitude_ratio,
                                 rank_mod_p, save_matrix, shifted_thresholds_fp, sketch_vector,
                                 verify_linear_pool)
from sketchattack.rng import RngHandle


def lex_first_basis_oracle(cols, field, dim):
    """Exhaustive: the lexicographically smallest index tuple among all bases of the column span."""
    full = Echelon(field, dim)
    for c in cols:
        full.add(c)
    r = full.rank
    for combo in itertools.combinations(range(len(cols)), r):
        e = Echelon(field, dim)
        if all(e.add(cols[i]) for i in combo):
            return list(combo)
    return []


def test_miller_rabin():
    primes = [2, 3, 5, 257, 65537, 2 ** 61 - 1, 18446744073709551557]
    composites = [1, 4, 561, 1105, 3215031751, 2 ** 61 + 1, 18446744073709551617]
    assert all(is_prime(p) for p in primes)
    assert not any(is_prime(c) for c in composites)
    with pytest.raises(ValueError):
        PrimeFieldMatrix(256, [[1]])


def test_sketch_vector_hand_example():
    A = PrimeFieldMatrix(5, [[1, 2, 3], [4, 0, 1]])
    assert sketch_vector(A, QueryVector.from_dense([1, 1, 0], p=5)) == (3, 4)
    assert sketch_vector(A, QueryVector.from_dense([0, 0, 0], p=5)) == (0, 0)
    with pytest.raises(ValueError):
        sketch_vector(A, QueryVector.from_dense([1, 1], p=5))


def test_fp_linearity():
    gen = np.random.default_rng(0)
    A = PrimeFieldMatrix.random(257, 4, 30, gen)
    for _ in range(1000):
        u = gen.integers(0, 257, 30)
        v = gen.integers(0, 257, 30)
        su = sketch_vector(A, QueryVector.from_dense(u, 257))
        sv = sketch_vector(A, QueryVector.from_dense(v, 257))
        suv = sketch_vector(A, QueryVector.from_dense((u + v) % 257, 257))
        assert suv == tuple((a + b) % 257 for a, b in zip(su, sv))


def test_real_sketch_is_exact():
    A = RealMatrix([[Fraction(1, 3), 2], [0, Fraction(-5, 7)]])
    v = QueryVector.from_dense([Fraction(3, 2), Fraction(1, 10)])
    assert sketch_vector(A, v) == (Fraction(1, 2) + Fraction(1, 5), Fraction(-1, 14))


def test_matrix_text_round_trip(tmp_path):
    A = PrimeFieldMatrix.random(257, 3, 7, RngHandle(1))
    save_matrix(A, tmp_path / "a.txt")
    B = load_matrix(tmp_path / "a.txt")
    assert B.p == 257 and np.array_equal(A.entries, B.entries)
    R = RealMatrix([[Fraction(1, 2), 3], [Fraction(-7, 9), 0]])
    save_matrix(R, tmp_path / "r.txt")
    assert (tmp_path / "r.txt").read_text().splitlines()[0] == "0 2 2"
    assert load_matrix(tmp_path / "r.txt").entries.tolist() == R.entries.tolist()


def test_greedy_basis_small_cases():
    e = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]
    assert greedy_basis(e) == [0, 1, 2]
    assert greedy_basis([e[0], e[0], e[1]]) == [0, 2]


def test_greedy_basis_matches_exhaustive_oracle():
    gen = np.random.default_rng(4)
    F = PrimeField(7)
    for _ in range(30):
        A = PrimeFieldMatrix(7, gen.integers(0, 7, (4, 8)) * (gen.random((4, 8)) < 0.5))
        cols = [A.column(i) for i in range(8)]
        assert greedy_basis(cols, F, 4) == lex_first_basis_oracle(cols, F, 4)


def test_greedy_basis_ignores_appended_dependent_columns():
    gen = np.random.default_rng(5)
    A = gen.integers(-3, 4, (3, 6))
    cols = [list(map(int, A[:, i])) for i in range(6)]
    extra = [[int(a + b) for a, b in zip(cols[0], cols[1])], [0, 0, 0]]
    assert greedy_basis(cols + extra) == greedy_basis(cols)


def test_rank_mod_p_agrees_with_echelon():
    gen = np.random.default_rng(6)
    for _ in range(30):
        M = gen.integers(0, 11, (5, 9)) * (gen.random((5, 9)) < 0.4)
        e = Echelon(PrimeField(11), 5)
        for c in M.T:
            e.add(list(c))
        assert rank_mod_p(M, 11) == e.rank


def test_change_of_basis_identities():
    gen = np.random.default_rng(7)
    for _ in range(20):
        A = PrimeFieldMatrix.random(257, 4, 10, gen)
        basis = greedy_basis([A.column(i) for i in gen.permutation(10)], A.field, 4)
        fb = ChangeOfBasis.from_basis(A, [int(i) for i in basis])
        assert fb.check(A)
    R = RealMatrix.random_integer(3, 6, 5, gen)
    fb = ChangeOfBasis.from_basis(R, greedy_basis([R.column(i) for i in range(6)]))
    assert fb.check(R)


def test_change_of_basis_completes_low_rank():
    R = RealMatrix([[1, 2, 0], [2, 4, 0], [0, 0, 0]])
    fb = ChangeOfBasis.from_basis(R, [0])
    assert fb.check(R)
    with pytest.raises(ValueError):
        ChangeOfBasis.from_basis(R, [0, 1])


def test_gamma0_examples():
    assert gamma0_estimate(RealMatrix([[1, 0, 0], [0, 1, 0], [0, 0, 1]]), 0, RngHandle(0)) == 1
    # the only basis is both columns; F_B = A^-1 so F_B A = I
    assert gamma0_estimate(RealMatrix([[1, 2], [0, 1]]), 0, RngHandle(0)) == 1
    A = RealMatrix([[1, 1, 3], [0, 2, 1]])
    # oracle: enumerate the three 2-column bases by hand-rolled inverses
    best = Fraction(0)
    cols = [[Fraction(x) for x in A.column(i)] for i in range(3)]
    for i, j in itertools.combinations(range(3), 2):
        (a, c), (b, d) = cols[i], cols[j]
        det = a * d - b * c
        inv = [[d / det, -b / det], [-c / det, a / det]]
        for col in cols:
            best = max(best, *(abs(inv[r][0] * col[0] + inv[r][1] * col[1]) for r in range(2)))
    assert gamma0_estimate(A, 0, RngHandle(0)) == best
    assert gamma0_estimate(A.scaled(10), 0, RngHandle(0)) == best


def test_span_maps_pass_axioms():
    gen = np.random.default_rng(8)
    A = PrimeFieldMatrix(5, gen.integers(0, 5, (3, 10)))
    for smap in (SpanSketchMap(A), GreedyBasisSketchMap(A)):
        rep = brute_force_axioms(smap)
        assert rep.passed, rep.summary()


def test_span_over_rationals_passes_axioms():
    R = RealMatrix.random_integer(2, 8, 2, RngHandle(9))
    assert brute_force_axioms(SpanSketchMap(R)).passed


def test_basis_pool_identity_padded():
    ent = np.zeros((3, 12), dtype=np.int64)
    ent[:, :3] = np.eye(3, dtype=np.int64)
    pool = basis_pool(PrimeFieldMatrix(257, ent), 0.1, 0.01)
    assert pool.keys.tolist() == [0, 1, 2]


def test_basis_pool_size_and_structure():
    A = PrimeFieldMatrix.random(257, 8, 2048, RngHandle(10))
    pool = basis_pool(A, 0.1, 0.01)
    assert len(pool) <= linear_pool_cap(8, 0.1, 0.01) == 536
    gpool = basis_pool(A, 0.1, 0.01, kind="greedy-basis")
    first = peel(SpanSketchMap(A), max_layers=1).layers[0]
    assert first.issubset(gpool.keys)


def test_linear_pool_trivial_and_empty():
    A = PrimeFieldMatrix.random(257, 4, 200, RngHandle(11))
    everything = KeySet(range(200), 200)
    nothing = KeySet((), 200)
    rep = verify_linear_pool(A, everything, "fp", [nothing], [0.3], 100, RngHandle(1))
    assert rep.max_rate == 0
    rep = verify_linear_pool(A, nothing, "fp", [nothing], [0.3], 100, RngHandle(2))
    assert rep.max_rate == 1.0


def test_real_large_pool_greedy_containment():
    R = RealMatrix.random_integer(3, 120, 4, RngHandle(12))
    pool = basis_pool(R, 0.1, 0.01, kind="greedy-basis")
    rep = verify_linear_pool(R, pool, "real-large", [KeySet((), 120)], [0.1, 0.5], 300, RngHandle(3))
    assert rep.ok


def test_aux_fp_properties():
    gen = RngHandle(13).generator()
    n, p = 500, 7
    M = KeySet(range(0, 40), n)
    rest = KeySet(range(40, 300), n)
    l0 = [aux_fp(M, rest, p, gen).l0 for _ in range(2000)]
    size = 300
    mean = size * (p - 1) / p
    sd = math.sqrt(size * (p - 1) / p ** 2)
    assert abs(np.mean(l0) - mean) < 3 * sd / math.sqrt(2000)
    bits = np.concatenate([aux_fp(KeySet((), 50), KeySet(range(50), 50), 2, gen).values
                           for _ in range(200)])
    assert abs(bits.mean() - 0.5) < 4 * 0.5 / math.sqrt(bits.size)
    empty = aux_fp(KeySet((), 10), KeySet((), 10), 5, gen)
    assert empty.l0 == 0 and len(empty.indices) == 0
    v = aux_fp(KeySet((), 50), KeySet(range(50), 50), 2, gen)
    assert len(v.zeros) == 50 - v.l0


def test_shifted_thresholds():
    assert shifted_thresholds_fp(300, 500, 2, 2000) == (580, 1020)
    big = 2 ** 61 - 1
    assert shifted_thresholds_fp(300, 500, big, 2000) == (280, 520)
    with pytest.raises(ValueError):
        shifted_thresholds_fp(300, 320, 257, 2000, c=0.2)
    with pytest.raises(ValueError):
        shifted_thresholds_fp(300, 320, 257, 2000, c=-0.2)


def test_exp_mantissas_are_exponential():
    m = exp_mantissas(20000, RngHandle(14))
    x = np.array([float(v) / 2 ** 128 for v in m])
    assert min(m) >= 1
    assert stats.kstest(x, "expon").pvalue > 0.001


def test_aux_real_large_means_and_ratio():
    n = 12
    params = RealAuxParams.large(n, 2, 1.0, 0.1)
    gen = RngHandle(15).generator()
    idx = 3
    draws = []
    for _ in range(2000):
        v = aux_real_large(KeySet((), n), KeySet([idx, 7], n), params, gen)
        draws.append(float(v.value(idx) * params.beta ** (idx + 1)))
        assert all(x > 0 for x in v.values)
    assert abs(np.mean(draws) - 1) < 3 / math.sqrt(2000)
    v = aux_real_large(KeySet((), n), KeySet(range(n), n), params, gen)
    # scales span beta^-1 .. beta^-n plus exponential spread
    assert log_magnitude_ratio(v) <= n * math.log(params.beta) + 2 * math.log(n) + 10


def test_aux_real_small_structure():
    n = 400
    params = RealAuxParams.small(n, 4, 1.0, 0.01, 0.1)
    gen = RngHandle(16).generator()
    U = KeySet.from_mask(gen.random(n) < params.q0)
    v, H = aux_real_small(KeySet((), n), U, params.q0, params, gen)
    assert H == U
    with pytest.raises(ValueError):
        aux_real_small(KeySet((), n), U, 0.01, params, gen)
    U = KeySet.from_mask(gen.random(n) < 0.4)
    M = KeySet(range(10), n)
    v, H = aux_real_small(M, U, 0.4, params, gen)
    units = sum(1 for x in v.values if x == v.denominator)
    assert units == len(U - H - M)
    assert log_magnitude_ratio(v) <= 3 * math.log(params.beta * n)


def test_aux_real_small_thinning_is_binomial():
    n, q = 300, 0.4
    params = RealAuxParams.small(n, 4, 1.0, 0.01, 0.1)
    gen = RngHandle(17).generator()
    U = KeySet(range(120), n)
    counts = np.array([len(U - aux_real_small(KeySet((), n), U, q, params, gen)[1])
                       for _ in range(3000)])
    rho = 1 - params.q0 / q
    support = np.arange(75, 110)
    observed = np.array([(counts == c).sum() for c in support])
    expected = stats.binom.pmf(support, 120, rho) * counts.size
    tail = counts.size - observed.sum()
    exp_tail = counts.size - expected.sum()
    chi2 = ((observed - expected) ** 2 / expected).sum() + (tail - exp_tail) ** 2 / exp_tail
    assert stats.chi2.sf(chi2, support.size) > 0.001
