import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from equipair.arrays import (
    BallRescaled,
    Grid,
    Kronecker,
    PolyFrac,
    PrimeFrac,
    RandomUniform,
    RowSchedule,
    SqrtFrac,
    TriangularArray,
    family_from_json,
    frac_dyadic,
    generate_row,
    prime_sieve,
    resolve_alpha,
)
from equipair.geometry import Ball, FlatTorus


def trial_division_count(n):
    return sum(1 for k in range(2, n + 1) if all(k % p for p in range(2, math.isqrt(k) + 1)))


def exact_frac(m, alpha):
    # fractional part of m * alpha for the double alpha, as an exact rational
    q = Fraction(m) * Fraction(alpha)
    return q - math.floor(q)


class TestExamples:
    def test_grid(self):
        assert np.array_equal(Grid().row(4).ravel(), [0, 0.25, 0.5, 0.75])

    def test_kronecker(self):
        x = Kronecker("sqrt2").terms(3).ravel()
        assert np.allclose(x, [0.414213562373, 0.828427124746, 0.242640687119], atol=1e-12)

    def test_sqrt(self):
        x = SqrtFrac().terms(4).ravel()
        assert np.allclose(x, [0.0, 0.414213562373, 0.732050807569, 0.0], atol=1e-12)

    def test_prime_sieve(self):
        assert prime_sieve(10).tolist() == [2, 3, 5, 7]
        assert prime_sieve(2).tolist() == [2]
        assert len(prime_sieve(10**6)) == 78498

    def test_sieve_against_trial_division(self):
        for n in (2, 3, 100, 997, 2000):
            assert len(prime_sieve(n)) == trial_division_count(n)

    def test_sieve_limit_too_small(self):
        with pytest.raises(ValueError, match="sieve"):
            PrimeFrac("sqrt2", sieve_limit=10).terms(5)


class TestAlpha:
    def test_tags(self):
        assert resolve_alpha("sqrt2") == math.sqrt(2)
        assert resolve_alpha("golden") == (1 + math.sqrt(5)) / 2
        assert resolve_alpha("pi") == math.pi
        assert resolve_alpha("0.1") == 0.1

    @pytest.mark.parametrize("bad", ["inf", "nan", "seven", float("inf")])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            resolve_alpha(bad)

    def test_k_validation(self):
        for k in (0, -1, 1.5, True):
            with pytest.raises(ValueError):
                PolyFrac(k, "sqrt2")


class TestExactFractionalParts:
    @given(st.integers(0, 2**40), st.floats(-50, 50, allow_nan=False))
    def test_frac_dyadic_is_correctly_rounded(self, m, alpha):
        got = frac_dyadic(np.array([m], dtype=np.int64), alpha)[0]
        want = exact_frac(m, alpha)
        assert 0.0 <= got < 1.0
        assert abs(Fraction(got) - want) <= Fraction(1, 2**53) or want > 1 - Fraction(1, 2**52)

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_polynomial_terms_exact(self, k):
        x = PolyFrac(k, "sqrt2").terms(5000).ravel()
        a = resolve_alpha("sqrt2")
        for j in (1, 2, 17, 999, 4096, 5000):
            assert abs(Fraction(x[j - 1]) - exact_frac(j**k, a)) <= Fraction(1, 2**53)

    def test_large_j_beats_naive_double(self):
        # j^2 alpha near 10^14: a double product loses about 13 digits of the fraction
        j = 10**7
        x = PolyFrac(2, "golden").terms(j)[-1, 0]
        assert abs(Fraction(x) - exact_frac(j * j, resolve_alpha("golden"))) <= Fraction(1, 2**53)

    def test_tiny_alpha_falls_back_to_integers(self):
        a = 2.0**-80 * 3
        x = PolyFrac(2, a).terms(10).ravel()
        assert abs(Fraction(x[9]) - exact_frac(100, a)) <= Fraction(1, 2**60)

    def test_prime_terms(self):
        x = PrimeFrac("pi").terms(6).ravel()
        for p, v in zip([2, 3, 5, 7, 11, 13], x):
            assert abs(Fraction(v) - exact_frac(p, math.pi)) <= Fraction(1, 2**53)


class TestFamilies:
    @pytest.mark.parametrize("family", [Kronecker("golden"), PolyFrac(3, "pi"), SqrtFrac(),
                                        SqrtFrac(skip_squares=True), PrimeFrac("e"),
                                        Kronecker(["sqrt2", "sqrt3"])])
    def test_values_in_unit_interval_and_prefix(self, family):
        a = family.terms(3000)
        b = family.terms(1000)
        assert np.all((a >= 0) & (a < 1))
        assert np.array_equal(a[:1000], b)

    def test_skip_squares_removes_zeros(self):
        x = SqrtFrac(skip_squares=True).terms(100_000).ravel()
        assert np.count_nonzero(x == 0) == 0
        j = np.arange(1, 100_001)
        ns = j + np.floor(0.5 + np.sqrt(j))
        assert not np.any(np.isin(ns, np.arange(1, 400) ** 2))

    def test_random_uniform_prefix_and_seed(self):
        fam = RandomUniform("torus2", seed=3)
        assert np.array_equal(fam.terms(10), fam.terms(30)[:10])
        assert not np.array_equal(fam.terms(10), RandomUniform("torus2", seed=4).terms(10))

    def test_vector_kronecker_dimension(self):
        assert Kronecker(["sqrt2", "sqrt3", "golden"]).terms(7).shape == (7, 3)

    def test_json_round_trip(self):
        for fam in (Kronecker("sqrt2"), PolyFrac(2, "0.3"), SqrtFrac(True), Grid(),
                    PrimeFrac("pi", 1000), RandomUniform("square", 5)):
            again = family_from_json(fam.to_json())
            assert type(again) is type(fam)
            if fam.is_sequence:
                assert np.array_equal(again.terms(20), fam.terms(20))

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            family_from_json({"family": "halton"})


class TestBallRescaled:
    def test_lattice_preset_rows(self):
        fam = BallRescaled([2, 4, 8])
        arr = TriangularArray(fam)
        prev = 0
        for i, X in arr.rows():
            assert len(X) > prev
            prev = len(X)
            assert np.all((X**2).sum(1) < 1)

    def test_row_is_scaled_subset(self):
        A = np.array([[0.1, 0.0], [0.0, 0.5], [1.5, 0.0], [0.3, 0.3]])
        fam = BallRescaled([1.0, 2.0], points=A)
        assert np.allclose(fam.row(3, 0), A[[0, 1, 3]] / 1.0)
        assert np.allclose(fam.row(4, 1), A / 2.0)

    def test_drops_radii_without_new_points(self):
        A = np.array([[0.5], [2.5]])
        with pytest.warns(UserWarning, match="dropped"):
            fam = BallRescaled([1.0, 2.0, 3.0], points=A)
        assert fam.counts == [1, 2]
        assert fam.dropped == [2.0]

    def test_space_is_open_unit_ball(self):
        arr = TriangularArray(BallRescaled([3.0, 6.0]))
        assert arr.space == Ball([0.0, 0.0], 1.0)


class TestScheduleAndArray:
    def test_schedules(self):
        assert RowSchedule.geometric(1000, 10, 3).values == [1000, 10000, 100000]
        assert RowSchedule.powers_of_two(3, 4).values == [8, 16, 32, 64]
        assert RowSchedule.geometric(10, 1.5, 4).values == [10, 15, 23, 34]

    @pytest.mark.parametrize("vals", [[5, 5], [10, 3], [0, 4], []])
    def test_rejects_non_increasing(self, vals):
        with pytest.raises(ValueError):
            RowSchedule.explicit(vals)

    @given(st.integers(1, 500), st.floats(1.01, 4.0), st.integers(1, 12))
    def test_geometric_strictly_increasing(self, n0, g, rows):
        try:
            s = RowSchedule.geometric(n0, g, rows)
        except ValueError:
            # a slow ratio may repeat a ceiling; that must be reported, not hidden
            vals = [math.ceil(n0 * g**i - 1e-9) for i in range(rows)]
            assert any(b <= a for a, b in zip(vals, vals[1:]))
            return
        assert all(b > a for a, b in zip(s.values, s.values[1:]))

    def test_rows_and_prefix(self):
        arr = TriangularArray(SqrtFrac(), RowSchedule.explicit([10, 100, 1000]))
        r0, r2 = generate_row(arr, 0), arr.row(2)
        assert r0.shape == (10, 1) and r2.shape == (1000, 1)
        assert np.array_equal(r0, r2[:10])
        with pytest.raises(IndexError):
            arr.row(3)

    def test_deterministic(self):
        arr = TriangularArray(RandomUniform("disc", 7), [50, 80])
        assert np.array_equal(arr.row(1), arr.row(1))

    def test_grid_on_torus(self):
        arr = TriangularArray(Grid(), [4, 8], space=FlatTorus.cubic(1))
        assert np.array_equal(arr.row(1).ravel(), np.arange(8) / 8)

    def test_schedule_required(self):
        with pytest.raises(ValueError):
            TriangularArray(Kronecker("sqrt2"))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            TriangularArray(Kronecker("sqrt2"), [4], space=FlatTorus.cubic(2))
