import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from equipair.arrays import Grid, Kronecker, RandomUniform, SqrtFrac, TriangularArray
from equipair.geometry import Ball, Box, FlatTorus, UnitAreaSphere, Window
from equipair.localstats import (
    SUBPOISSON_C,
    LocalCounts,
    StarDiscrepancy,
    calibrate_subpoisson_constant,
    empirical_vs_sigma,
    find_poisson_scale,
    lemma4_check_torus,
    lemma4_rhs_torus,
    mean_functional,
    mu_x,
    star_discrepancy_1d,
    tolerance_schedule,
    variance_functional,
    verify_poisson,
    verify_theorem_forward,
)
from equipair.scaling import FrameField, SigmaMeasure, normalize_frame

T1, T2 = FlatTorus.cubic(1), FlatTorus.cubic(2)


def direct_star_1d(x, n_b=20001):
    """sup over anchored [0, b) on a fine b grid plus the points and their right limits."""
    x = np.sort(np.asarray(x, float))
    b = np.unique(np.concatenate([np.linspace(0, 1, n_b), x, np.nextafter(x, 2)]))
    counts = np.searchsorted(x, b, side="left")
    return float(np.abs(counts / len(x) - b).max())


def direct_mu(points, M, r, x, torus=None):
    """Brute-force lattice-summed count with explicit shifts."""
    X = np.atleast_2d(np.asarray(points, float).reshape(len(points), -1))
    d = X.shape[1]
    shifts = [np.zeros(d)]
    if torus is not None:
        import itertools

        shifts = [np.array(m, float) for m in itertools.product(range(-3, 4), repeat=d)]
    c = 0
    for m in shifts:
        Y = M ** (1 / d) * (X + m - x)
        c += int(np.count_nonzero((Y**2).sum(1) < r * r))
    return M / len(X) * c


class TestMuX:
    def test_grid_example(self):
        assert mu_x(np.arange(4) / 4, 4, Window.box([[-0.5, 0.5]]), 0.1, space=Box.unit(1)) == 1.0

    def test_empty_window(self):
        assert mu_x(np.arange(4) / 4, 4, 0.0, 0.1) == 0.0
        assert mu_x(np.arange(4) / 4, 4, Window.box([[0.2, 0.2]]), 0.1) == 0.0

    def test_far_location(self):
        X = np.array([[0.1, 0.1], [0.2, 0.15]])
        assert mu_x(X, 100, 0.5, [0.9, 0.9], space=Box.unit(2)) == 0.0

    def test_batch_shape(self):
        v = mu_x(T2.sample_uniform(50, 0), 10, 0.4, T2.sample_uniform(7, 1), space=T2)
        assert v.shape == (7,)
        assert isinstance(mu_x(T2.sample_uniform(50, 0), 10, 0.4, [0.5, 0.5], space=T2), float)

    @pytest.mark.parametrize("engine", ["cells", "brute"])
    def test_torus_matches_direct_count(self, engine):
        X = T2.sample_uniform(300, 3)
        Q = T2.sample_uniform(40, 4)
        got = mu_x(X, 30, 0.45, Q, space=T2, engine=engine)
        want = [direct_mu(X, 30, 0.45, q, torus=T2) for q in Q]
        assert np.allclose(got, want, rtol=0, atol=1e-12)

    def test_lattice_sum_regime(self):
        # window wider than the circle: a point is counted once per image
        got = mu_x([0.3], 1, 1.7, 0.3, space=T1)
        assert got == direct_mu([0.3], 1, 1.7, 0.3, torus=T1) == 3.0

    def test_engines_agree_with_frame(self):
        F = FrameField.conformal("1 + x1", 2)
        X = Box.unit(2).sample_uniform(500, 0)
        Q = Box.unit(2).sample_uniform(200, 1)
        D = Window.box([[-0.3, 0.5], [-0.2, 0.2]])
        a = mu_x(X, 50, D, Q, frame=F, space=Box.unit(2), engine="cells")
        b = mu_x(X, 50, D, Q, frame=F, space=Box.unit(2), engine="brute")
        assert np.array_equal(a, b)

    def test_sphere_not_supported(self):
        with pytest.raises(NotImplementedError):
            mu_x(UnitAreaSphere(2).sample_uniform(5, 0), 5, 0.5, [0, 0, 0.28], space=UnitAreaSphere(2))


class TestMeanAndVariance:
    @settings(max_examples=10)
    @given(st.integers(1, 400), st.integers(0, 10**6), st.floats(0.05, 0.6), st.sampled_from([1, 2]))
    def test_mean_identity_on_torus(self, n, seed, r, d):
        T = FlatTorus.cubic(d)
        # clumped rows are as valid as spread ones
        X = (0.1 * T.sample_uniform(n, seed)) % 1.0
        M = max(1.0, n / 3)
        est = mean_functional(X, M, r, space=T, n_mc=5000, seed=seed)
        vol = Window.ball(r, d).volume()
        assert abs(est.value - vol) <= 4 * est.stderr + 1e-12

    def test_single_atom_closed_form(self):
        # mu = M on a set of measure vol/M, 0 elsewhere: variance = M vol - vol^2
        M, r = 20, 0.3
        vol = Window.ball(r, 2).volume()
        est = variance_functional([[0.4, 0.7]], M, r, space=T2, n_mc=100_000, seed=1)
        assert abs(est.value - (M * vol - vol**2)) <= 4 * est.stderr
        rhs, rho_f, self_images = lemma4_rhs_torus([[0.4, 0.7]], T2, M, r)
        assert rho_f == 0.0 and self_images == 0.0
        assert rhs == pytest.approx(M * vol - vol**2, rel=1e-14)

    def test_empty_window_is_exactly_zero(self):
        est = variance_functional(T2.sample_uniform(30, 0), 10, 0.0, space=T2)
        assert est.value == 0.0 and est.stderr == 0.0

    def test_small_scale_poissonization(self):
        X = T2.sample_uniform(20_000, 5)
        vals = [variance_functional(X, M, 0.5, space=T2, n_mc=20_000, seed=2).value
                for M in (1000, 100, 10)]
        assert vals[0] > vals[1] > vals[2]
        assert vals[2] < 2e-3

    def test_relabeling_invariance(self):
        X = T2.sample_uniform(400, 6)
        perm = np.random.default_rng(0).permutation(400)
        a = variance_functional(X, 40, 0.3, space=T2, n_mc=5000, seed=3)
        b = variance_functional(X[perm], 40, 0.3, space=T2, n_mc=5000, seed=3)
        assert a.value == b.value

    @given(st.floats(0, 2 * math.pi))
    @settings(max_examples=10)
    def test_rotation_of_constant_frame(self, angle):
        A = np.array([[1.2, 0.3], [-0.1, 0.9]])
        Q = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
        X = Box.unit(2).sample_uniform(300, 7)
        a = variance_functional(X, 30, 0.4, space=Box.unit(2), frame=FrameField.constant(A),
                                n_mc=4000, seed=4)
        b = variance_functional(X, 30, 0.4, space=Box.unit(2), frame=FrameField.constant(Q @ A),
                                n_mc=4000, seed=4)
        # identical locations; only a pair on the window boundary could flip under rounding
        assert a.value == pytest.approx(b.value, rel=1e-2)

    def test_n_mc_minimum(self):
        with pytest.raises(ValueError):
            variance_functional(T2.sample_uniform(10, 0), 5, 0.3, space=T2, n_mc=999)

    def test_euclidean_mean_with_density(self):
        F = normalize_frame(FrameField.conformal("1 + x1", 2), Box.unit(2))
        sigma = SigmaMeasure(F, Box.unit(2))
        X = sigma.sample(20_000, 0)
        est = mean_functional(X, 200, 0.5, sigma=sigma, n_mc=20_000, seed=5)
        # boundary losses are o(1); the interior identity gives vol D
        assert est.value == pytest.approx(Window.ball(0.5, 2).volume(), rel=0.05)

    def test_deterministic_blocks(self):
        X = T2.sample_uniform(200, 0)
        a = variance_functional(X, 20, 0.3, space=T2, n_mc=3000, seed=9)
        b = variance_functional(X, 20, 0.3, space=T2, n_mc=3000, seed=9)
        assert a == b


class TestTorusVarianceIdentity:
    @pytest.mark.parametrize("d,N,M,r,seed", [(2, 500, 50, 0.3, 0), (1, 300, 300, 0.4, 1),
                                              (2, 800, 800, 0.5, 2), (1, 1000, 25, 0.1, 3)])
    def test_identity(self, d, N, M, r, seed):
        T = FlatTorus.cubic(d)
        rep = lemma4_check_torus(T.sample_uniform(N, seed), T, M, r, n_mc=50_000, seed=seed)
        assert rep.passed, rep
        assert rep.variance_estimate.value >= 0 and rep.variance_estimate.stderr > 0

    def test_self_images_needed(self):
        # one point, window wider than the circle: the point overlaps its own translates
        rep = lemma4_check_torus([[0.2]], T1, 1, 0.6, n_mc=50_000, seed=0)
        assert rep.self_images > 0
        assert rep.passed, rep

    def test_skewed_lattice(self):
        T = FlatTorus([[1.0, 0.0], [0.45, 1.0]])
        rep = lemma4_check_torus(T.sample_uniform(400, 5), T, 40, 0.35, n_mc=50_000, seed=5)
        assert rep.passed, rep

    def test_rhs_deterministic_across_threads(self):
        import numba

        X = T2.sample_uniform(2000, 1)
        a = lemma4_rhs_torus(X, T2, 2000, 0.4)
        n = numba.get_num_threads()
        try:
            numba.set_num_threads(1)
            b = lemma4_rhs_torus(X, T2, 2000, 0.4)
        finally:
            numba.set_num_threads(n)
        assert a == b

    def test_box_window_rejected(self):
        with pytest.raises(ValueError):
            lemma4_rhs_torus(T2.sample_uniform(5, 0), T2, 5, Window.box([[0, 1], [0, 1]]))

    def test_report_json(self):
        rep = lemma4_check_torus(T2.sample_uniform(50, 0), T2, 10, 0.2, n_mc=2000)
        out = json.loads(json.dumps(rep.to_json()))
        assert out["label"] == "empirical consistency"
        assert out["variance_estimate"]["n"] == 2000


class TestDiscrepancy:
    def test_grid_quarter(self):
        assert empirical_vs_sigma(np.arange(4) / 4, Box.unit(1)).value == pytest.approx(0.25)

    @pytest.mark.parametrize("N", [4, 8, 16])
    def test_grid_matches_direct_sup(self, N):
        x = np.arange(N) / N
        got = empirical_vs_sigma(x, T1).value
        assert got == pytest.approx(1 / N, abs=1e-15)
        assert got == pytest.approx(direct_star_1d(x), abs=1e-12)

    def test_single_point(self):
        assert empirical_vs_sigma([0.0], Box.unit(1)).value == 1.0

    def test_random_rows(self):
        x = Box.unit(1).sample_uniform(10**6, 0)
        assert empirical_vs_sigma(x, Box.unit(1)).value < 3e-3
        y = Box.unit(2).sample_uniform(10**5, 1)
        rep = empirical_vs_sigma(y, Box.unit(2))
        assert rep.value < 1e-2 and rep.reference == "closed form" and rep.n_tests == 2024

    @given(st.lists(st.floats(0, 1, exclude_max=True), min_size=1, max_size=50))
    def test_exact_1d_against_direct(self, xs):
        v, _ = star_discrepancy_1d(xs, lambda b: b)
        assert 0 <= v <= 1
        assert v >= direct_star_1d(xs) - 1e-12
        assert v <= direct_star_1d(xs, 200_001) + 1e-4

    def test_nonuniform_sigma(self):
        F = normalize_frame(FrameField.conformal("1 + x", 1), Box.unit(1))
        sigma = SigmaMeasure(F, Box.unit(1))
        X = sigma.sample(50_000, 2)
        assert empirical_vs_sigma(X, sigma).value < 0.01
        assert empirical_vs_sigma(X, Box.unit(1)).value > 0.05

    def test_nonuniform_sigma_2d_uses_reference_sample(self):
        F = normalize_frame(FrameField.conformal("1 + x1 + x2", 2), Box.unit(2))
        sigma = SigmaMeasure(F, Box.unit(2))
        rep = empirical_vs_sigma(sigma.sample(20_000, 3), sigma)
        assert rep.reference.startswith("monte carlo")
        assert rep.value < 0.02

    def test_ball_domain(self):
        B = Ball([0.0, 0.0], 1.0)
        rep = empirical_vs_sigma(B.sample_uniform(20_000, 4), B)
        assert rep.value < 0.02

    def test_sphere_caps(self):
        S = UnitAreaSphere(2)
        rep = empirical_vs_sigma(S.sample_uniform(10_000, 0), S)
        assert rep.family == "caps" and rep.value < 0.03
        R = S.radius
        assert empirical_vs_sigma([[0, 0, R]], S).value > 0.9

    def test_torus_uses_lattice_coordinates(self):
        T = FlatTorus([[1.0, 0.0], [0.5, 1.0]])
        U = Box.unit(2).sample_uniform(20_000, 5)
        assert empirical_vs_sigma(U @ T.basis, T).value == pytest.approx(
            empirical_vs_sigma(U, Box.unit(2)).value, abs=1e-15)

    def test_estimator(self):
        est = StarDiscrepancy(space="interval").fit(np.arange(8) / 8)
        assert est.discrepancy_ == pytest.approx(1 / 8)
        assert clone(est).get_params()["space"] == "interval"


class TestVerification:
    def test_tolerance_schedule(self):
        assert tolerance_schedule(1000, 1000) == SUBPOISSON_C
        assert tolerance_schedule(10**6, 10) == 0.02

    def test_calibration_reproduces_constant(self):
        q = calibrate_subpoisson_constant()
        assert q == pytest.approx(0.344, abs=1e-3)
        assert q <= SUBPOISSON_C

    def test_calibration_grows_with_dimension(self):
        q1 = calibrate_subpoisson_constant(trials=50, seed=3)
        q2 = calibrate_subpoisson_constant(trials=50, seed=3, space="torus2")
        assert q2 > 1.5 * q1

    def test_grid_forward_consistent_but_not_poisson(self):
        arr = TriangularArray(Grid(), [100, 1000, 10_000], space=T1)
        fwd = verify_theorem_forward(arr)
        assert fwd.consistent, fwd.render()
        pois = verify_poisson(arr)
        assert not pois.consistent
        assert pois.rows[-1].excess == pytest.approx(0.95 * 2 - 2 * math.floor(0.95) + 0.05, abs=0.2)

    def test_kronecker_not_poisson(self):
        arr = TriangularArray(Kronecker("sqrt2"), [100, 1000, 10_000], space=T1)
        table = verify_poisson(arr)
        assert not table.consistent
        assert table.violation is not None and table.violation["excess"] >= 0.3
        assert "violation at N=" in table.render()

    def test_random_poisson_consistent(self):
        arr = TriangularArray(RandomUniform("interval", 0), [1000, 4000, 16_000])
        assert verify_poisson(arr).consistent
        # in two dimensions the one-dimensional constant is too tight; calibrate it there
        arr = TriangularArray(RandomUniform("torus2", 0), [1000, 4000, 16_000])
        C2 = calibrate_subpoisson_constant(trials=100, space="torus2")
        assert verify_poisson(arr, C=C2).consistent

    def test_forward_deterministic(self):
        arr = TriangularArray(SqrtFrac(True), [200, 400, 800])
        a = verify_theorem_forward(arr, seed=3).to_json()
        b = verify_theorem_forward(arr, seed=3).to_json()
        assert a == b
        assert json.loads(json.dumps(a))["label"] == "empirical consistency"

    def test_discrepancy_must_decrease(self):
        # the same row three times: no refinement, so the verdict must flag it
        arr = TriangularArray(Grid(), [64, 65, 66], space=T1)
        table = verify_theorem_forward(arr)
        assert table.rows[1].discrepancy < table.rows[0].discrepancy
        arr = TriangularArray(RandomUniform("interval", 0), [1000, 1001, 1002])
        table = verify_theorem_forward(arr)
        assert not table.consistent
        assert any("did not decrease" in r for r in table.reasons)

    def test_row_count_and_type(self):
        with pytest.raises(ValueError):
            verify_theorem_forward(TriangularArray(Grid(), [4, 8], space=T1))
        with pytest.raises(TypeError):
            verify_theorem_forward([np.zeros(3)] * 4)

    def test_find_poisson_scale_grid(self):
        arr = TriangularArray(Grid(), [10_000], space=T1)
        best, table = find_poisson_scale(arr, [0.5, 1.0])
        assert best == 0.5
        assert [row["passed"] for row in table] == [True, False]

    def test_find_poisson_scale_random(self):
        # 1-D: the noise at r = 5 is about sqrt(20 / N) = 0.03
        arr = TriangularArray(RandomUniform("interval", 1), [20_000])
        best, _ = find_poisson_scale(arr, [1.0], tol=0.1)
        assert best == 1.0

    def test_find_poisson_scale_empty_and_invalid(self):
        arr = TriangularArray(Grid(), [100], space=T1)
        assert find_poisson_scale(arr, []) == (None, [])
        with pytest.raises(ValueError):
            find_poisson_scale(arr, [0.5, 1.2])


class TestLocalCountsEstimator:
    def test_fit_transform(self):
        X = T2.sample_uniform(200, 0)
        Q = T2.sample_uniform(10, 1)
        est = LocalCounts(window=0.3, scale=20, space=T2)
        out = est.fit(X).transform(Q)
        assert out.shape == (10, 1)
        assert np.allclose(out.ravel(), mu_x(X, 20, 0.3, Q, space=T2))

    def test_params_and_clone(self):
        est = LocalCounts(window=0.5, scale=3.0)
        assert clone(est).get_params() == est.get_params()

    def test_unfitted(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            LocalCounts().transform([[0.1]])
