import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convexpmf.pmf import (
    Pmf,
    Sample,
    ShapeError,
    TriangularMixture,
    benchmark_pmfs,
    delta,
    empirical_pmf,
    is_convex,
    knots,
    mixture_to_pmf,
    perturbed_triangular,
    pmf_to_mixture,
    sample_from,
    second_differences,
    triangular,
    truncated_poisson,
)
from oracles import mixture_weights_lstsq


def exact_triangular(k):
    return [Fraction(2 * (k - i), k * (k + 1)) for i in range(k)]


class TestPmf:
    def test_trims_trailing_zeros(self):
        p = Pmf([0.5, 0.5, 0.0, 0.0])
        assert p.support_end == 1
        assert p[7] == 0.0

    def test_point_mass(self):
        assert Pmf([1.0]).support_end == 0

    @pytest.mark.parametrize("mass", [[0.5, 0.6], [-0.1, 1.1], [], [np.nan, 1.0]])
    def test_rejects_invalid(self, mass):
        with pytest.raises(ValueError):
            Pmf(mass)

    def test_immutable(self):
        p = Pmf([0.5, 0.5])
        with pytest.raises(ValueError):
            p.mass[0] = 1.0


class TestTriangular:
    def test_point_mass(self):
        assert triangular(1) == Pmf([1.0])

    def test_t6_at_zero(self):
        assert triangular(6)[0] == pytest.approx(6 / 21, abs=1e-15)

    def test_t3(self):
        p = triangular(3)
        np.testing.assert_allclose(p.mass, [3 / 6, 2 / 6, 1 / 6], atol=1e-15)
        assert p.mass.sum() == pytest.approx(1.0, abs=1e-12)
        assert delta(p, 1) == pytest.approx(0.0, abs=1e-15)
        assert delta(p, 3) > 0

    @pytest.mark.parametrize("k", [0, -2, 1.5])
    def test_invalid_k(self, k):
        with pytest.raises(ValueError):
            triangular(k)

    @pytest.mark.parametrize("k", range(1, 51))
    def test_single_knot_at_k(self, k):
        p = triangular(k)
        assert np.all(p.mass >= 0)
        assert p.mass.sum() == pytest.approx(1.0, abs=1e-12)
        ex = exact_triangular(k) + [Fraction(0)] * 3
        for j in range(1, k):
            assert ex[j + 1] - 2 * ex[j] + ex[j - 1] == 0
            assert delta(p, j) == pytest.approx(0.0, abs=1e-14)
        assert delta(p, k) == pytest.approx(2 / (k * (k + 1)), rel=1e-12)


class TestDelta:
    def test_linear_part_of_t6(self):
        assert delta(triangular(6), 3) == pytest.approx(0.0, abs=1e-15)

    def test_past_support(self):
        assert delta(triangular(6), 6) == pytest.approx(1 / 21, abs=1e-15)

    def test_perturbed_kink(self):
        assert delta(benchmark_pmfs()["p1_2"], 2) == pytest.approx(-0.008, abs=1e-12)

    def test_k_zero(self):
        with pytest.raises(ValueError):
            delta(triangular(3), 0)

    def test_vector_input(self):
        assert delta([1.0, 0.0, 1.0], 1) == 2.0
        np.testing.assert_array_equal(second_differences([1.0, 0.0, 1.0]), [2.0, -2.0, 1.0])


class TestKnots:
    def test_mixture_knots(self):
        assert knots(benchmark_pmfs()["p0_2"]) == {2, 3, 5}

    def test_triangular_has_none_inside(self):
        assert knots(triangular(6)) == set()

    def test_uniform_three_points(self):
        # delta at 2 is 0 - 2/3 + 1/3 < 0; the only positive slope change is
        # at 3, beyond support_end
        u = Pmf([1 / 3, 1 / 3, 1 / 3])
        assert delta(u, 2) == pytest.approx(-1 / 3)
        assert delta(u, 3) == pytest.approx(1 / 3)
        assert knots(u) == set()


class TestMixtures:
    def test_point_mass(self):
        assert mixture_to_pmf(TriangularMixture([1.0])) == triangular(1)

    def test_benchmark_mixture(self):
        w = [0, 1 / 6, 1 / 6, 0, 1 / 3, 1 / 3]
        expected = sum(wk * triangular(k + 1).padded(6) for k, wk in enumerate(w))
        np.testing.assert_allclose(mixture_to_pmf(TriangularMixture(w)).mass, expected, atol=1e-15)
        np.testing.assert_allclose(benchmark_pmfs()["p0_2"].mass, expected, atol=1e-15)

    def test_inverse_of_basis(self):
        m = pmf_to_mixture(triangular(6))
        np.testing.assert_allclose(m.weights, [0, 0, 0, 0, 0, 1], atol=1e-12)

    def test_inverse_of_benchmark(self):
        m = pmf_to_mixture(benchmark_pmfs()["p0_2"])
        np.testing.assert_allclose(m.weights, [0, 1 / 6, 1 / 6, 0, 1 / 3, 1 / 3], atol=1e-12)

    def test_inverse_rejects_nonconvex(self):
        with pytest.raises(ShapeError):
            pmf_to_mixture(truncated_poisson(1.5, 5))

    def test_inversion_formula_matches_lstsq(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            K = int(rng.integers(1, 15))
            w = rng.dirichlet(np.ones(K))
            p = mixture_to_pmf(TriangularMixture(w))
            brute = mixture_weights_lstsq(p.mass)
            np.testing.assert_allclose(pmf_to_mixture(p).weights, brute[: p.support_end + 1], atol=1e-10)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=20).filter(lambda w: sum(w) > 1e-3))
    def test_round_trip(self, raw):
        w = np.array(raw) / sum(raw)
        p = mixture_to_pmf(TriangularMixture(w))
        assert np.all(second_differences(p.mass, p.support_end + 2) >= -1e-12)
        back = mixture_to_pmf(pmf_to_mixture(p))
        np.testing.assert_allclose(back.padded(25), p.padded(25), atol=1e-10)
        wb = pmf_to_mixture(p).weights
        np.testing.assert_allclose(wb, w[: wb.size], atol=1e-10)

    def test_weights_validation(self):
        with pytest.raises(ValueError):
            TriangularMixture([0.5, 0.4])
        with pytest.raises(ValueError):
            TriangularMixture([1.5, -0.5])


class TestEmpirical:
    def test_counts(self):
        p = empirical_pmf(Sample([0, 0, 1, 3]))
        np.testing.assert_array_equal(p.mass, [0.5, 0.25, 0.0, 0.25])
        assert p.support_end == 3

    def test_degenerate(self):
        p = empirical_pmf(Sample([0] * 10))
        assert p.support_end == 0 and p[0] == 1.0

    @pytest.mark.parametrize("values", [[], [-1, 2], [0.5]])
    def test_invalid_sample(self, values):
        with pytest.raises(ValueError):
            Sample(values)

    def test_from_counts(self):
        s = Sample.from_counts([2, 0, 1])
        np.testing.assert_array_equal(s.values, [0, 0, 2])

    def test_mean_of_resamples(self):
        rng = np.random.default_rng(3)
        t6 = triangular(6)
        reps, n = 400, 200
        est = np.array([empirical_pmf(sample_from(t6, n, rng)).padded(6) for _ in range(reps)])
        se = np.sqrt(t6.mass * (1 - t6.mass) / (n * reps))
        assert np.all(np.abs(est.mean(axis=0) - t6.mass) <= 3 * se)


class TestBenchmarks:
    def test_truncated_poisson(self):
        p = truncated_poisson(1.5, 5)
        assert p.mass.sum() == pytest.approx(1.0, abs=1e-12)
        raw = np.array([1.5**j / math.factorial(j) for j in range(6)])
        np.testing.assert_allclose(p.mass, raw / raw.sum(), rtol=1e-12)
        assert delta(p, 1) < 0
        assert not is_convex(p)

    def test_truncated_poisson_point_mass(self):
        assert truncated_poisson(1.5, 0) == Pmf([1.0])

    @pytest.mark.parametrize("rate", [0, -1.0])
    def test_truncated_poisson_rate(self, rate):
        with pytest.raises(ValueError):
            truncated_poisson(rate, 5)

    def test_perturbed(self):
        p = perturbed_triangular()
        assert p[0] == pytest.approx(6 / 21 + 0.008, abs=1e-15)
        assert p[0] == pytest.approx(0.293714, abs=1e-6)
        assert p.mass.sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(p.mass[2:], triangular(6).mass[2:], atol=0)
        assert delta(p, 2) == pytest.approx(-0.008, abs=1e-12)

    def test_null_pmfs_are_convex(self):
        b = benchmark_pmfs()
        assert is_convex(b["p0_1"]) and is_convex(b["p0_2"])
        assert not is_convex(b["p1_1"]) and not is_convex(b["p1_2"])


class TestSampling:
    def test_point_mass(self):
        s = sample_from(Pmf([1.0]), 50, np.random.default_rng(0))
        assert np.all(s.values == 0)

    def test_deterministic(self):
        t6 = triangular(6)
        a = sample_from(t6, 1000, np.random.default_rng(42))
        b = sample_from(t6, 1000, np.random.default_rng(42))
        np.testing.assert_array_equal(a.values, b.values)

    def test_binomial_band(self):
        t6 = triangular(6)
        n = 50000
        p = empirical_pmf(sample_from(t6, n, np.random.default_rng(9)))
        band = 3 * np.sqrt(t6.mass * (1 - t6.mass) / n)
        assert np.all(np.abs(p.padded(6) - t6.mass) <= band)

    def test_skips_zero_mass_values(self):
        s = sample_from(Pmf([0.5, 0.0, 0.5]), 2000, np.random.default_rng(1))
        assert set(np.unique(s.values)) == {0, 2}

    def test_invalid_n(self):
        with pytest.raises(ValueError):
            sample_from(triangular(2), 0, np.random.default_rng(0))
