import itertools

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import linear_sum_assignment

from proclab import (
    EmpiricalMeasure,
    QuadratureSpec,
    TimeGrid,
    conditional_law,
    ensemble_from_states,
    fourier_wasserstein,
    wasserstein_p,
)


def measure(atoms, weights=None):
    atoms = np.asarray(atoms, dtype=float)
    if atoms.ndim == 1:
        atoms = atoms[:, None]
    if weights is None:
        weights = np.full(len(atoms), 1.0 / len(atoms))
    return EmpiricalMeasure(atoms, weights)


def brute_force_w(mu, nu, p):
    """Independent oracle: exhaustive search over couplings of equal atoms."""
    n = mu.n
    diff = mu.atoms[:, None, :] - nu.atoms[None, :, :]
    cost = np.sqrt((diff**2).sum(axis=2)) ** p
    best = min(
        sum(cost[i, pi[i]] for i in range(n)) for pi in itertools.permutations(range(n))
    )
    return (best / n) ** (1.0 / p)


class TestWasserstein:
    def test_identical_measures(self):
        mu = measure([0.0, 1.0, 2.0])
        assert wasserstein_p(mu, mu, 2) == pytest.approx(0.0, abs=1e-14)

    def test_sorted_coupling_value(self):
        mu = measure([0.0, 1.0])
        nu = measure([0.5, 1.5])
        assert wasserstein_p(mu, nu, 2) == pytest.approx(0.5)

    def test_2d_four_atoms_vs_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            mu = measure(rng.standard_normal((4, 2)))
            nu = measure(rng.standard_normal((4, 2)))
            assert wasserstein_p(mu, nu, 2) == pytest.approx(brute_force_w(mu, nu, 2), rel=1e-12)

    def test_assignment_path_matches_enumeration(self):
        # cross-check of the two exact routes on sizes straddling the cap
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal((12, 2)), rng.standard_normal((12, 2))
        mu, nu = measure(a), measure(b)
        got = wasserstein_p(mu, nu, 2)
        cost = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        r, c = linear_sum_assignment(cost)
        assert got == pytest.approx((cost[r, c].mean()) ** 0.5, rel=1e-12)

    def test_metric_axioms_small_n(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            mu, nu, rho = (measure(rng.standard_normal((5, 2))) for _ in range(3))
            dxy = wasserstein_p(mu, nu, 2)
            assert dxy == pytest.approx(wasserstein_p(nu, mu, 2), rel=1e-12)
            assert dxy <= wasserstein_p(mu, rho, 2) + wasserstein_p(rho, nu, 2) + 1e-12

    def test_monotone_in_p(self):
        rng = np.random.default_rng(3)
        mu, nu = measure(rng.standard_normal((6, 2))), measure(rng.standard_normal((6, 2)))
        vals = [wasserstein_p(mu, nu, p) for p in (1, 2, 3, 4)]
        assert all(a <= b + 1e-12 for a, b in zip(vals, vals[1:]))

    def test_unsupported_combination(self):
        mu = measure(np.zeros((3, 2)))
        nu = EmpiricalMeasure(np.ones((2, 2)), np.array([0.3, 0.7]))
        with pytest.raises(NotImplementedError):
            wasserstein_p(mu, nu, 2)

    def test_weighted_1d(self):
        mu = EmpiricalMeasure(np.array([[0.0], [1.0]]), np.array([0.25, 0.75]))
        nu = EmpiricalMeasure(np.array([[0.0]]), np.array([1.0]))
        assert wasserstein_p(mu, nu, 1) == pytest.approx(0.75)


class TestConditionalLaw:
    def test_single_batch_is_unconditional(self):
        g = TimeGrid(0.0, 1.0, 2)
        xi = ensemble_from_states(g, np.array([[[1.0], [2.0], [3.0]]]))
        law = conditional_law(xi, 0, 1.0)
        assert law.n == 3 and law.weights.sum() == pytest.approx(1.0)

    def test_identical_batch_is_point_mass(self):
        g = TimeGrid(0.0, 1.0, 2)
        xi = ensemble_from_states(g, np.array([[[2.0], [2.0]]]))
        law = conditional_law(xi, 0, 0.5)
        assert np.allclose(law.atoms, 2.0)

    def test_two_point_masses_distance(self):
        g = TimeGrid(0.0, 1.0, 2)
        xi = ensemble_from_states(g, np.array([[[1.0]], [[4.0]]]))
        a = conditional_law(xi, 0, 1.0)
        b = conditional_law(xi, 1, 1.0)
        assert wasserstein_p(a, b, 2) == pytest.approx(3.0)

    def test_permutation_invariance_multiset(self):
        g = TimeGrid(0.0, 1.0, 3)
        states = np.random.default_rng(5).standard_normal((1, 6, 1))
        xi = ensemble_from_states(g, states)
        xi2 = ensemble_from_states(g, states[:, ::-1])
        a = conditional_law(xi, 0, 1.0)
        b = conditional_law(xi2, 0, 1.0)
        assert wasserstein_p(a, b, 2) == pytest.approx(0.0, abs=1e-12)

    def test_index_out_of_range(self):
        g = TimeGrid(0.0, 1.0, 2)
        xi = ensemble_from_states(g, np.zeros((1, 2, 1)))
        with pytest.raises(IndexError):
            conditional_law(xi, 3, 1.0)


class TestFourier:
    def test_zero_on_equal_measures(self):
        mu = measure([0.3, -0.4])
        assert fourier_wasserstein(mu, mu, 3.0).value == pytest.approx(0.0, abs=1e-12)

    def test_point_mass_pair_vs_quadrature_oracle(self):
        # integrand 2 (1 - cos(z a)) / (1 + |z|^k); compare on the truncated
        # domain at 1e-8 and the full line within the reported tail bound
        a, k = 0.7, 3.0
        spec = QuadratureSpec(z_max=80.0, n_panels=160, nodes_per_panel=24)
        got = fourier_wasserstein(measure([0.0]), measure([a]), k, spec)
        trunc = quad(
            lambda z: 2 * (1 - np.cos(z * a)) / (1 + abs(z) ** k), 0, spec.z_max, limit=400
        )[0] * 2
        assert got.value**2 == pytest.approx(trunc, abs=1e-8)
        full = trunc + 2 * quad(lambda z: 2 * (1 - np.cos(z * a)) / (1 + z**k), spec.z_max, np.inf)[0]
        assert abs(got.value**2 - full) <= got.tail_bound

    def test_symmetry_random_pairs(self):
        rng = np.random.default_rng(6)
        for _ in range(5):
            mu = measure(rng.standard_normal(4))
            nu = measure(rng.standard_normal(4))
            assert fourier_wasserstein(mu, nu, 2.5).value == pytest.approx(
                fourier_wasserstein(nu, mu, 2.5).value, rel=1e-12
            )

    def test_dimension_and_exponent_guards(self):
        mu2 = measure(np.zeros((2, 2)))
        with pytest.raises(NotImplementedError):
            fourier_wasserstein(mu2, mu2, 3.0)
        mu1 = measure([0.0])
        with pytest.raises(ValueError):
            fourier_wasserstein(mu1, mu1, 1.0)
