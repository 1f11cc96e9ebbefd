import numpy as np
import pytest

from conftest import custom_coeffs, zero_control
from proclab import (
    ContractError,
    TimeGrid,
    check_lift,
    classical_residual,
    constant_ensemble,
    constant_family,
    deterministic_family,
    explicit_family,
    fd_solve,
    feedback_from_table,
    gaussian_noise,
    hamiltonian,
    make_coefficients,
    quadratic_functional,
    random_ensemble,
    transform_constant_vol,
    tree_noise,
)
from proclab.coeffs import PointwiseProblem


class TestHamiltonian:
    def test_zero_data(self, grid):
        cset = custom_coeffs()
        xi = constant_ensemble(grid, 1.0, 1, 4)
        Z = np.ones((1, 4, 1))
        G = np.zeros((1, 4, 1, 1))
        h = hamiltonian(cset, 0.5, xi, Z, G, (-1.0, 0.0, 1.0))
        assert h.values == pytest.approx((0.0, 0.0, 0.0))

    def test_enumeration_oracle(self, grid):
        # b = a, sigma sigma^T = 2, f = E[a^2], Z = 1, Gamma = 0.5
        cset = custom_coeffs(
            b=lambda t, paths, a, law, ctrl: a[:, None] * np.ones((paths.shape[0], 1)),
            sigma=lambda t, paths, a, law, ctrl: np.full((paths.shape[0], 1, 1), np.sqrt(2.0)),
            f=lambda t, law, ctrl: float(law.expect(law.actions**2)),
        )
        xi = constant_ensemble(grid, 0.0, 1, 2)
        Z = np.ones((1, 2, 1))
        G = np.full((1, 2, 1, 1), 0.5)
        h = hamiltonian(cset, 0.0, xi, Z, G, (-1.0, 0.0, 1.0))
        assert h.values == pytest.approx((0.5, 0.5, 2.5))
        assert h.minimum == pytest.approx(0.5)

    def test_linearity_in_z(self, grid):
        cset = custom_coeffs(
            b=lambda t, paths, a, law, ctrl: np.full((paths.shape[0], 1), 0.7)
        )
        xi = constant_ensemble(grid, 0.0, 1, 3)
        Z = np.random.default_rng(1).standard_normal((1, 3, 1))
        G = np.zeros((1, 3, 1, 1))
        h1 = hamiltonian(cset, 0.0, xi, Z, G, (0.0,)).minimum
        h2 = hamiltonian(cset, 0.0, xi, 2 * Z, G, (0.0,)).minimum
        assert h2 == pytest.approx(2 * h1, rel=1e-12)

    def test_affine_decomposition(self, grid):
        # for a fixed action, H(Z1+Z2, G1+G2) = H(Z1, G1) + H(Z2, G2) - H(0, 0)
        cset = custom_coeffs(
            b=lambda t, paths, a, law, ctrl: np.full((paths.shape[0], 2), 0.7),
            sigma=lambda t, paths, a, law, ctrl: np.broadcast_to(
                np.array([[0.4, 0.1], [0.0, 0.9]]), (paths.shape[0], 2, 2)
            ),
            f=lambda t, law, ctrl: 0.3,
            dim=2,
        )
        xi = constant_ensemble(grid, np.zeros(2), 1, 5)
        rng = np.random.default_rng(2)
        Z1, Z2 = rng.standard_normal((2, 1, 5, 2))
        G1, G2 = rng.standard_normal((2, 1, 5, 2, 2))
        h = lambda Z, G: hamiltonian(cset, 0.0, xi, Z, G, (0.0,)).minimum
        zero_z, zero_g = np.zeros((1, 5, 2)), np.zeros((1, 5, 2, 2))
        lhs = h(Z1 + Z2, G1 + G2)
        rhs = h(Z1, G1) + h(Z2, G2) - h(zero_z, zero_g)
        assert lhs == pytest.approx(rhs, rel=1e-12)


class TestClassicalResidual:
    def test_heat_solution(self, grid):
        heat = make_coefficients("heat")
        xi = random_ensemble(grid, 0.5, 1, 64, 1, seed=1)
        U = quadratic_functional(grid.horizon)
        assert classical_residual(U, heat, 0.5, xi, (0.0,)) == pytest.approx(0.0, abs=1e-12)

    def test_dropping_diffusion_gives_subsolution_direction(self, grid):
        nodiff = make_coefficients("lq", sigma0=0.0, qf=0.0)
        xi = random_ensemble(grid, 0.5, 1, 64, 1, seed=2)
        U = quadratic_functional(grid.horizon)
        res = classical_residual(U, nodiff, 0.5, xi, (0.0,))
        assert res == pytest.approx(-1.0, abs=1e-12)

    def test_lq_hand_algebra(self, grid):
        # b = a, sigma = s, f = q a^2, U = E[x^2] + (T - t):
        # residual = -1 + s^2 + min_a (2 a E[x] + q a^2)
        s, q = 0.6, 0.4
        lq = make_coefficients("lq", sigma0=s, qf=q)
        xi = constant_ensemble(grid, 0.3, 1, 16)
        U = quadratic_functional(grid.horizon)
        grid_a = (-1.0, 0.0, 1.0)
        expect = -1.0 + s**2 + min(2 * a * 0.3 + q * a**2 for a in grid_a)
        got = classical_residual(U, lq, 0.5, xi, grid_a)
        assert got == pytest.approx(expect, abs=1e-10)


class TestFdSolve:
    def test_heat_closed_form(self):
        # domain padded six standard deviations beyond the readout region
        heat = make_coefficients("heat")
        tab = fd_solve(heat.pointwise, (0.0,), -8.0, 8.0, 0.05, 0.0, 1.0, n_t=500)
        xs = np.linspace(-2, 2, 11)
        assert np.abs(tab.value(0.0, xs) - (xs**2 + 1.0)).max() < 1e-8

    def test_drift_control_closed_form(self):
        dr = make_coefficients("drift")
        tab = fd_solve(dr.pointwise, (-1.0, 1.0), -4.0, 4.0, 0.05, 0.0, 1.0, n_t=100)
        xs = np.linspace(-1, 1, 9)
        assert np.abs(tab.value(0.0, xs) - (xs - 1.0)).max() < 1e-10

    def test_refinement_reduces_error(self):
        # cosine payoff: the diffusion semigroup damps it by exp(-t/2)
        prob = PointwiseProblem(
            b=lambda t, x, a: np.zeros_like(x),
            sigma=lambda t, x, a: np.ones_like(x),
            f=lambda t, x, a: np.zeros_like(x),
            g=lambda x: np.cos(x),
        )
        errs = []
        for dx, n_t in ((0.2, 100), (0.1, 400)):
            tab = fd_solve(prob, (0.0,), -8.0, 8.0, dx, 0.0, 1.0, n_t=n_t)
            xs = tab.xs[np.abs(tab.xs) < 2]
            exact = np.exp(-0.5) * np.cos(xs)
            errs.append(np.abs(tab.value(0.0, xs) - exact).max())
        assert errs[1] <= errs[0] / 3.0

    def test_monotone_in_payoff(self):
        base = PointwiseProblem(
            b=lambda t, x, a: np.full_like(x, a),
            sigma=lambda t, x, a: np.ones_like(x),
            f=lambda t, x, a: np.zeros_like(x),
            g=lambda x: np.sin(x),
        )
        raised = PointwiseProblem(base.b, base.sigma, base.f, g=lambda x: np.sin(x) + 0.3)
        t1 = fd_solve(base, (-1.0, 1.0), -6.0, 6.0, 0.1, 0.0, 0.5, n_t=300)
        t2 = fd_solve(raised, (-1.0, 1.0), -6.0, 6.0, 0.1, 0.0, 0.5, n_t=300)
        assert np.all(t2.v >= t1.v - 1e-12)

    def test_cfl_violation(self):
        heat = make_coefficients("heat")
        with pytest.raises(ValueError):
            fd_solve(heat.pointwise, (0.0,), -2.0, 2.0, 0.05, 0.0, 1.0, n_t=10)


class TestCheckLift:
    def test_heat_both_sides_closed_form(self):
        g = TimeGrid(0.0, 1.0, 32)
        heat = make_coefficients("heat")
        tab = fd_solve(heat.pointwise, (0.0,), -8.0, 8.0, 0.02, 0.25, 1.0, n_t=2000)
        xi = random_ensemble(g, 0.25, 1, 2048, 1, seed=5)
        n = gaussian_noise(g, 1, 0, 1, 2048, seed=6, k_start=8)
        fam = constant_family((0.0,), 8, 32)
        rep = check_lift(tab, heat, 0.25, xi, fam, n, rel_tol=0.02)
        assert rep.passed

    def test_two_point_initial_law_is_average(self):
        from proclab import ensemble_from_states

        g = TimeGrid(0.0, 1.0, 8)
        heat = make_coefficients("heat")
        tab = fd_solve(heat.pointwise, (0.0,), -8.0, 8.0, 0.05, 0.0, 1.0, n_t=600)
        xi = ensemble_from_states(g, np.array([[[0.5], [-1.5]]]))
        states = np.array([0.5, -1.5])
        expect = 0.5 * tab.value(0.0, states).sum()
        n = gaussian_noise(g, 1, 0, 1, 2, seed=7)
        fam = constant_family((0.0,), 0, 8)
        rep = check_lift(tab, heat, 0.0, xi, fam, n)
        assert rep.table_value == pytest.approx(expect, rel=1e-12)

    def test_deterministic_drift_tree_exact(self):
        g = TimeGrid(0.0, 1.0, 4)
        dr = make_coefficients("drift")
        tab = fd_solve(dr.pointwise, (-1.0, 1.0), -4.0, 4.0, 0.02, 0.0, 1.0, n_t=212)
        xi = constant_ensemble(g, 0.7)
        n = tree_noise(g, 1, 0)
        fam = deterministic_family((-1.0, 1.0), 0, 4)
        rep = check_lift(tab, dr, 0.0, xi, fam, n)
        assert abs(rep.gap) <= 1e-12

    def test_gap_shrinks_under_refinement(self):
        heat = make_coefficients("heat")
        tab = fd_solve(heat.pointwise, (0.0,), -8.0, 8.0, 0.02, 0.25, 1.0, n_t=2000)
        gaps = []
        for steps, m in ((16, 512), (64, 8192)):
            g = TimeGrid(0.0, 1.0, steps)
            k0 = g.index_of(0.25)
            xi = random_ensemble(g, 0.25, 1, m, 1, seed=31)
            n = gaussian_noise(g, 1, 0, 1, m, seed=32, k_start=k0)
            rep = check_lift(tab, heat, 0.25, xi, constant_family((0.0,), k0, steps), n)
            gaps.append(abs(rep.gap))
        assert gaps[1] < gaps[0]

    def test_non_decoupled_rejected(self, grid):
        mr = make_coefficients("mean_revert")
        xi = constant_ensemble(grid, 0.0)
        n = gaussian_noise(grid, 1, 0, 1, 1, seed=1)
        heat = make_coefficients("heat")
        tab = fd_solve(heat.pointwise, (0.0,), -2.0, 2.0, 0.1, 0.0, 1.0, n_t=200)
        with pytest.raises(ContractError):
            check_lift(tab, mr, 0.0, xi, constant_family((0.0,), 0, 8), n)


class TestTransform:
    def _setup(self, steps=24, m=512, seed=9):
        g = TimeGrid(0.0, 1.0, steps)
        xi = random_ensemble(g, 0.25, 1, m, 1, seed=seed)
        n = gaussian_noise(g, 1, 0, 1, m, seed=seed + 1, k_start=g.index_of(0.25))
        fam = constant_family((-1.0, 0.0, 1.0), g.index_of(0.25), steps)
        return g, xi, n, fam

    def test_pure_shift(self):
        g, xi, n, fam = self._setup()
        heat = make_coefficients("heat")
        rep = transform_constant_vol(heat, 0.25, xi, fam, n)
        assert rep.passed and rep.max_candidate_gap <= 1e-10

    def test_drift_control(self):
        g, xi, n, fam = self._setup(seed=13)
        lq = make_coefficients("lq", sigma0=1.0, qf=0.5)
        rep = transform_constant_vol(lq, 0.25, xi, fam, n)
        assert rep.passed and rep.max_candidate_gap <= 1e-10

    def test_path_dependent_payoff(self):
        g, xi, n, fam = self._setup(seed=17)
        pm = make_coefficients("path_max")
        rep = transform_constant_vol(pm, 0.25, xi, fam, n)
        assert rep.passed and rep.max_candidate_gap <= 1e-10

    def test_non_identity_vol_rejected(self):
        g, xi, n, fam = self._setup()
        lq = make_coefficients("lq", sigma0=0.5)
        with pytest.raises(ContractError):
            transform_constant_vol(lq, 0.25, xi, fam, n)

    def test_tree_mode_exact(self):
        g = TimeGrid(0.0, 1.0, 3)
        xi = constant_ensemble(g, 0.4)
        n = tree_noise(g, 1, 0)
        fam = deterministic_family((-1.0, 1.0), 0, 3)
        lq = make_coefficients("lq", sigma0=1.0, qf=0.25)
        rep = transform_constant_vol(lq, 0.0, xi, fam, n)
        assert rep.max_candidate_gap <= 1e-12
