import numpy as np
import pytest

from conftest import custom_coeffs, zero_control
from proclab import TestPair as FunctionalPair
from proclab import (
    SingularFunctional,
    TildeCoefficients,
    TimeGrid,
    constant_ensemble,
    constant_family,
    deterministic_family,
    gaussian_noise,
    make_coefficients,
    quadratic_functional,
    random_ensemble,
    rate_check,
    simulate_state,
    tree_noise,
    value_V,
    viscosity_residual,
)
from proclab.gauge import SmoothFunctional


def zero_tilde(d=1):
    return TildeCoefficients(
        lambda t, a: np.zeros(d), lambda t, a: np.zeros((d, d)), lambda t, a: 0.0, 0.0
    )


def drift_tilde(f_const=0.0, gamma=1.0):
    return TildeCoefficients(
        lambda t, a: np.asarray(a)[..., None],
        lambda t, a: np.zeros(np.shape(a) + (1, 1)),
        lambda t, a: f_const,
        gamma,
    )


class TestSingularValue:
    def test_vanishing_integrator(self, grid, small_tree):
        zero = constant_ensemble(grid, 0.0)
        phi = SingularFunctional(0.0, zero, 0.0, zero, zero_tilde(), 2.0, 4)
        xi = constant_ensemble(grid, 1.5)
        v = phi.value(1.0, xi, constant_family((0.0,), 0, 8), small_tree)
        assert v.value == pytest.approx(2.0 * 1.5**4)

    def test_drift_candidates_enumeration(self, grid, small_tree):
        zero = constant_ensemble(grid, 0.0)
        phi = SingularFunctional(0.0, zero, 0.0, zero, drift_tilde(), 1.0, 4)
        fam = constant_family((0.0, 1.0), 0, 8)
        v = phi.value(1.0, zero, fam, small_tree)
        assert v.candidates == pytest.approx((0.0, 1.0))
        assert v.argmin_index == 0

    def test_cost_only_functional(self, grid, small_tree):
        # k = 0 and action-independent running integrand: phi = int f
        zero = constant_ensemble(grid, 0.0)
        tilde = TildeCoefficients(
            lambda t, a: np.zeros(1), lambda t, a: np.zeros((1, 1)), lambda t, a: 1.5, 0.0
        )
        phi = SingularFunctional(0.0, zero, 0.25, zero, tilde, 0.0, 2)
        v = phi.value(0.75, zero, constant_family((0.0, 1.0), 0, 8), small_tree)
        assert v.value == pytest.approx(1.5 * 0.5)

    def test_monotone_in_k_exact(self, grid, small_tree):
        zero = constant_ensemble(grid, 0.0)
        xi = random_ensemble(grid, 1.0, 1, 1, 1, seed=4, history="walk")
        fam = constant_family((-1.0, 0.0, 1.0), 0, 8)
        vals = []
        for k_scale in (0.0, 0.5, 1.0, 2.0):
            phi = SingularFunctional(0.0, zero, 0.5, zero, drift_tilde(0.3), k_scale, 4)
            vals.append(phi.value(1.0, xi, fam, small_tree).value)
        assert all(a <= b + 1e-14 for a, b in zip(vals, vals[1:]))

    def test_reorder_invariance(self, grid, small_tree):
        zero = constant_ensemble(grid, 0.0)
        xi = random_ensemble(grid, 1.0, 1, 1, 1, seed=5, history="walk")
        phi = SingularFunctional(0.0, zero, 0.5, zero, drift_tilde(0.3), 1.0, 4)
        fam = constant_family((-1.0, 0.0, 1.0), 0, 8)
        rev = constant_family((1.0, 0.0, -1.0), 0, 8)
        assert phi.value(1.0, xi, fam, small_tree).value == pytest.approx(
            phi.value(1.0, xi, rev, small_tree).value, rel=1e-14
        )

    def test_minus_class_mirror(self, grid, small_tree):
        zero = constant_ensemble(grid, 0.0)
        xi = random_ensemble(grid, 1.0, 1, 1, 1, seed=6, history="walk")
        phi = SingularFunctional(0.0, zero, 0.5, zero, drift_tilde(0.3), 1.0, 4)
        fam = constant_family((0.0, 1.0), 0, 8)
        plus = FunctionalPair(quadratic_functional(1.0), phi, sign=1)
        minus = FunctionalPair(quadratic_functional(1.0), phi, sign=-1)
        a = plus.singular_value(1.0, xi, fam, small_tree)
        b = minus.singular_value(1.0, xi, fam, small_tree)
        assert b == pytest.approx(-a, rel=1e-14)

    def test_parameter_validation(self, grid):
        zero = constant_ensemble(grid, 0.0)
        with pytest.raises(ValueError):
            SingularFunctional(0.0, zero, 0.0, zero, zero_tilde(), -1.0, 4)
        with pytest.raises(ValueError):
            SingularFunctional(0.0, zero, 0.0, zero, zero_tilde(), 1.0, 1.5)


class TestRateCheck:
    def test_static_scenario(self, grid, small_tree):
        zero = constant_ensemble(grid, 0.0)
        phi = SingularFunctional(0.0, zero, 0.0, zero, zero_tilde(), 1.0, 4)
        fam = constant_family((0.0,), 0, 8)
        X = simulate_state(custom_coeffs(), 0.0, zero, fam.members[0], small_tree, record=True)
        rep = rate_check(phi, X, 0.25, 0.25, fam, small_tree)
        assert rep.lhs == 0.0 and rep.rhs == 0.0 and rep.passed and rep.case == "i"

    def test_tracking_process(self, grid, small_tree):
        # X tracks the integrator drift exactly: increments reduce to int f
        zero = constant_ensemble(grid, 0.0)
        phi = SingularFunctional(0.0, zero, 0.0, zero, drift_tilde(f_const=0.5, gamma=1.5), 1.0, 4)
        fam = constant_family((1.0,), 0, 8)
        track = custom_coeffs(b=lambda t, p, a, l, c: np.ones((p.shape[0], 1)))
        X = simulate_state(track, 0.0, zero, fam.members[0], small_tree, record=True)
        rep = rate_check(phi, X, 0.25, 0.5, fam, small_tree)
        assert rep.lhs == pytest.approx(0.25)
        assert rep.rhs == pytest.approx(0.25)
        assert rep.passed

    def test_before_reference_time_uses_pinned_candidate(self, grid, small_tree):
        zero = constant_ensemble(grid, 0.0)
        phi = SingularFunctional(0.0, zero, 0.75, zero, drift_tilde(0.5, 1.5), 1.0, 4)
        fam = constant_family((1.0,), 0, 8)
        track = custom_coeffs(b=lambda t, p, a, l, c: np.ones((p.shape[0], 1)))
        X = simulate_state(track, 0.0, zero, fam.members[0], small_tree, record=True)
        rep = rate_check(phi, X, 0.25, 0.25, fam, small_tree)
        assert rep.case == "ii"
        assert rep.rhs == pytest.approx(0.5 * 0.25 + 0.25**2)
        assert rep.passed

    def test_random_battery(self):
        # small version of the acceptance battery
        g = TimeGrid(0.0, 1.0, 16)
        rng = np.random.default_rng(7)
        ou = make_coefficients("ou", rate=1.0, sigma0=0.4)
        for trial in range(10):
            m = 256
            xi = random_ensemble(g, 0.0, 1, m, 1, seed=100 + trial)
            n = gaussian_noise(g, 1, 0, 1, m, seed=200 + trial)
            fam = constant_family((-0.5, 0.0, 0.5), 0, 16)
            X = simulate_state(ou, 0.0, xi, fam.members[trial % 3], n, record=True)
            anchor = constant_ensemble(g, float(rng.uniform(-1, 1)))
            phi = SingularFunctional(
                0.0, anchor, 0.25, constant_ensemble(g, 0.0),
                drift_tilde(float(rng.uniform(0.2, 1.0)), gamma=2.0),
                float(rng.uniform(0.0, 0.5)), 4,
            )
            rep = rate_check(phi, X, 0.5, 0.25, fam, n)
            assert rep.passed, f"trial {trial}: lhs {rep.lhs} rhs {rep.rhs}"

    def test_missing_record(self, grid, small_tree):
        zero = constant_ensemble(grid, 0.0)
        phi = SingularFunctional(0.0, zero, 0.0, zero, zero_tilde(), 1.0, 4)
        with pytest.raises(ValueError):
            rate_check(phi, zero, 0.25, 0.25, constant_family((0.0,), 0, 8), small_tree)


class TestViscosityResidual:
    def _heat_setup(self, steps=32, m=256):
        g = TimeGrid(0.0, 1.0, steps)
        heat = make_coefficients("heat")
        xi = random_ensemble(g, 0.25, 1, m, 1, seed=8)
        k0 = g.index_of(0.25)
        n = gaussian_noise(g, 1, 0, 1, m, seed=9, k_start=k0)
        fam = constant_family((0.0,), k0, steps)
        return g, heat, xi, n, fam

    @staticmethod
    def _heat_value(shift, horizon):
        def u(s, zeta):
            k = zeta.grid.index_of(s)
            m2 = float((zeta.weights * (zeta.values[:, :, k, :] ** 2).sum(axis=-1)).sum())
            return m2 + (1.0 + shift) * (horizon - s)

        return u

    def test_classical_solution_zero_residual(self):
        g, heat, xi, n, fam = self._heat_setup()
        pair = FunctionalPair(quadratic_functional(g.horizon), None)
        deltas = [g.dt * m for m in (1, 2, 4, 8)]
        rep = viscosity_residual(
            self._heat_value(0.0, g.horizon), pair, heat, 0.25, xi, "sub", deltas, fam, n,
            cloud=25, seed=1,
        )
        assert all(abs(r) < 1e-10 for r in rep.residuals)
        assert rep.touching_slack < 1e-8

    @pytest.mark.parametrize("shift,side", [(-0.5, "sub"), (0.5, "super")])
    def test_shifted_solution_signs(self, shift, side):
        g, heat, xi, n, fam = self._heat_setup()
        pair = FunctionalPair(quadratic_functional(g.horizon, time_scale=1.0 + shift), None)
        deltas = [g.dt * m for m in (1, 2, 4, 8)]
        rep = viscosity_residual(
            self._heat_value(shift, g.horizon), pair, heat, 0.25, xi, side, deltas, fam, n
        )
        assert rep.sign_ok
        assert all(abs(abs(r) - abs(shift)) < 1e-10 for r in rep.residuals)

    def test_tree_scenario_touching_signs(self):
        # drift-controlled tree: U is the exact searched value; linear test
        # functionals with steep/shallow time slope touch from either side
        g = TimeGrid(0.0, 1.0, 3)
        dr = make_coefficients("drift")
        n = tree_noise(g, 1, 0)
        fam = deterministic_family((-1.0, 1.0), 0, 3)
        xi = constant_ensemble(g, 0.4)

        def u_value(s, zeta):
            return value_V(dr, s, zeta, deterministic_family((-1.0, 1.0), zeta.grid.index_of(s), 3), n).value

        def linear_time(c):
            return SmoothFunctional(
                bar=lambda t, x: x[:, -1, 0] - c * (1.0 - t),
                bar_dt=lambda t, x: np.full(x.shape[0], c),
                bar_dx=lambda t, x: np.concatenate([np.ones((x.shape[0], 1))], axis=1),
                bar_dxx=lambda t, x: np.zeros((x.shape[0], 1, 1)),
                growth_exponent=2,
                growth_const=4.0,
                label="linear+time",
            )

        deltas = [g.dt, 2 * g.dt]
        # c > 1: U - phi decreases in time, max at the root: subsolution side
        rep_sub = viscosity_residual(
            u_value, FunctionalPair(linear_time(1.5), None), dr, 0.0, xi, "sub", deltas, fam, n,
            cloud=10, seed=3, cloud_scale=0.05,
        )
        assert rep_sub.sign_ok and all(r == pytest.approx(0.5) for r in rep_sub.residuals)
        # c < 1: min at the root: supersolution side
        rep_sup = viscosity_residual(
            u_value, FunctionalPair(linear_time(0.5), None), dr, 0.0, xi, "super", deltas, fam, n,
            cloud=10, seed=4, cloud_scale=0.05,
        )
        assert rep_sup.sign_ok and all(r == pytest.approx(-0.5) for r in rep_sup.residuals)

    def test_touching_slack_warning(self):
        g, heat, xi, n, fam = self._heat_setup(m=64)
        # a wrong test function that does not touch: expect a recorded slack
        pair = FunctionalPair(quadratic_functional(g.horizon, time_scale=5.0), None)
        with pytest.warns(UserWarning):
            rep = viscosity_residual(
                self._heat_value(0.0, g.horizon), pair, heat, 0.25, xi, "sub",
                [g.dt], fam, n, cloud=40, seed=2, touch_tol=1e-10,
            )
        assert rep.touching_slack > 0

    def test_absolute_continuity_proxy(self):
        # |phi(t+delta) - phi(t)| <= C delta with a stable constant
        g = TimeGrid(0.0, 1.0, 64)
        ou = make_coefficients("ou", rate=1.0, sigma0=0.3)
        xi = constant_ensemble(g, 1.0, 1, 512)
        n = gaussian_noise(g, 1, 0, 1, 512, seed=30)
        fam = constant_family((-0.5, 0.5), 0, 64)
        X = simulate_state(ou, 0.0, xi, fam.members[0], n, record=True)
        anchor = constant_ensemble(g, 0.2)
        phi = SingularFunctional(0.0, anchor, 0.25, constant_ensemble(g, 0.0),
                                 drift_tilde(1.0, gamma=1.0), 0.2, 4)
        ratios = []
        for m in (2, 4, 8, 16):
            delta = m * g.dt
            lhs = abs(
                phi.value(0.5 + delta, X, fam, n).value - phi.value(0.5, X, fam, n).value
            )
            ratios.append(lhs / delta)
        assert max(ratios) <= 2.0 * min(ratios)
