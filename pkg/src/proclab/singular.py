"""Singular test functionals and numerical viscosity residuals.

A singular functional prices, over a finite control family, the p-th moment
of a compensated integrator at the current time plus the same moment of a
fixed reference pair (t', xi') and a running integrand:

    phi_t(xi) = min_a { k E[|I^a_t(xi)|^p + |I^a_{t'}(xi')|^p]
                         + int_{t'}^{t} ftilde^a ds }.

It is absolutely continuous in time but has no second-order sensitivity;
its role in the viscosity inequalities is to absorb diffusion terms.  The
rate check bounds increments of phi along a recorded process by the
explicit drift/volatility mismatch integrals; the viscosity residual
assembles the time derivative of the smooth part, the Hamiltonian along
the frozen process, and forward differences of the singular part.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .coeffs import CoefficientSet
from .controls import ControlFamily
from .core import ContractWarning, ProcessEnsemble
from .gauge import SmoothFunctional, smooth_eval
from .hjb import hamiltonian_at
from .noise import NoiseBundle
from .sde import TildeCoefficients, integrate_lifted, simulate_frozen

__all__ = [
    "SingularFunctional",
    "SingularValue",
    "TestPair",
    "rate_check",
    "RateReport",
    "viscosity_residual",
    "ViscosityReport",
]


@dataclass(frozen=True)
class SingularFunctional:
    t_tilde: float
    xi_tilde: ProcessEnsemble
    t_prime: float
    xi_prime: ProcessEnsemble
    tilde: TildeCoefficients
    k_scale: float
    p: float

    def __post_init__(self):
        if self.k_scale < 0:
            raise ValueError("k must be nonnegative")
        if self.p < 2:
            raise ValueError("moment exponent p must be at least 2")

    def _moment(self, lifted, k_node: int) -> float:
        vals = lifted.ipath.values[:, :, k_node, :]
        norms = np.sqrt((vals**2).sum(axis=-1))
        return float((lifted.ipath.weights * norms**self.p).sum())

    def candidate_terms(self, t: float, xi: ProcessEnsemble, family, noise):
        """Per-candidate value of the bracket at (t, xi)."""
        grid = xi.grid
        if t < self.t_tilde - 1e-12:
            raise ValueError("evaluated before the functional's start time")
        k_t = grid.index_of(t)
        k_p = grid.index_of(self.t_prime)
        out = []
        for ctl in family:
            main = integrate_lifted(self.tilde, self.t_tilde, self.xi_tilde, ctl, xi, noise)
            ref = integrate_lifted(
                self.tilde, self.t_tilde, self.xi_tilde, ctl, noise.expand(self.xi_prime), noise
            )
            moment = self._moment(main, k_t) + self._moment(ref, k_p)
            out.append(self.k_scale * moment + main.fpath[k_t] - main.fpath[k_p])
        return np.array(out)

    def value(self, t, xi, family: ControlFamily, noise: NoiseBundle) -> "SingularValue":
        if len(family) == 0:
            raise ValueError("empty control family")
        terms = self.candidate_terms(t, xi, family, noise)
        best = int(np.argmin(terms))
        return SingularValue(float(terms[best]), best, tuple(terms.tolist()))


class SingularValue(NamedTuple):
    value: float
    argmin_index: int
    candidates: tuple[float, ...]


@dataclass(frozen=True)
class TestPair:
    """A smooth part plus a signed singular part (minus sign for the
    supersolution class, whose members are negatives of the plus class)."""

    smooth: SmoothFunctional
    singular: SingularFunctional | None
    sign: int = 1

    def singular_value(self, t, xi, family, noise) -> float:
        if self.singular is None:
            return 0.0
        return self.sign * self.singular.value(t, xi, family, noise).value


@dataclass(frozen=True)
class RateReport:
    lhs: float  # phi(t + delta) - phi(t)
    rhs: float  # mismatch-integral bound (plus delta^2 slack in case "ii")
    case: str  # "i" when t >= t', else "ii"
    stderr: float
    passed: bool
    bound_violated: bool


def _pnorm(weights, vec_norms, p):
    return float((weights * vec_norms**p).sum() ** (1.0 / p))


def rate_check(
    phi: SingularFunctional,
    X: ProcessEnsemble,
    t: float,
    delta: float,
    family: ControlFamily,
    noise: NoiseBundle,
    atol: float = 0.0,
) -> RateReport:
    """Increment of phi along X against the drift/volatility mismatch bound.

    With I_s the candidates' integrators and (beta, gamma) the recorded
    dynamics of X, the bound integrates

        p(p-1)/2 * k * ( ||beta - btilde||_p sup_a ||I_s||_p^(p-1)
                         + ||gamma - stilde||_p^2 sup_a ||I_s||_p^(p-2) )
        + ftilde

    over [t, t + delta].  Before the reference time the minimizing
    candidate is pinned at time t and a delta^2 slack is added.
    """
    rec = X.record
    if rec is None or rec.drift is None or rec.vol is None:
        raise ValueError("process carries no recorded drift/diffusion")
    grid = X.grid
    k_t = grid.index_of(t)
    k_end = grid.index_of(t + delta)
    p, ks = phi.p, phi.k_scale
    dt = grid.dt
    w = X.weights

    lifted = [
        integrate_lifted(phi.tilde, phi.t_tilde, phi.xi_tilde, ctl, X, noise)
        for ctl in family
    ]
    violated = any(lf.bound_violated for lf in lifted)
    inorms = np.array(
        [
            [
                _pnorm(w, np.sqrt((lf.ipath.values[:, :, k, :] ** 2).sum(axis=-1)), p)
                for k in range(k_t, k_end)
            ]
            for lf in lifted
        ]
    )  # (n_candidates, m)
    sup_norm = inorms.max(axis=0)

    members = list(family)
    rhs_cands = np.zeros(len(members))
    for idx, ctl in enumerate(members):
        total = 0.0
        for k in range(k_t, k_end):
            a = ctl.actions(k, X.values[:, :, k, :], noise)
            tk = grid.time_of(k)
            bt = np.broadcast_to(np.asarray(phi.tilde.b(tk, a), dtype=float), rec.drift[:, :, 0].shape)
            st = np.broadcast_to(
                np.asarray(phi.tilde.sigma(tk, a), dtype=float), rec.vol[:, :, 0].shape
            )
            jb = k - rec.k_start
            db = rec.drift[:, :, jb] - bt
            dg = rec.vol[:, :, jb] - st
            nb = _pnorm(w, np.sqrt((db**2).sum(axis=-1)), p)
            ng = _pnorm(w, np.sqrt((dg**2).sum(axis=(-2, -1))), p)
            j = k - k_t
            rate = nb * sup_norm[j] ** (p - 1) + ng**2 * sup_norm[j] ** (p - 2)
            total += (0.5 * p * (p - 1) * ks * rate + float(phi.tilde.f(tk, a))) * dt
        rhs_cands[idx] = total

    val_t = phi.value(t, X, family, noise)
    val_end = phi.value(t + delta, X, family, noise)
    lhs = val_end.value - val_t.value
    if t >= phi.t_prime - 1e-12:
        case, rhs = "i", float(rhs_cands.min())
    else:
        case, rhs = "ii", float(rhs_cands[val_t.argmin_index] + delta**2)

    stderr = _increment_stderr(phi, X, t, t + delta, family, noise, val_end.argmin_index)
    passed = lhs <= rhs + 3.0 * stderr + atol
    return RateReport(lhs, rhs, case, stderr, bool(passed), violated)


def _increment_stderr(phi, X, t0, t1, family, noise, cand_index):
    """Idio-group dispersion of the increment for one fixed candidate."""
    if noise.mode == "tree" or X.m_idio < 4:
        return 0.0
    ctl = family.members[cand_index]
    lifted = integrate_lifted(phi.tilde, phi.t_tilde, phi.xi_tilde, ctl, X, noise)
    k0, k1 = X.grid.index_of(t0), X.grid.index_of(t1)
    groups = np.array_split(np.arange(X.m_idio), min(10, X.m_idio))
    vals = []
    for idx in groups:
        w = X.weights[:, idx]
        w = w / w.sum()
        n0 = np.sqrt((lifted.ipath.values[:, idx, k0, :] ** 2).sum(axis=-1))
        n1 = np.sqrt((lifted.ipath.values[:, idx, k1, :] ** 2).sum(axis=-1))
        vals.append(phi.k_scale * float((w * (n1**phi.p - n0**phi.p)).sum()))
    vals = np.array(vals)
    return float(vals.std(ddof=1) / np.sqrt(len(vals)))


@dataclass(frozen=True)
class ViscosityReport:
    deltas: tuple[float, ...]
    residuals: tuple[float, ...]
    side: str
    touching_slack: float
    sign_ok: bool


def viscosity_residual(
    U: Callable,
    pair: TestPair,
    coeffs: CoefficientSet,
    t: float,
    xi: ProcessEnsemble,
    side: str,
    deltas,
    family: ControlFamily,
    noise: NoiseBundle,
    cloud: int = 0,
    cloud_scale: float = 0.1,
    seed: int = 0,
    touch_tol: float = 1e-8,
) -> ViscosityReport:
    """Sub/supersolution residual of U at (t, xi) along a delta ladder.

    For each window length delta, the residual is the time derivative of
    the smooth part plus the infimum over the family of the window average
    of the Hamiltonian along the frozen process and the forward difference
    of the singular part.  A subsolution needs residuals >= 0, a
    supersolution <= 0.  Touching is checked on a sampled cloud only; the
    observed slack is attached to the report.
    """
    if side not in ("sub", "super"):
        raise ValueError("side must be 'sub' or 'super'")
    grid = xi.grid
    k0 = grid.index_of(t)
    deltas = tuple(float(d) for d in deltas)
    widths = [grid.index_of(t + d) - k0 for d in deltas]
    m_max = max(widths)
    ev = smooth_eval(pair.smooth, t, xi)

    xi_e = noise.expand(xi)
    frozen_paths = xi_e.stopped(t).values[:, :, : k0 + 1, :]
    members = list(family)
    cum = np.zeros((len(members), m_max + 1))
    for idx, ctl in enumerate(members):
        xbar = simulate_frozen(coeffs, t, xi, ctl, noise, k_stop=k0 + m_max)
        phis = (
            [
                pair.singular_value(grid.time_of(k), xbar, family, noise)
                for k in range(k0, k0 + m_max + 1)
            ]
            if pair.singular is not None
            else [0.0] * (m_max + 1)
        )
        for j, k in enumerate(range(k0, k0 + m_max)):
            acts = xbar.record.actions[:, :, k - k0]
            h = hamiltonian_at(
                coeffs, grid.time_of(k), frozen_paths, xi_e.weights, acts, ev.grad, ev.hess
            )
            phidot = (phis[j + 1] - phis[j]) / grid.dt
            cum[idx, j + 1] = cum[idx, j] + (h + phidot) * grid.dt
    residuals = tuple(
        float(ev.dt + (cum[:, m] / (m * grid.dt)).min()) for m in widths
    )

    slack = 0.0
    if cloud > 0:
        rng = np.random.default_rng(seed)
        base = _pair_value(U, pair, t, xi, family, noise)
        worst = -np.inf
        for _ in range(cloud):
            ks = k0 + int(rng.integers(0, m_max + 1))
            s = grid.time_of(ks)
            bump = cloud_scale * rng.standard_normal((xi.m_common, xi.m_idio, 1, xi.dim))
            zeta = ProcessEnsemble(grid, xi.stopped(s).values + bump, xi.weights)
            diff = _pair_value(U, pair, s, zeta, family, noise) - base
            worst = max(worst, diff if side == "sub" else -diff)
        slack = max(0.0, float(worst))
        if slack > touch_tol:
            warnings.warn(f"touching slack {slack:.2e} exceeds tolerance", ContractWarning)

    ok = all(r >= -touch_tol for r in residuals) if side == "sub" else all(
        r <= touch_tol for r in residuals
    )
    return ViscosityReport(deltas, residuals, side, slack, bool(ok))


def _pair_value(U, pair, s, zeta, family, noise):
    return (
        U(s, zeta)
        - smooth_eval(pair.smooth, s, zeta).value
        - pair.singular_value(s, zeta, family, noise)
    )
