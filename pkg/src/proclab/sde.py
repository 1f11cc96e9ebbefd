"""Forward simulation of the controlled path-dependent dynamics.

Euler-Maruyama with left-point coefficient evaluation:

    X[k+1] = X[k] + b(t_k, X stopped at k, a_k, law_k) dt
                  + sigma(t_k, ...) dB[k]

`simulate_state` evolves the state and law arguments; `simulate_frozen`
keeps the state and law arguments pinned at the start time while the
control keeps evolving.  `integrate_lifted` computes the compensated
integrator and running-cost primitive used by singular test functionals.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .coeffs import BatchLaw, CoefficientSet, EnsembleLaw
from .controls import ControlSpec
from .core import (
    ContractWarning,
    ProcessEnsemble,
    ShapeError,
    SimRecord,
    SimulationError,
)
from .noise import NoiseBundle

__all__ = [
    "simulate_state",
    "simulate_frozen",
    "integrate_lifted",
    "LiftedIntegral",
    "check_sde_estimates",
    "SdeReport",
    "TildeCoefficients",
]


def _batch_views(paths, weights, actions):
    """Per-batch law handles plus the joint view."""
    joint = EnsembleLaw(paths, weights, actions)
    return joint, [joint.batch(c) for c in range(paths.shape[0])]


def _simulate(coeffs, t, xi, control, noise, frozen, record, k_stop):
    grid = xi.grid
    if noise.grid != grid:
        raise ShapeError("noise and ensemble grids differ")
    k0 = grid.index_of(t)
    k_stop = grid.steps if k_stop is None else k_stop
    if k0 < noise.k_start or k_stop > noise.k_stop:
        raise ShapeError("noise window does not cover the simulation window")
    xi = noise.expand(xi)
    vals = np.array(xi.values)
    vals[:, :, k0 + 1 :, :] = vals[:, :, k0 : k0 + 1, :]
    weights = xi.weights
    mc, mi, _, d = vals.shape
    dt = grid.dt

    n = k_stop - k0
    f_path = np.zeros(n)
    acts = np.zeros((mc, mi, n))
    drift = np.zeros((mc, mi, n, d)) if record else None
    vol = np.zeros((mc, mi, n, d, d)) if record else None
    frozen_paths = vals[:, :, : k0 + 1, :].copy() if frozen else None

    b_all = np.empty((mc, mi, d))
    s_all = np.empty((mc, mi, d, d))
    for k in range(k0, k_stop):
        j = k - k0
        tk = grid.time_of(k)
        arg_paths = frozen_paths if frozen else vals[:, :, : k + 1, :]
        a = control.actions(k, vals[:, :, k, :], noise)
        acts[:, :, j] = a
        joint, batches = _batch_views(arg_paths, weights, a)
        f_path[j] = float(coeffs.f(tk, joint, joint))
        for c in range(mc):
            law = batches[c]
            b_all[c] = coeffs.b(tk, arg_paths[c], a[c], law, law)
            s_all[c] = coeffs.sigma(tk, arg_paths[c], a[c], law, law)
        dB = noise.increments(k)
        new = vals[:, :, k, :] + b_all * dt + np.einsum("cmij,cmj->cmi", s_all, dB)
        if not np.isfinite(new).all():
            raise SimulationError("non-finite state in simulation", k)
        vals[:, :, k + 1, :] = new
        if record:
            drift[:, :, j] = b_all
            vol[:, :, j] = s_all
    if k_stop < grid.steps:
        vals[:, :, k_stop + 1 :, :] = vals[:, :, k_stop : k_stop + 1, :]
    rec = SimRecord(k0, f_path, acts, drift, vol)
    return ProcessEnsemble(grid, vals, weights, record=rec)


def simulate_state(
    coeffs: CoefficientSet,
    t: float,
    xi: ProcessEnsemble,
    control: ControlSpec,
    noise: NoiseBundle,
    record: bool = False,
    k_stop: int | None = None,
) -> ProcessEnsemble:
    """Simulate the controlled state on [t, T] (or up to grid step k_stop)."""
    return _simulate(coeffs, t, xi, control, noise, False, record, k_stop)


def simulate_frozen(
    coeffs: CoefficientSet,
    t: float,
    xi: ProcessEnsemble,
    control: ControlSpec,
    noise: NoiseBundle,
    record: bool = False,
    k_stop: int | None = None,
) -> ProcessEnsemble:
    """Simulate with state and law arguments frozen at (t, xi stopped at t)."""
    return _simulate(coeffs, t, xi, control, noise, True, record, k_stop)


@dataclass(frozen=True)
class TildeCoefficients:
    """Random, control-indexed integrands with a declared dominating bound.

    b(t, a (m_c, m_i)) and sigma(t, a) broadcast to (m_c, m_i, d) and
    (m_c, m_i, d, d); f(t, a) is scalar.  gamma_star dominates |b| + |sigma|.
    """

    b: callable
    sigma: callable
    f: callable
    gamma_star: float
    d: int = 1


@dataclass(frozen=True)
class LiftedIntegral:
    ipath: ProcessEnsemble  # compensated integrator per particle
    fpath: np.ndarray  # cumulative running integrand at every node, (steps + 1,)
    bound_violated: bool


def integrate_lifted(
    tilde: TildeCoefficients,
    t_tilde: float,
    xi_tilde: ProcessEnsemble,
    control: ControlSpec,
    X: ProcessEnsemble,
    noise: NoiseBundle,
) -> LiftedIntegral:
    """Compensated integrator I_k = X_k - anchor - sum b dt - sum sigma dB.

    The anchor is the value of xi_tilde at t_tilde.  F accumulates the
    running integrand from t_tilde with left-point weights.  A violation of
    the declared domination bound is recorded and warned, not fatal.
    """
    grid = X.grid
    k_t = grid.index_of(t_tilde)
    if k_t < noise.k_start:
        raise ShapeError("noise window does not reach t_tilde")
    X = noise.expand(X)
    xt = noise.expand(xi_tilde)
    anchor = xt.values[:, :, k_t, :]
    mc, mi, _, d = X.values.shape
    dt = grid.dt

    vals = np.zeros_like(np.array(X.values))
    fpath = np.zeros(grid.steps + 1)
    comp = np.zeros((mc, mi, d))
    violated = False
    vals[:, :, : k_t + 1, :] = X.values[:, :, : k_t + 1, :] - anchor[:, :, None, :]
    for k in range(k_t, grid.steps):
        a = control.actions(k, X.values[:, :, k, :], noise)
        bk = np.broadcast_to(np.asarray(tilde.b(grid.time_of(k), a), dtype=float), (mc, mi, d))
        sk = np.broadcast_to(
            np.asarray(tilde.sigma(grid.time_of(k), a), dtype=float), (mc, mi, d, d)
        )
        size = np.sqrt((bk**2).sum(axis=-1)) + np.sqrt((sk**2).sum(axis=(-2, -1)))
        if size.max() > tilde.gamma_star + 1e-12:
            violated = True
        dB = noise.increments(k)
        comp = comp + bk * dt + np.einsum("cmij,cmj->cmi", sk, dB)
        vals[:, :, k + 1, :] = X.values[:, :, k + 1, :] - anchor - comp
        fpath[k + 1] = fpath[k] + float(tilde.f(grid.time_of(k), a)) * dt
    if violated:
        warnings.warn("dominating bound violated by tilde coefficients", ContractWarning)
    return LiftedIntegral(
        ProcessEnsemble(grid, vals, X.weights), fpath, violated
    )


@dataclass(frozen=True)
class SdeReport:
    growth_ratios: np.ndarray  # |X|_p / (1 + |xi|_p) per scenario
    stability_ratios: np.ndarray  # |X - X'|_p / |xi - xi'|_p per pair
    stability_bound: float  # exp(L T)
    holder_slope: float  # fitted exponent of |X_{.^s} - X_{.^t}|_p vs |s - t|
    diverging: bool  # ratios grew materially under grid refinement


def check_sde_estimates(
    coeffs: CoefficientSet,
    t: float,
    ensembles: list[ProcessEnsemble],
    control_for,
    noise_for,
    p: float = 2.0,
    refine: int = 2,
) -> SdeReport:
    """Empirical moment, stability and time-regularity diagnostics.

    `noise_for(grid)` and `control_for(grid)` build comparable noise and a
    control on any refinement of the base grid.  The report never fails;
    callers read the ratios and the divergence flag.
    """
    if len(ensembles) < 2:
        raise ValueError("need at least two initial ensembles")
    grid = ensembles[0].grid

    def run(xi, g=None):
        g = grid if g is None else g
        return simulate_state(coeffs, t, xi, control_for(g), noise_for(g))

    sims = [run(xi) for xi in ensembles]
    growth = np.array(
        [s.norm(p) / (1.0 + xi.norm(p, t)) for s, xi in zip(sims, ensembles)]
    )
    stab = []
    for (xa, sa), (xb, sb) in zip(zip(ensembles, sims), zip(ensembles[1:], sims[1:])):
        dxi = ProcessEnsemble(grid, xa.values - xb.values, xa.weights)
        dX = ProcessEnsemble(grid, sa.values - sb.values, sa.weights)
        denom = dxi.norm(p, t)
        if denom > 1e-14:
            stab.append(dX.norm(p) / denom)
    stab = np.array(stab)

    # time regularity: |X_{. ^ s} - X_{. ^ s'}|_p against |s - s'|^(1/2)
    s0 = sims[0]
    k0 = grid.index_of(t)
    lags, diffs = [], []
    for k in range(k0 + 1, grid.steps + 1):
        a = s0.stopped(grid.time_of(k))
        b = s0.stopped(t)
        dl = ProcessEnsemble(grid, a.values - b.values, a.weights)
        lags.append(grid.time_of(k) - t)
        diffs.append(dl.norm(p))
    lags, diffs = np.array(lags), np.array(diffs)
    keep = diffs > 1e-14
    if keep.sum() >= 2:
        slope = float(np.polyfit(np.log(lags[keep]), np.log(diffs[keep]), 1)[0])
    else:
        slope = float("nan")

    # refinement: growth ratio on a finer grid for the first scenario
    fine = TimeGrid_refined(grid, refine)
    xi_f = _regrid(ensembles[0], fine)
    sim_f = simulate_state(coeffs, t, xi_f, control_for(fine), noise_for(fine))
    g_f = sim_f.norm(p) / (1.0 + xi_f.norm(p, t))
    diverging = bool(g_f > 2.0 * max(growth[0], 1e-12) + 1e-9)

    return SdeReport(growth, stab, float(np.exp(coeffs.L * (grid.horizon - t))), slope, diverging)


def TimeGrid_refined(grid, factor: int):
    from .core import TimeGrid

    return TimeGrid(grid.start, grid.horizon, grid.steps * factor)


def _regrid(xi: ProcessEnsemble, fine) -> ProcessEnsemble:
    """Piecewise-constant refinement of an ensemble onto a finer grid."""
    factor = fine.steps // xi.grid.steps
    vals = np.repeat(xi.values, factor, axis=2)[:, :, : fine.steps + 1, :]
    vals[:, :, -1, :] = xi.values[:, :, -1, :]
    return ProcessEnsemble(fine, vals, xi.weights)
