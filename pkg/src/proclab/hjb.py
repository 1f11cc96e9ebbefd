"""Hamiltonian evaluation, classical residuals, a monotone finite-difference
oracle for decoupled scalar problems, and the constant-volatility transform.

The Hamiltonian of a stopped ensemble against per-particle first and second
order sensitivities (Z, Gamma) is

    H(a) = E[ b . Z + 0.5 (sigma sigma^T) : Gamma ] + f,

minimized over the finite action grid.  For a decoupled problem the explicit
upwind scheme provides an independent state-space value table; agreement of
the particle value with the table's ensemble average is the lift check.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .coeffs import BatchLaw, CoefficientSet, EnsembleLaw, PointwiseProblem
from .controls import ControlFamily, ControlSpec
from .core import ContractError, ProcessEnsemble
from .gauge import SmoothFunctional, smooth_eval
from .noise import NoiseBundle
from .value import ValueEstimate, value_V

__all__ = [
    "HamiltonianValues",
    "hamiltonian",
    "hamiltonian_at",
    "classical_residual",
    "FDTable",
    "fd_solve",
    "check_lift",
    "LiftReport",
    "feedback_from_table",
    "transform_constant_vol",
    "TransformReport",
]


class HamiltonianValues(NamedTuple):
    values: tuple[float, ...]
    minimum: float
    argmin_index: int


def hamiltonian_at(
    coeffs: CoefficientSet,
    t: float,
    paths: np.ndarray,  # (m_c, m_i, k+1, d), stopped
    weights: np.ndarray,
    actions: np.ndarray,  # (m_c, m_i)
    Z: np.ndarray,  # (m_c, m_i, d)
    Gamma: np.ndarray,  # (m_c, m_i, d, d)
) -> float:
    """Generator expectation for one (possibly random) action profile."""
    joint = EnsembleLaw(paths, weights, actions)
    total = float(coeffs.f(t, joint, joint))
    per = np.zeros(weights.shape)
    for c in range(paths.shape[0]):
        law = joint.batch(c)
        b = coeffs.b(t, paths[c], actions[c], law, law)
        s = coeffs.sigma(t, paths[c], actions[c], law, law)
        per[c] = np.einsum("mi,mi->m", b, Z[c]) + 0.5 * np.einsum(
            "mij,mik,mjk->m", Gamma[c], s, s
        )
    return total + float((weights * per).sum())


def hamiltonian(
    coeffs: CoefficientSet,
    t: float,
    xi: ProcessEnsemble,
    Z: np.ndarray,
    Gamma: np.ndarray,
    action_grid,
) -> HamiltonianValues:
    """Hamiltonian per constant action and its minimum over the grid."""
    k = xi.grid.index_of(t)
    stopped = xi.stopped(t)
    paths = stopped.values[:, :, : k + 1, :]
    vals = []
    for a in action_grid:
        acts = np.full(xi.weights.shape, float(a))
        vals.append(hamiltonian_at(coeffs, t, paths, xi.weights, acts, Z, Gamma))
    best = int(np.argmin(vals))
    return HamiltonianValues(tuple(vals), vals[best], best)


def classical_residual(
    U: SmoothFunctional,
    coeffs: CoefficientSet,
    t: float,
    xi: ProcessEnsemble,
    action_grid,
) -> float:
    """Time derivative plus minimal Hamiltonian of a smooth candidate."""
    ev = smooth_eval(U, t, xi)
    h = hamiltonian(coeffs, t, xi, ev.grad, ev.hess, action_grid)
    return ev.dt + h.minimum


# ----------------------------------------------------------------------
# finite-difference oracle (decoupled, one-dimensional state)


@dataclass(frozen=True)
class FDTable:
    times: np.ndarray  # (n_t + 1,)
    xs: np.ndarray  # (n_x,)
    v: np.ndarray  # (n_t + 1, n_x)
    argmin: np.ndarray  # (n_t, n_x) indices into the action grid
    action_grid: tuple[float, ...]

    def _time_row(self, t: float) -> int:
        k = int(round((t - self.times[0]) / (self.times[1] - self.times[0])))
        if not (0 <= k < len(self.times)) or abs(self.times[k] - t) > 1e-9:
            raise ValueError(f"time {t} is not an FD layer")
        return k

    def value(self, t: float, x) -> np.ndarray:
        """Linear interpolation in x (linear extrapolation off the grid)."""
        row = self.v[self._time_row(t)]
        x = np.atleast_1d(np.asarray(x, dtype=float))
        dx = self.xs[1] - self.xs[0]
        j = np.clip(((x - self.xs[0]) / dx).astype(int), 0, len(self.xs) - 2)
        w = (x - self.xs[j]) / dx
        return row[j] * (1 - w) + row[j + 1] * w

    def action(self, t: float, x) -> np.ndarray:
        dt = self.times[1] - self.times[0]
        k = int(np.clip(round((t - self.times[0]) / dt), 0, len(self.times) - 2))
        x = np.atleast_1d(np.asarray(x, dtype=float))
        j = np.clip(
            np.round((x - self.xs[0]) / (self.xs[1] - self.xs[0])).astype(int),
            0,
            len(self.xs) - 1,
        )
        grid = np.asarray(self.action_grid)
        return grid[self.argmin[k, j]]

    def to_csv(self, path) -> None:
        lines = ["t,x,v"]
        for i, t in enumerate(self.times):
            for j, x in enumerate(self.xs):
                lines.append(f"{t!r},{x!r},{self.v[i, j]!r}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def fd_solve(
    problem: PointwiseProblem,
    action_grid,
    x_lo: float,
    x_hi: float,
    dx: float,
    t0: float,
    horizon: float,
    n_t: int,
) -> FDTable:
    """Explicit monotone upwind scheme with per-node action minimization.

    Boundary nodes use linear extrapolation (zero second difference,
    one-sided first difference).  Raises if the monotonicity (CFL)
    condition dt * (sigma^2 / dx^2 + |b| / dx) <= 1 fails anywhere.
    """
    xs = np.arange(x_lo, x_hi + 0.5 * dx, dx)
    n_x = len(xs)
    dt = (horizon - t0) / n_t
    times = t0 + dt * np.arange(n_t + 1)
    grid = [float(a) for a in action_grid]

    worst = 0.0
    for tk in times[:-1]:
        for a in grid:
            b = np.asarray(problem.b(tk, xs, a), dtype=float)
            s = np.asarray(problem.sigma(tk, xs, a), dtype=float)
            worst = max(worst, float((dt * (s**2 / dx**2 + np.abs(b) / dx)).max()))
    if worst > 1.0 + 1e-12:
        raise ValueError(
            f"CFL violated: dt (sigma^2/dx^2 + |b|/dx) reaches {worst:.3f} > 1"
        )

    v = np.zeros((n_t + 1, n_x))
    argmin = np.zeros((n_t, n_x), dtype=int)
    v[n_t] = np.asarray(problem.g(xs), dtype=float)
    for k in range(n_t - 1, -1, -1):
        tk = times[k]
        vn = v[k + 1]
        ghost_lo = 2 * vn[0] - vn[1]
        ghost_hi = 2 * vn[-1] - vn[-2]
        ext = np.concatenate([[ghost_lo], vn, [ghost_hi]])
        dp = (ext[2:] - ext[1:-1]) / dx
        dm = (ext[1:-1] - ext[:-2]) / dx
        d2 = (ext[2:] - 2 * ext[1:-1] + ext[:-2]) / dx**2
        best = None
        besta = None
        for ia, a in enumerate(grid):
            b = np.asarray(problem.b(tk, xs, a), dtype=float)
            s = np.asarray(problem.sigma(tk, xs, a), dtype=float)
            f = np.asarray(problem.f(tk, xs, a), dtype=float)
            gen = np.maximum(b, 0) * dp + np.minimum(b, 0) * dm + 0.5 * s**2 * d2 + f
            if best is None:
                best, besta = gen, np.full(n_x, ia)
            else:
                take = gen < best
                best = np.where(take, gen, best)
                besta = np.where(take, ia, besta)
        v[k] = vn + dt * best
        argmin[k] = besta
    return FDTable(times, xs, v, argmin, tuple(grid))


def feedback_from_table(table: FDTable, grid, k_from: int, k_to: int) -> ControlSpec:
    """Feedback control that reads the table's minimizing action."""

    def rule(k: int, states: np.ndarray) -> np.ndarray:
        return table.action(grid.time_of(k), states[:, 0])

    return ControlSpec(
        "feedback", table.action_grid, k_from, k_to, rule=rule, check_grid=False
    )


@dataclass(frozen=True)
class LiftReport:
    particle_value: float
    table_value: float
    gap: float
    stderr: float
    fd_error: float
    tolerance: float
    passed: bool


def check_lift(
    table: FDTable,
    coeffs: CoefficientSet,
    t: float,
    xi: ProcessEnsemble,
    family: ControlFamily,
    noise: NoiseBundle,
    fd_error: float = 0.0,
    rel_tol: float = 0.0,
) -> LiftReport:
    """Particle value against the ensemble average of the FD table at t."""
    if not coeffs.decoupled or coeffs.pointwise is None:
        raise ContractError("lift check requires a decoupled scenario")
    est = value_V(coeffs, t, xi, family, noise)
    xi_e = noise.expand(xi)
    k = xi.grid.index_of(t)
    states = xi_e.values[:, :, k, 0]
    table_value = float((xi_e.weights * table.value(t, states.reshape(-1)).reshape(states.shape)).sum())
    gap = est.value - table_value
    tol = 3.0 * est.stderr + fd_error + rel_tol * abs(table_value) + 1e-12
    return LiftReport(est.value, table_value, gap, est.stderr, fd_error, tol, abs(gap) <= tol)


# ----------------------------------------------------------------------
# constant-volatility transform


@dataclass(frozen=True)
class TransformReport:
    direct: float
    transformed: float
    gap: float
    max_candidate_gap: float
    passed: bool
    tolerance: float


def _shifted_coeffs(coeffs: CoefficientSet, bpaths: np.ndarray) -> CoefficientSet:
    """Rewrite the data in the shifted frame: paths enter plus the noise path."""

    def b(t, paths, a, law, ctrl):
        k = paths.shape[1]
        shifted = paths + bpaths[law.index, law.idio, :k, :]
        law2 = BatchLaw(shifted, law.weights, law.actions, law.index, law.idio)
        return coeffs.b(t, shifted, a, law2, law2)

    def sigma(t, paths, a, law, ctrl):
        n, _, d = paths.shape
        return np.zeros((n, d, d))

    def f(t, law, ctrl):
        k = law.paths.shape[2]
        shifted = law.paths + bpaths[:, law.idio, :k, :]
        law2 = EnsembleLaw(shifted, law.weights, law.actions, idio=law.idio)
        return coeffs.f(t, law2, law2)

    def g(law):
        k = law.paths.shape[2]
        shifted = law.paths + bpaths[:, law.idio, :k, :]
        return coeffs.g(EnsembleLaw(shifted, law.weights, law.actions, idio=law.idio))

    return CoefficientSet(
        b, sigma, f, g, coeffs.L, coeffs.beta, coeffs.C0, coeffs.p,
        label=coeffs.label + "+shifted",
    )


def transform_constant_vol(
    coeffs: CoefficientSet,
    t: float,
    xi: ProcessEnsemble,
    family: ControlFamily,
    noise: NoiseBundle,
    tol: float = 1e-10,
) -> TransformReport:
    """Value of the identity-volatility problem against its drift-only twin.

    The twin removes the noise from the state and pushes it into the data:
    every path argument of (b, f, g) is shifted by the realized noise path.
    Candidate by candidate the two costs agree up to float roundoff, so the
    infima agree as well.
    """
    k0 = xi.grid.index_of(t)
    xi_e = noise.expand(xi)
    probe = xi_e.values[:, :, : k0 + 1, :]
    joint = EnsembleLaw(probe, xi_e.weights, np.zeros(xi_e.weights.shape))
    law = joint.batch(0)
    a0 = np.full(probe.shape[1], float(family.action_grid[0]))
    s = coeffs.sigma(t, probe[0], a0, law, law)
    if not np.allclose(s, np.eye(xi.dim), atol=1e-12):
        raise ContractError("transform requires identity volatility")

    bpaths = np.zeros((noise.m_common, noise.m_idio, xi.grid.steps + 1, noise.d))
    cum = noise.brownian_paths()
    bpaths[:, :, noise.k_start : noise.k_start + noise.n_steps + 1, :] = cum
    bpaths[:, :, noise.k_start + noise.n_steps :, :] = cum[:, :, -1:, :]

    direct = value_V(coeffs, t, xi, family, noise)
    shifted = _shifted_coeffs(coeffs, bpaths)
    twin = value_V(shifted, t, xi, family, noise)
    worst = max(
        abs(a - b) for a, b in zip(direct.candidates, twin.candidates)
    )
    gap = abs(direct.value - twin.value)
    return TransformReport(direct.value, twin.value, gap, worst, worst <= tol, tol)
