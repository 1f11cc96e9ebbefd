"""Core value objects: time grids, discrete paths, particle ensembles.

A stochastic process is represented at desk scale by an ensemble of paths
sampled at the nodes of one shared time grid.  Particles carry two indices:
a *common* index (scenarios of the shared noise) and an *idiosyncratic*
index (particles within a common scenario).  All objects are immutable
value types after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ShapeError",
    "SimulationError",
    "ContractError",
    "ContractWarning",
    "TimeGrid",
    "PathSample",
    "ProcessEnsemble",
    "SimRecord",
    "stopped_path",
    "process_norm",
    "constant_ensemble",
    "ensemble_from_states",
    "random_ensemble",
]


class ShapeError(ValueError):
    """Grids, ensembles or noise bundles do not line up."""


class ContractError(RuntimeError):
    """An operation was invoked outside its declared domain."""


class ContractWarning(UserWarning):
    """A soft contract (growth bound, domination bound, touching slack) failed."""


class SimulationError(RuntimeError):
    """Numeric failure (NaN or overflow) inside a simulation loop."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} at step {step}")
        self.step = step


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid with `steps` intervals on [start, horizon]."""

    start: float
    horizon: float
    steps: int

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be positive")
        if not self.horizon > self.start:
            raise ValueError("horizon must exceed start")

    @property
    def dt(self) -> float:
        return (self.horizon - self.start) / self.steps

    def times(self) -> np.ndarray:
        return self.start + self.dt * np.arange(self.steps + 1)

    def time_of(self, k: int) -> float:
        return self.start + k * self.dt

    def index_of(self, t: float) -> int:
        """Node index of `t`; raises if `t` is off-grid or out of range."""
        k = int(round((t - self.start) / self.dt))
        scale = max(1.0, abs(self.horizon), abs(self.start))
        if k < 0 or k > self.steps or abs(self.time_of(k) - t) > 1e-9 * scale:
            raise ValueError(f"time {t} is not a node of {self}")
        return k


def _freeze_after(values: np.ndarray, k: int) -> np.ndarray:
    """Copy of `values` with every node after `k` replaced by node `k`."""
    out = np.array(values, dtype=float)
    out[..., k + 1 :, :] = out[..., k : k + 1, :]
    return out


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.flags.writeable:
        a = a.copy()
        a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PathSample:
    """One discrete path: a d-vector per grid node."""

    grid: TimeGrid
    values: np.ndarray  # (steps + 1, d)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[0] != self.grid.steps + 1:
            raise ShapeError("path values must have shape (steps + 1, d)")
        object.__setattr__(self, "values", _readonly(vals))

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def stopped(self, t: float) -> "PathSample":
        k = self.grid.index_of(t)
        return PathSample(self.grid, _freeze_after(self.values, k))

    def sup_norm(self, t: float | None = None) -> float:
        """Max Euclidean node norm up to time t (whole path when t is None)."""
        k = self.grid.steps if t is None else self.grid.index_of(t)
        norms = np.sqrt((self.values[: k + 1] ** 2).sum(axis=1))
        return float(norms.max())


def stopped_path(x: PathSample, t: float) -> PathSample:
    """The path frozen at its value at time t from the node at t onward."""
    return x.stopped(t)


@dataclass(frozen=True)
class SimRecord:
    """Per-step data captured along a simulation."""

    k_start: int
    f_path: np.ndarray  # (n_steps,) running cost at left nodes
    actions: np.ndarray | None = None  # (m_common, m_idio, n_steps)
    drift: np.ndarray | None = None  # (m_common, m_idio, n_steps, d)
    vol: np.ndarray | None = None  # (m_common, m_idio, n_steps, d, d)


@dataclass(frozen=True)
class ProcessEnsemble:
    """Weighted particle representation of a process on a shared grid.

    values[c, i, k, :] is the state of particle (c, i) at node k.  Weights
    are joint probabilities over both particle axes and sum to one.
    """

    grid: TimeGrid
    values: np.ndarray  # (m_common, m_idio, steps + 1, d)
    weights: np.ndarray  # (m_common, m_idio)
    record: SimRecord | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 4 or vals.shape[2] != self.grid.steps + 1:
            raise ShapeError("ensemble values must be (m_common, m_idio, steps + 1, d)")
        if vals.shape[0] < 1 or vals.shape[1] < 1 or vals.shape[3] < 1:
            raise ShapeError("ensemble axes must be nonempty")
        w = np.asarray(self.weights, dtype=float)
        if w.shape != vals.shape[:2]:
            raise ShapeError("weights must match the particle axes")
        if np.any(w < -1e-15):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must sum to one")
        object.__setattr__(self, "values", _readonly(vals))
        object.__setattr__(self, "weights", _readonly(w))

    @property
    def m_common(self) -> int:
        return self.values.shape[0]

    @property
    def m_idio(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[3]

    @property
    def batch_weights(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    def particle(self, c: int, i: int) -> PathSample:
        return PathSample(self.grid, self.values[c, i])

    def stopped(self, t: float) -> "ProcessEnsemble":
        k = self.grid.index_of(t)
        return ProcessEnsemble(self.grid, _freeze_after(self.values, k), self.weights)

    def norm(self, p: float, t: float | None = None) -> float:
        return process_norm(self, p, t)

    def with_record(self, record: SimRecord | None) -> "ProcessEnsemble":
        return ProcessEnsemble(self.grid, self.values, self.weights, record)

    def to_csv(self, path) -> None:
        """Export as rows (common_idx, idio_idx, step, x_1..x_d, weight)."""
        d = self.dim
        header = "common_idx,idio_idx,step," + ",".join(f"x_{j + 1}" for j in range(d)) + ",weight"
        lines = [header]
        for c in range(self.m_common):
            for i in range(self.m_idio):
                w = repr(float(self.weights[c, i]))
                for k in range(self.grid.steps + 1):
                    coords = ",".join(repr(float(v)) for v in self.values[c, i, k])
                    lines.append(f"{c},{i},{k},{coords},{w}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def process_norm(xi: ProcessEnsemble, p: float, t: float | None = None) -> float:
    """Weighted L^p norm of the pathwise sup norm, optionally stopped at t.

    Returns (sum_i w_i * sup_{k <= k_t} |x_i(k)|^p)^(1/p).
    """
    if p < 1:
        raise ValueError("p must be at least 1")
    if xi.values.size == 0:
        raise ValueError("empty ensemble")
    k = xi.grid.steps if t is None else xi.grid.index_of(t)
    norms = np.sqrt((xi.values[:, :, : k + 1, :] ** 2).sum(axis=3)).max(axis=2)
    return float((xi.weights * norms**p).sum() ** (1.0 / p))


def constant_ensemble(
    grid: TimeGrid, value, m_common: int = 1, m_idio: int = 1
) -> ProcessEnsemble:
    """Ensemble whose every particle sits at `value` for all times."""
    v = np.atleast_1d(np.asarray(value, dtype=float))
    vals = np.broadcast_to(
        v, (m_common, m_idio, grid.steps + 1, v.shape[0])
    ).copy()
    w = np.full((m_common, m_idio), 1.0 / (m_common * m_idio))
    return ProcessEnsemble(grid, vals, w)


def ensemble_from_states(
    grid: TimeGrid, states: np.ndarray, weights: np.ndarray | None = None
) -> ProcessEnsemble:
    """Ensemble with constant history equal to the given per-particle states.

    states has shape (m_common, m_idio, d).
    """
    states = np.asarray(states, dtype=float)
    mc, mi, d = states.shape
    vals = np.repeat(states[:, :, None, :], grid.steps + 1, axis=2)
    if weights is None:
        weights = np.full((mc, mi), 1.0 / (mc * mi))
    return ProcessEnsemble(grid, vals, weights)


def random_ensemble(
    grid: TimeGrid,
    t: float,
    m_common: int,
    m_idio: int,
    dim: int,
    seed: int,
    mean: float = 0.0,
    std: float = 1.0,
    history: str = "constant",
) -> ProcessEnsemble:
    """Random initial ensemble defined (and frozen) up to time t.

    history "constant" puts each particle at an iid Gaussian state for all
    nodes; "walk" draws a Gaussian random walk on [start, t] ending at the
    state, then freezes it.
    """
    rng = np.random.default_rng(seed)
    k = grid.index_of(t)
    states = mean + std * rng.standard_normal((m_common, m_idio, dim))
    if history == "constant":
        vals = np.repeat(states[:, :, None, :], grid.steps + 1, axis=2)
    elif history == "walk":
        incs = rng.standard_normal((m_common, m_idio, k, dim)) * np.sqrt(grid.dt)
        walk = np.zeros((m_common, m_idio, grid.steps + 1, dim))
        walk[:, :, 1 : k + 1, :] = np.cumsum(incs, axis=2)
        vals = walk - walk[:, :, k : k + 1, :] + states[:, :, None, :]
        vals = _freeze_after(vals, k)
    else:
        raise ValueError(f"unknown history kind {history!r}")
    w = np.full((m_common, m_idio), 1.0 / (m_common * m_idio))
    return ProcessEnsemble(grid, vals, w)
