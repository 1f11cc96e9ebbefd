"""Problem data: drift, volatility, running and terminal cost.

Coefficients are evaluated per common batch on physically truncated path
arrays, so they cannot peek past the current node.  Law handles expose the
empirical cross-section of the batch (conditional on the common index), and
the running/terminal costs see the joint view over all batches.

Callable contracts (n = particles in the batch, k = current node):

    b(t, paths (n, k+1, d), a (n,), law, ctrl)      -> (n, d)
    sigma(t, paths (n, k+1, d), a (n,), law, ctrl)  -> (n, d, d)
    f(t, law, ctrl)                                 -> float
    g(law)                                          -> float
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "BatchLaw",
    "EnsembleLaw",
    "CoefficientSet",
    "PointwiseProblem",
    "make_coefficients",
    "register",
    "registered_names",
]


class BatchLaw:
    """Empirical conditional law of one common batch: paths, actions, weights.

    `index` is the absolute common index and `idio` the absolute idio
    indices of the rows, so scenario-random coefficients can look up their
    own randomness even on sub-ensembles.
    """

    __slots__ = ("paths", "weights", "actions", "index", "idio")

    def __init__(self, paths, weights, actions=None, index=0, idio=None):
        self.paths = paths  # (n, k+1, d)
        self.weights = weights  # (n,), sums to one within the batch
        self.actions = actions  # (n,) or None
        self.index = index
        self.idio = np.arange(paths.shape[0]) if idio is None else idio

    @property
    def states(self) -> np.ndarray:
        return self.paths[:, -1, :]

    def expect(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values)
        return np.tensordot(self.weights, values, axes=(0, 0))

    def mean_state(self) -> np.ndarray:
        return self.expect(self.states)

    def sup_norms(self) -> np.ndarray:
        return np.sqrt((self.paths**2).sum(axis=2)).max(axis=1)


class EnsembleLaw:
    """Joint empirical view over all batches, with the batch structure kept."""

    __slots__ = ("paths", "weights", "actions", "idio", "common")

    def __init__(self, paths, weights, actions=None, idio=None, common=None):
        self.paths = paths  # (m_c, m_i, k+1, d)
        self.weights = weights  # (m_c, m_i), sums to one
        self.actions = actions  # (m_c, m_i) or None
        self.idio = np.arange(paths.shape[1]) if idio is None else idio
        self.common = np.arange(paths.shape[0]) if common is None else common

    @property
    def m_common(self) -> int:
        return self.paths.shape[0]

    @property
    def states(self) -> np.ndarray:
        return self.paths[:, :, -1, :]

    @property
    def batch_weights(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    def batch(self, c: int) -> BatchLaw:
        wc = self.weights[c]
        total = wc.sum()
        w = wc / total if total > 0 else np.full_like(wc, 1.0 / len(wc))
        a = None if self.actions is None else self.actions[c]
        return BatchLaw(self.paths[c], w, a, index=int(self.common[c]), idio=self.idio)

    def batches(self):
        return (self.batch(c) for c in range(self.m_common))

    def expect(self, values: np.ndarray) -> float:
        return float((self.weights * values).sum())

    def mean_state(self) -> np.ndarray:
        return np.tensordot(self.weights, self.states, axes=([0, 1], [0, 1]))


@dataclass(frozen=True)
class PointwiseProblem:
    """State-dependent scalar form of a decoupled problem (1-d state)."""

    b: Callable  # (t, x (n,), a) -> (n,)
    sigma: Callable  # (t, x (n,), a) -> (n,)
    f: Callable  # (t, x (n,), a) -> (n,)
    g: Callable  # (x (n,)) -> (n,)


@dataclass(frozen=True)
class CoefficientSet:
    b: Callable
    sigma: Callable
    f: Callable
    g: Callable
    L: float
    beta: float
    C0: float
    p: float
    label: str = ""
    decoupled: bool = False
    pointwise: PointwiseProblem | None = None
    closed_form: Callable | None = None  # (t, xi) -> exact value, when known


# ----------------------------------------------------------------------
# registry of named coefficient sets

_REGISTRY: dict[str, Callable] = {}


def register(name: str):
    def deco(fn):
        _REGISTRY[name] = fn
        return fn

    return deco


def registered_names() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


def make_coefficients(name: str, dim: int = 1, **params) -> CoefficientSet:
    if name not in _REGISTRY:
        raise KeyError(f"unknown coefficient set {name!r}")
    return _REGISTRY[name](dim=dim, **params)


def _zeros_b(dim):
    return lambda t, paths, a, law, ctrl: np.zeros((paths.shape[0], dim))


def _zeros_sigma(dim):
    return lambda t, paths, a, law, ctrl: np.zeros((paths.shape[0], dim, dim))


def _eye_sigma(dim, scale=1.0):
    eye = scale * np.eye(dim)
    return lambda t, paths, a, law, ctrl: np.broadcast_to(eye, (paths.shape[0], dim, dim))


def _zero_f(t, law, ctrl):
    return 0.0


@register("zero")
def _zero(dim=1, **kw):
    g = lambda law: float(law.expect(law.states[..., 0]))
    return CoefficientSet(
        _zeros_b(dim), _zeros_sigma(dim), _zero_f, g,
        L=0.0, beta=1.0, C0=0.0, p=2.0, label="zero", decoupled=True,
        pointwise=PointwiseProblem(
            b=lambda t, x, a: np.zeros_like(x),
            sigma=lambda t, x, a: np.zeros_like(x),
            f=lambda t, x, a: np.zeros_like(x),
            g=lambda x: x,
        ),
        closed_form=lambda t, xi: float(
            (xi.weights * xi.stopped(t).values[:, :, -1, 0]).sum()
        ),
    )


@register("heat")
def _heat(dim=1, **kw):
    g = lambda law: float(law.expect((law.states**2).sum(axis=-1)))

    def closed(t, xi):
        k = xi.grid.index_of(t)
        second = (xi.weights * (xi.values[:, :, k, :] ** 2).sum(axis=-1)).sum()
        return float(second + dim * (xi.grid.horizon - t))

    return CoefficientSet(
        _zeros_b(dim), _eye_sigma(dim), _zero_f, g,
        L=0.0, beta=1.0, C0=1.0, p=2.0, label="heat", decoupled=True,
        pointwise=PointwiseProblem(
            b=lambda t, x, a: np.zeros_like(x),
            sigma=lambda t, x, a: np.ones_like(x),
            f=lambda t, x, a: np.zeros_like(x),
            g=lambda x: x**2,
        ),
        closed_form=closed,
    )


@register("lq")
def _lq(dim=1, sigma0=1.0, qf=1.0, **kw):
    """Drift control b = a e_1, running cost qf * E[a^2], terminal E[|x|^2]."""

    def b(t, paths, a, law, ctrl):
        out = np.zeros((paths.shape[0], dim))
        out[:, 0] = a
        return out

    def f(t, law, ctrl):
        return float(qf * law.expect(law.actions**2))

    g = lambda law: float(law.expect((law.states**2).sum(axis=-1)))
    return CoefficientSet(
        b, _eye_sigma(dim, sigma0), f, g,
        L=0.0, beta=1.0, C0=max(1.0, sigma0), p=2.0, label="lq", decoupled=True,
        pointwise=PointwiseProblem(
            b=lambda t, x, a: np.full_like(x, a),
            sigma=lambda t, x, a: np.full_like(x, sigma0),
            f=lambda t, x, a: np.full_like(x, qf * a**2),
            g=lambda x: x**2,
        ),
    )


@register("drift")
def _drift(dim=1, **kw):
    """Pure drift control b = a e_1, no noise, linear terminal payoff."""

    def b(t, paths, a, law, ctrl):
        out = np.zeros((paths.shape[0], dim))
        out[:, 0] = a
        return out

    g = lambda law: float(law.expect(law.states[..., 0]))
    return CoefficientSet(
        b, _zeros_sigma(dim), _zero_f, g,
        L=0.0, beta=1.0, C0=1.0, p=2.0, label="drift", decoupled=True,
        pointwise=PointwiseProblem(
            b=lambda t, x, a: np.full_like(x, a),
            sigma=lambda t, x, a: np.zeros_like(x),
            f=lambda t, x, a: np.zeros_like(x),
            g=lambda x: x,
        ),
    )


@register("ou")
def _ou(dim=1, rate=1.0, sigma0=1.0, **kw):
    """Mean-reverting drift -rate * x_t with additive noise (no control)."""
    b = lambda t, paths, a, law, ctrl: -rate * paths[:, -1, :]
    g = lambda law: float(law.expect((law.states**2).sum(axis=-1)))
    return CoefficientSet(
        b, _eye_sigma(dim, sigma0), _zero_f, g,
        L=rate, beta=1.0, C0=max(1.0, sigma0), p=2.0, label="ou", decoupled=True,
    )


@register("mean_revert")
def _mean_revert(dim=1, rate=1.0, sigma0=0.0, **kw):
    """Reversion to the batch mean: b = -rate (x_t - E[x_t | batch])."""

    def b(t, paths, a, law, ctrl):
        return -rate * (paths[:, -1, :] - law.mean_state()[None, :])

    g = lambda law: float(law.expect((law.states**2).sum(axis=-1)))
    return CoefficientSet(
        b, _eye_sigma(dim, sigma0), _zero_f, g,
        L=2 * rate, beta=1.0, C0=max(1.0, sigma0), p=2.0, label="mean_revert",
    )


@register("path_max")
def _path_max(dim=1, **kw):
    """Unit volatility with running-maximum terminal payoff."""

    def g(law):
        running = law.paths[..., 0].max(axis=-1)  # (m_c, m_i)
        return float(law.expect(running))

    return CoefficientSet(
        _zeros_b(dim), _eye_sigma(dim), _zero_f, g,
        L=1.0, beta=1.0, C0=1.0, p=2.0, label="path_max",
    )


@register("lq_drift")
def _lq_drift(dim=1, qf=0.5, **kw):
    """LQ data with unit volatility (drift control on constant-vol noise)."""
    return _lq(dim=dim, sigma0=1.0, qf=qf)
