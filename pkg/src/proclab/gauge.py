"""Smooth gauge machinery on paths and smooth test functionals.

The scalar gauge of a stopped path x with running sup a = max_k |x(k)| and
terminal value c = |x(t)| is

    G(x) = (a^p - c^p)^3 / a^(2p) * 1{a > 0} + 3 c^p,

an even-degree-p homogeneous functional squeezed between a^p and 3 a^p.  It
is twice continuously differentiable in the terminal value (the only
derivative the functional chain rule consumes), with

    |grad| <= 3 p c^(p-1),    |hess|_F <= 3 p (3p - 1) c^(p-2).

Pairs of time-and-process points are compared through the mean gauge of the
difference path plus a squared time penalty; doubled variants add the gauges
coordinate-wise.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .core import ContractWarning, ProcessEnsemble, ShapeError

__all__ = [
    "path_gauge",
    "path_gauge_derivatives",
    "GaugePoint",
    "DoubledPoint",
    "GaugeDistance",
    "gauge_distance",
    "SmoothFunctional",
    "SmoothEval",
    "smooth_eval",
    "ito_residual",
    "quadratic_functional",
    "linear_functional",
    "cubic_functional",
    "gauge_functional",
    "running_integral_functional",
]


def _check_p(p) -> int:
    if int(p) != p or p % 2 == 1:
        raise ValueError("gauge exponent p must be an even integer")
    if p < 6:
        raise ValueError("gauge exponent p must be at least 6")
    return int(p)


def path_gauge(values: np.ndarray, p: int) -> np.ndarray:
    """Gauge of stopped paths; values has shape (..., nodes, d)."""
    p = _check_p(p)
    v = np.asarray(values, dtype=float)
    norms = np.sqrt((v**2).sum(axis=-1))
    a = norms.max(axis=-1)
    c = norms[..., -1]
    ap, cp = a**p, c**p
    denom = np.where(a > 0, ap**2, 1.0)
    first = np.where(a > 0, (ap - cp) ** 3 / denom, 0.0)
    return first + 3.0 * cp


def path_gauge_derivatives(values: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form derivatives of the gauge in the terminal value.

    Returns (grad (..., d), hess (..., d, d)).  The running sup enters only
    through the ratio c^p / a^p; where the sup is attained at the terminal
    node the expression below coincides with both one-sided limits, so the
    formula is valid on the whole path space.
    """
    p = _check_p(p)
    v = np.asarray(values, dtype=float)
    x = v[..., -1, :]
    norms = np.sqrt((v**2).sum(axis=-1))
    a = norms.max(axis=-1)
    c = norms[..., -1]
    dim = v.shape[-1]

    ap, cp = a**p, c**p
    ratio = np.where(a > 0, cp / np.where(a > 0, ap, 1.0), 0.0)  # (c/a)^p in [0, 1]
    u = 1.0 - ratio
    cpm2 = c ** (p - 2)
    cpm4 = c ** (p - 4)

    grad = (3.0 * p * (1.0 - u**2) * cpm2)[..., None] * x

    eye = np.eye(dim)
    xxT = x[..., :, None] * x[..., None, :]
    coef_eye = 3.0 * p * (1.0 - u**2) * cpm2
    coef_xx = 3.0 * p * ((1.0 - u**2) * (p - 2) * cpm4 + 2.0 * p * u * cpm4 * ratio)
    hess = coef_eye[..., None, None] * eye + coef_xx[..., None, None] * xxT
    return grad, hess


@dataclass(frozen=True)
class GaugePoint:
    """A time together with a process stopped at that time."""

    t: float
    xi: ProcessEnsemble

    def __post_init__(self):
        k = self.xi.grid.index_of(self.t)
        v = self.xi.values
        if not np.array_equal(v[:, :, k + 1 :, :], np.broadcast_to(v[:, :, k : k + 1, :], v[:, :, k + 1 :, :].shape)):
            raise ShapeError("process must be stopped at the point's time")

    @classmethod
    def of(cls, t: float, xi: ProcessEnsemble) -> "GaugePoint":
        return cls(t, xi.stopped(t))


@dataclass(frozen=True)
class DoubledPoint:
    """A pair of gauge points; with a shared time it lives one level down."""

    first: GaugePoint
    second: GaugePoint

    def shares_time(self) -> bool:
        return self.first.t == self.second.t


class GaugeDistance(NamedTuple):
    metric: float  # |dt| + ||diff||_p (summed over components for pairs)
    gauge: float  # mean path gauge of the difference
    gauge_bar: float  # gauge plus squared time penalty


def _pair_gauge(a: GaugePoint, b: GaugePoint, p: int) -> tuple[float, float]:
    if a.xi.grid != b.xi.grid:
        raise ShapeError("gauge points live on different grids")
    if a.xi.values.shape != b.xi.values.shape or not np.allclose(
        a.xi.weights, b.xi.weights, atol=1e-12
    ):
        raise ShapeError("gauge points must share particle structure and weights")
    diff = a.xi.values - b.xi.values
    gauge = float((a.xi.weights * path_gauge(diff, p)).sum())
    diff_ens = ProcessEnsemble(a.xi.grid, diff, a.xi.weights)
    metric = abs(a.t - b.t) + diff_ens.norm(p)
    return metric, gauge


def gauge_distance(a, b, p: int, level: int = 0) -> GaugeDistance:
    """Metric, mean gauge and time-penalized gauge between two points."""
    p = _check_p(p)
    if level == 0:
        metric, gauge = _pair_gauge(a, b, p)
        return GaugeDistance(metric, gauge, gauge + (a.t - b.t) ** 2)
    if level == 1:
        if not (a.shares_time() and b.shares_time()):
            raise ShapeError("level-1 points must share one time per side")
        m1, g1 = _pair_gauge(a.first, b.first, p)
        m2, g2 = _pair_gauge(a.second, b.second, p)
        dt2 = (a.first.t - b.first.t) ** 2
        return GaugeDistance(m1 + m2, g1 + g2, g1 + g2 + dt2)
    if level == 2:
        m1, g1 = _pair_gauge(a.first, b.first, p)
        m2, g2 = _pair_gauge(a.second, b.second, p)
        bar = (
            g1
            + (a.first.t - b.first.t) ** 2
            + g2
            + (a.second.t - b.second.t) ** 2
        )
        return GaugeDistance(m1 + m2, g1 + g2, bar)
    raise ValueError("level must be 0, 1 or 2")


# ----------------------------------------------------------------------
# smooth test functionals


@dataclass(frozen=True)
class SmoothFunctional:
    """Mean of a pathwise map with closed-form derivatives.

    Evaluation at (t, xi) averages bar over the particles of
    xi stopped at t, shifted by the anchor stopped at base_time.  bar and
    its derivatives are vectorized over particles: inputs (n, nodes, d).
    """

    bar: Callable
    bar_dt: Callable
    bar_dx: Callable
    bar_dxx: Callable
    growth_exponent: int
    growth_const: float
    base_time: float = 0.0
    anchor: ProcessEnsemble | None = None
    label: str = ""


class SmoothEval(NamedTuple):
    value: float
    dt: float
    grad: np.ndarray  # (m_c, m_i, d)
    hess: np.ndarray  # (m_c, m_i, d, d)
    growth_ok: bool


def _shifted_paths(phi: SmoothFunctional, t: float, xi: ProcessEnsemble) -> np.ndarray:
    if t < phi.base_time - 1e-12:
        raise ValueError("functional evaluated before its base time")
    k = xi.grid.index_of(t)
    vals = xi.values[:, :, : k + 1, :]  # nodes up to t are already stopped
    if phi.anchor is not None:
        from .core import _freeze_after

        kb = xi.grid.index_of(phi.base_time)
        anchor = _freeze_after(phi.anchor.values[:, :, : k + 1, :], min(kb, k))
        vals = vals - anchor
    return vals


def smooth_eval(phi: SmoothFunctional, t: float, xi: ProcessEnsemble) -> SmoothEval:
    """Value and derivatives of a smooth functional at (t, xi)."""
    vals = _shifted_paths(phi, t, xi)
    mc, mi, nodes, d = vals.shape
    flat = vals.reshape(mc * mi, nodes, d)
    w = xi.weights.reshape(-1)

    v = np.asarray(phi.bar(t, flat), dtype=float)
    dt = np.asarray(phi.bar_dt(t, flat), dtype=float)
    grad = np.asarray(phi.bar_dx(t, flat), dtype=float)
    hess = np.asarray(phi.bar_dxx(t, flat), dtype=float)

    sup = np.sqrt((flat**2).sum(axis=2)).max(axis=1)
    q, C = phi.growth_exponent, phi.growth_const
    ok = bool(
        (np.abs(dt) <= C * (1 + sup**q) + 1e-9).all()
        and (np.sqrt((grad**2).sum(axis=1)) <= C * (1 + sup ** (q - 1)) + 1e-9).all()
        and (np.sqrt((hess**2).sum(axis=(1, 2))) <= C * (1 + sup ** (q - 2)) + 1e-9).all()
    )
    if not ok:
        warnings.warn(f"growth bound violated for functional {phi.label!r}", ContractWarning)

    return SmoothEval(
        float(w @ v),
        float(w @ dt),
        grad.reshape(mc, mi, d),
        hess.reshape(mc, mi, d, d),
        ok,
    )


def ito_residual(phi: SmoothFunctional, X: ProcessEnsemble, t1: float, t2: float) -> float:
    """Discrepancy of the functional chain rule along a simulated process.

    |phi(t2, X) - phi(t1, X) - sum_k (dt-part + E[grad . beta
    + 0.5 hess : gamma gamma^T]) dt| with (beta, gamma) from X.record.
    """
    rec = X.record
    if rec is None or rec.drift is None or rec.vol is None:
        raise ValueError("process carries no recorded drift/diffusion")
    grid = X.grid
    k1, k2 = grid.index_of(t1), grid.index_of(t2)
    if k1 < rec.k_start:
        raise ValueError("window starts before the recorded simulation")
    total = 0.0
    for k in range(k1, k2):
        ev = smooth_eval(phi, grid.time_of(k), X)
        beta = rec.drift[:, :, k - rec.k_start]
        gamma = rec.vol[:, :, k - rec.k_start]
        diff = np.einsum("cmi,cmi->cm", ev.grad, beta)
        quad = 0.5 * np.einsum("cmij,cmik,cmjk->cm", ev.hess, gamma, gamma)
        total += (ev.dt + float((X.weights * (diff + quad)).sum())) * grid.dt
    start = smooth_eval(phi, t1, X).value
    end = smooth_eval(phi, t2, X).value
    return abs(end - start - total)


# ----------------------------------------------------------------------
# ready-made functionals


def quadratic_functional(horizon: float, time_scale: float = 1.0, anchor=None, base_time=0.0):
    """bar(t, x) = |x_t|^2 + time_scale * (horizon - t)."""
    return SmoothFunctional(
        bar=lambda t, x: (x[:, -1, :] ** 2).sum(axis=1) + time_scale * (horizon - t),
        bar_dt=lambda t, x: np.full(x.shape[0], -time_scale),
        bar_dx=lambda t, x: 2.0 * x[:, -1, :],
        bar_dxx=lambda t, x: np.broadcast_to(
            2.0 * np.eye(x.shape[2]), (x.shape[0], x.shape[2], x.shape[2])
        ),
        growth_exponent=2,
        growth_const=max(2.0, 1.0 + abs(time_scale) * abs(horizon)),
        base_time=base_time,
        anchor=anchor,
        label="quadratic",
    )


def linear_functional(weights):
    w = np.atleast_1d(np.asarray(weights, dtype=float))
    return SmoothFunctional(
        bar=lambda t, x: x[:, -1, :] @ w,
        bar_dt=lambda t, x: np.zeros(x.shape[0]),
        bar_dx=lambda t, x: np.broadcast_to(w, (x.shape[0], len(w))),
        bar_dxx=lambda t, x: np.zeros((x.shape[0], len(w), len(w))),
        growth_exponent=2,
        growth_const=float(np.sqrt((w**2).sum()) + 1.0),
        label="linear",
    )


def cubic_functional(weights):
    w = np.atleast_1d(np.asarray(weights, dtype=float))
    wwT = np.outer(w, w)

    def dx(t, x):
        s = x[:, -1, :] @ w
        return 3.0 * (s**2)[:, None] * w[None, :]

    return SmoothFunctional(
        bar=lambda t, x: (x[:, -1, :] @ w) ** 3,
        bar_dt=lambda t, x: np.zeros(x.shape[0]),
        bar_dx=dx,
        bar_dxx=lambda t, x: 6.0 * (x[:, -1, :] @ w)[:, None, None] * wwT,
        growth_exponent=4,
        growth_const=float(6.0 * max(1.0, np.sqrt((w**2).sum())) ** 3),
        label="cubic",
    )


def gauge_functional(p: int, anchor: GaugePoint | None = None):
    """The path gauge as a smooth functional (anchored difference)."""
    p = _check_p(p)
    return SmoothFunctional(
        bar=lambda t, x: path_gauge(x, p),
        bar_dt=lambda t, x: np.zeros(x.shape[0]),
        bar_dx=lambda t, x: path_gauge_derivatives(x, p)[0],
        bar_dxx=lambda t, x: path_gauge_derivatives(x, p)[1],
        growth_exponent=p,
        growth_const=float(3 * p * (3 * p - 1)),
        base_time=anchor.t if anchor is not None else 0.0,
        anchor=anchor.xi if anchor is not None else None,
        label=f"gauge(p={p})",
    )


def running_integral_functional(weights, dt: float):
    """bar(t, x) = sum_{nodes before the current one} w . x(node) * dt."""
    w = np.atleast_1d(np.asarray(weights, dtype=float))
    return SmoothFunctional(
        bar=lambda t, x: (x[:, :-1, :] @ w).sum(axis=1) * dt,
        bar_dt=lambda t, x: x[:, -1, :] @ w,
        bar_dx=lambda t, x: np.zeros((x.shape[0], len(w))),
        bar_dxx=lambda t, x: np.zeros((x.shape[0], len(w), len(w))),
        growth_exponent=2,
        growth_const=float(np.sqrt((w**2).sum()) + 1.0),
        label="running_integral",
    )
