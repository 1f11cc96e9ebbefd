"""Empirical measures and distances between them.

Wasserstein distances are computed exactly: sorted (quantile) coupling in
one dimension, exhaustive assignment for up to ten equal-weight atoms, and
a Hungarian solver above that.  Path-valued atoms use the sup-norm ground
cost on stopped node vectors.  The smooth Fourier-based distance is the
one-dimensional integral of |F_mu - F_nu|^2 / (1 + |z|^k).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import ProcessEnsemble

__all__ = [
    "EmpiricalMeasure",
    "wasserstein_p",
    "conditional_law",
    "fourier_wasserstein",
    "FourierDistance",
    "QuadratureSpec",
]

_ASSIGN_CAP = 256
_ENUM_CAP = 10


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted atoms; point atoms (n, d) or path atoms (n, nodes, d)."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if atoms.shape[0] != w.shape[0]:
            raise ValueError("one weight per atom required")
        if np.any(w < -1e-15) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to one")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.atoms.shape[0]

    @property
    def is_path(self) -> bool:
        return self.atoms.ndim == 3

    def uniform(self) -> bool:
        return bool(np.allclose(self.weights, 1.0 / self.n, atol=1e-12))


def _ground_cost(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> np.ndarray:
    """Pairwise ground distances: Euclidean for points, sup-norm for paths."""
    a, b = mu.atoms, nu.atoms
    if mu.is_path:
        diff = a[:, None, :, :] - b[None, :, :, :]
        return np.sqrt((diff**2).sum(axis=3)).max(axis=2)
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt((diff**2).sum(axis=2))


def _wasserstein_1d(x, wx, y, wy, p):
    """Quantile coupling for weighted atoms on the line (exact)."""
    ix, iy = np.argsort(x, kind="stable"), np.argsort(y, kind="stable")
    x, wx = x[ix], wx[ix]
    y, wy = y[iy], wy[iy]
    cost = 0.0
    i = j = 0
    ri, rj = wx[0], wy[0]
    while i < len(x) and j < len(y):
        m = min(ri, rj)
        cost += m * abs(x[i] - y[j]) ** p
        ri -= m
        rj -= m
        if ri <= 1e-15:
            i += 1
            ri = wx[i] if i < len(x) else 0.0
        if rj <= 1e-15:
            j += 1
            rj = wy[j] if j < len(y) else 0.0
    return cost ** (1.0 / p)


def wasserstein_p(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float) -> float:
    """Exact p-Wasserstein distance between two empirical measures."""
    if p < 1:
        raise ValueError("p must be at least 1")
    if mu.is_path != nu.is_path or mu.atoms.shape[1:] != nu.atoms.shape[1:]:
        raise ValueError("atom shapes differ")
    if not mu.is_path and mu.atoms.shape[1] == 1:
        return _wasserstein_1d(
            mu.atoms[:, 0], mu.weights, nu.atoms[:, 0], nu.weights, p
        )
    if mu.n != nu.n or not (mu.uniform() and nu.uniform()):
        raise NotImplementedError(
            "beyond 1-d, only equal-count uniform-weight atom sets are supported"
        )
    if mu.n > _ASSIGN_CAP:
        raise ValueError(f"atom count capped at {_ASSIGN_CAP} for exact assignment")
    cost = _ground_cost(mu, nu) ** p
    if mu.n <= _ENUM_CAP:
        best = min(
            sum(cost[i, perm[i]] for i in range(mu.n))
            for perm in itertools.permutations(range(mu.n))
        )
        return float((best / mu.n) ** (1.0 / p))
    rows, cols = linear_sum_assignment(cost)
    return float((cost[rows, cols].mean()) ** (1.0 / p))


def conditional_law(xi: ProcessEnsemble, common_idx: int, t: float) -> EmpiricalMeasure:
    """Empirical law over the idio axis of one common batch, stopped at t."""
    if not 0 <= common_idx < xi.m_common:
        raise IndexError("common index out of range")
    stopped = xi.stopped(t)
    w = xi.weights[common_idx]
    total = w.sum()
    w = w / total if total > 0 else np.full_like(w, 1.0 / len(w))
    return EmpiricalMeasure(stopped.values[common_idx], w)


class QuadratureSpec(NamedTuple):
    z_max: float = 60.0
    n_panels: int = 60
    nodes_per_panel: int = 16


class FourierDistance(NamedTuple):
    value: float
    tail_bound: float


def fourier_wasserstein(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    k: float,
    quadrature: QuadratureSpec = QuadratureSpec(),
) -> FourierDistance:
    """Smooth distance rho with rho^2 = int |F_{mu-nu}(z)|^2 / (1+|z|^k) dz.

    One-dimensional atoms only; k > 1 for integrability.  The reported tail
    bound is 2 * int_{z_max}^inf 4 / (1 + z^k) dz <= 8 z_max^(1-k) / (k-1).
    """
    if mu.is_path or nu.is_path or mu.atoms.shape[1] != 1 or nu.atoms.shape[1] != 1:
        raise NotImplementedError("fourier distance is one-dimensional only")
    if k <= 1:
        raise ValueError("k must exceed 1 for integrability")
    xs, wx = mu.atoms[:, 0], mu.weights
    ys, wy = nu.atoms[:, 0], nu.weights

    glx, glw = np.polynomial.legendre.leggauss(quadrature.nodes_per_panel)
    edges = np.linspace(0.0, quadrature.z_max, quadrature.n_panels + 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        z = 0.5 * (hi - lo) * glx + 0.5 * (hi + lo)
        fmu = (wx[None, :] * np.exp(-1j * np.outer(z, xs))).sum(axis=1)
        fnu = (wy[None, :] * np.exp(-1j * np.outer(z, ys))).sum(axis=1)
        integrand = np.abs(fmu - fnu) ** 2 / (1.0 + np.abs(z) ** k)
        total += 0.5 * (hi - lo) * float((glw * integrand).sum())
    total *= 2.0  # even integrand: modulus is symmetric in z
    tail = 8.0 * quadrature.z_max ** (1.0 - k) / (k - 1.0)
    return FourierDistance(float(np.sqrt(total)), tail)
