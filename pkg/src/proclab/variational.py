"""Gauge-type functions and the perturbed-maximization principle on finite
metric spaces.

Given an upper-bounded score psi, a gauge table G and a starting point x0
with psi(x0) >= sup psi - eps, the iteration repeatedly subtracts geometric
gauge penalties anchored at successive exact maximizers.  On a finite set
it terminates once the maximizer repeats; the perturbed score

    Psi = psi - sum_i 2^(-i) G(. , x_i)

then has a strict global maximizer x_hat with G(x_hat, x_i) <= eps 2^(-i)
and Psi(x_hat) >= psi(x0).  All three conclusions are re-verified by
enumeration before the result is returned.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = ["FiniteInstance", "GaugeCheck", "is_gauge", "borwein_preiss", "BPResult"]


@dataclass(frozen=True)
class FiniteInstance:
    dist: np.ndarray  # (n, n) metric table
    psi: np.ndarray  # (n,) scores
    gauge: np.ndarray  # (n, n) candidate gauge table

    def __init__(self, dist, psi, gauge, validate: str = "basic"):
        dist = np.asarray(dist, dtype=float)
        psi = np.asarray(psi, dtype=float)
        gauge = np.asarray(gauge, dtype=float)
        n = len(psi)
        if dist.shape != (n, n) or gauge.shape != (n, n):
            raise ValueError("tables must be square and match psi")
        if np.any(np.abs(np.diag(dist)) > 1e-12) or np.any(dist < -1e-12):
            raise ValueError("dist must be nonnegative with zero diagonal")
        if not np.allclose(dist, dist.T, atol=1e-9):
            raise ValueError("dist must be symmetric")
        if validate == "full":
            through = dist[:, None, :] + dist[None, :, :].transpose(1, 0, 2)
            if np.any(dist > through.min(axis=2) + 1e-9):
                raise ValueError("dist violates the triangle inequality")
            off = ~np.eye(n, dtype=bool)
            if np.any(dist[off] <= 0):
                raise ValueError("dist must separate distinct points")
        if np.any(gauge < -1e-12) or np.any(np.abs(np.diag(gauge)) > 1e-12):
            raise ValueError("gauge must be nonnegative with zero diagonal")
        object.__setattr__(self, "dist", dist)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "gauge", gauge)

    @property
    def n(self) -> int:
        return len(self.psi)


class GaugeCheck(NamedTuple):
    ok: bool
    witness: tuple[int, int] | None


def is_gauge(instance: FiniteInstance, threshold: float = 0.0) -> GaugeCheck:
    """Zero on the diagonal and separating off it (finite-set gauge test).

    Off-diagonal entries at or below `threshold` count as zero; the first
    offending pair is returned as a witness.
    """
    g = instance.gauge
    n = instance.n
    for i in range(n):
        if abs(g[i, i]) > max(threshold, 1e-12):
            return GaugeCheck(False, (i, i))
    for i in range(n):
        for j in range(n):
            if i != j and g[i, j] <= threshold:
                return GaugeCheck(False, (i, j))
    return GaugeCheck(True, None)


class BPResult(NamedTuple):
    x_hat: int
    sequence: tuple[int, ...]  # anchors x_0, x_1, ..., constant at the end
    psi_perturbed: np.ndarray  # Psi over all points


def borwein_preiss(instance: FiniteInstance, epsilon: float, x0: int) -> BPResult:
    """Perturbed maximization with geometric gauge penalties.

    Raises ValueError when psi(x0) < sup psi - epsilon, and RuntimeError if
    the enumeration re-verification of the conclusions fails (which can
    only happen when the supplied gauge table is not separating).
    """
    psi = instance.psi
    g = instance.gauge
    n = instance.n
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if psi[x0] < psi.max() - epsilon - 1e-12:
        raise ValueError("starting point is not epsilon-optimal")

    anchors = [int(x0)]
    current = psi.copy()
    for i in range(n + 1):
        current = current - (0.5**i) * g[:, anchors[-1]]
        top = current.max()
        if current[anchors[-1]] >= top:
            break  # the anchor already attains the max: sequence is constant
        anchors.append(int(np.flatnonzero(current >= top)[0]))  # lowest-index tie break
    else:
        raise RuntimeError("penalized maximization failed to settle")

    x_hat = anchors[-1]
    m = len(anchors)
    # Psi = psi - sum_{i < m-1} 2^-i G(., x_i) - 2^(1-(m-1)) G(., x_hat)
    psi_pert = psi.astype(float).copy()
    for i, anchor in enumerate(anchors[:-1]):
        psi_pert -= (0.5**i) * g[:, anchor]
    psi_pert -= 2.0 * (0.5 ** (m - 1)) * g[:, x_hat]

    # re-verify every conclusion by enumeration
    for i, anchor in enumerate(anchors):
        if g[x_hat, anchor] > epsilon * (0.5**i) + 1e-9:
            raise RuntimeError("gauge localization failed re-verification")
    if g[x_hat, x_hat] > 1e-12:
        raise RuntimeError("gauge localization failed re-verification")
    if psi_pert[x_hat] < psi[x0] - 1e-9 or psi[x0] < psi.max() - epsilon - 1e-9:
        raise RuntimeError("value guarantee failed re-verification")
    others = np.delete(np.arange(n), x_hat)
    if others.size and psi_pert[others].max() >= psi_pert[x_hat]:
        raise RuntimeError("perturbed score has no strict maximizer")
    if np.any(psi_pert > psi + 1e-12):
        raise RuntimeError("perturbed score exceeds the original")
    return BPResult(int(x_hat), tuple(anchors), psi_pert)
