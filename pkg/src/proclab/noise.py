"""Driving noise: reproducible Gaussian streams and exhaustive sign trees.

Gaussian mode draws one counter-based stream per particle, keyed by
(seed, common index, idio index), so results never depend on thread
scheduling.  Tree mode replaces Gaussian increments by +-sqrt(dt) signs and
enumerates every branch, which turns expectations into exact finite sums.

The total Brownian dimension d splits into d_idio leading coordinates
(independent across particles) and d_common trailing coordinates (shared by
all particles with the same common index).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import ProcessEnsemble, ShapeError, TimeGrid

__all__ = ["NoiseBundle", "gaussian_noise", "tree_noise"]

_MAX_NODE_BITS = 62


@dataclass(frozen=True)
class NoiseBundle:
    grid: TimeGrid
    mode: str  # "gaussian" | "tree"
    seed: int
    k_start: int
    n_steps: int
    d_idio: int
    d_common: int
    idio: np.ndarray  # (m_common, m_idio, n_steps, d_idio)
    common: np.ndarray  # (m_common, n_steps, d_common)
    bits: np.ndarray | None = None  # tree: (m_common, m_idio, n_steps, d) in {0, 1}
    atoms_common: int = 1
    atoms_idio: int = 1
    common_offset: int = 0  # absolute index of local batch 0 (set by slicing)
    common_total: int = 0  # batch count of the unsliced bundle (0 = this one)

    @property
    def d(self) -> int:
        return self.d_idio + self.d_common

    @property
    def m_common(self) -> int:
        return self.idio.shape[0]

    @property
    def m_idio(self) -> int:
        return self.idio.shape[1]

    @property
    def k_stop(self) -> int:
        return self.k_start + self.n_steps

    def increments(self, k: int) -> np.ndarray:
        """Assembled d-dimensional increments for grid step k, (m_c, m_i, d)."""
        j = k - self.k_start
        if j < 0 or j >= self.n_steps:
            raise ShapeError(f"step {k} outside noise window [{self.k_start}, {self.k_stop})")
        mc, mi = self.m_common, self.m_idio
        out = np.empty((mc, mi, self.d))
        out[:, :, : self.d_idio] = self.idio[:, :, j, :]
        out[:, :, self.d_idio :] = self.common[:, None, j, :]
        return out

    def brownian_paths(self) -> np.ndarray:
        """Cumulative noise paths, zero at the window start: (m_c, m_i, n+1, d)."""
        mc, mi = self.m_common, self.m_idio
        out = np.zeros((mc, mi, self.n_steps + 1, self.d))
        out[:, :, 1:, : self.d_idio] = np.cumsum(self.idio, axis=2)
        out[:, :, 1:, self.d_idio :] = np.cumsum(self.common, axis=1)[:, None, :, :]
        return out

    # -- tree structure -------------------------------------------------

    def node_index(self, k: int, per_batch: bool = False) -> np.ndarray:
        """Integer id of each particle's sign history strictly before step k.

        With per_batch the id also encodes the absolute common index, so
        tables keyed on it can act batch by batch (batch identity is part
        of the initial information).
        """
        if self.bits is None:
            raise ShapeError("node_index is only defined for tree noise")
        m = k - self.k_start
        if m < 0 or m > self.n_steps:
            raise ShapeError(f"step {k} outside noise window")
        if m == 0:
            ids = np.zeros((self.m_common, self.m_idio), dtype=np.int64)
        else:
            nbits = m * self.d
            if nbits > _MAX_NODE_BITS:
                raise ShapeError("tree history too deep to index")
            flat = self.bits[:, :, :m, :].reshape(self.m_common, self.m_idio, nbits)
            powers = 1 << np.arange(nbits, dtype=np.int64)
            ids = flat.astype(np.int64) @ powers
        if per_batch:
            total = self.common_total or self.m_common
            offs = self.common_offset + np.arange(self.m_common, dtype=np.int64)
            ids = ids * total + offs[:, None]
        return ids

    def realized_nodes(self, k: int, per_batch: bool = False) -> tuple[int, ...]:
        return tuple(np.unique(self.node_index(k, per_batch)).tolist())

    def expand(self, xi: ProcessEnsemble) -> ProcessEnsemble:
        """Align an ensemble with this bundle's particle axes.

        Tree bundles tile initial atoms across every branch.  Degenerate
        ensemble axes of size one (deterministic along that axis) broadcast
        in any mode; anything else must match exactly.
        """
        if xi.grid != self.grid:
            raise ShapeError("ensemble and noise use different grids")
        if xi.m_common == self.m_common and xi.m_idio == self.m_idio:
            return xi
        if self.mode == "tree" and (
            xi.m_common == self.atoms_common and xi.m_idio == self.atoms_idio
        ):
            bc = self.m_common // self.atoms_common
            bi = self.m_idio // self.atoms_idio
        elif xi.m_common in (1, self.m_common) and xi.m_idio in (1, self.m_idio):
            bc = self.m_common // xi.m_common
            bi = self.m_idio // xi.m_idio
        else:
            raise ShapeError("ensemble and noise particle counts differ")
        vals = np.repeat(np.repeat(xi.values, bc, axis=0), bi, axis=1)
        w = np.repeat(np.repeat(xi.weights, bc, axis=0), bi, axis=1) / (bc * bi)
        return ProcessEnsemble(self.grid, vals, w)

    # -- derived bundles -------------------------------------------------

    def slice_common(self, c: int) -> "NoiseBundle":
        """Restriction to one common index (m_common becomes 1)."""
        return replace(
            self,
            idio=self.idio[c : c + 1],
            common=self.common[c : c + 1],
            bits=None if self.bits is None else self.bits[c : c + 1],
            atoms_common=1,
            atoms_idio=self.atoms_idio,
            common_offset=self.common_offset + c,
            common_total=self.common_total or self.m_common,
        )

    def permute_idio(self, perms: np.ndarray) -> "NoiseBundle":
        """Relabel idio slots per common batch; perms has shape (m_c, m_i)."""
        idx = np.asarray(perms)
        rows = np.arange(self.m_common)[:, None]
        return replace(
            self,
            idio=self.idio[rows, idx],
            bits=None if self.bits is None else self.bits[rows, idx],
        )

    def with_perturbed_after(self, k: int, seed: int) -> "NoiseBundle":
        """Redraw (gaussian) or flip (tree) all increments at steps >= k."""
        j = max(0, k - self.k_start)
        rng = np.random.default_rng(seed)
        idio = self.idio.copy()
        common = self.common.copy()
        if self.mode == "gaussian":
            sd = np.sqrt(self.grid.dt)
            idio[:, :, j:, :] = rng.normal(0.0, sd, idio[:, :, j:, :].shape)
            common[:, j:, :] = rng.normal(0.0, sd, common[:, j:, :].shape)
            return replace(self, idio=idio, common=common)
        idio[:, :, j:, :] *= -1.0
        common[:, j:, :] *= -1.0
        bits = self.bits.copy()
        bits[:, :, j:, :] = 1 - bits[:, :, j:, :]
        return replace(self, idio=idio, common=common, bits=bits)


def gaussian_noise(
    grid: TimeGrid,
    d_idio: int,
    d_common: int,
    m_common: int,
    m_idio: int,
    seed: int,
    k_start: int = 0,
    n_steps: int | None = None,
) -> NoiseBundle:
    """Gaussian increments, one Philox stream per (seed, c, i) key."""
    if n_steps is None:
        n_steps = grid.steps - k_start
    sd = np.sqrt(grid.dt)
    idio = np.zeros((m_common, m_idio, n_steps, d_idio))
    common = np.zeros((m_common, n_steps, d_common))
    for c in range(m_common):
        if d_common:
            g = np.random.Generator(
                np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(c,)))
            )
            common[c] = g.normal(0.0, sd, (n_steps, d_common))
        if d_idio:
            for i in range(m_idio):
                g = np.random.Generator(
                    np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(c, i)))
                )
                idio[c, i] = g.normal(0.0, sd, (n_steps, d_idio))
    return NoiseBundle(
        grid, "gaussian", seed, k_start, n_steps, d_idio, d_common, idio, common
    )


def _branch_bits(n_branches: int, n_steps: int, d: int) -> np.ndarray:
    """bits[b, j, l] = l-th coordinate bit of branch b at step j."""
    if n_steps * d == 0:
        return np.zeros((n_branches, n_steps, d), dtype=np.int8)
    idx = np.arange(n_branches, dtype=np.int64)
    shifts = np.arange(n_steps * d, dtype=np.int64)
    bits = (idx[:, None] >> shifts[None, :]) & 1
    return bits.reshape(n_branches, n_steps, d).astype(np.int8)


def tree_noise(
    grid: TimeGrid,
    d_idio: int,
    d_common: int,
    k_start: int = 0,
    n_steps: int | None = None,
    atoms_common: int = 1,
    atoms_idio: int = 1,
) -> NoiseBundle:
    """Exhaustive +-sqrt(dt) branches over the window [k_start, k_start + n].

    Every initial atom is crossed with every branch, so the particle counts
    are atoms_common * 2^(d_common * n) and atoms_idio * 2^(d_idio * n).
    """
    if n_steps is None:
        n_steps = grid.steps - k_start
    if (d_idio + d_common) * n_steps > _MAX_NODE_BITS:
        raise ShapeError("tree enumeration too large")
    bc = 1 << (d_common * n_steps)
    bi = 1 << (d_idio * n_steps)
    mc = atoms_common * bc
    mi = atoms_idio * bi
    sd = np.sqrt(grid.dt)

    bits_i = _branch_bits(bi, n_steps, d_idio)  # (bi, n, d1)
    bits_c = _branch_bits(bc, n_steps, d_common)  # (bc, n, d0)
    idio_branch = (2.0 * bits_i - 1.0) * sd
    common_branch = (2.0 * bits_c - 1.0) * sd

    idio = np.broadcast_to(
        np.tile(idio_branch, (atoms_idio, 1, 1))[None, :, :, :], (mc, mi, n_steps, d_idio)
    ).copy()
    common = np.tile(common_branch, (atoms_common, 1, 1))

    d = d_idio + d_common
    bits = np.zeros((mc, mi, n_steps, d), dtype=np.int8)
    bits[:, :, :, :d_idio] = np.tile(bits_i, (atoms_idio, 1, 1))[None, :, :, :]
    bits[:, :, :, d_idio:] = np.tile(bits_c, (atoms_common, 1, 1))[:, None, :, :]

    return NoiseBundle(
        grid,
        "tree",
        0,
        k_start,
        n_steps,
        d_idio,
        d_common,
        idio,
        common,
        bits=bits,
        atoms_common=atoms_common,
        atoms_idio=atoms_idio,
    )
