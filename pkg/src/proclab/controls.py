"""Discretized control classes.

A control assigns, at every grid step, one action per particle.  Three
information patterns are supported:

  deterministic  one action per step, shared by all particles;
  feedback       a rule of the particle's current state;
  tree           a table over realized noise-history nodes (tree mode).

Families are finite collections searched exhaustively.  Product families
(deterministic or tree tables with free entries) are closed under
concatenation in time, which is what makes the dynamic-programming check
exact; other families report one-sided gaps.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import ShapeError
from .noise import NoiseBundle

__all__ = [
    "ControlSpec",
    "ControlFamily",
    "constant_family",
    "deterministic_family",
    "tree_family",
    "explicit_family",
]

_FAMILY_LIMIT = 2_000_000


@dataclass(frozen=True)
class ControlSpec:
    pattern: str  # "deterministic" | "feedback" | "tree"
    action_grid: tuple[float, ...]
    k_from: int
    k_to: int
    step_actions: tuple[float, ...] | None = None
    tables: tuple[tuple[tuple[int, ...], tuple[float, ...]], ...] | None = None
    rule: Callable[[int, np.ndarray], np.ndarray] | None = None
    check_grid: bool = True
    per_batch: bool = False  # tree tables keyed on (batch, history) nodes

    def actions(self, k: int, states: np.ndarray, noise: NoiseBundle) -> np.ndarray:
        """Action of every particle at grid step k, shape (m_c, m_i)."""
        if k < self.k_from or k >= self.k_to:
            raise ShapeError(f"control not defined at step {k}")
        mc, mi = states.shape[0], states.shape[1]
        if self.pattern == "deterministic":
            return np.full((mc, mi), self.step_actions[k - self.k_from])
        if self.pattern == "tree":
            ids, acts = self.tables[k - self.k_from]
            ids = np.asarray(ids, dtype=np.int64)
            acts = np.asarray(acts)
            want = noise.node_index(k, self.per_batch)
            pos = np.searchsorted(ids, want)
            if np.any(pos >= len(ids)) or np.any(ids[np.minimum(pos, len(ids) - 1)] != want):
                raise ShapeError("tree table does not cover a realized node")
            return acts[pos]
        if self.pattern == "feedback":
            flat = states.reshape(mc * mi, -1)
            a = np.asarray(self.rule(k, flat), dtype=float).reshape(mc, mi)
            if self.check_grid:
                grid = np.asarray(self.action_grid)
                dist = np.abs(a[..., None] - grid).min(axis=-1)
                if dist.max() > 1e-9:
                    raise ValueError("feedback rule emitted an action outside the grid")
            return a
        raise ValueError(f"unknown pattern {self.pattern!r}")

    def restrict(self, k_from: int, k_to: int) -> "ControlSpec":
        k_from = max(k_from, self.k_from)
        k_to = min(k_to, self.k_to)
        if self.pattern == "deterministic":
            sub = self.step_actions[k_from - self.k_from : k_to - self.k_from]
            return ControlSpec("deterministic", self.action_grid, k_from, k_to, step_actions=sub)
        if self.pattern == "tree":
            sub = self.tables[k_from - self.k_from : k_to - self.k_from]
            return ControlSpec(
                "tree", self.action_grid, k_from, k_to, tables=sub, per_batch=self.per_batch
            )
        return ControlSpec(
            "feedback", self.action_grid, k_from, k_to, rule=self.rule, check_grid=self.check_grid
        )


@dataclass(frozen=True)
class ControlFamily:
    """A finite, ordered family of controls sharing one window and pattern."""

    members: tuple[ControlSpec, ...]
    kind: str  # "constant" | "det_product" | "tree_product" | "explicit"
    action_grid: tuple[float, ...]
    k_from: int
    k_to: int
    concat_closed: bool
    node_ids: tuple[tuple[int, ...], ...] | None = None  # tree: realized ids per step
    per_batch: bool = False

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def split(self, k_mid: int) -> tuple["ControlFamily", "ControlFamily"]:
        """Head family on [k_from, k_mid) and tail family on [k_mid, k_to)."""
        if not self.k_from < k_mid < self.k_to:
            raise ValueError("split point must lie strictly inside the window")
        if self.kind == "det_product":
            return (
                deterministic_family(self.action_grid, self.k_from, k_mid),
                deterministic_family(self.action_grid, k_mid, self.k_to),
            )
        if self.kind == "tree_product":
            m = k_mid - self.k_from
            return (
                _tree_family_from_ids(
                    self.action_grid, self.k_from, k_mid, self.node_ids[:m], per_batch=self.per_batch
                ),
                _tree_family_from_ids(
                    self.action_grid, k_mid, self.k_to, self.node_ids[m:], per_batch=self.per_batch
                ),
            )
        heads = tuple(m.restrict(self.k_from, k_mid) for m in self.members)
        tails = tuple(m.restrict(k_mid, self.k_to) for m in self.members)
        return (
            ControlFamily(_dedupe(heads), self.kind, self.action_grid, self.k_from, k_mid, False),
            ControlFamily(_dedupe(tails), self.kind, self.action_grid, k_mid, self.k_to, False),
        )


def _dedupe(members: tuple[ControlSpec, ...]) -> tuple[ControlSpec, ...]:
    seen, out = set(), []
    for m in members:
        key = (m.pattern, m.step_actions, m.tables, m.rule)
        if key not in seen:
            seen.add(key)
            out.append(m)
    return tuple(out)


def constant_family(action_grid, k_from: int, k_to: int) -> ControlFamily:
    """One constant-in-time control per grid action.

    Closed under concatenation only in the singleton case; larger constant
    families report one-sided dynamic-programming gaps.
    """
    grid = tuple(float(a) for a in action_grid)
    members = tuple(
        ControlSpec("deterministic", grid, k_from, k_to, step_actions=(a,) * (k_to - k_from))
        for a in grid
    )
    return ControlFamily(members, "constant", grid, k_from, k_to, len(grid) == 1)


def deterministic_family(action_grid, k_from: int, k_to: int, limit: int = _FAMILY_LIMIT) -> ControlFamily:
    """Every action sequence over the window; closed under concatenation."""
    grid = tuple(float(a) for a in action_grid)
    n = k_to - k_from
    if len(grid) ** n > limit:
        raise ValueError("deterministic family too large")
    members = tuple(
        ControlSpec("deterministic", grid, k_from, k_to, step_actions=seq)
        for seq in itertools.product(grid, repeat=n)
    )
    return ControlFamily(members, "det_product", grid, k_from, k_to, True)


def _tree_family_from_ids(
    grid, k_from, k_to, node_ids, limit: int = _FAMILY_LIMIT, per_batch: bool = False
) -> ControlFamily:
    slots = [len(ids) for ids in node_ids]
    total = sum(slots)
    if len(grid) ** total > limit:
        raise ValueError("tree family too large")
    members = []
    for assign in itertools.product(grid, repeat=total):
        tables, pos = [], 0
        for ids in node_ids:
            tables.append((ids, tuple(assign[pos : pos + len(ids)])))
            pos += len(ids)
        members.append(
            ControlSpec("tree", grid, k_from, k_to, tables=tuple(tables), per_batch=per_batch)
        )
    return ControlFamily(
        tuple(members), "tree_product", grid, k_from, k_to, True, tuple(node_ids), per_batch
    )


def tree_family(
    action_grid,
    noise: NoiseBundle,
    k_from: int,
    k_to: int,
    limit: int = _FAMILY_LIMIT,
    per_batch: bool = False,
) -> ControlFamily:
    """All tables over the noise tree's realized history nodes on the window.

    With per_batch the tables key on (common batch, history) pairs, so the
    family factorizes across common batches.
    """
    grid = tuple(float(a) for a in action_grid)
    node_ids = tuple(noise.realized_nodes(k, per_batch) for k in range(k_from, k_to))
    return _tree_family_from_ids(grid, k_from, k_to, node_ids, limit, per_batch)


def explicit_family(members, action_grid=None) -> ControlFamily:
    """Wrap an explicit list of controls (searched as given, not closed)."""
    members = tuple(members)
    grid = tuple(action_grid) if action_grid is not None else members[0].action_grid
    return ControlFamily(
        members, "explicit", grid, members[0].k_from, members[0].k_to, False
    )
