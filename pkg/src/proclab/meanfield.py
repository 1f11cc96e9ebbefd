"""Mean-field data on laws, lifted to process-space coefficients.

Deterministic data (b, sigma, f, g) that depend on a (state, action) law
are turned into ensemble coefficients by feeding them the per-batch
empirical joint law, i.e. the cross-section of the particles that share a
common-noise index.  The lifted value then decomposes as the batch-weighted
mixture of per-batch values whenever the control family assigns actions per
batch, and it is invariant under relabelings that preserve the conditional
laws.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .coeffs import BatchLaw, CoefficientSet
from .controls import ControlFamily, tree_family
from .core import ProcessEnsemble
from .noise import NoiseBundle
from .value import check_dpp, value_V

__all__ = [
    "CheckCoefficientSet",
    "lift_coefficients",
    "permute_idio",
    "resample_ensemble",
    "check_law_invariance",
    "InvarianceReport",
    "check_decomposition",
    "DecompositionReport",
    "lipschitz_probe",
    "LipschitzReport",
    "make_mfc",
    "mfc_names",
]


@dataclass(frozen=True)
class CheckCoefficientSet:
    """Law-dependent data with no scenario randomness of their own.

    Contracts (n = particles in a batch, mu a BatchLaw):
        b(t, paths (n,k+1,d), a (n,), mu)     -> (n, d)
        sigma(t, paths (n,k+1,d), a (n,), mu) -> (n, d, d)
        f(t, paths, a, mu)                    -> (n,)
        g(paths (n, nodes, d), mu)            -> (n,)
    """

    b: callable
    sigma: callable
    f: callable
    g: callable
    L: float
    beta: float
    C0: float
    p: float
    label: str = ""
    closed_form: callable | None = None


def lift_coefficients(check: CheckCoefficientSet) -> CoefficientSet:
    """Ensemble coefficients that read the per-batch empirical joint law."""

    def b(t, paths, a, law, ctrl):
        return check.b(t, paths, a, law)

    def sigma(t, paths, a, law, ctrl):
        return check.sigma(t, paths, a, law)

    def f(t, law, ctrl):
        bw = law.batch_weights
        total = 0.0
        for c in range(law.m_common):
            bl = law.batch(c)
            total += bw[c] * float(bl.expect(check.f(t, bl.paths, bl.actions, bl)))
        return total

    def g(law):
        bw = law.batch_weights
        total = 0.0
        for c in range(law.m_common):
            bl = law.batch(c)
            total += bw[c] * float(bl.expect(check.g(bl.paths, bl)))
        return total

    return CoefficientSet(
        b, sigma, f, g, check.L, check.beta, check.C0, check.p,
        label="lifted:" + check.label, closed_form=check.closed_form,
    )


def permute_idio(xi: ProcessEnsemble, seed: int) -> tuple[ProcessEnsemble, np.ndarray]:
    """Random relabeling of the idio axis within every common batch."""
    rng = np.random.default_rng(seed)
    perms = np.stack([rng.permutation(xi.m_idio) for _ in range(xi.m_common)])
    rows = np.arange(xi.m_common)[:, None]
    return (
        ProcessEnsemble(xi.grid, xi.values[rows, perms], xi.weights[rows, perms]),
        perms,
    )


def resample_ensemble(
    xi: ProcessEnsemble, t: float, seed: int, mean: float = 0.0, std: float = 1.0
) -> ProcessEnsemble:
    """Fresh iid draw with the same shape and nominal law (diagnostic use)."""
    from .core import random_ensemble

    return random_ensemble(
        xi.grid, t, xi.m_common, xi.m_idio, xi.dim, seed, mean=mean, std=std
    )


@dataclass(frozen=True)
class InvarianceReport:
    base_value: float
    alt_value: float
    gap: float
    tolerance: float
    passed: bool
    mode: str


def check_law_invariance(
    check: CheckCoefficientSet,
    t: float,
    xi: ProcessEnsemble,
    xi_alt: ProcessEnsemble,
    family: ControlFamily,
    noise: NoiseBundle,
    noise_alt: NoiseBundle | None = None,
    mode: str = "permute",
) -> InvarianceReport:
    """Value of the lifted problem under a conditional-law-preserving swap.

    In "permute" mode xi_alt must be a within-batch relabeling of xi; in
    tree mode the equality is exact because every branch is enumerated, and
    in gaussian mode the caller passes the correspondingly relabeled bundle
    (noise.permute_idio) so the multiset of particle streams is unchanged.
    "resample" mode compares against a fresh draw within Monte Carlo error.
    """
    coeffs = lift_coefficients(check)
    v1 = value_V(coeffs, t, xi, family, noise)
    v2 = value_V(coeffs, t, xi_alt, family, noise_alt if noise_alt is not None else noise)
    gap = v1.value - v2.value
    if mode == "permute":
        tol = 1e-12 * max(1.0, abs(v1.value))
    else:
        tol = 3.0 * float(np.hypot(v1.stderr, v2.stderr)) + 1e-12
    return InvarianceReport(v1.value, v2.value, gap, tol, bool(abs(gap) <= tol), mode)


@dataclass(frozen=True)
class DecompositionReport:
    joint_value: float
    batch_values: tuple[float, ...]
    batch_weights: tuple[float, ...]
    mixture_value: float
    gap: float
    tolerance: float
    one_sided: bool
    passed: bool
    dpp_gap: float | None
    regularity_ratio: float


def check_decomposition(
    check: CheckCoefficientSet,
    t: float,
    xi: ProcessEnsemble,
    family: ControlFamily,
    noise: NoiseBundle,
    delta: float | None = None,
) -> DecompositionReport:
    """Joint lifted value against the mixture of per-batch values.

    Batch values are solved on the sliced noise with batch-local controls.
    Tree-table families factorize across batches (their tables read the
    common branch bits), so the gap vanishes to roundoff; families whose
    actions are shared across batches only certify joint >= mixture.
    """
    coeffs = lift_coefficients(check)
    joint = value_V(coeffs, t, xi, family, noise)
    factorizing = (family.kind == "tree_product" and family.per_batch) or noise.m_common == 1
    if not factorizing:
        warnings.warn("family does not factorize per batch; gap is one-sided")

    xi_e = noise.expand(xi)
    values, errs = [], []
    for c in range(noise.m_common):
        sub_noise = noise.slice_common(c)
        w = xi_e.weights[c : c + 1]
        sub_xi = ProcessEnsemble(xi.grid, xi_e.values[c : c + 1], w / w.sum())
        sub_family = (
            tree_family(
                family.action_grid, sub_noise, family.k_from, family.k_to, per_batch=True
            )
            if family.kind == "tree_product" and family.per_batch
            else family
        )
        est = value_V(coeffs, t, sub_xi, sub_family, sub_noise)
        values.append(est.value)
        errs.append(est.stderr)
    bw = xi_e.batch_weights
    mixture = float((bw * np.array(values)).sum())
    gap = joint.value - mixture
    if noise.mode == "tree":
        tol = 1e-12 * max(1.0, abs(joint.value))
    else:
        tol = 3.0 * float(np.hypot(joint.stderr, max(errs))) + 1e-12
    passed = (gap >= -tol) if not factorizing else (abs(gap) <= tol)

    dpp_gap = None
    if delta is not None:
        dpp_gap = check_dpp(coeffs, t, xi, delta, family, noise).gap

    # growth diagnostic: |batch value| <= C (1 + W2(law, zero)^beta)
    ratios = []
    k = xi.grid.index_of(t)
    for c in range(noise.m_common):
        w = xi_e.weights[c]
        w = w / w.sum()
        sups = np.sqrt((xi_e.values[c, :, : k + 1, :] ** 2).sum(axis=2)).max(axis=1)
        w2_zero = float((w * sups**2).sum() ** 0.5)
        ratios.append(abs(values[c]) / (1.0 + w2_zero**check.beta))
    return DecompositionReport(
        joint.value,
        tuple(values),
        tuple(bw.tolist()),
        mixture,
        gap,
        tol,
        not factorizing,
        bool(passed),
        dpp_gap,
        float(max(ratios)),
    )


@dataclass(frozen=True)
class LipschitzReport:
    ratios: np.ndarray  # |b(mu) - b(mu')| / W2(mu, mu') per sampled pair
    L: float
    max_ratio: float
    passed: bool


def lipschitz_probe(
    check: CheckCoefficientSet,
    t: float,
    pairs: list[tuple[BatchLaw, BatchLaw]],
    probe_action: float = 0.0,
    slack: float = 1e-9,
) -> LipschitzReport:
    """Law-Lipschitz transfer of the lifted drift on sampled law pairs."""
    from .metrics import EmpiricalMeasure, wasserstein_p

    ratios = []
    for mu, nu in pairs:
        w2 = wasserstein_p(
            EmpiricalMeasure(mu.paths, mu.weights),
            EmpiricalMeasure(nu.paths, nu.weights),
            2.0,
        )
        if w2 < 1e-12:
            continue
        n = mu.paths.shape[0]
        a = np.full(n, probe_action)
        probe = mu.paths[:1].repeat(n, axis=0)  # fixed path argument
        d1 = check.b(t, probe, a, mu)
        d2 = check.b(t, probe, a, nu)
        diff = float(np.sqrt(((d1 - d2) ** 2).sum(axis=1)).max())
        ratios.append(diff / w2)
    ratios = np.array(ratios)
    worst = float(ratios.max()) if ratios.size else 0.0
    return LipschitzReport(ratios, check.L, worst, bool(worst <= check.L + slack))


# ----------------------------------------------------------------------
# named mean-field data

_MFC_REGISTRY: dict[str, callable] = {}


def _mfc_register(name):
    def deco(fn):
        _MFC_REGISTRY[name] = fn
        return fn

    return deco


def mfc_names() -> tuple[str, ...]:
    return tuple(sorted(_MFC_REGISTRY))


def make_mfc(name: str, dim: int = 1, **params) -> CheckCoefficientSet:
    if name not in _MFC_REGISTRY:
        raise KeyError(f"unknown mean-field data {name!r}")
    return _MFC_REGISTRY[name](dim=dim, **params)


@_mfc_register("mfc.mean")
def _mfc_mean(dim=1, rate=0.5, qf=0.0, **kw):
    """Drift a + rate * mean of the batch's terminal states, quadratic costs."""

    def b(t, paths, a, mu):
        out = np.zeros((paths.shape[0], dim))
        out[:, 0] = a + rate * mu.mean_state()[0]
        return out

    def sigma(t, paths, a, mu):
        return np.zeros((paths.shape[0], dim, dim))

    f = lambda t, paths, a, mu: qf * a**2
    g = lambda paths, mu: (paths[:, -1, :] ** 2).sum(axis=1)
    return CheckCoefficientSet(
        b, sigma, f, g, L=rate, beta=1.0, C0=1.0, p=2.0, label="mfc.mean"
    )


@_mfc_register("mfc.heat_common")
def _mfc_heat_common(dim=1, **kw):
    """Unit volatility driven entirely by the common block, quadratic payoff.

    Use with d_common = dim; the closed-form value is the stopped second
    moment plus dim * (T - t).
    """

    def sigma(t, paths, a, mu):
        return np.broadcast_to(np.eye(dim), (paths.shape[0], dim, dim))

    def closed(t, xi):
        k = xi.grid.index_of(t)
        second = (xi.weights * (xi.values[:, :, k, :] ** 2).sum(axis=-1)).sum()
        return float(second + dim * (xi.grid.horizon - t))

    return CheckCoefficientSet(
        b=lambda t, paths, a, mu: np.zeros((paths.shape[0], dim)),
        sigma=sigma,
        f=lambda t, paths, a, mu: np.zeros(paths.shape[0]),
        g=lambda paths, mu: (paths[:, -1, :] ** 2).sum(axis=1),
        L=0.0, beta=1.0, C0=1.0, p=2.0, label="mfc.heat_common", closed_form=closed,
    )


@_mfc_register("mfc.twobatch")
def _mfc_twobatch(dim=1, qf=0.25, s1=0.5, **kw):
    """Decoupled drift control with quadratic costs for tiny tree batteries."""

    def b(t, paths, a, mu):
        out = np.zeros((paths.shape[0], dim))
        out[:, 0] = a
        return out

    return CheckCoefficientSet(
        b=b,
        sigma=lambda t, paths, a, mu: np.broadcast_to(
            s1 * np.eye(dim), (paths.shape[0], dim, dim)
        ),
        f=lambda t, paths, a, mu: qf * a**2,
        g=lambda paths, mu: (paths[:, -1, :] ** 2).sum(axis=1),
        L=0.0, beta=1.0, C0=1.0, p=2.0, label="mfc.twobatch",
    )
