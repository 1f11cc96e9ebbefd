"""Scenario configuration: a flat key-value text format.

Documented keys:

    name              scenario label
    dim               state dimension
    dims.common       trailing noise coordinates shared per batch (default 0)
    t0, T, steps      time grid
    t                 evaluation time (default t0)
    coeffs.name       registry key of the data ("mfc." prefix = law data)
    coeffs.<param>    numeric parameter forwarded to the registry factory
    control.pattern   constant | deterministic | tree
    control.grid      comma-separated action grid
    particles.common  common batches (tree: initial atoms per batch axis)
    particles.idio    particles per batch (tree: initial atoms)
    seed              master seed; all randomness derives from it
    noise             gaussian | tree
    checks            comma-separated list of checks to run
    dpp.delta         window for the dynamic-programming check
    init.mean/std     initial ensemble law parameters
    fd.dx/fd.refine   finite-difference resolution for the lift check

Lines are `key = value`; blank lines and `#` comments are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

__all__ = ["ScenarioConfig", "ConfigError", "parse_config", "load_config", "format_config"]


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(message + where)
        self.line = line


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    dim: int = 1
    d_common: int = 0
    t0: float = 0.0
    horizon: float = 1.0
    steps: int = 50
    t_eval: float | None = None
    coeffs_name: str = "heat"
    coeffs_params: dict = field(default_factory=dict)
    control_pattern: str = "constant"
    control_grid: tuple[float, ...] = (-1.0, 0.0, 1.0)
    m_common: int = 1
    m_idio: int = 1024
    seed: int = 0
    noise_mode: str = "gaussian"
    checks: tuple[str, ...] = ("value",)
    dpp_delta: float | None = None
    init_mean: float = 0.0
    init_std: float = 1.0
    fd_dx: float = 0.02
    fd_refine: int = 1

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("steps must be positive")
        if self.m_common < 1 or self.m_idio < 1:
            raise ConfigError("particle counts must be positive")
        if self.dim < 1 or not 0 <= self.d_common <= self.dim:
            raise ConfigError("dims must satisfy 0 <= dims.common <= dim")
        if self.noise_mode not in ("gaussian", "tree"):
            raise ConfigError(f"unknown noise mode {self.noise_mode!r}")
        if self.control_pattern not in ("constant", "deterministic", "tree"):
            raise ConfigError(f"unknown control pattern {self.control_pattern!r}")


_INT_KEYS = {"dim", "dims.common", "steps", "particles.common", "particles.idio", "seed", "fd.refine"}
_FLOAT_KEYS = {"t0", "T", "t", "dpp.delta", "init.mean", "init.std", "fd.dx"}


def parse_config(text: str) -> ScenarioConfig:
    values: dict[str, object] = {}
    params: dict[str, float] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw!r}", ln)
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not key or not val:
            raise ConfigError(f"empty key or value in {raw!r}", ln)
        try:
            if key in _INT_KEYS:
                values[key] = int(val)
            elif key in _FLOAT_KEYS:
                values[key] = float(val)
            elif key == "control.grid":
                values[key] = tuple(float(x) for x in val.split(","))
            elif key == "checks":
                values[key] = tuple(s.strip() for s in val.split(",") if s.strip())
            elif key.startswith("coeffs.") and key != "coeffs.name":
                params[key.removeprefix("coeffs.")] = float(val)
            else:
                values[key] = val
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {val!r} ({exc})", ln) from None
    try:
        return ScenarioConfig(
            name=values.get("name", "scenario"),
            dim=values.get("dim", 1),
            d_common=values.get("dims.common", 0),
            t0=values.get("t0", 0.0),
            horizon=values.get("T", 1.0),
            steps=values.get("steps", 50),
            t_eval=values.get("t"),
            coeffs_name=values.get("coeffs.name", "heat"),
            coeffs_params=params,
            control_pattern=values.get("control.pattern", "constant"),
            control_grid=values.get("control.grid", (-1.0, 0.0, 1.0)),
            m_common=values.get("particles.common", 1),
            m_idio=values.get("particles.idio", 1024),
            seed=values.get("seed", 0),
            noise_mode=values.get("noise", "gaussian"),
            checks=values.get("checks", ("value",)),
            dpp_delta=values.get("dpp.delta"),
            init_mean=values.get("init.mean", 0.0),
            init_std=values.get("init.std", 1.0),
            fd_dx=values.get("fd.dx", 0.02),
            fd_refine=values.get("fd.refine", 1),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ScenarioConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def apply_overrides(cfg: ScenarioConfig, overrides: dict[str, str]) -> ScenarioConfig:
    """Re-parse with `key=value` overrides layered on top."""
    text = format_config(cfg)
    extra = "\n".join(f"{k} = {v}" for k, v in overrides.items())
    return parse_config(text + "\n" + extra)


def format_config(cfg: ScenarioConfig) -> str:
    lines = [
        f"name = {cfg.name}",
        f"dim = {cfg.dim}",
        f"dims.common = {cfg.d_common}",
        f"t0 = {cfg.t0!r}",
        f"T = {cfg.horizon!r}",
        f"steps = {cfg.steps}",
        f"coeffs.name = {cfg.coeffs_name}",
        f"control.pattern = {cfg.control_pattern}",
        "control.grid = " + ",".join(repr(a) for a in cfg.control_grid),
        f"particles.common = {cfg.m_common}",
        f"particles.idio = {cfg.m_idio}",
        f"seed = {cfg.seed}",
        f"noise = {cfg.noise_mode}",
        "checks = " + ",".join(cfg.checks),
        f"init.mean = {cfg.init_mean!r}",
        f"init.std = {cfg.init_std!r}",
        f"fd.dx = {cfg.fd_dx!r}",
        f"fd.refine = {cfg.fd_refine}",
    ]
    if cfg.t_eval is not None:
        lines.append(f"t = {cfg.t_eval!r}")
    if cfg.dpp_delta is not None:
        lines.append(f"dpp.delta = {cfg.dpp_delta!r}")
    for k, v in cfg.coeffs_params.items():
        lines.append(f"coeffs.{k} = {v!r}")
    return "\n".join(lines) + "\n"
