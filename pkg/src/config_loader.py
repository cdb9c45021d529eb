"""
Config Loader Module

Reads experiment configuration files.
- Format: flat KEY=VALUE lines, '#' comments, keys case-insensitive
- Lists: comma separated (e.g. SNR_GRID_DB=0,5,10,15,20)
- Unknown keys are errors
Every key is optional; missing keys fall back to the desk-scale defaults
of `default_experiment_spec`.
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from dotenv import dotenv_values

from .channel_model import SystemConfig
from .errors import ConfigError, DomainError
from .problems import DesignMode, PowerLimits, Problem
from .solver import SolveOptions

logger = logging.getLogger(__name__)

# Scalar limits broadcast to every antenna, user, symbol or entry.
DEFAULT_LIMITS = {
    "total": 10.0,
    "antenna": 2.5,
    "user": 5.0,
    "symbol": 2.5,
    "entry": 1.0,
    "amse_target": 2.0,
}


@dataclass
class ExperimentSpec:
    """Everything a Monte-Carlo run depends on, seed included."""
    base: SystemConfig
    snr_grid_db: list[float]
    n_realizations: int = 20
    problems: list[Problem] = field(default_factory=lambda: [Problem.P1])
    design_modes: list[DesignMode] = field(
        default_factory=lambda: [DesignMode.ROBUST, DesignMode.NAIVE, DesignMode.PERFECT]
    )
    seed: int = 20240101
    aser_symbols: int = 2000
    limits: PowerLimits = field(default_factory=PowerLimits)
    noise_weights: Optional[list[float]] = None
    p_sum: Optional[float] = None
    max_outer_iter: int = 200
    amse_tol: float = 1e-6
    use_gp_step: bool = True
    sigma2_ul: float = 1.0
    source: Optional[Path] = None

    def __post_init__(self) -> None:
        if self.n_realizations < 1:
            raise DomainError("n_realizations must be at least 1")
        if not self.snr_grid_db:
            raise DomainError("snr grid must not be empty")
        if not self.problems or not self.design_modes:
            raise DomainError("at least one problem and one design mode are required")
        if self.aser_symbols < 1:
            raise DomainError("aser_symbols must be positive")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must be an unsigned 64-bit integer")
        self.limits = self.limits.resolve(self.base)

    def p_sum_for(self, problem: Problem) -> float:
        """Starting SNR-axis power: `p_sum` if set, else the problem's nominal budget."""
        if self.p_sum is not None:
            return float(self.p_sum)
        return self.limits.nominal_budget(problem.family)

    def calibrates_p_sum(self, problem: Problem) -> bool:
        """True when the SNR-axis power of `problem` comes from its perfect-CSI design (P2-P4)."""
        return self.p_sum is None and problem in (Problem.P2, Problem.P3, Problem.P4)

    def solve_options(self, problem: Problem, mode: DesignMode) -> SolveOptions:
        return SolveOptions(
            problem=problem,
            power_limits=self.limits,
            design_mode=mode,
            max_outer_iter=self.max_outer_iter,
            amse_tol=self.amse_tol,
            use_gp_step=self.use_gp_step,
            sigma2_ul=self.sigma2_ul,
        )


def default_system_config() -> SystemConfig:
    """Two users, four BS antennas, two antennas and two streams per user."""
    return SystemConfig.build(
        K=2,
        N=4,
        M=[2, 2],
        S=[2, 2],
        sigma_e2=[0.01, 0.02],
        rho_b=[0.1, 0.12],
        rho_m=[0.05, 0.2],
    )


def default_experiment_spec() -> ExperimentSpec:
    """Desk-scale version of the reference simulation setup."""
    return ExperimentSpec(
        base=default_system_config(),
        snr_grid_db=[0.0, 5.0, 10.0, 15.0, 20.0],
        limits=PowerLimits(**DEFAULT_LIMITS),
        noise_weights=[1.0, 2.0],
    )


# --- Value parsers ---

def _split(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _int(text: str) -> int:
    return int(text.strip())


def _float(text: str) -> float:
    return float(text.strip())


def _int_list(text: str) -> list[int]:
    return [int(v) for v in _split(text)]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in _split(text)]


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in {"1", "true", "yes", "on"}:
        return True
    if value in {"0", "false", "no", "off"}:
        return False
    raise ValueError(f"'{text}' is not a boolean")


def _problems(text: str) -> list[Problem]:
    return [Problem.parse(v) for v in _split(text)]


def _modes(text: str) -> list[DesignMode]:
    return [DesignMode.parse(v) for v in _split(text)]


def _scalar_or_list(text: str):
    values = _float_list(text)
    return values[0] if len(values) == 1 else values


# config key -> parser, or (field name, parser) for limit and spec keys
_SYSTEM_KEYS: dict[str, Callable[[str], object]] = {
    "users": _int,
    "antennas": _int,
    "rx_antennas": _int_list,
    "streams": _int_list,
    "error_variance": _float_list,
    "rho_bs": _float_list,
    "rho_ms": _float_list,
}

_LIMIT_KEYS: dict[str, tuple[str, Callable[[str], object]]] = {
    "total_power": ("total", _float),
    "antenna_power": ("antenna", _scalar_or_list),
    "user_power": ("user", _scalar_or_list),
    "symbol_power": ("symbol", _scalar_or_list),
    "entry_power": ("entry", _scalar_or_list),
    "amse_target": ("amse_target", _float),
}

_SPEC_KEYS: dict[str, tuple[str, Callable[[str], object]]] = {
    "snr_grid_db": ("snr_grid_db", _float_list),
    "realizations": ("n_realizations", _int),
    "problems": ("problems", _problems),
    "design_modes": ("design_modes", _modes),
    "seed": ("seed", _int),
    "aser_symbols": ("aser_symbols", _int),
    "noise_weights": ("noise_weights", _float_list),
    "p_sum": ("p_sum", _float),
    "max_outer_iter": ("max_outer_iter", _int),
    "amse_tol": ("amse_tol", _float),
    "use_gp_step": ("use_gp_step", _bool),
    "sigma2_ul": ("sigma2_ul", _float),
}

KNOWN_KEYS = frozenset(_SYSTEM_KEYS) | frozenset(_LIMIT_KEYS) | frozenset(_SPEC_KEYS)


def _per_user(values: Optional[list], K: int, fallback: list, name: str, source: str) -> list:
    if values is None:
        values = fallback if len(fallback) == K else [fallback[0]] * K
    if len(values) == 1 and K > 1:
        values = values * K
    if len(values) != K:
        raise ConfigError(f"{name} needs {K} entries, got {len(values)}", source=source, key=name)
    return values


def _entry_limits(value, config: SystemConfig):
    # a single value or one value per symbol, applied to every antenna
    if isinstance(value, list):
        if len(value) != config.S_total:
            raise DomainError(f"entry_power needs 1 or {config.S_total} values")
        return np.repeat(np.asarray(value, dtype=float)[:, None], config.N, axis=1)
    return value


def parse_config_text(values: dict[str, Optional[str]], source: str = "<config>") -> ExperimentSpec:
    """Build an ExperimentSpec from parsed KEY=VALUE pairs."""
    defaults = default_experiment_spec()
    base = defaults.base

    parsed: dict[str, object] = {}
    for raw_key, raw_value in values.items():
        key = raw_key.strip().lower()
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown key '{raw_key}'", source=source, key=raw_key)
        if raw_value is None or not raw_value.strip():
            raise ConfigError(f"key '{raw_key}' has no value", source=source, key=raw_key)
        if key in _SYSTEM_KEYS:
            parser = _SYSTEM_KEYS[key]
        elif key in _LIMIT_KEYS:
            parser = _LIMIT_KEYS[key][1]
        else:
            parser = _SPEC_KEYS[key][1]
        try:
            parsed[key] = parser(raw_value)
        except (ValueError, DomainError) as exc:
            raise ConfigError(f"bad value for '{raw_key}': {exc}", source=source, key=raw_key) from exc

    K = parsed.get("users", base.K)
    N = parsed.get("antennas", base.N)
    try:
        M = _per_user(parsed.get("rx_antennas"), K, list(base.M), "rx_antennas", source)
        S = _per_user(parsed.get("streams"), K, list(base.S), "streams", source)
        config = SystemConfig.build(
            K=K,
            N=N,
            M=M,
            S=S,
            sigma_e2=_per_user(parsed.get("error_variance"), K, list(base.sigma_e2), "error_variance", source),
            rho_b=_per_user(parsed.get("rho_bs"), K, list(base.rho_b), "rho_bs", source),
            rho_m=_per_user(parsed.get("rho_ms"), K, list(base.rho_m), "rho_ms", source),
        )

        limit_fields = dict(DEFAULT_LIMITS)
        for key, (name, _) in _LIMIT_KEYS.items():
            if key in parsed:
                limit_fields[name] = parsed[key]
        limit_fields["entry"] = _entry_limits(limit_fields["entry"], config)

        spec_fields: dict[str, object] = {}
        for key, (name, _) in _SPEC_KEYS.items():
            if key in parsed:
                spec_fields[name] = parsed[key]
        if "noise_weights" not in spec_fields and K != len(defaults.noise_weights or []):
            spec_fields["noise_weights"] = None

        return replace(
            defaults,
            base=config,
            limits=PowerLimits(**limit_fields),
            source=Path(source) if source != "<config>" else None,
            **spec_fields,
        )
    except DomainError as exc:
        raise ConfigError(str(exc), source=source) from exc


def parse_config_file(path: Path) -> ExperimentSpec:
    """
    Parse an experiment configuration file.

    Args:
        path: Path to the KEY=VALUE file

    Returns:
        ExperimentSpec with defaults for every key the file leaves out

    Raises:
        ConfigError: unknown key, malformed value or inconsistent dimensions
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError("file not found", source=str(path))
    values = dotenv_values(path, interpolate=False)
    logger.debug("read %d keys from %s", len(values), path)
    spec = parse_config_text(values, source=str(path))
    return replace(spec, source=path)
