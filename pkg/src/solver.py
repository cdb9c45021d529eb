"""
Solver Module

Alternating-optimisation design loop. Each outer iteration moves the
downlink filters into the virtual channel of the problem's duality,
replaces the virtual decoders by their MAMSE solution, moves back, and,
for the GP variant, re-allocates symbol powers before the downlink
receivers are refreshed.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .channel_model import ChannelSet, SystemConfig
from .duality import (
    DEFAULT_DAMPING,
    DEFAULT_MAX_ITER,
    DualityState,
    solve_mu_fixed_point,
    solve_mu_tilde_fixed_point,
    solve_psi_fixed_point,
    solve_psi_fixed_point_power_min,
    transfer_dl_to_ul_p1,
    transfer_dl_to_virtual,
    transfer_interf_to_dl_p3,
    transfer_interf_to_dl_p4,
    transfer_ul_to_dl_p1,
    transfer_ul_to_dl_p2,
)
from .errors import (
    DegenerateTransferError,
    DomainError,
    FixedPointConvergenceError,
    GpInfeasibleError,
    GpIterationError,
    MimoDualityError,
    PowerFeasibilityError,
    SingularCovarianceError,
    SolveError,
)
from .gp_solver import gp_solve
from .mse_core import DualityNoise, Transceiver, mamse_receiver_dl, mamse_receiver_virtual, stack, sum_amse_dl
from .power_allocation import (
    Decomposition,
    amse_posynomial,
    build_gp,
    build_power_min_gp,
    d_matrix,
    decompose,
    mamse_scaled_receiver,
    phi_matrix,
)
from .problems import ConstraintFamily, DesignMode, PowerLimits, Problem

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-6
GUARD_SLACK = 1e-9
# Duality-step failures after which the loop keeps the previous iterate.
SKIPPABLE_DUALITY_ERRORS = (
    FixedPointConvergenceError,
    SingularCovarianceError,
    DegenerateTransferError,
    PowerFeasibilityError,
)


@dataclass
class SolveOptions:
    """Problem, design mode, limits and loop controls of one design run."""
    problem: Problem
    power_limits: PowerLimits
    design_mode: DesignMode = DesignMode.ROBUST
    max_outer_iter: int = 200
    amse_tol: float = 1e-6
    use_gp_step: bool = True
    sigma2_ul: float = 1.0
    fixed_point_damping: float = DEFAULT_DAMPING
    fixed_point_max_iter: int = DEFAULT_MAX_ITER
    gp_tol: float = 1e-9

    def __post_init__(self) -> None:
        if self.problem is Problem.P5:
            raise DomainError("P5 is only available as a power-allocation GP")
        limit = self.power_limits.get(self.problem.family)
        if limit is None:
            raise DomainError(f"{self.problem.value} needs a {self.problem.family.value} power limit")
        if np.any(np.asarray(limit, dtype=float) <= 0):
            raise DomainError(f"{self.problem.family.value} power limits must be strictly positive")
        if self.problem.is_power_min and not (self.power_limits.amse_target or 0) > 0:
            raise DomainError(f"{self.problem.value} needs a positive sum-AMSE target")
        if self.max_outer_iter < 1:
            raise DomainError("max_outer_iter must be at least 1")
        if self.amse_tol <= 0:
            raise DomainError("amse_tol must be positive")
        if self.sigma2_ul <= 0:
            raise DomainError("sigma2_ul must be positive")


@dataclass
class PowerReport:
    """Transmit power at every constraint granularity."""
    total: float
    antenna: np.ndarray
    user: np.ndarray
    symbol: np.ndarray
    entry: np.ndarray  # S×N

    @classmethod
    def from_precoders(cls, B: Sequence[np.ndarray], config: SystemConfig) -> "PowerReport":
        Bm = stack(B)
        entry = (np.abs(Bm) ** 2).T
        symbol = entry.sum(axis=1)
        user = np.array([symbol[config.symbol_slice(k)].sum() for k in range(config.K)])
        return cls(
            total=float(symbol.sum()),
            antenna=entry.sum(axis=0),
            user=user,
            symbol=symbol,
            entry=entry,
        )

    def usage(self, family: ConstraintFamily):
        return {
            ConstraintFamily.TOTAL: self.total,
            ConstraintFamily.ANTENNA: self.antenna,
            ConstraintFamily.USER: self.user,
            ConstraintFamily.SYMBOL: self.symbol,
            ConstraintFamily.ENTRY: self.entry,
        }[family]

    def violation(self, family: ConstraintFamily, limits: PowerLimits) -> float:
        """Largest relative excess over the limits of `family` (<= 0 when met)."""
        limit = np.asarray(limits.require(family), dtype=float)
        used = np.asarray(self.usage(family), dtype=float)
        return float(np.max((used - limit) / limit))

    def max_violation(self, limits: PowerLimits) -> float:
        """Largest relative excess over every family with a configured limit."""
        values = [
            self.violation(family, limits)
            for family in ConstraintFamily
            if limits.get(family) is not None
        ]
        return max(values) if values else 0.0


@dataclass
class SolveResult:
    """Designed transceiver with its convergence history."""
    transceiver: Transceiver
    amse_trace: list[float]
    power_usage: PowerReport
    iterations: int
    converged: bool
    objective_trace: list[float] = field(default_factory=list)
    skipped_duality_steps: int = 0
    violation_trace: list[float] = field(default_factory=list)


def _truncated_identity(config: SystemConfig, scales: np.ndarray) -> list[np.ndarray]:
    Bm = np.zeros((config.N, config.S_total), dtype=complex)
    for l in range(config.S_total):
        Bm[l % config.N, l] = scales[l]
    return [Bm[:, config.symbol_slice(k)] for k in range(config.K)]


def _dft_phases(config: SystemConfig) -> np.ndarray:
    n = np.arange(config.N)[:, None]
    l = np.arange(config.S_total)[None, :]
    return np.exp(-2j * np.pi * n * l / max(config.N, config.S_total))


def init_precoders(config: SystemConfig, options: SolveOptions) -> list[np.ndarray]:
    """Deterministic starting precoders meeting the active limits with equality."""
    limits = options.power_limits.resolve(config)
    family = options.problem.family
    S = config.S_total

    if family is ConstraintFamily.TOTAL:
        return _truncated_identity(config, np.full(S, np.sqrt(limits.total / S)))
    if family is ConstraintFamily.ANTENNA:
        Bm = np.sqrt(limits.antenna[:, None] / S) * _dft_phases(config)
        return [Bm[:, config.symbol_slice(k)] for k in range(config.K)]
    if family is ConstraintFamily.USER:
        owner = config.symbol_owner
        scales = np.sqrt(limits.user[owner] / np.asarray(config.S)[owner])
        return _truncated_identity(config, scales)
    if family is ConstraintFamily.SYMBOL:
        return _truncated_identity(config, np.sqrt(limits.symbol))
    Bm = np.sqrt(limits.entry.T) * _dft_phases(config)
    return [Bm[:, config.symbol_slice(k)] for k in range(config.K)]


def design_view(config: SystemConfig, channel: ChannelSet, mode: DesignMode) -> tuple[SystemConfig, ChannelSet]:
    """Configuration and channel the designer believes in."""
    if mode is DesignMode.ROBUST:
        return config, channel
    zero_error = config.with_error_variance([0.0] * config.K)
    if mode is DesignMode.NAIVE:
        return zero_error, channel
    return zero_error, channel.as_perfect()


def evaluation_view(config: SystemConfig, channel: ChannelSet, mode: DesignMode) -> tuple[SystemConfig, ChannelSet]:
    """Configuration and channel a design is scored against."""
    if mode is DesignMode.PERFECT:
        return design_view(config, channel, mode)
    return config, channel


def evaluate(
    transceiver: Transceiver,
    channel: ChannelSet,
    config: SystemConfig,
    true_error_stats: Optional[Sequence[float]] = None,
) -> tuple[float, PowerReport]:
    """Sum AMSE under the given error variances (those of `config` by default) and the power report."""
    if true_error_stats is not None:
        config = config.with_error_variance(true_error_stats)
    amse = sum_amse_dl(transceiver.B, transceiver.W, channel, config)
    return amse, PowerReport.from_precoders(transceiver.B, config)


class _DesignLoop:
    """State carried across the outer iterations of one `solve` call."""

    def __init__(self, config: SystemConfig, channel: ChannelSet, options: SolveOptions):
        self.config = config
        self.channel = channel
        self.options = options
        self.problem = options.problem
        self.limits = options.power_limits.resolve(config)
        self.V: list[np.ndarray] = []
        self.T: list[np.ndarray] = []

    def objective(self, B: Sequence[np.ndarray], W: Sequence[np.ndarray]) -> tuple[float, float]:
        amse = sum_amse_dl(B, W, self.channel, self.config)
        if self.problem.is_power_min:
            return amse, PowerReport.from_precoders(B, self.config).total
        return amse, amse

    # --- duality ---

    def _fixed_point_kwargs(self) -> dict:
        return {
            "max_iter": self.options.fixed_point_max_iter,
            "damping": self.options.fixed_point_damping,
        }

    def transfer(self, B: list[np.ndarray], W: list[np.ndarray]) -> tuple[list[np.ndarray], list[np.ndarray]]:
        kind = self.problem.duality_problem
        cfg, ch = self.config, self.channel

        if kind is Problem.P1:
            sigma2 = self.options.sigma2_ul
            V, _, _ = transfer_dl_to_ul_p1(B, W, ch, cfg, sigma2)
            T = mamse_receiver_virtual(V, DualityNoise(sigma2=sigma2), kind, ch, cfg)
            self.V, self.T = V, T
            B, W, _ = transfer_ul_to_dl_p1(V, T, ch, cfg, sigma2)
            return B, W

        state = DualityState.from_decoders(W, ch, cfg)
        V, _ = transfer_dl_to_virtual(B, W)
        report = PowerReport.from_precoders(B, cfg)
        power_min = self.problem.is_power_min

        if kind is Problem.P2:
            current = report.antenna
            if power_min:
                psi = solve_psi_fixed_point_power_min(state, current, **self._fixed_point_kwargs())
            else:
                psi = solve_psi_fixed_point(state, self.limits.antenna, **self._fixed_point_kwargs())
            self._check_ordering(state.tau, current, psi, "antenna")
            T = mamse_receiver_virtual(V, DualityNoise(psi=psi), kind, ch, cfg)
            B, W, _ = transfer_ul_to_dl_p2(V, T, psi, state, ch, cfg)
        elif kind is Problem.P3:
            current = report.user
            targets = current if power_min else self.limits.user
            mu = solve_mu_fixed_point(state, targets, **self._fixed_point_kwargs())
            self._check_ordering(state.tau, current, mu, "user")
            T = mamse_receiver_virtual(V, DualityNoise(mu=mu), kind, ch, cfg)
            B, W, _ = transfer_interf_to_dl_p3(V, T, mu, state, ch, cfg)
        else:
            current = report.symbol
            targets = current if power_min else self.limits.symbol
            mu_tilde = solve_mu_tilde_fixed_point(state, targets, **self._fixed_point_kwargs())
            self._check_ordering(state.tau, current, mu_tilde, "symbol")
            T = mamse_receiver_virtual(V, DualityNoise(mu_tilde=mu_tilde), kind, ch, cfg)
            B, W, _ = transfer_interf_to_dl_p4(V, T, mu_tilde, state, ch, cfg)
        self.V, self.T = V, T
        return B, W

    @staticmethod
    def _check_ordering(tau: float, current: np.ndarray, noise: np.ndarray, family: str) -> None:
        spent = float(np.asarray(current) @ np.asarray(noise))
        if spent > tau * (1.0 + 1e-9):
            logger.warning(
                "virtual %s noise spends %.6g > tau=%.6g before the transfer; sum AMSE may rise this step",
                family, spent, tau,
            )

    def violation(self, B: Sequence[np.ndarray]) -> float:
        """Relative excess of B over the active limit family."""
        return PowerReport.from_precoders(B, self.config).violation(self.problem.family, self.limits)

    def check_feasible(self, B: Sequence[np.ndarray]) -> None:
        family = self.problem.family
        violation = self.violation(B)
        if violation > FEASIBILITY_TOL:
            raise PowerFeasibilityError(
                f"{family.value} power limit exceeded by {violation:.3e} (relative)",
                family=family.value,
                violation=violation,
            )

    # --- power allocation ---

    def _incoming_feasible(self, dec: Decomposition, amse_value: float) -> bool:
        B, _ = dec.reconstruct(self.config)
        report = PowerReport.from_precoders(B, self.config)
        if report.violation(self.problem.family, self.limits) > FEASIBILITY_TOL:
            return False
        return amse_value <= self.limits.amse_target * (1.0 + GUARD_SLACK)

    def allocate_power(self, B: list[np.ndarray], W: list[np.ndarray]) -> Decomposition:
        cfg, ch = self.config, self.channel
        dec = decompose(B, W, cfg)
        Phi = phi_matrix(dec, ch, cfg)
        D = d_matrix(dec, ch, cfg)
        amse = amse_posynomial(dec, Phi, D, ch, cfg)
        before = amse(dec.p)

        if self.problem.is_power_min:
            prob = build_power_min_gp(self.problem, dec, Phi, D, ch, cfg, self.limits, self.limits.amse_target)
        else:
            prob = build_gp(self.problem, dec, Phi, D, ch, cfg, self.limits)

        try:
            solution = gp_solve(prob, tol=self.options.gp_tol, p0=dec.p)
        except (GpInfeasibleError, GpIterationError) as exc:
            if self.problem.is_power_min and not self._incoming_feasible(dec, before):
                raise
            logger.debug("keeping incoming powers: %s", exc)
            return dec

        after = amse(solution.p)
        if self.problem.is_power_min:
            accepted = (
                not self._incoming_feasible(dec, before)
                or (
                    solution.p.sum() <= dec.p.sum() * (1.0 + GUARD_SLACK)
                    and after <= self.limits.amse_target * (1.0 + GUARD_SLACK)
                )
            )
        else:
            accepted = after <= before + GUARD_SLACK * max(1.0, before)
        if not accepted:
            logger.debug("GP result rejected (AMSE %.12g -> %.12g)", before, after)
            return dec
        return dec.with_powers(solution.p)

    def refresh_receivers(self, dec: Decomposition) -> tuple[list[np.ndarray], list[np.ndarray]]:
        U, alpha = mamse_scaled_receiver(dec.G, dec.p, self.channel, self.config)
        return Decomposition(G=dec.G, U=U, alpha=alpha, p=dec.p).filters(self.config)

    def duality_step(
        self, B: list[np.ndarray], W: list[np.ndarray]
    ) -> tuple[list[np.ndarray], list[np.ndarray], bool]:
        """Transfer through the virtual channel, or hand back (B, W) unchanged when that fails."""
        try:
            B_new, W_new = self.transfer(B, W)
            if not self.problem.is_power_min:
                self.check_feasible(B_new)
        except SKIPPABLE_DUALITY_ERRORS as exc:
            logger.warning("%s: duality step skipped, keeping the previous iterate: %s", self.problem.value, exc)
            return B, W, False
        return B_new, W_new, True

    def step(self, B: list[np.ndarray], W: list[np.ndarray]) -> tuple[list[np.ndarray], list[np.ndarray], bool]:
        B, W, dual_ok = self.duality_step(B, W)
        if self.options.use_gp_step:
            dec = self.allocate_power(B, W)
            B, W = self.refresh_receivers(dec)
        else:
            W = mamse_receiver_dl(B, self.channel, self.config)
        if self.problem.is_power_min:
            self.check_feasible(B)
        return B, W, dual_ok


def solve(config: SystemConfig, channel: ChannelSet, options: SolveOptions) -> SolveResult:
    """
    Run the design loop until the objective settles.

    The objective is the sum AMSE for P1-P4 and the total transmit power
    for P6-P10. A duality step whose fixed point or back-transfer fails is
    skipped and the previous iterate kept; when the power allocation then
    makes no progress either, the loop stops unconverged. Other
    sub-operation failures are re-raised as SolveError with the outer
    iteration attached.
    """
    design_config, design_channel = design_view(config, channel, options.design_mode)
    loop = _DesignLoop(design_config, design_channel, options)

    try:
        B = init_precoders(design_config, options)
        W = mamse_receiver_dl(B, design_channel, design_config)
    except MimoDualityError as exc:
        raise SolveError(f"initialization failed: {exc}", iteration=0) from exc

    amse, objective = loop.objective(B, W)
    amse_trace, objective_trace = [amse], [objective]
    violation_trace = [loop.violation(B)]
    converged = False
    iterations = 0
    skipped = 0

    for iteration in range(1, options.max_outer_iter + 1):
        try:
            B, W, dual_ok = loop.step(B, W)
        except MimoDualityError as exc:
            raise SolveError(f"outer iteration {iteration}: {exc}", iteration=iteration) from exc
        iterations = iteration
        skipped += not dual_ok
        amse, objective = loop.objective(B, W)
        amse_trace.append(amse)
        objective_trace.append(objective)
        violation_trace.append(loop.violation(B))
        if abs(objective_trace[-2] - objective) < options.amse_tol:
            converged = dual_ok
            break

    if skipped:
        logger.warning(
            "%s/%s skipped %d of %d duality steps", options.problem.value, options.design_mode.value, skipped, iterations
        )
    logger.debug(
        "%s/%s finished after %d iterations (converged=%s, sum AMSE %.6g)",
        options.problem.value, options.design_mode.value, iterations, converged, amse,
    )
    return SolveResult(
        transceiver=Transceiver(B=B, W=W, V=loop.V, T=loop.T),
        amse_trace=amse_trace,
        power_usage=PowerReport.from_precoders(B, config),
        iterations=iterations,
        converged=converged,
        objective_trace=objective_trace,
        skipped_duality_steps=skipped,
        violation_trace=violation_trace,
    )
