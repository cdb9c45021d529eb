"""
Verification Module

Randomised property checks for the dualities, the noise fixed points,
the per-symbol AMSE posynomial and the GP solver. Used by
`mimo-duality verify` and by the test suite.
"""

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .channel_model import ChannelSet, SystemConfig, channel_rng, complex_gaussian, realize_channel
from .config_loader import DEFAULT_LIMITS, default_system_config
from .duality import (
    DualityState,
    solve_mu_fixed_point,
    solve_mu_tilde_fixed_point,
    solve_psi_fixed_point,
    transfer_dl_to_ul_p1,
    transfer_dl_to_virtual,
    transfer_interf_to_dl_p3,
    transfer_interf_to_dl_p4,
    transfer_ul_to_dl_p1,
    transfer_ul_to_dl_p2,
)
from .errors import MimoDualityError
from .gp_solver import GpProblem, Posynomial, gp_solve
from .link_simulator import snr_to_noise
from .mse_core import (
    DualityNoise,
    mamse_receiver_dl,
    mamse_receiver_virtual,
    split,
    stack,
    sum_amse_dl,
    sum_amse_interf,
    sum_amse_ul,
    sum_amse_ul2,
)
from .power_allocation import amse_posynomial, d_matrix, decompose, phi_matrix
from .problems import PowerLimits, Problem

logger = logging.getLogger(__name__)

CONSERVATION_TOL = 1e-9
RESIDUAL_TOL = 1e-8
BUDGET_TOL = 1e-6
FEASIBILITY_TOL = 1e-6
GP_TOL = 1e-6


@dataclass
class PropertyResult:
    """Worst-case outcome of one property over all instances."""
    name: str
    passed: bool
    worst: float
    tolerance: float
    instances: int
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"{status} {self.name}: worst {self.worst:.3e} (tol {self.tolerance:.0e}, {self.instances} instances)"
        return f"{text} - {self.detail}" if self.detail else text


@dataclass(frozen=True, eq=False)
class Instance:
    config: SystemConfig
    channel: ChannelSet
    B: list[np.ndarray]
    W: list[np.ndarray]
    limits: PowerLimits


def random_instance(seed: int, index: int) -> Instance:
    """Default dimensions, random channel, noise at a random SNR and random precoders."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index, 1)))
    base = default_system_config()
    snr_db = float(rng.uniform(0.0, 20.0))
    config = base.with_noise(snr_to_noise(base, snr_db, DEFAULT_LIMITS["total"]))
    channel = realize_channel(config, channel_rng(seed, index))
    Bm = complex_gaussian(rng, (config.N, config.S_total))
    Bm *= np.sqrt(DEFAULT_LIMITS["total"]) / np.linalg.norm(Bm)
    B = split(Bm, config)
    W = mamse_receiver_dl(B, channel, config)
    return Instance(config, channel, B, W, PowerLimits(**DEFAULT_LIMITS).resolve(config))


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-300)


# --- Properties; each returns the worst deviation of one instance ---

def check_p1_conservation(inst: Instance) -> float:
    cfg, ch = inst.config, inst.channel
    sigma2 = 1.0
    dl = sum_amse_dl(inst.B, inst.W, ch, cfg)
    V, T, _ = transfer_dl_to_ul_p1(inst.B, inst.W, ch, cfg, sigma2)
    forward = _rel(sum_amse_ul(V, T, sigma2, ch, cfg), dl)

    T = mamse_receiver_virtual(V, DualityNoise(sigma2=sigma2), Problem.P1, ch, cfg)
    ul = sum_amse_ul(V, T, sigma2, ch, cfg)
    B, W, _ = transfer_ul_to_dl_p1(V, T, ch, cfg, sigma2)
    backward = _rel(sum_amse_dl(B, W, ch, cfg), ul)
    return max(forward, backward)


def _virtual_round_trip(inst: Instance, problem: Problem) -> tuple[float, float, float]:
    """Gap-identity error, back-transfer conservation error and power violation."""
    cfg, ch, limits = inst.config, inst.channel, inst.limits
    state = DualityState.from_decoders(inst.W, ch, cfg)
    V, T0 = transfer_dl_to_virtual(inst.B, inst.W)
    dl = sum_amse_dl(inst.B, inst.W, ch, cfg)
    Bm = stack(inst.B)

    if problem is Problem.P2:
        x = solve_psi_fixed_point(state, limits.antenna)
        current = np.sum(np.abs(Bm) ** 2, axis=1)
        noise = DualityNoise(psi=x)
        virtual = lambda T: sum_amse_ul2(V, T, x, ch, cfg)  # noqa: E731
        back = lambda T: transfer_ul_to_dl_p2(V, T, x, state, ch, cfg)  # noqa: E731
        power = lambda B: np.sum(np.abs(stack(B)) ** 2, axis=1)  # noqa: E731
        limit = limits.antenna
    elif problem is Problem.P3:
        x = solve_mu_fixed_point(state, limits.user)
        current = np.array([np.real(np.vdot(b, b)) for b in inst.B])
        noise = DualityNoise(mu=x)
        virtual = lambda T: sum_amse_interf(V, T, ch, cfg, mu=x)  # noqa: E731
        back = lambda T: transfer_interf_to_dl_p3(V, T, x, state, ch, cfg)  # noqa: E731
        power = lambda B: np.array([np.real(np.vdot(b, b)) for b in B])  # noqa: E731
        limit = limits.user
    else:
        x = solve_mu_tilde_fixed_point(state, limits.symbol)
        current = np.sum(np.abs(Bm) ** 2, axis=0)
        noise = DualityNoise(mu_tilde=x)
        virtual = lambda T: sum_amse_interf(V, T, ch, cfg, mu_tilde=x)  # noqa: E731
        back = lambda T: transfer_interf_to_dl_p4(V, T, x, state, ch, cfg)  # noqa: E731
        power = lambda B: np.sum(np.abs(stack(B)) ** 2, axis=0)  # noqa: E731
        limit = limits.symbol

    gap = _rel(virtual(T0), dl - (state.tau - float(current @ x)))

    T = mamse_receiver_virtual(V, noise, problem, ch, cfg)
    B, W, _ = back(T)
    conservation = _rel(sum_amse_dl(B, W, ch, cfg), virtual(T))
    violation = float(np.max((power(B) - limit) / limit))
    return gap, conservation, violation


def check_virtual_conservation(inst: Instance) -> float:
    worst = 0.0
    for problem in (Problem.P2, Problem.P3, Problem.P4):
        gap, conservation, _ = _virtual_round_trip(inst, problem)
        worst = max(worst, gap, conservation)
    return worst


def check_transfer_feasibility(inst: Instance) -> float:
    return max(_virtual_round_trip(inst, p)[2] for p in (Problem.P2, Problem.P3, Problem.P4))


def _fixed_point_residuals(state: DualityState, x: np.ndarray, limits: np.ndarray, power: np.ndarray) -> tuple[float, float]:
    mapped = state.tau * x * power / (limits * float(x @ power))
    residual = float(np.max(np.abs(x - mapped)) / np.max(np.abs(x)))
    budget = _rel(float(x @ limits), state.tau)
    return residual, budget


def check_fixed_points(inst: Instance) -> tuple[float, float]:
    """Fixed-point residual and budget identity Σ x·limit = τ for ψ, μ and μ̃."""
    cfg, ch, limits = inst.config, inst.channel, inst.limits
    state = DualityState.from_decoders(inst.W, ch, cfg)
    C = state.covariance
    results = []

    psi = solve_psi_fixed_point(state, limits.antenna)
    X = np.linalg.inv(C + np.diag(psi))
    results.append(_fixed_point_residuals(state, psi, limits.antenna, np.real(np.diag(X @ state.A @ X))))

    for blocks, solver, limit in (
        (state.A_k, solve_mu_fixed_point, limits.user),
        (state.A_ks, solve_mu_tilde_fixed_point, limits.symbol),
    ):
        x = solver(state, limit)
        power = np.array([
            np.real(np.trace(np.linalg.matrix_power(np.linalg.inv(C + xi * np.eye(cfg.N)), 2) @ blk))
            for xi, blk in zip(x, blocks)
        ])
        results.append(_fixed_point_residuals(state, x, limit, power))

    return max(r for r, _ in results), max(b for _, b in results)


def check_posynomial_consistency(inst: Instance) -> float:
    cfg, ch = inst.config, inst.channel
    dec = decompose(inst.B, inst.W, cfg)
    posy = amse_posynomial(dec, phi_matrix(dec, ch, cfg), d_matrix(dec, ch, cfg), ch, cfg)
    return _rel(posy(dec.p), sum_amse_dl(inst.B, inst.W, ch, cfg))


def check_gp_closed_forms() -> float:
    """Three GPs with known optima."""
    worst = 0.0
    eye1 = np.eye(1)

    # min 2/p + p/2 -> 2 at p = 2
    prob = GpProblem(Posynomial.from_monomials([(2.0, [-1.0]), (0.5, [1.0])]))
    worst = max(worst, _rel(gp_solve(prob).objective, 2.0))

    # min 1/p s.t. p/5 <= 1 -> p = 5
    prob = GpProblem(Posynomial([1.0], -eye1), [Posynomial([0.2], eye1)])
    worst = max(worst, _rel(float(gp_solve(prob).p[0]), 5.0))

    # min 1/p1 + 4/p2 s.t. (p1 + p2)/3 <= 1 -> p = (1, 2)
    eye2 = np.eye(2)
    prob = GpProblem(Posynomial([1.0, 4.0], -eye2), [Posynomial([1.0 / 3.0, 1.0 / 3.0], eye2)])
    p = gp_solve(prob).p
    worst = max(worst, float(np.max(np.abs(p - np.array([1.0, 2.0])))))
    return worst


def run_verification(instances: int = 20, seed: int = 7) -> list[PropertyResult]:
    """
    Run every property over `instances` random instances.

    A property whose check raises is reported as failed with the error text.
    """
    cases = [random_instance(seed, i) for i in range(instances)]
    results: list[PropertyResult] = []

    def collect(name: str, tolerance: float, check: Callable[[Instance], float]) -> None:
        worst = 0.0
        try:
            for inst in cases:
                worst = max(worst, check(inst))
        except (MimoDualityError, np.linalg.LinAlgError) as exc:
            logger.error("%s raised: %s", name, exc)
            results.append(PropertyResult(name, False, float("inf"), tolerance, len(cases), str(exc)))
            return
        results.append(PropertyResult(name, worst <= tolerance, worst, tolerance, len(cases)))

    collect("P1 duality conserves sum AMSE", CONSERVATION_TOL, check_p1_conservation)
    collect("P2-P4 virtual transfers match the gap identity", CONSERVATION_TOL, check_virtual_conservation)
    collect("P2-P4 back-transfers respect the power limits", FEASIBILITY_TOL, check_transfer_feasibility)
    collect("fixed points solve their equations", RESIDUAL_TOL, lambda inst: check_fixed_points(inst)[0])
    collect("fixed points meet the budget identity", BUDGET_TOL, lambda inst: check_fixed_points(inst)[1])
    collect("per-symbol posynomial sums to the sum AMSE", CONSERVATION_TOL, check_posynomial_consistency)

    try:
        worst = check_gp_closed_forms()
        results.append(PropertyResult("GP solver reproduces closed forms", worst <= GP_TOL, worst, GP_TOL, 3))
    except MimoDualityError as exc:
        results.append(PropertyResult("GP solver reproduces closed forms", False, float("inf"), GP_TOL, 3, str(exc)))

    return results
