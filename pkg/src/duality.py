"""
Duality Module

AMSE-preserving transfers between the downlink and the virtual uplink or
interference channel, and the fixed points that choose the virtual noise
so that the downlink power constraints come out met.

Every fixed point has the same shape: find x > 0 with

    x_i = τ x_i c_i(x) / (limit_i · Σ_j x_j c_j(x))

where c_i is the power the virtual decoder spends on element i (an
antenna, a user or a symbol). At a solution Σ_i x_i limit_i = τ and the
downlink powers produced by the transfer equal the limits.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import eigh
from scipy.optimize import root

from .channel_model import ChannelSet, SystemConfig
from .errors import DegenerateTransferError, DomainError, FixedPointConvergenceError, MimoDualityError
from .mse_core import hermitian_solve, noise_power, stack

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITER = 500
DEFAULT_TOL = 1e-8
DEFAULT_DAMPING = 0.5
# Picard iterations between root-finding polishes.
POLISH_EVERY = 25
# Residual accepted, with a warning, once the iteration cap is reached.
ACCEPT_TOL = 1e-7
# A component whose Picard step shrinks it below this ratio is pinned to the floor when polishing.
PIN_RATIO = 0.999


@dataclass(frozen=True, eq=False)
class DualityState:
    """Decoder-derived quantities shared by the P2-P4 fixed points."""
    A: np.ndarray
    Upsilon: np.ndarray
    A_k: tuple[np.ndarray, ...]
    A_ks: tuple[np.ndarray, ...]
    tau: float

    @classmethod
    def from_decoders(cls, W: Sequence[np.ndarray], channel: ChannelSet, config: SystemConfig) -> "DualityState":
        N = config.N
        A = np.zeros((N, N), dtype=complex)
        Upsilon = np.zeros((N, N), dtype=complex)
        A_k, A_ks = [], []
        for k in range(config.K):
            HW = channel.uplink(k) @ W[k]
            a_k = HW @ HW.conj().T
            A_k.append(a_k)
            A_ks.extend(np.outer(HW[:, s], HW[:, s].conj()) for s in range(config.S[k]))
            A += a_k
            WW = W[k] @ W[k].conj().T
            Upsilon += config.sigma_e2[k] * np.real(np.trace(channel.R_m[k] @ WW)) * channel.R_b[k]
        return cls(
            A=A,
            Upsilon=Upsilon,
            A_k=tuple(A_k),
            A_ks=tuple(A_ks),
            tau=noise_power(W, config),
        )

    @property
    def covariance(self) -> np.ndarray:
        """A + Υ."""
        C = self.A + self.Upsilon
        return 0.5 * (C + C.conj().T)


# --- P1: total power ---

def transfer_dl_to_ul_p1(
    B: Sequence[np.ndarray],
    W: Sequence[np.ndarray],
    channel: ChannelSet,
    config: SystemConfig,
    sigma2: float,
) -> tuple[list[np.ndarray], list[np.ndarray], float]:
    """V = β̃W, T = B/β̃ with β̃² = σ² tr(B^H B) / τ."""
    if sigma2 <= 0:
        raise DomainError("uplink noise variance must be positive")
    tau = noise_power(W, config)
    power = float(np.real(np.vdot(stack(B), stack(B))))
    if tau <= 0 or power <= 0:
        raise DegenerateTransferError(f"cannot scale into the uplink (tau={tau:.3e}, power={power:.3e})")
    beta_tilde = float(np.sqrt(sigma2 * power / tau))
    V = [beta_tilde * w for w in W]
    T = [b / beta_tilde for b in B]
    return V, T, beta_tilde


def transfer_ul_to_dl_p1(
    V: Sequence[np.ndarray],
    T: Sequence[np.ndarray],
    channel: ChannelSet,
    config: SystemConfig,
    sigma2: float,
) -> tuple[list[np.ndarray], list[np.ndarray], float]:
    """B = βT, W = V/β with β² = tr(V^H R_n V) / (σ² tr(T^H T))."""
    if sigma2 <= 0:
        raise DomainError("uplink noise variance must be positive")
    tau = noise_power(V, config)
    t_power = float(np.real(np.vdot(stack(T), stack(T))))
    if tau <= 0 or t_power <= 0:
        raise DegenerateTransferError(f"cannot scale into the downlink (tau={tau:.3e}, |T|^2={t_power:.3e})")
    beta = float(np.sqrt(tau / (sigma2 * t_power)))
    return [beta * t for t in T], [v / beta for v in V], beta


# --- P2-P4: the downlink filters enter the virtual channel unscaled ---

def transfer_dl_to_virtual(
    B: Sequence[np.ndarray],
    W: Sequence[np.ndarray],
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """
    V = W, T = B.

    The virtual sum AMSE equals the downlink one minus (τ - p̃ᵀx), where x is
    the virtual noise and p̃ the matching downlink powers, so it never
    exceeds the downlink value when Σ x·limit = τ and p̃ ≤ limit.
    """
    return [w.copy() for w in W], [b.copy() for b in B]


def default_epsilon(tau: float, limits: np.ndarray) -> float:
    """
    Lower bound on the virtual noise levels.

    1e-6 for problems where the per-element budget τ/limit is at least one,
    shrunk proportionally below that so the floor stays far under the
    uniform split τ/(n·limit).
    """
    scale = float(np.min(tau / np.asarray(limits, dtype=float)))
    return min(1e-6, 1e-6 * scale)


def _solve_budget_fixed_point(
    power_of: Callable[[np.ndarray], np.ndarray],
    limits: np.ndarray,
    tau: float,
    label: str,
    epsilon: Optional[float],
    max_iter: int,
    damping: float,
    tol: float,
) -> np.ndarray:
    limits = np.asarray(limits, dtype=float)
    if tau <= 0:
        raise DomainError(f"{label} fixed point needs a positive noise power tau (got {tau:.3e})")
    if np.any(limits <= 0):
        raise DomainError(f"{label} fixed point needs strictly positive limits")
    if not 0.0 <= damping < 1.0:
        raise DomainError("damping must lie in [0, 1)")
    eps = default_epsilon(tau, limits) if epsilon is None else float(epsilon)
    upper = np.maximum(tau / limits, eps)

    def mapping(x: np.ndarray) -> np.ndarray:
        weighted = x * power_of(x)
        total = float(np.sum(weighted))
        if not total > 0:
            raise DegenerateTransferError(f"{label} fixed point: decoders spend no power")
        return np.maximum(tau * weighted / (limits * total), eps)

    def residual(x: np.ndarray, fx: np.ndarray) -> float:
        return float(np.max(np.abs(x - fx)) / np.max(np.abs(x)))

    x = np.maximum(tau / (limits.size * limits), eps)
    fx = mapping(x)
    res = residual(x, fx)
    iterations = 0
    last_polish = 0
    while res > tol and iterations < max_iter:
        if iterations - last_polish >= POLISH_EVERY:
            last_polish = iterations
            for pinned in _pinned_sets(x, fx, eps):
                candidate = _polish(mapping, x, pinned, eps, upper)
                if candidate is None:
                    continue
                f_candidate = mapping(candidate)
                r_candidate = residual(candidate, f_candidate)
                if r_candidate < res:
                    x, fx, res = candidate, f_candidate, r_candidate
                    logger.debug("%s fixed point polished to residual %.3e (%d pinned)", label, res, int(pinned.sum()))
            if res <= tol:
                break
        # geometric damping: x <- x^d · F(x)^(1-d)
        x = np.maximum(np.exp(damping * np.log(x) + (1.0 - damping) * np.log(fx)), eps)
        fx = mapping(x)
        res = residual(x, fx)
        iterations += 1

    if res > tol:
        floor_share = float(np.sum(limits[fx <= eps * (1.0 + 1e-9)]) * eps)
        budget_gap = abs(float(fx @ limits) - tau)
        if res <= ACCEPT_TOL and budget_gap <= ACCEPT_TOL * tau + floor_share:
            logger.warning(
                "%s fixed point stopped at residual %.3e after %d iterations; accepting it", label, res, iterations
            )
            return fx
        logger.error("%s fixed point did not converge: residual %.3e after %d iterations", label, res, iterations)
        raise FixedPointConvergenceError(
            f"{label} fixed point did not converge (residual {res:.3e} after {iterations} iterations)",
            residual=res,
            iterations=iterations,
        )

    logger.debug("%s fixed point converged in %d iterations (residual %.2e)", label, iterations, res)
    return fx if residual(fx, mapping(fx)) <= res else x


def _pinned_sets(x: np.ndarray, fx: np.ndarray, eps: float) -> list[np.ndarray]:
    """Floor-pinned component masks to polish with, most constrained first."""
    pinned = (x <= eps * (1.0 + 1e-9)) | (fx < PIN_RATIO * x)
    masks = [np.zeros(x.size, dtype=bool)]
    if pinned.any() and not pinned.all():
        masks.insert(0, pinned)
    return masks


def _polish(
    mapping: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    pinned: np.ndarray,
    eps: float,
    upper: np.ndarray,
) -> Optional[np.ndarray]:
    """Solve log F(x) = log x on the free components, the pinned ones held at the floor."""
    free = ~pinned
    base = np.where(pinned, eps, x0)

    def expand(y: np.ndarray) -> np.ndarray:
        x = base.copy()
        x[free] = np.clip(np.exp(np.clip(y, np.log(eps), np.log(upper[free]))), eps, upper[free])
        return x

    def equations(y: np.ndarray) -> np.ndarray:
        return np.log(mapping(expand(y))[free]) - y

    try:
        sol = root(equations, np.log(base[free]), method="hybr", options={"xtol": 1e-13})
    except (FloatingPointError, ValueError, MimoDualityError):
        return None
    if not np.all(np.isfinite(sol.x)):
        return None
    return expand(sol.x)


def _antenna_power(state: DualityState) -> Callable[[np.ndarray], np.ndarray]:
    C = state.covariance
    eye = np.eye(C.shape[0])

    def power(psi: np.ndarray) -> np.ndarray:
        X = hermitian_solve(C + np.diag(psi), eye)
        return np.maximum(np.real(np.diag(X @ state.A @ X)), 0.0)

    return power


def _spectral_power(state: DualityState, blocks: Sequence[np.ndarray]) -> Callable[[np.ndarray], np.ndarray]:
    """c_i(x) = tr((A + Υ + x_i I)^{-2} blocks_i) through one eigendecomposition."""
    lam, Q = eigh(state.covariance)
    lam = np.clip(lam, 0.0, None)
    weights = np.array([np.real(np.einsum("ji,jk,ki->i", Q.conj(), blk, Q)) for blk in blocks])

    def power(x: np.ndarray) -> np.ndarray:
        return np.maximum(np.sum(weights / (lam[None, :] + x[:, None]) ** 2, axis=1), 0.0)

    return power


def solve_psi_fixed_point(
    state: DualityState,
    p_limits: np.ndarray,
    epsilon: Optional[float] = None,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    damping: float = DEFAULT_DAMPING,
    tol: float = DEFAULT_TOL,
) -> np.ndarray:
    """Per-antenna virtual noise ψ for the per-antenna limits p̌_n."""
    return _solve_budget_fixed_point(_antenna_power(state), p_limits, state.tau, "psi", epsilon, max_iter, damping, tol)


def solve_psi_fixed_point_power_min(
    state: DualityState,
    p_targets: np.ndarray,
    epsilon: Optional[float] = None,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    damping: float = DEFAULT_DAMPING,
    tol: float = DEFAULT_TOL,
) -> np.ndarray:
    """ψ that keeps every antenna at its current power p̃_n across the transfer."""
    return _solve_budget_fixed_point(_antenna_power(state), p_targets, state.tau, "psi", epsilon, max_iter, damping, tol)


def solve_mu_fixed_point(
    state: DualityState,
    p_limits: np.ndarray,
    epsilon: Optional[float] = None,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    damping: float = DEFAULT_DAMPING,
    tol: float = DEFAULT_TOL,
) -> np.ndarray:
    """Per-user interference noise μ for the per-user limits p̌_k."""
    power = _spectral_power(state, state.A_k)
    return _solve_budget_fixed_point(power, p_limits, state.tau, "mu", epsilon, max_iter, damping, tol)


def solve_mu_tilde_fixed_point(
    state: DualityState,
    p_limits: np.ndarray,
    epsilon: Optional[float] = None,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    damping: float = DEFAULT_DAMPING,
    tol: float = DEFAULT_TOL,
) -> np.ndarray:
    """Per-symbol interference noise μ̃ for the per-symbol limits p̄̌_ks."""
    power = _spectral_power(state, state.A_ks)
    return _solve_budget_fixed_point(power, p_limits, state.tau, "mu_tilde", epsilon, max_iter, damping, tol)


def _scale_back(
    V: Sequence[np.ndarray],
    T: Sequence[np.ndarray],
    tau: float,
    weighted_t_power: float,
) -> tuple[list[np.ndarray], list[np.ndarray], float]:
    if tau <= 0 or not weighted_t_power > 0:
        raise DegenerateTransferError(
            f"cannot scale into the downlink (tau={tau:.3e}, weighted |T|^2={weighted_t_power:.3e})"
        )
    beta = float(np.sqrt(tau / weighted_t_power))
    return [beta * t for t in T], [v / beta for v in V], beta


def transfer_ul_to_dl_p2(
    V: Sequence[np.ndarray],
    T: Sequence[np.ndarray],
    psi: np.ndarray,
    state: DualityState,
    channel: ChannelSet,
    config: SystemConfig,
) -> tuple[list[np.ndarray], list[np.ndarray], float]:
    """
    B = β̆T, W = V/β̆ with β̆² = τ / Σ_n ψ_n ‖t̃_n‖²; `state` must come from V.

    `channel` and `config` are not read: the scale only needs τ and the
    virtual decoders. They keep the signature aligned with the P1 transfer.
    """
    row_power = np.sum(np.abs(stack(T)) ** 2, axis=1)
    return _scale_back(V, T, state.tau, float(np.asarray(psi) @ row_power))


def transfer_interf_to_dl_p3(
    V: Sequence[np.ndarray],
    T: Sequence[np.ndarray],
    mu: np.ndarray,
    state: DualityState,
    channel: ChannelSet,
    config: SystemConfig,
) -> tuple[list[np.ndarray], list[np.ndarray], float]:
    """B = βT, W = V/β with β² = τ / Σ_k μ_k ‖T_k‖². `channel` and `config` are unused."""
    user_power = np.array([np.real(np.vdot(t, t)) for t in T])
    return _scale_back(V, T, state.tau, float(np.asarray(mu) @ user_power))


def transfer_interf_to_dl_p4(
    V: Sequence[np.ndarray],
    T: Sequence[np.ndarray],
    mu_tilde: np.ndarray,
    state: DualityState,
    channel: ChannelSet,
    config: SystemConfig,
) -> tuple[list[np.ndarray], list[np.ndarray], float]:
    """B = βT, W = V/β with β² = τ / Σ_ks μ̃_ks ‖t_ks‖². `channel` and `config` are unused."""
    col_power = np.sum(np.abs(stack(T)) ** 2, axis=0)
    return _scale_back(V, T, state.tau, float(np.asarray(mu_tilde) @ col_power))
