"""
MSE Core Module

Average-MSE (AMSE) matrices and sums for the downlink, the virtual uplink
and the virtual interference channel, plus the MAMSE receivers that
minimise them.

Filters are passed as per-user lists: B[k] is N×S_k, W[k] is M_k×S_k,
V[k] is M_k×S_k and T[k] is N×S_k.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve

from .channel_model import ChannelSet, SystemConfig
from .errors import DomainError, SingularCovarianceError
from .problems import Problem

logger = logging.getLogger(__name__)

RCOND_FLOOR = 1e-13


@dataclass
class Transceiver:
    """Downlink filters and, when a duality step produced them, their virtual counterparts."""
    B: list[np.ndarray]
    W: list[np.ndarray]
    V: list[np.ndarray] = field(default_factory=list)
    T: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.B) != len(self.W):
            raise DomainError("B and W must have one entry per user")
        for k, (b, w) in enumerate(zip(self.B, self.W)):
            if b.shape[1] != w.shape[1]:
                raise DomainError(f"user {k}: precoder and decoder stream counts differ")
            if not (np.all(np.isfinite(b)) and np.all(np.isfinite(w))):
                raise DomainError(f"user {k}: non-finite filter entries")


@dataclass(frozen=True, eq=False)
class DualityNoise:
    """Noise of the virtual channel for one of the four dualities."""
    sigma2: Optional[float] = None
    psi: Optional[np.ndarray] = None
    mu: Optional[np.ndarray] = None
    mu_tilde: Optional[np.ndarray] = None
    delta: Optional[list[np.ndarray]] = None

    def __post_init__(self) -> None:
        for name in ("psi", "mu", "mu_tilde"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, np.asarray(value, dtype=float))
        for name, value in (("sigma2", self.sigma2), ("psi", self.psi), ("mu", self.mu), ("mu_tilde", self.mu_tilde)):
            if value is not None and np.any(np.asarray(value) <= 0):
                raise DomainError(f"virtual noise '{name}' must be strictly positive")


def stack(blocks: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate per-user filters column-wise."""
    return np.hstack(list(blocks))


def split(matrix: np.ndarray, config: SystemConfig) -> list[np.ndarray]:
    """Inverse of `stack` for an N×S or M×S array."""
    return [matrix[:, config.symbol_slice(k)] for k in range(config.K)]


def hermitian_solve(M: np.ndarray, rhs: np.ndarray, user: Optional[int] = None) -> np.ndarray:
    """Solve M X = rhs for Hermitian PD M, refusing ill-conditioned M."""
    lam = np.linalg.eigvalsh(M)
    top = np.max(np.abs(lam)) if lam.size else 0.0
    rcond = np.min(np.abs(lam)) / top if top > 0 else 0.0
    if rcond < RCOND_FLOOR:
        who = f" for user {user}" if user is not None else ""
        raise SingularCovarianceError(f"covariance{who} is singular (rcond={rcond:.2e})", user=user)
    return solve(M, rhs, assume_a="her")


def _hermitize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.conj().T)


def noise_power(W: Sequence[np.ndarray], config: SystemConfig) -> float:
    """τ = Σ_k tr(W_k^H R_nk W_k)."""
    return float(sum(np.real(np.trace(w.conj().T @ R @ w)) for w, R in zip(W, config.noise_cov)))


def gamma_dl(k: int, B: Sequence[np.ndarray], channel: ChannelSet, config: SystemConfig) -> np.ndarray:
    """Γ_k = Ĥ_k^H B B^H Ĥ_k + σ_ek² tr(R_bk B B^H) R_mk + R_nk."""
    Bm = stack(B)
    BB = Bm @ Bm.conj().T
    Hk = channel.H_hat[k]
    error_gain = config.sigma_e2[k] * np.real(np.trace(channel.R_b[k] @ BB))
    gamma = Hk @ BB @ Hk.conj().T + error_gain * channel.R_m[k] + config.noise_cov[k]
    return _hermitize(gamma)


def amse_user_dl(
    k: int,
    B: Sequence[np.ndarray],
    W: Sequence[np.ndarray],
    channel: ChannelSet,
    config: SystemConfig,
) -> np.ndarray:
    """S_k×S_k AMSE matrix of user k."""
    gamma = gamma_dl(k, B, channel, config)
    cross = W[k].conj().T @ channel.H_hat[k] @ B[k]
    mse = np.eye(config.S[k]) + W[k].conj().T @ gamma @ W[k] - cross - cross.conj().T
    return _hermitize(mse)


def sum_amse_dl(B: Sequence[np.ndarray], W: Sequence[np.ndarray], channel: ChannelSet, config: SystemConfig) -> float:
    return float(sum(np.real(np.trace(amse_user_dl(k, B, W, channel, config))) for k in range(config.K)))


def mamse_receiver_dl(B: Sequence[np.ndarray], channel: ChannelSet, config: SystemConfig) -> list[np.ndarray]:
    """W_k = Γ_k^{-1} Ĥ_k^H B_k for every user."""
    W = []
    for k in range(config.K):
        gamma = gamma_dl(k, B, channel, config)
        W.append(hermitian_solve(gamma, channel.H_hat[k] @ B[k], user=k))
    return W


def gamma_c(V: Sequence[np.ndarray], channel: ChannelSet, config: SystemConfig) -> np.ndarray:
    """Γ_c = Σ_i (Ĥ_i V_i V_i^H Ĥ_i^H + σ_ei² tr(R_mi V_i V_i^H) R_bi)."""
    total = np.zeros((config.N, config.N), dtype=complex)
    for i in range(config.K):
        HV = channel.uplink(i) @ V[i]
        VV = V[i] @ V[i].conj().T
        total += HV @ HV.conj().T
        total += config.sigma_e2[i] * np.real(np.trace(channel.R_m[i] @ VV)) * channel.R_b[i]
    return _hermitize(total)


def _virtual_amse(
    V: Sequence[np.ndarray],
    T: Sequence[np.ndarray],
    noise_terms: Sequence[float],
    channel: ChannelSet,
    config: SystemConfig,
) -> float:
    Gc = gamma_c(V, channel, config)
    total = float(config.S_total)
    for k in range(config.K):
        cross = np.trace(T[k].conj().T @ channel.uplink(k) @ V[k])
        total += np.real(np.trace(T[k].conj().T @ Gc @ T[k])) - 2.0 * np.real(cross)
    return float(total + sum(noise_terms))


def sum_amse_ul(
    V: Sequence[np.ndarray],
    T: Sequence[np.ndarray],
    sigma2: float,
    channel: ChannelSet,
    config: SystemConfig,
) -> float:
    """Virtual-uplink sum AMSE with white noise σ² at the BS."""
    noise = [sigma2 * np.real(np.vdot(t, t)) for t in T]
    return _virtual_amse(V, T, noise, channel, config)


def sum_amse_ul2(
    V: Sequence[np.ndarray],
    T: Sequence[np.ndarray],
    psi: np.ndarray,
    channel: ChannelSet,
    config: SystemConfig,
) -> float:
    """Virtual-uplink sum AMSE with diagonal BS noise Ψ = diag(ψ)."""
    psi = np.asarray(psi, dtype=float)
    noise = [float(np.sum(psi[:, None] * np.abs(t) ** 2)) for t in T]
    return _virtual_amse(V, T, noise, channel, config)


def sum_amse_interf(
    V: Sequence[np.ndarray],
    T: Sequence[np.ndarray],
    channel: ChannelSet,
    config: SystemConfig,
    *,
    mu: Optional[np.ndarray] = None,
    mu_tilde: Optional[np.ndarray] = None,
) -> float:
    """
    Interference-channel sum AMSE.

    Pass `mu` (one level per user) for the per-user form or `mu_tilde`
    (one level per symbol) for the per-symbol form.
    """
    if (mu is None) == (mu_tilde is None):
        raise DomainError("pass exactly one of mu or mu_tilde")
    if mu is not None:
        mu = np.asarray(mu, dtype=float)
        noise = [mu[k] * np.real(np.vdot(T[k], T[k])) for k in range(config.K)]
    else:
        mu_tilde = np.asarray(mu_tilde, dtype=float)
        col_power = np.sum(np.abs(stack(T)) ** 2, axis=0)
        noise = [float(mu_tilde @ col_power)]
    return _virtual_amse(V, T, noise, channel, config)


def _check_virtual_noise(noise: DualityNoise, mode: Problem, config: SystemConfig) -> None:
    if mode is Problem.P1:
        if noise.sigma2 is None:
            raise DomainError("P1 virtual receiver needs sigma2")
    elif mode is Problem.P2:
        if noise.psi is None or noise.psi.shape != (config.N,):
            raise DomainError("P2 virtual receiver needs one psi per antenna")
    elif mode is Problem.P3:
        if noise.mu is None or noise.mu.shape != (config.K,):
            raise DomainError("P3 virtual receiver needs one mu per user")
    elif mode is Problem.P4:
        if noise.mu_tilde is None or noise.mu_tilde.shape != (config.S_total,):
            raise DomainError("P4 virtual receiver needs one mu_tilde per symbol")
    else:
        raise DomainError(f"no virtual channel for problem {mode.value}")


def mamse_receiver_virtual(
    V: Sequence[np.ndarray],
    noise: DualityNoise,
    mode: Problem,
    channel: ChannelSet,
    config: SystemConfig,
) -> list[np.ndarray]:
    """MAMSE decoders T of the virtual channel selected by `mode` (P1-P4)."""
    _check_virtual_noise(noise, mode, config)
    if len(V) != config.K:
        raise DomainError(f"expected {config.K} virtual precoders, got {len(V)}")
    for k, v in enumerate(V):
        if np.shape(v) != (config.M[k], config.S[k]):
            raise DomainError(f"user {k}: virtual precoder must be {config.M[k]}x{config.S[k]}, got {np.shape(v)}")

    Gc = gamma_c(V, channel, config)
    eye = np.eye(config.N)
    HV = [channel.uplink(k) @ V[k] for k in range(config.K)]

    if mode is Problem.P1:
        return split(hermitian_solve(Gc + noise.sigma2 * eye, stack(HV)), config)

    if mode is Problem.P2:
        return split(hermitian_solve(Gc + np.diag(noise.psi), stack(HV)), config)

    if mode is Problem.P3:
        return [hermitian_solve(Gc + noise.mu[k] * eye, HV[k], user=k) for k in range(config.K)]

    if mode is Problem.P4:
        cols = stack(HV)
        T = np.empty_like(cols)
        owner = config.symbol_owner
        for l in range(config.S_total):
            T[:, l] = hermitian_solve(Gc + noise.mu_tilde[l] * eye, cols[:, l], user=int(owner[l]))
        return split(T, config)

    raise DomainError(f"no virtual channel for problem {mode.value}")
