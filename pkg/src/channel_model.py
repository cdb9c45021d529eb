"""
Channel Model Module

System configuration, exponential correlation matrices and random channel
realisations with the estimate/error split of MMSE channel estimation.

Storage convention: ``H_hat[k]`` holds Ĥ_k^H (M_k×N), i.e. the matrix the
k-th mobile sees in the downlink. The uplink channel of user k is its
conjugate transpose.
"""

import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import eigh, toeplitz

from .errors import DomainError, NumericalRankError

logger = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-12
PSD_TOL = 1e-10


def _as_tuple_of_floats(values, name: str, count: int) -> tuple[float, ...]:
    seq = tuple(float(v) for v in np.atleast_1d(np.asarray(values, dtype=float)))
    if len(seq) != count:
        raise DomainError(f"{name} has {len(seq)} entries, expected {count}")
    return seq


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SystemConfig:
    """
    Dimensions, error statistics, correlation and noise of a multiuser link.

    All per-user sequences are indexed by user (0-based).
    """
    K: int
    N: int
    M: tuple[int, ...]
    S: tuple[int, ...]
    sigma_e2: tuple[float, ...]
    rho_b: tuple[float, ...]
    rho_m: tuple[float, ...]
    noise_cov: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if int(self.K) < 1:
            raise DomainError("at least one user is required")
        if int(self.N) < 1:
            raise DomainError("at least one BS antenna is required")
        K = int(self.K)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "N", int(self.N))

        M = tuple(int(m) for m in self.M)
        S = tuple(int(s) for s in self.S)
        if len(M) != K or len(S) != K:
            raise DomainError("M and S must have one entry per user")
        for k, (m_k, s_k) in enumerate(zip(M, S)):
            if not 1 <= s_k <= m_k:
                raise DomainError(f"user {k}: need 1 <= S_k <= M_k, got S_k={s_k}, M_k={m_k}")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "S", S)

        sigma_e2 = _as_tuple_of_floats(self.sigma_e2, "sigma_e2", K)
        if any(v < 0 or not np.isfinite(v) for v in sigma_e2):
            raise DomainError("error variances must be finite and nonnegative")
        object.__setattr__(self, "sigma_e2", sigma_e2)

        for name in ("rho_b", "rho_m"):
            rho = _as_tuple_of_floats(getattr(self, name), name, K)
            if any(not 0.0 <= r < 1.0 for r in rho):
                raise DomainError(f"{name} entries must lie in [0, 1)")
            object.__setattr__(self, name, rho)

        if len(self.noise_cov) != K:
            raise DomainError("noise_cov must have one matrix per user")
        covs = []
        for k, R in enumerate(self.noise_cov):
            R = np.atleast_2d(np.asarray(R, dtype=complex))
            if R.shape != (M[k], M[k]):
                raise DomainError(f"user {k}: noise covariance has shape {R.shape}, expected {(M[k], M[k])}")
            if np.max(np.abs(R - R.conj().T)) > HERMITIAN_TOL:
                raise DomainError(f"user {k}: noise covariance is not Hermitian")
            if np.min(np.linalg.eigvalsh(R)) < -PSD_TOL:
                raise DomainError(f"user {k}: noise covariance is not positive semidefinite")
            covs.append(_frozen(R))
        object.__setattr__(self, "noise_cov", tuple(covs))

    @classmethod
    def build(
        cls,
        K: int,
        N: int,
        M: Sequence[int],
        S: Sequence[int],
        sigma_e2: Sequence[float],
        rho_b: Sequence[float],
        rho_m: Sequence[float],
        noise_cov: Optional[Sequence[np.ndarray]] = None,
    ) -> "SystemConfig":
        """Build a configuration, defaulting every R_nk to the identity."""
        if noise_cov is None:
            noise_cov = [np.eye(m) for m in M]
        return cls(K=K, N=N, M=tuple(M), S=tuple(S), sigma_e2=tuple(sigma_e2),
                   rho_b=tuple(rho_b), rho_m=tuple(rho_m), noise_cov=tuple(noise_cov))

    @property
    def S_total(self) -> int:
        return sum(self.S)

    @property
    def symbol_owner(self) -> np.ndarray:
        """0-based user index of every 0-based symbol index."""
        return np.repeat(np.arange(self.K), self.S)

    def symbol_slice(self, k: int) -> slice:
        start = sum(self.S[:k])
        return slice(start, start + self.S[k])

    def with_noise(self, noise_cov: Sequence[np.ndarray]) -> "SystemConfig":
        return replace(self, noise_cov=tuple(noise_cov))

    def with_error_variance(self, sigma_e2: Sequence[float]) -> "SystemConfig":
        return replace(self, sigma_e2=tuple(sigma_e2))


@dataclass(frozen=True, eq=False)
class ChannelSet:
    """One channel realisation; every array is read-only."""
    H_hat: tuple[np.ndarray, ...]
    H_true: tuple[np.ndarray, ...]
    E: tuple[np.ndarray, ...]
    R_b: tuple[np.ndarray, ...]
    R_m_tilde: tuple[np.ndarray, ...]
    R_m: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        for name in ("H_hat", "H_true", "E", "R_b", "R_m_tilde", "R_m"):
            object.__setattr__(self, name, tuple(_frozen(a) for a in getattr(self, name)))

    @property
    def K(self) -> int:
        return len(self.H_hat)

    def uplink(self, k: int) -> np.ndarray:
        """Ĥ_k (N×M_k)."""
        return self.H_hat[k].conj().T

    def as_perfect(self) -> "ChannelSet":
        """The same realisation with the true channel known exactly."""
        return replace(
            self,
            H_hat=self.H_true,
            E=tuple(np.zeros_like(e) for e in self.E),
        )


def exp_correlation(dim: int, rho: float) -> np.ndarray:
    """Exponential correlation matrix with entries rho^|i-j|."""
    if dim < 1:
        raise DomainError("correlation dimension must be positive")
    if not 0.0 <= rho < 1.0:
        raise DomainError(f"correlation coefficient {rho} outside [0, 1)")
    return toeplitz(rho ** np.arange(dim, dtype=float))


def effective_rx_correlation(R_m_tilde: np.ndarray, sigma_e2: float) -> np.ndarray:
    """Error correlation (I + σ² R̃^{-1})^{-1} at the mobile."""
    if sigma_e2 < 0:
        raise DomainError("error variance must be nonnegative")
    lam, Q = eigh(R_m_tilde)
    if np.min(lam) <= 1e-12:
        raise NumericalRankError(
            f"receive correlation is numerically singular (min eigenvalue {np.min(lam):.3e})"
        )
    # λ -> 1/(1 + σ²/λ)
    mapped = lam / (lam + sigma_e2)
    R = (Q * mapped) @ Q.conj().T
    return 0.5 * (R + R.conj().T)


def hermitian_sqrt(M: np.ndarray) -> np.ndarray:
    """Principal square root of a Hermitian PSD matrix via eigendecomposition."""
    M = np.atleast_2d(np.asarray(M))
    if M.shape[0] != M.shape[1]:
        raise DomainError("matrix square root needs a square matrix")
    if np.max(np.abs(M - M.conj().T), initial=0.0) > PSD_TOL:
        raise DomainError("matrix is not Hermitian")
    lam, Q = eigh(0.5 * (M + M.conj().T))
    if lam.size and np.min(lam) < -PSD_TOL:
        raise DomainError(f"matrix is indefinite (min eigenvalue {np.min(lam):.3e})")
    root = np.sqrt(np.clip(lam, 0.0, None))
    S = (Q * root) @ Q.conj().T
    return 0.5 * (S + S.conj().T)


def complex_gaussian(rng: np.random.Generator, shape: tuple[int, ...], variance: float = 1.0) -> np.ndarray:
    """Circularly symmetric complex Gaussian draw with total variance `variance`."""
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def channel_rng(seed: int, realization: int) -> np.random.Generator:
    """Generator for one channel realisation, independent of every other realisation."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(realization,)))


def realize_channel(config: SystemConfig, rng: np.random.Generator) -> ChannelSet:
    """
    Draw one estimated channel and one estimation-error realisation per user.

    Each user draws from its own child stream of `rng`, so user k's channel
    does not depend on how many antennas the other users have.
    """
    user_streams = rng.spawn(config.K)
    H_hat, H_true, E, R_b, R_mt, R_m = [], [], [], [], [], []
    for k, stream in enumerate(user_streams):
        rb = exp_correlation(config.N, config.rho_b[k])
        rmt = exp_correlation(config.M[k], config.rho_m[k])
        rm = effective_rx_correlation(rmt, config.sigma_e2[k])
        rb_half = hermitian_sqrt(rb)

        shape = (config.M[k], config.N)
        H_w = complex_gaussian(stream, shape, 1.0)
        E_w = complex_gaussian(stream, shape, config.sigma_e2[k])

        h_hat = hermitian_sqrt(rmt) @ H_w @ rb_half
        e = hermitian_sqrt(rm) @ E_w @ rb_half
        H_hat.append(h_hat)
        E.append(e)
        H_true.append(h_hat + e)
        R_b.append(rb)
        R_mt.append(rmt)
        R_m.append(rm)

    logger.debug("realized channel for K=%d, N=%d", config.K, config.N)
    return ChannelSet(
        H_hat=tuple(H_hat),
        H_true=tuple(H_true),
        E=tuple(E),
        R_b=tuple(R_b),
        R_m_tilde=tuple(R_mt),
        R_m=tuple(R_m),
    )
