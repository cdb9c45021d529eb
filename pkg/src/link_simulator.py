"""
Link Simulator Module

SNR-to-noise mapping and Monte-Carlo QPSK symbol-error measurement
through the true channel.
"""

import logging
from typing import Optional, Sequence

import numpy as np

from .channel_model import SystemConfig, complex_gaussian, hermitian_sqrt
from .errors import DomainError
from .mse_core import Transceiver, stack

logger = logging.getLogger(__name__)

MIN_RELIABLE_SYMBOLS = 100


def snr_to_noise(
    config: SystemConfig,
    snr_db: float,
    p_sum: float,
    noise_weights: Optional[Sequence[float]] = None,
) -> list[np.ndarray]:
    """
    Per-user noise covariances σ_k² I for SNR = p_sum / (K σ_av²).

    `noise_weights` fixes the ratios between users (default 1, 2, ..., K);
    the weights are normalised so the mean of σ_k² is σ_av².
    """
    if p_sum <= 0:
        raise DomainError("p_sum must be positive")
    weights = np.arange(1, config.K + 1, dtype=float) if noise_weights is None else np.asarray(noise_weights, dtype=float)
    if weights.shape != (config.K,) or np.any(weights <= 0):
        raise DomainError("noise weights need one positive entry per user")
    sigma_av2 = p_sum / (config.K * 10.0 ** (snr_db / 10.0))
    sigma2 = sigma_av2 * weights / weights.mean()
    return [s * np.eye(m) for s, m in zip(sigma2, config.M)]


def qpsk_symbols(bits: np.ndarray) -> np.ndarray:
    """Gray-mapped unit-energy QPSK from a (..., 2) bit array."""
    return ((1 - 2 * bits[..., 0]) + 1j * (1 - 2 * bits[..., 1])) / np.sqrt(2.0)


def qpsk_decide(samples: np.ndarray) -> np.ndarray:
    """Quadrant decision; a zero component decides for the positive half-plane."""
    return (np.where(samples.real >= 0, 1.0, -1.0) + 1j * np.where(samples.imag >= 0, 1.0, -1.0)) / np.sqrt(2.0)


def aser_qpsk(
    transceiver: Transceiver,
    channel_true: Sequence[np.ndarray],
    noise_cov: Sequence[np.ndarray],
    n_symbols: int,
    rng: np.random.Generator,
) -> float:
    """
    Average symbol error rate of all streams.

    Args:
        transceiver: Downlink precoders and decoders
        channel_true: True channels H_k^H (M_k×N) per user
        noise_cov: Noise covariance R_nk per user
        n_symbols: QPSK symbols sent on every stream
        rng: Random stream for data and noise

    Returns:
        Fraction of symbols decided wrongly, over every stream
    """
    if n_symbols < 1:
        raise DomainError("n_symbols must be positive")
    if n_symbols < MIN_RELIABLE_SYMBOLS:
        logger.warning("ASER from only %d symbols per stream has high variance", n_symbols)

    Bm = stack(transceiver.B)
    S = Bm.shape[1]
    bits = rng.integers(0, 2, size=(S, n_symbols, 2))
    data = qpsk_symbols(bits)
    tx = Bm @ data

    errors = 0
    start = 0
    for k, (H, W, R) in enumerate(zip(channel_true, transceiver.W, noise_cov)):
        s_k = W.shape[1]
        noise = hermitian_sqrt(R) @ complex_gaussian(rng, (H.shape[0], n_symbols), 1.0)
        estimate = W.conj().T @ (H @ tx + noise)
        errors += int(np.count_nonzero(qpsk_decide(estimate) != data[start:start + s_k]))
        start += s_k
    return errors / (S * n_symbols)
