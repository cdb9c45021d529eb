"""
Power Allocation Module

Splits downlink filters into unit-norm directions, receiver scalings and
per-symbol powers, writes every symbol's AMSE as a posynomial in the
powers, and builds the power-allocation GPs.

Symbols are numbered globally, user by user. Row l of Φ collects what
symbol l's transmit direction leaks into every other receiver j, so the
interference seen by symbol l is [Φᵀ p]_l and is scaled by α_l².
"""

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel_model import ChannelSet, SystemConfig
from .errors import DegenerateDecompositionError, DomainError
from .gp_solver import GpProblem, Posynomial
from .mse_core import gamma_dl, hermitian_solve, split, stack
from .problems import ConstraintFamily, PowerLimits, Problem

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Decomposition:
    """B_k = G_k P_k^{1/2}, W_k = U_k α_k P_k^{-1/2}."""
    G: np.ndarray              # N×S, unit-norm columns
    U: tuple[np.ndarray, ...]  # per user M_k×S_k, unit-norm columns
    alpha: np.ndarray          # S
    p: np.ndarray              # S

    def reconstruct(self, config: SystemConfig) -> tuple[list[np.ndarray], list[np.ndarray]]:
        return self.with_powers(self.p).filters(config)

    def with_powers(self, p: np.ndarray) -> "Decomposition":
        return Decomposition(G=self.G, U=self.U, alpha=self.alpha, p=np.asarray(p, dtype=float))

    def filters(self, config: SystemConfig) -> tuple[list[np.ndarray], list[np.ndarray]]:
        root = np.sqrt(self.p)
        B = split(self.G * root, config)
        W = []
        for k in range(config.K):
            sl = config.symbol_slice(k)
            W.append(self.U[k] * (self.alpha[sl] / root[sl]))
        return B, W

    def receive_vector(self, l: int, config: SystemConfig) -> np.ndarray:
        k = int(config.symbol_owner[l])
        return self.U[k][:, l - config.symbol_slice(k).start]


def decompose(B: Sequence[np.ndarray], W: Sequence[np.ndarray], config: SystemConfig) -> Decomposition:
    """Split (B, W) into directions, scalings and powers."""
    Bm = stack(B)
    norms = np.linalg.norm(Bm, axis=0)
    if np.any(norms <= 0):
        raise DegenerateDecompositionError(
            f"precoder columns {np.flatnonzero(norms <= 0).tolist()} are zero; re-initialize the design"
        )
    p = norms**2
    G = Bm / norms

    U, alpha = [], np.empty(config.S_total)
    for k in range(config.K):
        sl = config.symbol_slice(k)
        w_norm = np.linalg.norm(W[k], axis=0)
        u = np.zeros_like(W[k])
        live = w_norm > 0
        u[:, live] = W[k][:, live] / w_norm[live]
        u[0, ~live] = 1.0
        U.append(u)
        alpha[sl] = w_norm * norms[sl]
    return Decomposition(G=G, U=tuple(U), alpha=alpha, p=p)


def f_map(i: int, config: SystemConfig) -> int:
    """User owning symbol i, both numbered from 1."""
    if not 1 <= i <= config.S_total:
        raise DomainError(f"symbol number {i} outside 1..{config.S_total}")
    return int(np.searchsorted(np.cumsum(config.S), i)) + 1


def _effective_gains(dec: Decomposition, channel: ChannelSet, config: SystemConfig):
    """Z = G^H Ĥ U, the error weights m_j and r_lj, and the noise terms n_j."""
    S = config.S_total
    owner = config.symbol_owner
    Y = np.empty((config.N, S), dtype=complex)
    m = np.empty(S)
    noise = np.empty(S)
    r = np.empty((S, S))
    for j in range(S):
        k = int(owner[j])
        u = dec.receive_vector(j, config)
        Y[:, j] = channel.uplink(k) @ u
        m[j] = config.sigma_e2[k] * np.real(u.conj() @ channel.R_m[k] @ u)
        noise[j] = np.real(u.conj() @ config.noise_cov[k] @ u)
        r[:, j] = np.real(np.einsum("il,ij,jl->l", dec.G.conj(), channel.R_b[k], dec.G))
    Z = dec.G.conj().T @ Y
    return Z, m, r, noise


def phi_matrix(dec: Decomposition, channel: ChannelSet, config: SystemConfig) -> np.ndarray:
    """[Φ]_{l,j}: power leaked by transmit direction l into receiver j (zero diagonal)."""
    Z, m, r, _ = _effective_gains(dec, channel, config)
    Phi = m[None, :] * r + np.abs(Z) ** 2
    np.fill_diagonal(Phi, 0.0)
    return Phi


def d_matrix(dec: Decomposition, channel: ChannelSet, config: SystemConfig) -> np.ndarray:
    """Diagonal [D]_{l,l} = α_l²(|z_ll|² + m_l r_ll) - 2α_l Re(z_ll) + 1."""
    Z, m, r, _ = _effective_gains(dec, channel, config)
    z = np.diag(Z)
    a = dec.alpha
    return a**2 * (np.abs(z) ** 2 + m * np.diag(r)) - 2.0 * a * np.real(z) + 1.0


def symbol_noise(dec: Decomposition, channel: ChannelSet, config: SystemConfig) -> np.ndarray:
    """u_l^H R_n u_l for every symbol."""
    return _effective_gains(dec, channel, config)[3]


def symbol_amses(
    dec: Decomposition,
    Phi: np.ndarray,
    D: np.ndarray,
    channel: ChannelSet,
    config: SystemConfig,
) -> np.ndarray:
    """Every symbol's AMSE at the powers stored in `dec`."""
    p, a2 = dec.p, dec.alpha**2
    noise = symbol_noise(dec, channel, config)
    return D + a2 * (Phi.T @ p) / p + a2 * noise / p


def symbol_amse(
    dec: Decomposition,
    Phi: np.ndarray,
    D: np.ndarray,
    channel: ChannelSet,
    config: SystemConfig,
    l: int,
) -> float:
    """AMSE of 0-based symbol l."""
    return float(symbol_amses(dec, Phi, D, channel, config)[l])


def amse_posynomial(
    dec: Decomposition,
    Phi: np.ndarray,
    D: np.ndarray,
    channel: ChannelSet,
    config: SystemConfig,
) -> Posynomial:
    """Σ_l AMSE_l as a posynomial in the symbol powers."""
    S = config.S_total
    eye = np.eye(S)
    a2 = dec.alpha**2
    noise = symbol_noise(dec, channel, config)
    terms: list[tuple[float, np.ndarray]] = []
    for l in range(S):
        if D[l] > 0:
            terms.append((float(D[l]), np.zeros(S)))
        if a2[l] <= 0:
            continue
        if noise[l] > 0:
            terms.append((float(a2[l] * noise[l]), -eye[l]))
        for j in range(S):
            if j != l and Phi[j, l] > 0:
                terms.append((float(a2[l] * Phi[j, l]), eye[j] - eye[l]))
    if not terms:
        # every symbol decoded perfectly with zero noise; nothing depends on p
        terms.append((np.finfo(float).tiny, np.zeros(S)))
    return Posynomial.from_monomials(terms)


def _family_constraints(
    family: ConstraintFamily,
    dec: Decomposition,
    config: SystemConfig,
    limits: PowerLimits,
) -> tuple[list[Posynomial], list[str]]:
    S = config.S_total
    eye = np.eye(S)
    gain = np.abs(dec.G) ** 2  # N×S, |g_ln|²
    constraints, labels = [], []

    if family is ConstraintFamily.TOTAL:
        total = limits.require(family)
        constraints.append(Posynomial(np.full(S, 1.0 / total), eye))
        labels.append("total power")

    elif family is ConstraintFamily.ANTENNA:
        antenna = limits.require(family)
        for n in range(config.N):
            used = gain[n] > 0
            if np.any(used):
                constraints.append(Posynomial(gain[n, used] / antenna[n], eye[used]))
                labels.append(f"antenna {n + 1} power")

    elif family is ConstraintFamily.USER:
        user = limits.require(family)
        for k in range(config.K):
            sl = config.symbol_slice(k)
            constraints.append(Posynomial(np.full(config.S[k], 1.0 / user[k]), eye[sl]))
            labels.append(f"user {k + 1} power")

    elif family is ConstraintFamily.SYMBOL:
        symbol = limits.require(family)
        for l in range(S):
            constraints.append(Posynomial([1.0 / symbol[l]], eye[l][None, :]))
            labels.append(f"symbol {l + 1} power")

    elif family is ConstraintFamily.ENTRY:
        entry = limits.require(family)
        for l in range(S):
            for n in range(config.N):
                if gain[n, l] > 0:
                    constraints.append(Posynomial([gain[n, l] / entry[l, n]], eye[l][None, :]))
                    labels.append(f"symbol {l + 1} antenna {n + 1} power")

    return constraints, labels


def build_gp(
    problem_kind: Problem,
    dec: Decomposition,
    Phi: np.ndarray,
    D: np.ndarray,
    channel: ChannelSet,
    config: SystemConfig,
    limits: PowerLimits,
) -> GpProblem:
    """Sum-AMSE power allocation for P1-P5 at fixed directions and scalings."""
    if problem_kind.is_power_min:
        raise DomainError(f"{problem_kind.value} minimises power; use build_power_min_gp")
    limits = limits.resolve(config)
    constraints, labels = _family_constraints(problem_kind.family, dec, config, limits)
    return GpProblem(
        objective=amse_posynomial(dec, Phi, D, channel, config),
        constraints=constraints,
        labels=labels,
    )


def build_power_min_gp(
    problem_kind: Problem,
    dec: Decomposition,
    Phi: np.ndarray,
    D: np.ndarray,
    channel: ChannelSet,
    config: SystemConfig,
    limits: PowerLimits,
    eps_t: float,
) -> GpProblem:
    """Total-power minimisation for P6-P10 under a sum-AMSE target ε_t."""
    if not problem_kind.is_power_min:
        raise DomainError(f"{problem_kind.value} is not a power-minimisation problem")
    if not eps_t > 0:
        raise DomainError("sum-AMSE target must be strictly positive")
    limits = limits.resolve(config)
    S = config.S_total
    constraints, labels = _family_constraints(problem_kind.family, dec, config, limits)
    constraints.insert(0, amse_posynomial(dec, Phi, D, channel, config).scaled(1.0 / eps_t))
    labels.insert(0, "sum AMSE target")
    return GpProblem(
        objective=Posynomial(np.ones(S), np.eye(S)),
        constraints=constraints,
        labels=labels,
        amse_target=float(eps_t),
    )


def mamse_scaled_receiver(
    G: np.ndarray,
    P: np.ndarray,
    channel: ChannelSet,
    config: SystemConfig,
) -> tuple[tuple[np.ndarray, ...], np.ndarray]:
    """Unit-norm receive filters U and scalings α with U_k α_k = Γ̃_k^{-1} Ĥ_k^H G_k P_k."""
    P = np.asarray(P, dtype=float)
    if np.any(P <= 0):
        raise DegenerateDecompositionError("symbol powers must be strictly positive")
    B = split(G * np.sqrt(P), config)
    U, alpha = [], np.empty(config.S_total)
    for k in range(config.K):
        sl = config.symbol_slice(k)
        gamma = gamma_dl(k, B, channel, config)
        X = hermitian_solve(gamma, channel.H_hat[k] @ G[:, sl] * P[sl], user=k)
        norms = np.linalg.norm(X, axis=0)
        if np.any(norms <= 0):
            raise DegenerateDecompositionError(f"user {k}: a receive filter vanished")
        U.append(X / norms)
        alpha[sl] = norms
    return tuple(U), alpha
