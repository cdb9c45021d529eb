"""
Tests for the Duality Module.
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.channel_model import ChannelSet, SystemConfig, channel_rng, complex_gaussian, realize_channel
from src.config_loader import default_experiment_spec
from src.duality import (
    DualityState,
    default_epsilon,
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
from src.errors import DegenerateTransferError, DomainError, FixedPointConvergenceError, SingularCovarianceError
from src.link_simulator import snr_to_noise
from src.mse_core import (
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
from src.problems import Problem
from src.solver import SolveOptions, init_precoders


# --- Helper Functions ---

def make_instance(seed: int = 5, noise: float = 0.5):
    """Helper to create a random two-user instance with MAMSE decoders."""
    base = SystemConfig.build(K=2, N=4, M=[2, 2], S=[2, 2], sigma_e2=[0.01, 0.02],
                              rho_b=[0.1, 0.12], rho_m=[0.05, 0.2])
    config = base.with_noise([noise * np.eye(2), 2 * noise * np.eye(2)])
    channel = realize_channel(config, channel_rng(seed, 0))
    rng = np.random.default_rng(seed)
    Bm = complex_gaussian(rng, (4, 4))
    Bm *= np.sqrt(10.0) / np.linalg.norm(Bm)
    B = split(Bm, config)
    return config, channel, B, mamse_receiver_dl(B, channel, config)


def make_scalar_world(noise: float = 2.0):
    """Helper to create a one-user, one-antenna, one-stream link."""
    config = SystemConfig.build(K=1, N=1, M=[1], S=[1], sigma_e2=[0.0], rho_b=[0.0], rho_m=[0.0],
                                noise_cov=[noise * np.eye(1)])
    H = np.array([[1.0 + 0.0j]])
    channel = ChannelSet(H_hat=(H,), H_true=(H,), E=(np.zeros((1, 1)),), R_b=(np.eye(1),),
                         R_m_tilde=(np.eye(1),), R_m=(np.eye(1),))
    return config, channel


def make_twin_users():
    """Helper to create two users with identical channels and decoders."""
    config = SystemConfig.build(K=2, N=2, M=[1, 1], S=[1, 1], sigma_e2=[0.0, 0.0],
                                rho_b=[0.0, 0.0], rho_m=[0.0, 0.0])
    H = np.array([[1.0 + 0.5j, 0.3 - 0.2j]])
    channel = ChannelSet(H_hat=(H, H), H_true=(H, H), E=(np.zeros((1, 2)),) * 2,
                         R_b=(np.eye(2),) * 2, R_m_tilde=(np.eye(1),) * 2, R_m=(np.eye(1),) * 2)
    W = [np.array([[0.7 + 0.1j]]), np.array([[0.7 + 0.1j]])]
    return config, channel, W


def make_boundary_instance():
    """Helper to create a 20 dB desk-scale realisation whose psi sits partly on the floor."""
    spec = default_experiment_spec()
    config = spec.base.with_noise(snr_to_noise(spec.base, 20.0, spec.p_sum_for(Problem.P1), spec.noise_weights))
    channel = realize_channel(config, channel_rng(99, 3))
    B = init_precoders(config, SolveOptions(problem=Problem.P2, power_limits=spec.limits))
    return config, channel, B, mamse_receiver_dl(B, channel, config)


def psi_residual(state: DualityState, psi: np.ndarray, limits: np.ndarray, eps: float) -> float:
    X = np.linalg.inv(state.covariance + np.diag(psi))
    c = np.real(np.diag(X @ state.A @ X))
    mapped = np.maximum(state.tau * psi * c / (limits * float(psi @ c)), eps)
    return float(np.max(np.abs(psi - mapped)) / np.max(psi))


def antenna_power(B) -> np.ndarray:
    return np.sum(np.abs(stack(B)) ** 2, axis=1)


def user_power(B) -> np.ndarray:
    return np.array([np.real(np.vdot(b, b)) for b in B])


def symbol_power(B) -> np.ndarray:
    return np.sum(np.abs(stack(B)) ** 2, axis=0)


class TestTransferP1:
    """Tests for the total-power downlink-uplink transfers."""

    def test_scalar_beta(self):
        config, channel = make_scalar_world(noise=2.0)
        one = [np.ones((1, 1), dtype=complex)]
        _, _, beta_tilde = transfer_dl_to_ul_p1(one, one, channel, config, 1.0)
        assert beta_tilde**2 == pytest.approx(0.5)

    def test_unit_beta_for_balanced_filters(self):
        config, channel, B, _ = make_instance(noise=1.0)
        config = config.with_noise([np.eye(2), np.eye(2)])
        W = [b[:2, :] for b in B]
        scale = np.linalg.norm(stack(B)) / np.linalg.norm(stack(W))
        W = [w * scale for w in W]
        _, _, beta_tilde = transfer_dl_to_ul_p1(B, W, channel, config, 1.0)
        assert beta_tilde == pytest.approx(1.0)

    def test_downlink_to_uplink_conserves_amse(self):
        config, channel, B, W = make_instance()
        V, T, _ = transfer_dl_to_ul_p1(B, W, channel, config, 1.0)
        assert sum_amse_ul(V, T, 1.0, channel, config) == pytest.approx(
            sum_amse_dl(B, W, channel, config), rel=1e-9
        )

    def test_uplink_to_downlink_conserves_amse(self):
        config, channel, B, W = make_instance()
        V, _, _ = transfer_dl_to_ul_p1(B, W, channel, config, 1.0)
        T = mamse_receiver_virtual(V, DualityNoise(sigma2=1.0), Problem.P1, channel, config)
        B2, W2, _ = transfer_ul_to_dl_p1(V, T, channel, config, 1.0)
        assert sum_amse_dl(B2, W2, channel, config) == pytest.approx(
            sum_amse_ul(V, T, 1.0, channel, config), rel=1e-9
        )

    def test_round_trip_keeps_total_power(self):
        config, channel, B, W = make_instance()
        V, T, _ = transfer_dl_to_ul_p1(B, W, channel, config, 1.0)
        B2, _, _ = transfer_ul_to_dl_p1(V, T, channel, config, 1.0)
        assert np.sum(np.abs(stack(B2)) ** 2) == pytest.approx(10.0, rel=1e-9)

    def test_beta_ignores_error_variance(self):
        config, channel, B, W = make_instance()
        V, T, _ = transfer_dl_to_ul_p1(B, W, channel, config, 1.0)
        _, _, beta = transfer_ul_to_dl_p1(V, T, channel, config, 1.0)
        _, _, beta_doubled = transfer_ul_to_dl_p1(V, T, channel, config.with_error_variance([0.02, 0.04]), 1.0)
        assert beta == pytest.approx(beta_doubled)

    def test_zero_decoder_is_degenerate(self):
        config, channel, B, W = make_instance()
        with pytest.raises(DegenerateTransferError):
            transfer_dl_to_ul_p1(B, [np.zeros_like(w) for w in W], channel, config, 1.0)

    def test_nonpositive_sigma_rejected(self):
        config, channel, B, W = make_instance()
        with pytest.raises(DomainError):
            transfer_dl_to_ul_p1(B, W, channel, config, 0.0)


class TestDualityState:
    """Tests for DualityState.from_decoders."""

    def test_blocks_sum_to_a(self):
        config, channel, _, W = make_instance()
        state = DualityState.from_decoders(W, channel, config)
        assert_allclose(sum(state.A_k), state.A, atol=1e-12)
        assert_allclose(sum(state.A_ks), state.A, atol=1e-12)
        assert len(state.A_ks) == 4

    def test_tau_is_decoder_noise(self):
        config, channel, _, W = make_instance()
        state = DualityState.from_decoders(W, channel, config)
        expected = sum(np.real(np.trace(w.conj().T @ R @ w)) for w, R in zip(W, config.noise_cov))
        assert state.tau == pytest.approx(expected)


class TestFixedPoints:
    """Tests for the psi, mu and mu_tilde fixed points."""

    def test_single_antenna_psi(self):
        config, channel = make_scalar_world()
        state = DualityState.from_decoders([np.array([[0.5 + 0j]])], channel, config)
        psi = solve_psi_fixed_point(state, np.array([3.0]))
        assert psi[0] == pytest.approx(state.tau / 3.0)

    def test_single_user_mu(self):
        config, channel = make_scalar_world()
        state = DualityState.from_decoders([np.array([[0.5 + 0j]])], channel, config)
        assert solve_mu_fixed_point(state, np.array([2.0]))[0] == pytest.approx(state.tau / 2.0)
        assert solve_mu_tilde_fixed_point(state, np.array([4.0]))[0] == pytest.approx(state.tau / 4.0)
        assert solve_psi_fixed_point_power_min(state, np.array([5.0]))[0] == pytest.approx(state.tau / 5.0)

    def test_twin_users_get_equal_mu(self):
        config, channel, W = make_twin_users()
        state = DualityState.from_decoders(W, channel, config)
        mu = solve_mu_fixed_point(state, np.array([1.0, 1.0]))
        assert mu[0] == pytest.approx(mu[1], rel=1e-10)
        mu_tilde = solve_mu_tilde_fixed_point(state, np.array([1.0, 1.0]))
        assert mu_tilde[0] == pytest.approx(mu_tilde[1], rel=1e-10)

    def test_psi_self_consistent(self):
        config, channel, _, W = make_instance()
        state = DualityState.from_decoders(W, channel, config)
        limits = np.full(4, 2.5)
        psi = solve_psi_fixed_point(state, limits)
        X = np.linalg.inv(state.covariance + np.diag(psi))
        c = np.real(np.diag(X @ state.A @ X))
        mapped = state.tau * psi * c / (limits * float(psi @ c))
        assert np.max(np.abs(psi - mapped)) / np.max(psi) <= 1e-8
        assert float(psi @ limits) == pytest.approx(state.tau, rel=1e-6)

    @pytest.mark.parametrize("solver,blocks,limit", [
        (solve_mu_fixed_point, "A_k", np.array([5.0, 5.0])),
        (solve_mu_tilde_fixed_point, "A_ks", np.full(4, 2.5)),
    ])
    def test_interference_levels_self_consistent(self, solver, blocks, limit):
        config, channel, _, W = make_instance()
        state = DualityState.from_decoders(W, channel, config)
        x = solver(state, limit)
        C = state.covariance
        c = np.array([
            np.real(np.trace(np.linalg.matrix_power(np.linalg.inv(C + xi * np.eye(4)), 2) @ blk))
            for xi, blk in zip(x, getattr(state, blocks))
        ])
        mapped = state.tau * x * c / (limit * float(x @ c))
        assert np.max(np.abs(x - mapped)) / np.max(x) <= 1e-8
        assert float(x @ limit) == pytest.approx(state.tau, rel=1e-6)

    @pytest.mark.parametrize("damping", [0.0, 0.5, 0.9])
    def test_damping_reaches_same_point(self, damping):
        config, channel, _, W = make_instance()
        state = DualityState.from_decoders(W, channel, config)
        reference = solve_psi_fixed_point(state, np.full(4, 2.5))
        psi = solve_psi_fixed_point(state, np.full(4, 2.5), damping=damping)
        assert_allclose(psi, reference, rtol=1e-6)

    def test_high_snr_converges(self):
        config, channel, _, W = make_instance(noise=1e-3)
        state = DualityState.from_decoders(W, channel, config)
        psi = solve_psi_fixed_point(state, np.full(4, 2.5))
        assert float(psi @ np.full(4, 2.5)) == pytest.approx(state.tau, rel=1e-6)

    def test_iteration_cap_reports_residual(self):
        config, channel, _, W = make_instance()
        state = DualityState.from_decoders(W, channel, config)
        with pytest.raises(FixedPointConvergenceError) as info:
            solve_psi_fixed_point(state, np.array([1.0, 2.0, 3.0, 4.0]), max_iter=0)
        assert info.value.iterations == 0
        assert info.value.residual > 1e-8

    def test_invalid_inputs_rejected(self):
        config, channel, _, W = make_instance()
        state = DualityState.from_decoders(W, channel, config)
        with pytest.raises(DomainError):
            solve_mu_fixed_point(state, np.array([1.0, 0.0]))
        with pytest.raises(DomainError):
            solve_mu_fixed_point(state, np.array([1.0, 1.0]), damping=1.0)

    def test_default_epsilon_scales_down(self):
        assert default_epsilon(10.0, np.array([1.0, 2.0])) == 1e-6
        assert default_epsilon(1e-3, np.array([1.0])) == pytest.approx(1e-9)

    def test_floor_bound_psi_converges(self):
        config, channel, B, W = make_boundary_instance()
        state = DualityState.from_decoders(W, channel, config)
        limits = np.full(4, 2.5)
        psi = solve_psi_fixed_point(state, limits)
        eps = default_epsilon(state.tau, limits)
        assert np.all(psi >= eps)
        assert psi_residual(state, psi, limits, eps) <= 1e-7
        assert float(psi @ limits) == pytest.approx(state.tau, rel=1e-5)

        V, _ = transfer_dl_to_virtual(B, W)
        T = mamse_receiver_virtual(V, DualityNoise(psi=psi), Problem.P2, channel, config)
        B2, _, _ = transfer_ul_to_dl_p2(V, T, psi, state, channel, config)
        assert np.all(antenna_power(B2) <= 2.5 * (1 + 1e-6))

    def test_floor_bound_psi_independent_of_damping(self):
        config, channel, _, W = make_boundary_instance()
        state = DualityState.from_decoders(W, channel, config)
        limits = np.full(4, 2.5)
        reference = solve_psi_fixed_point(state, limits)
        slow = solve_psi_fixed_point(state, limits, max_iter=5000, damping=0.9)
        assert_allclose(slow, reference, rtol=1e-4, atol=default_epsilon(state.tau, limits))

    def test_singular_covariance_raises(self):
        state = DualityState(
            A=np.diag([1.0, 0.0]).astype(complex),
            Upsilon=np.zeros((2, 2), dtype=complex),
            A_k=(np.diag([1.0, 0.0]).astype(complex),),
            A_ks=(np.diag([1.0, 0.0]).astype(complex),),
            tau=1.0,
        )
        with pytest.raises(SingularCovarianceError):
            solve_psi_fixed_point(state, np.array([1.0, 1.0]), epsilon=1e-20, damping=0.0)


class TestVirtualTransfers:
    """Tests for the per-antenna, per-user and per-symbol transfers."""

    def test_forward_transfer_copies(self):
        config, _, B, W = make_instance()
        V, T = transfer_dl_to_virtual(B, W)
        assert_allclose(stack(V), stack(W))
        assert_allclose(stack(T), stack(B))
        V[0][0, 0] = 99.0
        assert W[0][0, 0] != 99.0

    def test_forward_gap_identity_p2(self):
        config, channel, B, W = make_instance()
        state = DualityState.from_decoders(W, channel, config)
        psi = solve_psi_fixed_point(state, np.full(4, 2.5))
        V, T = transfer_dl_to_virtual(B, W)
        gap = state.tau - float(antenna_power(B) @ psi)
        assert sum_amse_ul2(V, T, psi, channel, config) == pytest.approx(
            sum_amse_dl(B, W, channel, config) - gap, rel=1e-9
        )

    def test_forward_gap_vanishes_at_active_limits(self):
        config, channel, B, W = make_instance()
        limits = user_power(B)
        state = DualityState.from_decoders(W, channel, config)
        mu = solve_mu_fixed_point(state, limits)
        V, T = transfer_dl_to_virtual(B, W)
        assert sum_amse_interf(V, T, channel, config, mu=mu) == pytest.approx(
            sum_amse_dl(B, W, channel, config), rel=1e-7
        )

    def test_p2_back_transfer_conserves_and_meets_limits(self):
        config, channel, B, W = make_instance()
        state = DualityState.from_decoders(W, channel, config)
        limits = np.full(4, 2.5)
        psi = solve_psi_fixed_point(state, limits)
        V, _ = transfer_dl_to_virtual(B, W)
        T = mamse_receiver_virtual(V, DualityNoise(psi=psi), Problem.P2, channel, config)
        B2, W2, _ = transfer_ul_to_dl_p2(V, T, psi, state, channel, config)
        assert sum_amse_dl(B2, W2, channel, config) == pytest.approx(
            sum_amse_ul2(V, T, psi, channel, config), rel=1e-9
        )
        assert_allclose(antenna_power(B2) / limits, np.ones(4), atol=1e-6)

    def test_p3_back_transfer_conserves_and_meets_limits(self):
        config, channel, B, W = make_instance()
        state = DualityState.from_decoders(W, channel, config)
        limits = np.array([5.0, 5.0])
        mu = solve_mu_fixed_point(state, limits)
        V, _ = transfer_dl_to_virtual(B, W)
        T = mamse_receiver_virtual(V, DualityNoise(mu=mu), Problem.P3, channel, config)
        B2, W2, _ = transfer_interf_to_dl_p3(V, T, mu, state, channel, config)
        assert sum_amse_dl(B2, W2, channel, config) == pytest.approx(
            sum_amse_interf(V, T, channel, config, mu=mu), rel=1e-9
        )
        assert_allclose(user_power(B2) / limits, np.ones(2), atol=1e-6)

    def test_p4_back_transfer_conserves_and_meets_limits(self):
        config, channel, B, W = make_instance()
        state = DualityState.from_decoders(W, channel, config)
        limits = np.full(4, 2.5)
        mu_tilde = solve_mu_tilde_fixed_point(state, limits)
        V, _ = transfer_dl_to_virtual(B, W)
        T = mamse_receiver_virtual(V, DualityNoise(mu_tilde=mu_tilde), Problem.P4, channel, config)
        B2, W2, _ = transfer_interf_to_dl_p4(V, T, mu_tilde, state, channel, config)
        assert sum_amse_dl(B2, W2, channel, config) == pytest.approx(
            sum_amse_interf(V, T, channel, config, mu_tilde=mu_tilde), rel=1e-9
        )
        assert_allclose(symbol_power(B2) / limits, np.ones(4), atol=1e-6)

    def test_power_min_psi_keeps_current_powers(self):
        config, channel, B, W = make_instance()
        state = DualityState.from_decoders(W, channel, config)
        current = antenna_power(B)
        psi = solve_psi_fixed_point_power_min(state, current)
        V, _ = transfer_dl_to_virtual(B, W)
        T = mamse_receiver_virtual(V, DualityNoise(psi=psi), Problem.P2, channel, config)
        B2, _, _ = transfer_ul_to_dl_p2(V, T, psi, state, channel, config)
        assert_allclose(antenna_power(B2), current, rtol=1e-6)

    def test_zero_virtual_decoder_is_degenerate(self):
        config, channel, B, W = make_instance()
        state = DualityState.from_decoders(W, channel, config)
        V, T = transfer_dl_to_virtual(B, W)
        with pytest.raises(DegenerateTransferError):
            transfer_interf_to_dl_p3(V, [np.zeros_like(t) for t in T], np.ones(2), state, channel, config)

    def test_back_transfers_read_only_virtual_filters(self):
        config, channel, B, W = make_instance()
        state = DualityState.from_decoders(W, channel, config)
        V, T = transfer_dl_to_virtual(B, W)
        for transfer, x in (
            (transfer_ul_to_dl_p2, np.full(4, 0.1)),
            (transfer_interf_to_dl_p3, np.array([0.2, 0.3])),
            (transfer_interf_to_dl_p4, np.full(4, 0.1)),
        ):
            B_full, W_full, beta_full = transfer(V, T, x, state, channel, config)
            B_bare, W_bare, beta_bare = transfer(V, T, x, state, None, None)
            assert beta_bare == beta_full
            assert_allclose(stack(B_bare), stack(B_full))
            assert_allclose(stack(W_bare), stack(W_full))
