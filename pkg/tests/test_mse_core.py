"""
Tests for the MSE Core Module.
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.channel_model import ChannelSet, SystemConfig, channel_rng, complex_gaussian, hermitian_sqrt, realize_channel
from src.errors import DomainError, SingularCovarianceError
from src.mse_core import (
    DualityNoise,
    Transceiver,
    amse_user_dl,
    gamma_c,
    gamma_dl,
    hermitian_solve,
    mamse_receiver_dl,
    mamse_receiver_virtual,
    noise_power,
    split,
    stack,
    sum_amse_dl,
    sum_amse_interf,
    sum_amse_ul,
    sum_amse_ul2,
)
from src.problems import Problem


# --- Helper Functions ---

def make_scalar_world(sigma_e2: float = 0.0, noise: float = 0.5, h: complex = 1.0):
    """Helper to create a one-user, one-antenna link with R_b = R_m = 1."""
    config = SystemConfig.build(K=1, N=1, M=[1], S=[1], sigma_e2=[sigma_e2], rho_b=[0.0], rho_m=[0.0],
                                noise_cov=[noise * np.eye(1)])
    H = np.array([[h]], dtype=complex)
    channel = ChannelSet(H_hat=(H,), H_true=(H,), E=(np.zeros((1, 1)),), R_b=(np.eye(1),),
                         R_m_tilde=(np.eye(1),), R_m=(np.eye(1),))
    return config, channel


def make_instance(seed: int = 3, noise: float = 0.5):
    """Helper to create a random two-user instance with precoders at total power 10."""
    base = SystemConfig.build(K=2, N=4, M=[2, 2], S=[2, 2], sigma_e2=[0.01, 0.02],
                              rho_b=[0.1, 0.12], rho_m=[0.05, 0.2])
    config = base.with_noise([noise * np.eye(2), 2 * noise * np.eye(2)])
    channel = realize_channel(config, channel_rng(seed, 0))
    rng = np.random.default_rng(seed)
    Bm = complex_gaussian(rng, (4, 4))
    Bm *= np.sqrt(10.0) / np.linalg.norm(Bm)
    return config, channel, split(Bm, config)


def scalar(x) -> np.ndarray:
    return [np.array([[x]], dtype=complex)]


class TestStackSplit:
    """Tests for stack and split."""

    def test_split_inverts_stack(self):
        config, _, B = make_instance()
        for a, b in zip(split(stack(B), config), B):
            assert_allclose(a, b)


class TestHermitianSolve:
    """Tests for hermitian_solve."""

    def test_solves(self):
        M = np.array([[2.0, 0.5], [0.5, 1.0]])
        assert_allclose(M @ hermitian_solve(M, np.array([1.0, 2.0])), [1.0, 2.0])

    def test_singular_names_user(self):
        with pytest.raises(SingularCovarianceError) as info:
            hermitian_solve(np.ones((2, 2)), np.ones(2), user=1)
        assert info.value.user == 1


class TestGammaDl:
    """Tests for gamma_dl."""

    def test_scalar_world(self):
        config, channel = make_scalar_world()
        assert gamma_dl(0, scalar(1.0), channel, config)[0, 0].real == pytest.approx(1.5)

    def test_scalar_world_with_error(self):
        config, channel = make_scalar_world(sigma_e2=0.1)
        assert gamma_dl(0, scalar(1.0), channel, config)[0, 0].real == pytest.approx(1.6)

    def test_zero_precoder_leaves_noise(self):
        config, channel, B = make_instance()
        zero = [np.zeros_like(b) for b in B]
        assert_allclose(gamma_dl(1, zero, channel, config), config.noise_cov[1])


class TestAmseDl:
    """Tests for amse_user_dl and sum_amse_dl."""

    def test_zero_decoder_gives_identity(self):
        config, channel, B = make_instance()
        W = [np.zeros((2, 2), dtype=complex)] * 2
        assert_allclose(amse_user_dl(0, B, W, channel, config), np.eye(2))

    def test_all_zero_gives_stream_count(self):
        config, channel, B = make_instance()
        zero_b = [np.zeros_like(b) for b in B]
        zero_w = [np.zeros((2, 2), dtype=complex)] * 2
        assert sum_amse_dl(zero_b, zero_w, channel, config) == pytest.approx(4.0)

    def test_scalar_world_mamse(self):
        config, channel = make_scalar_world()
        B = scalar(1.0)
        W = mamse_receiver_dl(B, channel, config)
        assert W[0][0, 0].real == pytest.approx(1 / 1.5)
        assert sum_amse_dl(B, W, channel, config) == pytest.approx(1 / 3)

    def test_mamse_below_stream_count(self):
        config, channel, B = make_instance()
        W = mamse_receiver_dl(B, channel, config)
        assert 0.0 < sum_amse_dl(B, W, channel, config) < 4.0

    def test_zero_precoder_gives_zero_decoder(self):
        config, channel, B = make_instance()
        W = mamse_receiver_dl([np.zeros_like(b) for b in B], channel, config)
        assert np.all(W[0] == 0)

    def test_mamse_is_local_minimum(self):
        config, channel, B = make_instance()
        W = mamse_receiver_dl(B, channel, config)
        best = sum_amse_dl(B, W, channel, config)
        for k in range(2):
            for idx in np.ndindex(W[k].shape):
                for step in (1e-3, -1e-3, 1e-3j):
                    perturbed = [w.copy() for w in W]
                    perturbed[k][idx] += step
                    assert sum_amse_dl(B, perturbed, channel, config) > best

    def test_matches_expectation_over_error(self):
        config, channel, B = make_instance(noise=0.2)
        W = mamse_receiver_dl(B, channel, config)
        rng = np.random.default_rng(11)
        Bm = stack(B)
        draws = 4000
        total = 0.0
        for k in range(2):
            rm_half = hermitian_sqrt(channel.R_m[k])
            rb_half = hermitian_sqrt(channel.R_b[k])
            for _ in range(draws):
                E = rm_half @ complex_gaussian(rng, (2, 4), config.sigma_e2[k]) @ rb_half
                H = channel.H_hat[k] + E
                err = W[k].conj().T @ H @ Bm - np.eye(4)[config.symbol_slice(k)]
                noise = W[k].conj().T @ config.noise_cov[k] @ W[k]
                total += (np.real(np.trace(err @ err.conj().T)) + np.real(np.trace(noise))) / draws
        assert total == pytest.approx(sum_amse_dl(B, W, channel, config), rel=0.02)


class TestNoisePower:
    """Tests for noise_power."""

    def test_scalar(self):
        config, _ = make_scalar_world(noise=2.0)
        assert noise_power(scalar(1.0), config) == pytest.approx(2.0)


class TestVirtualAmse:
    """Tests for gamma_c and the virtual sum-AMSE forms."""

    def test_gamma_c_zero(self):
        config, channel, _ = make_instance()
        V = [np.zeros((2, 2), dtype=complex)] * 2
        assert_allclose(gamma_c(V, channel, config), np.zeros((4, 4)))

    def test_gamma_c_scalar(self):
        config, channel = make_scalar_world(h=2.0)
        assert gamma_c(scalar(1.0), channel, config)[0, 0].real == pytest.approx(4.0)

    def test_gamma_c_error_term(self):
        config, channel = make_scalar_world(sigma_e2=0.1, h=2.0)
        assert gamma_c(scalar(1.0), channel, config)[0, 0].real == pytest.approx(4.1)

    def test_zero_decoder_gives_stream_count(self):
        config, channel, B = make_instance()
        V = mamse_receiver_dl(B, channel, config)
        T = [np.zeros((4, 2), dtype=complex)] * 2
        assert sum_amse_ul(V, T, 1.0, channel, config) == pytest.approx(4.0)
        assert sum_amse_ul2(V, T, np.ones(4), channel, config) == pytest.approx(4.0)
        assert sum_amse_interf(V, T, channel, config, mu=np.ones(2)) == pytest.approx(4.0)

    def test_scalar_uplink(self):
        config, channel = make_scalar_world(h=2.0)
        # 1 + |t|²(|h v|² + σ²) - 2 Re(t* h v) with v = 1, t = 0.5, σ² = 1
        value = sum_amse_ul(scalar(1.0), scalar(0.5), 1.0, channel, config)
        assert value == pytest.approx(1 + 0.25 * 5 - 2)

    def test_white_psi_matches_uplink(self):
        config, channel, B = make_instance()
        V = mamse_receiver_dl(B, channel, config)
        assert sum_amse_ul2(V, B, np.full(4, 0.7), channel, config) == pytest.approx(
            sum_amse_ul(V, B, 0.7, channel, config)
        )

    def test_per_symbol_matches_per_user(self):
        config, channel, B = make_instance()
        V = mamse_receiver_dl(B, channel, config)
        mu = np.array([0.3, 0.9])
        assert sum_amse_interf(V, B, channel, config, mu_tilde=np.repeat(mu, 2)) == pytest.approx(
            sum_amse_interf(V, B, channel, config, mu=mu)
        )

    def test_interf_needs_exactly_one_weighting(self):
        config, channel, B = make_instance()
        with pytest.raises(DomainError):
            sum_amse_interf(B, B, channel, config)


class TestMamseReceiverVirtual:
    """Tests for mamse_receiver_virtual."""

    def test_scalar_world(self):
        config, channel = make_scalar_world(h=2.0)
        T = mamse_receiver_virtual(scalar(1.0), DualityNoise(sigma2=1.0), Problem.P1, channel, config)
        assert T[0][0, 0].real == pytest.approx(2.0 / 5.0)

    def test_equal_mu_matches_white_noise(self):
        config, channel, B = make_instance()
        V = mamse_receiver_dl(B, channel, config)
        T1 = mamse_receiver_virtual(V, DualityNoise(sigma2=0.4), Problem.P1, channel, config)
        T3 = mamse_receiver_virtual(V, DualityNoise(mu=[0.4, 0.4]), Problem.P3, channel, config)
        T4 = mamse_receiver_virtual(V, DualityNoise(mu_tilde=np.full(4, 0.4)), Problem.P4, channel, config)
        for k in range(2):
            assert_allclose(T3[k], T1[k], atol=1e-12)
            assert_allclose(T4[k], T1[k], atol=1e-12)

    def test_columns_minimise_virtual_amse(self):
        config, channel, B = make_instance()
        V = mamse_receiver_dl(B, channel, config)
        psi = np.array([0.2, 0.4, 0.6, 0.8])
        T = mamse_receiver_virtual(V, DualityNoise(psi=psi), Problem.P2, channel, config)
        best = sum_amse_ul2(V, T, psi, channel, config)
        for k in range(2):
            for idx in np.ndindex(T[k].shape):
                perturbed = [t.copy() for t in T]
                perturbed[k][idx] += 1e-3
                assert sum_amse_ul2(V, perturbed, psi, channel, config) > best

    def test_missing_noise_rejected(self):
        config, channel, B = make_instance()
        V = mamse_receiver_dl(B, channel, config)
        with pytest.raises(DomainError, match="psi"):
            mamse_receiver_virtual(V, DualityNoise(sigma2=1.0), Problem.P2, channel, config)
        with pytest.raises(DomainError, match="mu_tilde"):
            mamse_receiver_virtual(V, DualityNoise(mu=[0.4, 0.4]), Problem.P4, channel, config)

    def test_wrong_noise_length_rejected(self):
        config, channel, B = make_instance()
        V = mamse_receiver_dl(B, channel, config)
        with pytest.raises(DomainError):
            mamse_receiver_virtual(V, DualityNoise(mu=[0.4, 0.4, 0.4]), Problem.P3, channel, config)

    def test_misshaped_precoder_rejected_before_solving(self):
        config, channel, B = make_instance()
        # B is N×S_k, the virtual precoders must be M_k×S_k
        with pytest.raises(DomainError, match="virtual precoder"):
            mamse_receiver_virtual(B, DualityNoise(psi=np.ones(4)), Problem.P2, channel, config)

    def test_power_min_problem_has_no_virtual_channel(self):
        config, channel, B = make_instance()
        V = mamse_receiver_dl(B, channel, config)
        with pytest.raises(DomainError):
            mamse_receiver_virtual(V, DualityNoise(sigma2=1.0), Problem.P6, channel, config)


class TestDataclasses:
    """Tests for Transceiver and DualityNoise validation."""

    def test_stream_mismatch_rejected(self):
        with pytest.raises(DomainError):
            Transceiver(B=[np.ones((2, 2))], W=[np.ones((2, 1))])

    def test_non_finite_rejected(self):
        with pytest.raises(DomainError):
            Transceiver(B=[np.full((2, 1), np.nan)], W=[np.ones((2, 1))])

    def test_nonpositive_noise_rejected(self):
        with pytest.raises(DomainError):
            DualityNoise(psi=[1.0, 0.0])
