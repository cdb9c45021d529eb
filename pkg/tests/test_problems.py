"""
Tests for the Problem Catalogue Module.
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.channel_model import SystemConfig
from src.errors import DomainError
from src.problems import ConstraintFamily, DesignMode, PowerLimits, Problem


# --- Helper Functions ---

def make_config() -> SystemConfig:
    """Helper to create a K=2, N=3, S=(1, 2) configuration."""
    return SystemConfig.build(K=2, N=3, M=[2, 2], S=[1, 2], sigma_e2=[0.0, 0.0],
                              rho_b=[0.0, 0.0], rho_m=[0.0, 0.0])


class TestProblem:
    """Tests for the Problem enum."""

    @pytest.mark.parametrize("text,expected", [("p1", Problem.P1), ("P10", Problem.P10), (" p4 ", Problem.P4)])
    def test_parse(self, text, expected):
        assert Problem.parse(text) is expected

    def test_parse_unknown(self):
        with pytest.raises(DomainError, match="Unknown problem"):
            Problem.parse("p11")

    def test_families(self):
        assert Problem.P2.family is ConstraintFamily.ANTENNA
        assert Problem.P8.family is ConstraintFamily.USER
        assert Problem.P10.family is ConstraintFamily.ENTRY

    def test_power_min(self):
        assert not Problem.P4.is_power_min
        assert Problem.P6.is_power_min

    def test_duality_problem(self):
        assert Problem.P7.duality_problem is Problem.P2
        assert Problem.P10.duality_problem is Problem.P4

    def test_p5_has_no_duality(self):
        with pytest.raises(DomainError):
            Problem.P5.duality_problem

    def test_order(self):
        assert Problem.P10.order == 10


class TestDesignMode:
    """Tests for DesignMode parsing."""

    def test_parse(self):
        assert DesignMode.parse("Naive") is DesignMode.NAIVE

    def test_parse_unknown(self):
        with pytest.raises(DomainError):
            DesignMode.parse("optimistic")


class TestPowerLimits:
    """Tests for PowerLimits.resolve and accessors."""

    def test_scalars_broadcast(self):
        limits = PowerLimits(total=10, antenna=2.5, user=5, symbol=2, entry=1).resolve(make_config())
        assert_allclose(limits.antenna, [2.5, 2.5, 2.5])
        assert_allclose(limits.user, [5, 5])
        assert_allclose(limits.symbol, [2, 2, 2])
        assert limits.entry.shape == (3, 3)

    def test_wrong_shape_rejected(self):
        with pytest.raises(DomainError, match="shape"):
            PowerLimits(antenna=[1.0, 2.0]).resolve(make_config())

    def test_nonpositive_rejected(self):
        with pytest.raises(DomainError):
            PowerLimits(user=[1.0, 0.0]).resolve(make_config())
        with pytest.raises(DomainError):
            PowerLimits(total=-1).resolve(make_config())

    def test_require_missing(self):
        with pytest.raises(DomainError, match="no antenna power limit"):
            PowerLimits(total=1.0).require(ConstraintFamily.ANTENNA)

    def test_nominal_budget(self):
        limits = PowerLimits(total=10, antenna=2.5).resolve(make_config())
        assert limits.nominal_budget(ConstraintFamily.TOTAL) == 10
        assert limits.nominal_budget(ConstraintFamily.ANTENNA) == pytest.approx(7.5)
        assert np.isclose(limits.get(ConstraintFamily.TOTAL), 10)
