"""
Problem Catalogue Module

Enumerates the design problems, the design modes and the power-constraint
families, and holds the power limits a design is solved against.
"""

from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Optional

import numpy as np

from .errors import DomainError

if TYPE_CHECKING:
    from .channel_model import SystemConfig


class ConstraintFamily(Enum):
    """Granularity at which transmit power is limited."""
    TOTAL = "total"
    ANTENNA = "antenna"
    USER = "user"
    SYMBOL = "symbol"
    ENTRY = "entry"


class DesignMode(Enum):
    """How channel-estimation error is treated at design time."""
    ROBUST = "robust"    # design with the true error statistics
    NAIVE = "naive"      # treat the estimate as exact, evaluate with true statistics
    PERFECT = "perfect"  # design and evaluate on the true channel

    @classmethod
    def parse(cls, text: str) -> "DesignMode":
        try:
            return cls(text.strip().lower())
        except ValueError:
            choices = ", ".join(m.value for m in cls)
            raise DomainError(f"Unknown design mode '{text}' (expected one of: {choices})") from None


class Problem(Enum):
    """
    Sum-AMSE design problems.

    P1-P4 minimise the sum AMSE under a total, per-antenna, per-user or
    per-symbol power limit. P5 limits every precoder entry and is only
    available as a power-allocation GP. P6-P10 minimise total power subject
    to a sum-AMSE target plus the constraint family of P1-P5.
    """
    P1 = "p1"
    P2 = "p2"
    P3 = "p3"
    P4 = "p4"
    P5 = "p5"
    P6 = "p6"
    P7 = "p7"
    P8 = "p8"
    P9 = "p9"
    P10 = "p10"

    @classmethod
    def parse(cls, text: str) -> "Problem":
        try:
            return cls(text.strip().lower())
        except ValueError:
            choices = ", ".join(p.value for p in cls)
            raise DomainError(f"Unknown problem '{text}' (expected one of: {choices})") from None

    @property
    def family(self) -> ConstraintFamily:
        return _FAMILIES[self]

    @property
    def is_power_min(self) -> bool:
        return self in _POWER_MIN

    @property
    def duality_problem(self) -> "Problem":
        """The P1-P4 duality that carries this problem's virtual channel."""
        if self is Problem.P5:
            raise DomainError("P5 has no duality transfer; only its power-allocation GP is provided")
        return _DUALITY[self]

    @property
    def order(self) -> int:
        return int(self.value[1:])


_FAMILIES = {
    Problem.P1: ConstraintFamily.TOTAL,
    Problem.P2: ConstraintFamily.ANTENNA,
    Problem.P3: ConstraintFamily.USER,
    Problem.P4: ConstraintFamily.SYMBOL,
    Problem.P5: ConstraintFamily.ENTRY,
    Problem.P6: ConstraintFamily.TOTAL,
    Problem.P7: ConstraintFamily.ANTENNA,
    Problem.P8: ConstraintFamily.USER,
    Problem.P9: ConstraintFamily.SYMBOL,
    Problem.P10: ConstraintFamily.ENTRY,
}

_POWER_MIN = {Problem.P6, Problem.P7, Problem.P8, Problem.P9, Problem.P10}

# P10 rides the per-symbol duality; its per-entry limits are enforced by the GP step.
_DUALITY = {
    Problem.P1: Problem.P1,
    Problem.P2: Problem.P2,
    Problem.P3: Problem.P3,
    Problem.P4: Problem.P4,
    Problem.P6: Problem.P1,
    Problem.P7: Problem.P2,
    Problem.P8: Problem.P3,
    Problem.P9: Problem.P4,
    Problem.P10: Problem.P4,
}


def _positive_array(name: str, value, shape: tuple[int, ...]) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(shape, float(arr))
    if arr.shape != shape:
        raise DomainError(f"{name} limits have shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError(f"{name} limits must be strictly positive and finite")
    return arr


@dataclass(frozen=True, eq=False)
class PowerLimits:
    """
    Power limits and the optional sum-AMSE target.

    Scalars are accepted for the vector families and are broadcast by
    `resolve` once the system dimensions are known.
    """
    total: Optional[float] = None
    antenna: Optional[object] = None   # N-vector p̌_n
    user: Optional[object] = None      # K-vector p̌_k
    symbol: Optional[object] = None    # S-vector p̄̌_ks
    entry: Optional[object] = None     # S×N matrix p̄̄_ksn
    amse_target: Optional[float] = None

    def resolve(self, config: "SystemConfig") -> "PowerLimits":
        """Broadcast scalar limits to the shapes of `config` and validate them."""
        total = None
        if self.total is not None:
            total = float(self.total)
            if not np.isfinite(total) or total <= 0:
                raise DomainError("total power limit must be strictly positive")
        amse_target = None
        if self.amse_target is not None:
            amse_target = float(self.amse_target)
            if not np.isfinite(amse_target) or amse_target <= 0:
                raise DomainError("sum-AMSE target must be strictly positive")
        return PowerLimits(
            total=total,
            antenna=None if self.antenna is None else _positive_array("antenna", self.antenna, (config.N,)),
            user=None if self.user is None else _positive_array("user", self.user, (config.K,)),
            symbol=None if self.symbol is None else _positive_array("symbol", self.symbol, (config.S_total,)),
            entry=None if self.entry is None else _positive_array("entry", self.entry, (config.S_total, config.N)),
            amse_target=amse_target,
        )

    def get(self, family: ConstraintFamily):
        return {
            ConstraintFamily.TOTAL: self.total,
            ConstraintFamily.ANTENNA: self.antenna,
            ConstraintFamily.USER: self.user,
            ConstraintFamily.SYMBOL: self.symbol,
            ConstraintFamily.ENTRY: self.entry,
        }[family]

    def require(self, family: ConstraintFamily):
        """Return the limit for `family`, raising when it was never set."""
        value = self.get(family)
        if value is None:
            raise DomainError(f"no {family.value} power limit configured")
        return value

    def nominal_budget(self, family: ConstraintFamily) -> float:
        """Total power implied by the limits of one family."""
        return float(np.sum(self.require(family)))
