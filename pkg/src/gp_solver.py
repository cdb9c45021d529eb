"""
GP Solver Module

Posynomials and a small geometric-programming solver.

With x = log p every posynomial becomes exp of a log-sum-exp of affine
functions, so minimising log f_0(x) subject to log f_i(x) <= 0 is convex.
The solver runs a log-barrier method with damped Newton centring steps and
a phase-I search when the starting point is not strictly feasible.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, lstsq, solve
from scipy.special import logsumexp, softmax

from .errors import DomainError, GpInfeasibleError, GpIterationError

logger = logging.getLogger(__name__)

BARRIER_GROWTH = 10.0
ARMIJO = 0.3
SHRINK = 0.5
NEWTON_TOL = 1e-14
MAX_NEWTON_PER_CENTRE = 200
MAX_LINE_SEARCH = 80
PHASE_ONE_MARGIN = 1e-3


@dataclass(frozen=True, eq=False)
class Posynomial:
    """Σ_i c_i Π_j p_j^{a_ij} with c_i > 0, stored as coefficient vector and exponent matrix."""
    coefficients: np.ndarray
    exponents: np.ndarray

    def __post_init__(self) -> None:
        c = np.atleast_1d(np.asarray(self.coefficients, dtype=float))
        a = np.atleast_2d(np.asarray(self.exponents, dtype=float))
        if c.size == 0:
            raise DomainError("a posynomial needs at least one monomial")
        if a.shape[0] != c.size:
            raise DomainError("one exponent row is needed per coefficient")
        if np.any(c <= 0) or not np.all(np.isfinite(c)):
            raise DomainError("posynomial coefficients must be positive and finite")
        object.__setattr__(self, "coefficients", c)
        object.__setattr__(self, "exponents", a)

    @classmethod
    def from_monomials(cls, monomials: Iterable[tuple[float, Sequence[float]]]) -> "Posynomial":
        terms = list(monomials)
        if not terms:
            raise DomainError("a posynomial needs at least one monomial")
        return cls(
            coefficients=np.array([c for c, _ in terms], dtype=float),
            exponents=np.array([e for _, e in terms], dtype=float),
        )

    @property
    def var_count(self) -> int:
        return self.exponents.shape[1]

    @property
    def monomials(self) -> list[tuple[float, np.ndarray]]:
        return list(zip(self.coefficients.tolist(), self.exponents))

    def scaled(self, factor: float) -> "Posynomial":
        return Posynomial(self.coefficients * factor, self.exponents)

    def __add__(self, other: "Posynomial") -> "Posynomial":
        return Posynomial(
            np.concatenate([self.coefficients, other.coefficients]),
            np.vstack([self.exponents, other.exponents]),
        )

    def __call__(self, p: np.ndarray) -> float:
        logp = np.log(np.asarray(p, dtype=float))
        return float(np.sum(self.coefficients * np.exp(self.exponents @ logp)))


@dataclass
class GpProblem:
    """Minimise `objective` subject to every constraint posynomial <= 1."""
    objective: Posynomial
    constraints: list[Posynomial] = field(default_factory=list)
    labels: list[str] = field(default_factory=list)
    amse_target: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.labels:
            self.labels = [f"constraint {i}" for i in range(len(self.constraints))]
        if len(self.labels) != len(self.constraints):
            raise DomainError("one label is needed per constraint")
        for posy in self.constraints:
            if posy.var_count != self.var_count:
                raise DomainError("constraint exponent length differs from the objective's")

    @property
    def var_count(self) -> int:
        return self.objective.var_count

    def max_violation(self, p: np.ndarray) -> tuple[int, float]:
        """Index and value of the largest f_i(p) - 1 (or (-1, -inf) without constraints)."""
        if not self.constraints:
            return -1, float("-inf")
        values = np.array([posy(p) - 1.0 for posy in self.constraints])
        idx = int(np.argmax(values))
        return idx, float(values[idx])


@dataclass
class GpSolution:
    """Optimal powers and solver diagnostics."""
    p: np.ndarray
    objective: float
    newton_steps: int
    duality_gap: float


def log_posynomial(posy: Posynomial, x: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Value, gradient and Hessian of log f(e^x)."""
    z = posy.exponents @ x + np.log(posy.coefficients)
    weights = softmax(z)
    grad = posy.exponents.T @ weights
    hess = (posy.exponents * weights[:, None]).T @ posy.exponents - np.outer(grad, grad)
    return float(logsumexp(z)), grad, hess


class LogPosynomialStack:
    """
    log f_i(e^x) for several posynomials at once.

    Monomials are laid out row per posynomial and padded with -inf log
    coefficients, so values are one logsumexp over the rows and the
    derivatives one softmax.
    """

    def __init__(self, posynomials: Sequence[Posynomial], var_count: int):
        self.size = len(posynomials)
        self.var_count = var_count
        width = max((posy.coefficients.size for posy in posynomials), default=1)
        self.log_coefficients = np.full((self.size, width), -np.inf)
        self.exponents = np.zeros((self.size, width, var_count))
        for i, posy in enumerate(posynomials):
            terms = posy.coefficients.size
            self.log_coefficients[i, :terms] = np.log(posy.coefficients)
            self.exponents[i, :terms] = posy.exponents

    def _exponent_sums(self, x: np.ndarray) -> np.ndarray:
        return self.exponents @ x + self.log_coefficients

    def values(self, x: np.ndarray) -> np.ndarray:
        return logsumexp(self._exponent_sums(x), axis=1)

    def derivatives(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Values (m,), gradients (m, n) and Hessians (m, n, n)."""
        z = self._exponent_sums(x)
        weights = softmax(z, axis=1)
        grads = np.einsum("ml,mln->mn", weights, self.exponents)
        second = np.einsum("ml,mln,mlk->mnk", weights, self.exponents, self.exponents)
        return logsumexp(z, axis=1), grads, second - grads[:, :, None] * grads[:, None, :]


class _LastCoordinate:
    """The slack s of the phase-I variable z = (x, s)."""

    size = 1

    def __init__(self, var_count: int):
        self.var_count = var_count + 1

    def values(self, z: np.ndarray) -> np.ndarray:
        return np.array([z[-1]])

    def derivatives(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        grad = np.zeros((1, self.var_count))
        grad[0, -1] = 1.0
        return self.values(z), grad, np.zeros((1, self.var_count, self.var_count))


class _Shifted:
    """log f_i(e^x) - s over z = (x, s)."""

    def __init__(self, block: LogPosynomialStack):
        self.block = block
        self.size = block.size

    def values(self, z: np.ndarray) -> np.ndarray:
        return self.block.values(z[:-1]) - z[-1]

    def derivatives(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        h, G, H = self.block.derivatives(z[:-1])
        m, n = G.shape
        grads = np.hstack([G, -np.ones((m, 1))])
        hess = np.zeros((m, n + 1, n + 1))
        hess[:, :n, :n] = H
        return h - z[-1], grads, hess


class _Barrier:
    """f_0(z) + (1/t) Σ -log(-f_i(z))."""

    def __init__(self, objective, constraints):
        self.objective = objective
        self.constraints = constraints

    @property
    def m(self) -> int:
        return self.constraints.size

    def constraint_values(self, z: np.ndarray) -> np.ndarray:
        return self.constraints.values(z)

    def strictly_feasible(self, z: np.ndarray) -> bool:
        return self.m == 0 or bool(np.all(self.constraint_values(z) < 0))

    def value(self, z: np.ndarray, t: float) -> float:
        f0 = float(self.objective.values(z)[0])
        if self.m == 0:
            return f0
        h = self.constraint_values(z)
        if np.any(h >= 0):
            return float("inf")
        return f0 - float(np.sum(np.log(-h))) / t

    def derivatives(self, z: np.ndarray, t: float) -> tuple[float, np.ndarray, np.ndarray]:
        f0, g0, H0 = self.objective.derivatives(z)
        value, grad, hess = float(f0[0]), g0[0].copy(), H0[0].copy()
        if self.m:
            h, G, H = self.constraints.derivatives(z)
            inv = 1.0 / -h
            value -= float(np.sum(np.log(-h))) / t
            grad += (G.T @ inv) / t
            hess += (np.einsum("m,mnk->nk", inv, H) + (G * (inv**2)[:, None]).T @ G) / t
        return value, grad, hess


def _newton_direction(grad: np.ndarray, hess: np.ndarray) -> np.ndarray:
    n = grad.size
    ridge = 1e-12 * max(1.0, float(np.trace(hess)) / n)
    try:
        return solve(hess + ridge * np.eye(n), -grad, assume_a="sym")
    except (LinAlgError, ValueError):
        return lstsq(hess, -grad)[0]


def _centre(
    barrier: _Barrier,
    z: np.ndarray,
    t: float,
    budget: int,
    stop: Optional[Callable[[np.ndarray], bool]] = None,
) -> tuple[np.ndarray, int]:
    """Damped Newton on the barrier function; returns the centred point and steps used."""
    steps = 0
    while True:
        if stop is not None and stop(z):
            return z, steps
        value, grad, hess = barrier.derivatives(z, t)
        direction = _newton_direction(grad, hess)
        decrement = float(-grad @ direction)
        if decrement / 2.0 <= NEWTON_TOL:
            return z, steps
        if steps >= budget:
            raise GpIterationError(
                f"Newton centring did not converge in {steps} steps (decrement {decrement:.3e})",
                iterations=steps,
            )
        slack = 1e-13 * max(1.0, abs(value))
        step = 1.0
        for _ in range(MAX_LINE_SEARCH):
            candidate = z + step * direction
            if barrier.value(candidate, t) <= value - ARMIJO * step * decrement + slack:
                break
            step *= SHRINK
        else:
            if decrement < 1e-9:
                return z, steps
            raise GpIterationError(
                f"line search stalled (decrement {decrement:.3e})",
                iterations=steps,
            )
        z = candidate
        steps += 1


def _barrier_method(
    barrier: _Barrier,
    z0: np.ndarray,
    tol: float,
    max_newton: int,
    stop: Optional[Callable[[np.ndarray], bool]] = None,
) -> tuple[np.ndarray, int, float]:
    m = barrier.m
    if m == 0:
        z, steps = _centre(barrier, z0, 1.0, max_newton, stop)
        return z, steps, 0.0
    t = 1.0
    z = z0
    total = 0
    while True:
        z, steps = _centre(barrier, z, t, max_newton - total, stop)
        total += steps
        if (stop is not None and stop(z)) or m / t < tol:
            return z, total, m / t
        t *= BARRIER_GROWTH


def _phase_one(
    prob: GpProblem,
    constraints: LogPosynomialStack,
    x0: np.ndarray,
    tol: float,
    max_newton: int,
) -> tuple[np.ndarray, int]:
    """Minimise s subject to log f_i(x) <= s, stopping once s is comfortably negative."""
    start_values = constraints.values(x0)
    z0 = np.append(x0, float(np.max(start_values)) + 1.0)
    barrier = _Barrier(_LastCoordinate(prob.var_count), _Shifted(constraints))

    def comfortably_feasible(z: np.ndarray) -> bool:
        return float(np.max(constraints.values(z[:-1]))) < -PHASE_ONE_MARGIN

    try:
        z, steps, _ = _barrier_method(barrier, z0, tol, max_newton, stop=comfortably_feasible)
    except GpIterationError as exc:
        z, steps = None, exc.iterations

    if z is not None:
        x = z[:-1]
        values = constraints.values(x)
        if np.all(values < 0):
            return x, steps
    else:
        x = x0
        values = start_values
    idx = int(np.argmax(values))
    violation = float(np.expm1(values[idx]))
    raise GpInfeasibleError(
        f"GP is infeasible: '{prob.labels[idx]}' exceeds its limit by {violation:.3e} (relative)",
        constraint_index=idx,
        violation=violation,
    )


def gp_solve(
    prob: GpProblem,
    tol: float = 1e-9,
    p0: Optional[np.ndarray] = None,
    max_newton: int = 2000,
) -> GpSolution:
    """
    Solve a geometric program.

    Args:
        prob: Objective and constraints (each constraint is read as <= 1)
        tol: Target duality gap m/t of the log-domain problem
        p0: Optional starting powers; ones when omitted
        max_newton: Cap on the total number of Newton steps

    Returns:
        GpSolution with the optimal powers
    """
    n = prob.var_count
    x = np.zeros(n) if p0 is None else np.log(np.maximum(np.asarray(p0, dtype=float), 1e-300))
    if x.shape != (n,):
        raise DomainError(f"starting point has shape {x.shape}, expected ({n},)")

    constraints = LogPosynomialStack(prob.constraints, n)
    barrier = _Barrier(LogPosynomialStack([prob.objective], n), constraints)
    steps = 0
    if not barrier.strictly_feasible(x):
        x, steps = _phase_one(prob, constraints, x, tol, max_newton)
        logger.debug("GP phase I found a feasible start after %d Newton steps", steps)

    x, more, gap = _barrier_method(barrier, x, tol, max_newton - steps)
    p = np.exp(x)
    return GpSolution(p=p, objective=prob.objective(p), newton_steps=steps + more, duality_gap=gap)
