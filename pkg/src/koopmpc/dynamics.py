"""Ground-truth benchmark systems and their sampled-data (RK4, zero-order hold) form.

All vector fields accept states shaped ``(n,)`` or ``(n, d)``; the second form
evaluates ``d`` states at once with a shared input, which is how the data
generator integrates whole sample batches.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

SECONDS_PER_HOUR = 3600.0


class IntegrationDomainError(ValueError):
    """Raised when a vector field is evaluated outside its domain."""


@dataclass(frozen=True)
class VectorField:
    """Continuous-time control-affine field ``dx/dt = f(x, u)``."""

    n: int
    m: int
    rhs: Callable[[np.ndarray, np.ndarray], np.ndarray]
    name: str = ""

    def __call__(self, x, u) -> np.ndarray:
        return self.rhs(np.asarray(x, dtype=float), np.asarray(u, dtype=float))


@dataclass(frozen=True)
class VdpParams:
    nu: float = 0.1
    # False gives nu*(1 - x1)**2*x2 (default form); True uses nu*(1 - x1**2)*x2.
    classical: bool = False

    def __post_init__(self):
        if not np.isfinite(self.nu):
            raise ValueError("nu must be finite")


@dataclass(frozen=True)
class FourTanksParams:
    """Quadruple-tank parameters in SI units (m, m^2, m/s^2).

    Defaults are the HD-MPC four-tank benchmark values of Alvarado et al.
    (2011). Inputs to :func:`four_tanks_field` are flows in m^3/h.
    """

    S: float = 0.06
    a1: float = 1.31e-4
    a2: float = 1.51e-4
    a3: float = 9.27e-5
    a4: float = 8.82e-5
    g: float = 9.81
    gamma_a: float = 0.3
    gamma_b: float = 0.4

    def __post_init__(self):
        for name in ("S", "a1", "a2", "a3", "a4", "g", "gamma_a", "gamma_b"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if not (self.gamma_a < 1 and self.gamma_b < 1):
            raise ValueError("valve ratios must lie in (0, 1)")


@dataclass(frozen=True)
class SampledSystem:
    """Discrete-time map obtained by holding ``u`` over ``dt`` and applying RK4."""

    field: VectorField
    dt: float
    substeps: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValueError("substeps must be a positive integer")

    @property
    def n(self) -> int:
        return self.field.n

    @property
    def m(self) -> int:
        return self.field.m

    def __call__(self, x, u) -> np.ndarray:
        return sampled_step(self, x, u)


def vdp_field(x, u, p: VdpParams = VdpParams()) -> np.ndarray:
    x1, x2 = x[0], x[1]
    if p.classical:
        damping = p.nu * (1.0 - x1**2) * x2
    else:
        damping = p.nu * (1.0 - x1) ** 2 * x2
    return np.stack([x2, damping - x1 + u[0]])


def four_tanks_field(x, u, p: FourTanksParams = FourTanksParams()) -> np.ndarray:
    """Level dynamics for levels ``x`` in m and pump flows ``u`` in m^3/h."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise IntegrationDomainError(f"tank levels must be nonnegative, got {x.min():.6g}")
    qa = u[0] / SECONDS_PER_HOUR
    qb = u[1] / SECONDS_PER_HOUR
    out = [np.sqrt(2.0 * p.g * x[i]) for i in range(4)]
    a1, a2, a3, a4 = (p.a1 * out[0], p.a2 * out[1], p.a3 * out[2], p.a4 * out[3])
    return np.stack([
        (-a1 + a3 + p.gamma_a * qa) / p.S,
        (-a2 + a4 + p.gamma_b * qb) / p.S,
        (-a3 + (1.0 - p.gamma_b) * qb) / p.S,
        (-a4 + (1.0 - p.gamma_a) * qa) / p.S,
    ])


def make_vdp(params: VdpParams = VdpParams()) -> VectorField:
    return VectorField(2, 1, lambda x, u: vdp_field(x, u, params), name="vdp")


def make_four_tanks(params: FourTanksParams = FourTanksParams()) -> VectorField:
    return VectorField(4, 2, lambda x, u: four_tanks_field(x, u, params), name="four_tanks")


def rk4_step(field, x, u, h: float) -> np.ndarray:
    """One classical Runge-Kutta step with the input held constant."""
    if not h > 0:
        raise ValueError("step size must be positive")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    k1 = field(x, u)
    k2 = field(x + 0.5 * h * k1, u)
    k3 = field(x + 0.5 * h * k2, u)
    k4 = field(x + h * k3, u)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def sampled_step(sys: SampledSystem, x, u) -> np.ndarray:
    h = sys.dt / sys.substeps
    x = np.asarray(x, dtype=float)
    for _ in range(sys.substeps):
        x = rk4_step(sys.field, x, u, h)
    return x


def four_tanks_equilibrium(p: FourTanksParams, h1: float, h2: float):
    """Steady state with prescribed lower-tank levels, solved in closed form.

    Returns ``(x, u)`` with ``x`` in m and ``u`` in m^3/h.
    """
    s1 = p.a1 * np.sqrt(2 * p.g * h1)
    s2 = p.a2 * np.sqrt(2 * p.g * h2)
    # Outflow of tank 1 = gamma_a*qa + (1-gamma_b)*qb, tank 2 = (1-gamma_a)*qa + gamma_b*qb
    mix = np.array([[p.gamma_a, 1 - p.gamma_b], [1 - p.gamma_a, p.gamma_b]])
    qa, qb = np.linalg.solve(mix, [s1, s2])
    h3 = ((1 - p.gamma_b) * qb / p.a3) ** 2 / (2 * p.g)
    h4 = ((1 - p.gamma_a) * qa / p.a4) ** 2 / (2 * p.g)
    x = np.array([h1, h2, h3, h4])
    u = np.array([qa, qb]) * SECONDS_PER_HOUR
    return x, u
