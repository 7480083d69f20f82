"""Physical and multiplier parameters with their validity constraints."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass


class ParameterError(ValueError):
    """Raised when a parameter violates a structural constraint."""


@dataclass(frozen=True)
class PhysicalParams:
    nu: float = 0.0
    mu: float = 0.0
    gamma: float = 1.0
    eps: float = 0.5
    s: float = 2.0
    delta: float = 0.25

    def __post_init__(self) -> None:
        for name in ("nu", "mu", "gamma", "eps", "s", "delta"):
            if not math.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")
        if self.nu < 0:
            raise ParameterError(f"nu must be nonnegative, got {self.nu}")
        if self.mu < 0:
            raise ParameterError(f"mu must be nonnegative, got {self.mu}")
        if not self.gamma > 0.5:
            raise ParameterError(
                f"gamma={self.gamma} violates coercivity: the energy form is positive only for gamma > 1/2"
            )
        if not 0.0 < self.eps < 1.0 / self.gamma:
            raise ParameterError(f"eps={self.eps} must satisfy 0 < eps < 1/gamma = {1.0 / self.gamma:.6g}")
        if not self.s > 1.5:
            raise ParameterError(f"s={self.s} must exceed 3/2")
        if not 0.0 < self.delta < min(self.s - 1.5, 0.5):
            raise ParameterError(f"delta={self.delta} must satisfy 0 < delta < min(s - 3/2, 1/2)")
        if self.nu > 0 and self.mu > 0:
            ratio = (self.nu + self.mu) / (2.0 * self.gamma * math.sqrt(self.nu * self.mu))
            if ratio >= 2.0 - self.eps:
                warnings.warn(
                    f"(nu+mu)/(2 gamma sqrt(nu mu)) = {ratio:.4g} is not below 2 - eps = {2.0 - self.eps:.4g}",
                    RuntimeWarning,
                    stacklevel=2,
                )

    @property
    def kappa(self) -> float:
        return min(self.nu, self.mu)

    @property
    def C_gamma(self) -> float:
        return max(1.0, 2.0 / (2.0 * self.gamma - 1.0))

    @property
    def eps_small(self) -> float:
        return self.eps / 16.0

    @property
    def T0(self) -> float:
        """Regime switch time kappa^(-1/6); infinite without dissipation."""
        return math.inf if self.kappa == 0 else self.kappa ** (-1.0 / 6.0)


@dataclass(frozen=True)
class MultiplierParams:
    gamma: float
    kappa: float
    eps_small: float
    s: float
    delta: float
    J_sum: int = 2000
    psi_tol: float = 1e-10

    def __post_init__(self) -> None:
        if self.J_sum < 10:
            raise ParameterError(f"J_sum must be at least 10, got {self.J_sum}")
        if not 0 < self.psi_tol <= 1e-6:
            raise ParameterError(f"psi_tol must lie in (0, 1e-6], got {self.psi_tol}")
        if self.kappa < 0:
            raise ParameterError("kappa must be nonnegative")

    @classmethod
    def from_physical(cls, p: PhysicalParams, J_sum: int = 2000, psi_tol: float = 1e-10) -> "MultiplierParams":
        return cls(p.gamma, p.kappa, p.eps_small, p.s, p.delta, J_sum, psi_tol)

    @property
    def C_gamma(self) -> float:
        return max(1.0, 2.0 / (2.0 * self.gamma - 1.0))

    @property
    def T0(self) -> float:
        return math.inf if self.kappa == 0 else self.kappa ** (-1.0 / 6.0)
