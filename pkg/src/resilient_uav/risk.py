"""Risk-sensitive utilities and the reporting metrics (variance, Jain fairness)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RiskConfig:
    """Risk sensitivity ``mu <= 0`` and the mean-variance weight ``beta = -mu / 2``."""

    mu: float = 0.0

    def __post_init__(self):
        if not self.mu <= 0:
            raise ValueError(f"mu must be <= 0, got {self.mu}")

    @property
    def beta(self) -> float:
        return -self.mu / 2.0

    @classmethod
    def from_beta(cls, beta: float) -> "RiskConfig":
        if beta < 0:
            raise ValueError(f"beta must be >= 0, got {beta}")
        return cls(mu=-2.0 * beta)


def exp_utility_grad(sums, mu: float) -> tuple[float, np.ndarray]:
    """(1/mu) log mean exp(mu S) and its gradient with respect to S.

    The gradient is the softmin weighting of the slots; for mu = 0 the
    utility is the plain mean and every slot weighs 1/N.
    """
    s = np.asarray(sums, dtype=float)
    if s.size == 0:
        raise ValueError("utility of an empty sequence")
    if mu == 0:
        return float(s.mean()), np.full(s.shape, 1.0 / s.size)
    z = mu * s
    shift = z.max()
    e = np.exp(z - shift)
    total = e.sum()
    value = (np.log(total / s.size) + shift) / mu
    return float(value), e / total


def exp_utility_curvature(sums, mu: float) -> np.ndarray:
    """Second derivatives of the exponential utility: mu (diag(pi) - pi pi^T)."""
    s = np.asarray(sums, dtype=float)
    if mu == 0:
        return np.zeros((s.size, s.size))
    _, pi = exp_utility_grad(s, mu)
    return mu * (np.diag(pi) - np.outer(pi, pi))


def exp_utility(sums, mu: float) -> float:
    return exp_utility_grad(sums, mu)[0]


def utility_F(per_user_rates, beta: float) -> float:
    """Sum over users of time-mean rate minus beta times time-variance."""
    r = np.atleast_2d(np.asarray(per_user_rates, dtype=float))
    if r.size == 0:
        raise ValueError("utility of an empty table")
    return float(np.sum(r.mean(axis=1) - beta * r.var(axis=1)))


def taylor_residual(sums, mu: float) -> float:
    """Gap between the exponential utility and its mean + (mu/2) var expansion."""
    if not mu < 0:
        raise ValueError("taylor_residual needs mu < 0")
    s = np.asarray(sums, dtype=float)
    return abs(exp_utility(s, mu) - (s.mean() + 0.5 * mu * s.var()))


def jain_index(values) -> float:
    x = np.asarray(values, dtype=float)
    top = float(np.max(x, initial=0.0))
    if x.size == 0 or top == 0.0:
        raise ValueError("fairness undefined for all-zero rates")
    x = x / top  # scale-free; avoids underflow of tiny squares
    return float(x.sum() ** 2 / (x.size * np.sum(x * x)))


def sum_rate_variance(sums) -> float:
    s = np.asarray(sums, dtype=float)
    if s.size == 0:
        raise ValueError("variance of an empty sequence")
    return float(s.var())


def log_sum_exp_utility(x, mu: float) -> float:
    """(1/mu) log sum_i exp(mu x_i), the sum form whose concavity is checked in tests."""
    x = np.asarray(x, dtype=float)
    z = mu * x
    shift = z.max()
    return float((np.log(np.exp(z - shift).sum()) + shift) / mu)
