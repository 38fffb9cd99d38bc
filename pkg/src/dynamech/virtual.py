"""Virtual values and their affine decomposition.

The virtual value of a state is v - [(1-F)/f] * dv/dtheta, the
revenue-relevant surrogate for value.  For separable value functions it
is affine in v once theta is fixed: psi = alpha(theta) * v +
beta(theta, rho).  The mechanism pegs (alpha, beta) to each agent's
period-0 report and never recomputes them, so the transform here is a
plain value object.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .environments import (
    AdditiveValue,
    ArmState,
    DomainError,
    Environment,
    MultiplicativeValue,
    TypeDistribution,
    value,
    value_theta_derivative,
)

__all__ = [
    "VirtualTransform",
    "inverse_hazard",
    "virtual_value",
    "affine_coefficients",
    "transform_or_dormant",
    "dormancy_threshold",
    "xi",
    "xi_table",
]


@dataclass(frozen=True)
class VirtualTransform:
    """Affine map xi = alpha * v + beta[rho], pegged to one report."""

    alpha: float
    beta: np.ndarray  # (n_rho,)
    pegged_report: float

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))


def inverse_hazard(dist: TypeDistribution, theta: float) -> float:
    """(1 - F(theta)) / f(theta), with the top-type convention that the
    ratio is 0 wherever F has already reached 1 (so psi = v at the top).
    """
    if theta < 0.0 or theta > dist.theta_bar:
        raise DomainError(f"theta {theta} outside [0, theta_bar]")
    survival = 1.0 - dist.cdf(theta)
    if survival <= 0.0:
        return 0.0
    density = dist.pdf(theta)
    if density <= 0.0:
        raise DomainError(f"density vanishes at interior theta={theta}")
    return survival / density


def virtual_value(env: Environment, agent_id: int, state: ArmState) -> float:
    ih = inverse_hazard(env.agents[agent_id].distribution, state.theta)
    return value(env, agent_id, state) - ih * value_theta_derivative(env, agent_id, state)


def affine_coefficients(env: Environment, agent_id: int, report: float) -> VirtualTransform:
    """(alpha, beta) evaluated at the pegged report.

    Additive values always have alpha = 1 and beta(rho) =
    -[(1-F)/f] * dA/dtheta; multiplicative values have
    alpha = 1 - [(1-F)/f] * A'/A and beta = (alpha - 1) * C, and
    require A(report) > 0.
    """
    agent = env.agents[agent_id]
    ih = inverse_hazard(agent.distribution, report)
    val = agent.value
    if isinstance(val, MultiplicativeValue):
        a_r = val.a(report)
        if a_r <= 0.0:
            raise DomainError(f"multiplicative A({report}) <= 0; transform undefined")
        alpha = 1.0 - ih * val.da(report) / a_r
        beta = (alpha - 1.0) * val.c
        return VirtualTransform(alpha=alpha, beta=beta, pegged_report=report)
    beta = np.array([-ih * val.da(report, rho) for rho in range(agent.public.n)])
    return VirtualTransform(alpha=1.0, beta=beta, pegged_report=report)


def transform_or_dormant(
    env: Environment, agent_id: int, report: float
) -> VirtualTransform | None:
    """Transform at the report, or None when the agent is dormant.

    A multiplicative agent whose transform has alpha <= 0 (including the
    degenerate A(report) <= 0 case) has xi = alpha*A*B - C <= 0
    pointwise, so the zero arm weakly dominates it; the mechanism
    hard-excludes such agents and never divides by alpha <= 0.
    Additive agents (alpha = 1) are never dormant.
    """
    agent = env.agents[agent_id]
    if isinstance(agent.value, MultiplicativeValue):
        if agent.value.a(report) <= 0.0:
            return None
        t = affine_coefficients(env, agent_id, report)
        if t.alpha <= 0.0:
            return None
        return t
    return affine_coefficients(env, agent_id, report)


def dormancy_threshold(env: Environment, agent_id: int, tol: float = 1e-12) -> float:
    """Smallest report at which the agent is active (0 if always active,
    theta_bar if dormant everywhere).

    Relies on alpha being nondecreasing in the report, which holds under
    the monotone-hazard and log-concavity assumptions.
    """
    theta_bar = env.agents[agent_id].distribution.theta_bar

    def active(r: float) -> bool:
        try:
            return transform_or_dormant(env, agent_id, r) is not None
        except DomainError:
            return False

    if active(0.0):
        return 0.0
    if not active(theta_bar):
        return theta_bar
    lo, hi = 0.0, theta_bar
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if active(mid):
            hi = mid
        else:
            lo = mid
    return hi


def xi(transform: VirtualTransform, env: Environment, agent_id: int, state: ArmState) -> float:
    """Transformed per-step reward alpha * v(state) + beta[rho]."""
    return transform.alpha * value(env, agent_id, state) + float(transform.beta[state.rho])


def xi_table(transform: VirtualTransform, env: Environment, agent_id: int, theta: float) -> np.ndarray:
    """xi over all (e, rho) cells for a fixed theta, shape (n_e, n_rho)."""
    agent = env.agents[agent_id]
    val = agent.value
    if isinstance(val, MultiplicativeValue):
        v = val.a(theta) * val.b - val.c[None, :]
    else:
        a_row = np.array([val.a(theta, rho) for rho in range(agent.public.n)])
        v = a_row[None, :] + val.b
    return transform.alpha * v + transform.beta[None, :]
