"""Agent environments: type distributions, experience kernels, separable values.

An agent's state is (theta, e, rho): a persistent real type theta drawn
once from its distribution, a private experience state e, and a public
experience state rho.  Experience evolves only on allocation (a bandit
process: idle arms are frozen).  The private kernel is structurally
unable to read theta, and values decompose additively or
multiplicatively across (theta, experience) -- the two properties the
mechanism's optimality rests on.

State spaces are finite and index-based internally; kernels carry label
tuples for I/O.  Built-ins discretize continuous beliefs (Beta
posteriors capped at a total observation count, AR(1) running values
quantized to a grid).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import simpson

__all__ = [
    "DomainError",
    "TypeDistribution",
    "uniform_type",
    "power_type",
    "capped_exponential_type",
    "PublicKernel",
    "PrivateKernel",
    "AdditiveValue",
    "MultiplicativeValue",
    "ArmState",
    "AgentModel",
    "Environment",
    "make_environment",
    "value",
    "value_theta_derivative",
    "step_experience",
    "check_derivative",
    "AssumptionCheck",
    "ValidityReport",
    "validate_assumptions",
    "beta_posterior_states",
    "sponsored_search",
    "finite_chain",
    "ar1",
]

_ROW_SUM_TOL = 1e-12


class DomainError(ValueError):
    """State or parameter outside an agent's declared spaces."""


# ---------------------------------------------------------------------------
# Type distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TypeDistribution:
    """Distribution of the persistent type theta on [0, theta_bar].

    cdf and pdf are callables on the support; sample draws one theta
    from a caller-owned generator.
    """

    cdf: Callable[[float], float]
    pdf: Callable[[float], float]
    theta_bar: float
    sample: Callable[[np.random.Generator], float]
    name: str = ""


def uniform_type(theta_bar: float = 1.0) -> TypeDistribution:
    return TypeDistribution(
        cdf=lambda t: min(max(t / theta_bar, 0.0), 1.0),
        pdf=lambda t: 1.0 / theta_bar,
        theta_bar=theta_bar,
        sample=lambda rng: theta_bar * float(rng.random()),
        name=f"uniform[0,{theta_bar:g}]",
    )


def power_type(theta_bar: float = 1.0, p: float = 2.0) -> TypeDistribution:
    """F(t) = (t/theta_bar)^p.  p=2 is the triangular density 2t on [0,1]."""
    if p <= 0:
        raise DomainError("power_type exponent must be positive")
    return TypeDistribution(
        cdf=lambda t: min(max((t / theta_bar) ** p, 0.0), 1.0),
        pdf=lambda t: p * max(t, 0.0) ** (p - 1.0) / theta_bar**p,
        theta_bar=theta_bar,
        sample=lambda rng: theta_bar * float(rng.random()) ** (1.0 / p),
        name=f"power[p={p:g}]",
    )


def capped_exponential_type(rate: float = 1.0, theta_bar: float = 1.0) -> TypeDistribution:
    """Exponential(rate) capped at theta_bar: theta = min(X, theta_bar).

    Deliberately irregular negative control: the inverse hazard rate is
    constant 1/rate on the interior (memoryless), so the monotone-hazard
    check fails; the cap also puts an atom at theta_bar, so the density
    does not integrate to one.
    """

    def cdf(t: float) -> float:
        if t >= theta_bar:
            return 1.0
        return 1.0 - float(np.exp(-rate * max(t, 0.0)))

    def sample(rng: np.random.Generator) -> float:
        return min(float(rng.exponential(1.0 / rate)), theta_bar)

    return TypeDistribution(
        cdf=cdf,
        pdf=lambda t: rate * float(np.exp(-rate * max(t, 0.0))),
        theta_bar=theta_bar,
        sample=sample,
        name=f"capped_exponential[rate={rate:g}]",
    )


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


def _check_rows(matrix: np.ndarray, what: str) -> None:
    sums = matrix.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > _ROW_SUM_TOL):
        bad = np.unravel_index(int(np.argmax(np.abs(sums - 1.0))), sums.shape)
        raise DomainError(f"{what} row {bad} sums to {sums[bad]!r}, expected 1")
    if np.any(matrix < -_ROW_SUM_TOL):
        raise DomainError(f"{what} has negative entries")


@dataclass(frozen=True)
class PublicKernel:
    """Transition G(rho' | rho) over a finite public-state set."""

    matrix: np.ndarray  # (n_rho, n_rho)
    labels: tuple[str, ...]

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DomainError("public kernel must be square")
        if len(self.labels) != m.shape[0]:
            raise DomainError("public kernel labels do not match matrix")
        _check_rows(m, "public kernel")
        object.__setattr__(self, "matrix", m)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class PrivateKernel:
    """Transition H(e' | e, rho) over a finite private-state set.

    Indexed [rho, e, e']: the private move may condition on the public
    state but never on theta (the kernel has no theta argument at all).
    """

    matrix: np.ndarray  # (n_rho, n_e, n_e)
    labels: tuple[str, ...]

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 3 or m.shape[1] != m.shape[2]:
            raise DomainError("private kernel must be (n_rho, n_e, n_e)")
        if len(self.labels) != m.shape[1]:
            raise DomainError("private kernel labels do not match matrix")
        _check_rows(m, "private kernel")
        object.__setattr__(self, "matrix", m)

    @property
    def n(self) -> int:
        return self.matrix.shape[1]


# ---------------------------------------------------------------------------
# Separable value functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdditiveValue:
    """v(theta, e, rho) = a(theta, rho) + b[e, rho]."""

    a: Callable[[float, int], float]
    da: Callable[[float, int], float]
    b: np.ndarray  # (n_e, n_rho)

    def __post_init__(self):
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))


@dataclass(frozen=True)
class MultiplicativeValue:
    """v(theta, e, rho) = a(theta) * b[e, rho] - c[rho]."""

    a: Callable[[float], float]
    da: Callable[[float], float]
    b: np.ndarray  # (n_e, n_rho)
    c: np.ndarray  # (n_rho,)

    def __post_init__(self):
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))


SeparableValue = AdditiveValue | MultiplicativeValue


@dataclass(frozen=True)
class ArmState:
    """One agent's full state: persistent theta plus (e, rho) indices.

    e and rho change only when this agent is allocated; theta never
    changes.
    """

    theta: float
    e: int
    rho: int


@dataclass(frozen=True)
class AgentModel:
    distribution: TypeDistribution
    public: PublicKernel
    private: PrivateKernel
    value: SeparableValue

    def __post_init__(self):
        b = self.value.b
        if b.shape != (self.private.n, self.public.n):
            raise DomainError(
                f"value b table shape {b.shape} does not match state spaces "
                f"({self.private.n}, {self.public.n})"
            )
        if isinstance(self.value, MultiplicativeValue) and self.value.c.shape != (self.public.n,):
            raise DomainError("value c table does not match public states")

    @property
    def n_states(self) -> int:
        return self.private.n * self.public.n


@dataclass(frozen=True)
class Environment:
    """Immutable k-agent environment with a common discount factor."""

    agents: tuple[AgentModel, ...]
    delta: float
    v_max: float

    @property
    def k(self) -> int:
        return len(self.agents)


def _value_bound(agent: AgentModel, grid: int = 129) -> float:
    thetas = np.linspace(0.0, agent.distribution.theta_bar, grid)
    val = agent.value
    worst = 0.0
    if isinstance(val, MultiplicativeValue):
        a_max = max(abs(val.a(float(t))) for t in thetas)
        worst = a_max * float(np.max(np.abs(val.b))) + float(np.max(np.abs(val.c)))
    else:
        for rho in range(agent.public.n):
            a_max = max(abs(val.a(float(t), rho)) for t in thetas)
            worst = max(worst, a_max + float(np.max(np.abs(val.b[:, rho]))))
    return worst


def make_environment(agents: Sequence[AgentModel], delta: float) -> Environment:
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta must lie in (0, 1), got {delta!r}")
    if not agents:
        raise DomainError("environment needs at least one agent")
    v_max = max(_value_bound(a) for a in agents)
    if not np.isfinite(v_max):
        raise DomainError("value bound is not finite")
    return Environment(agents=tuple(agents), delta=delta, v_max=v_max)


# ---------------------------------------------------------------------------
# Core operations
# ---------------------------------------------------------------------------


def _check_state(agent: AgentModel, state: ArmState) -> None:
    if not 0 <= state.e < agent.private.n:
        raise DomainError(f"unknown private state index {state.e}")
    if not 0 <= state.rho < agent.public.n:
        raise DomainError(f"unknown public state index {state.rho}")
    if not 0.0 <= state.theta <= agent.distribution.theta_bar:
        raise DomainError(f"theta {state.theta} outside [0, theta_bar]")


def value(env: Environment, agent_id: int, state: ArmState) -> float:
    agent = env.agents[agent_id]
    _check_state(agent, state)
    val = agent.value
    if isinstance(val, MultiplicativeValue):
        return val.a(state.theta) * float(val.b[state.e, state.rho]) - float(val.c[state.rho])
    return val.a(state.theta, state.rho) + float(val.b[state.e, state.rho])


def value_theta_derivative(env: Environment, agent_id: int, state: ArmState) -> float:
    agent = env.agents[agent_id]
    _check_state(agent, state)
    val = agent.value
    if isinstance(val, MultiplicativeValue):
        return val.da(state.theta) * float(val.b[state.e, state.rho])
    return val.da(state.theta, state.rho)


def _sample_index(cum_row: np.ndarray, u: float) -> int:
    return int(np.searchsorted(cum_row, u, side="right"))


def step_experience(env: Environment, agent_id: int, state: ArmState, rng) -> ArmState:
    """One allocation step: public state moves first, then the private
    state conditioned on the pre-transition public state.  theta is
    unchanged.  ``rng`` is either a numpy Generator or an
    ExperienceStreams handle.
    """
    agent = env.agents[agent_id]
    _check_state(agent, state)
    if hasattr(rng, "draw_pair"):
        u_pub, u_priv = rng.draw_pair(agent_id)
    else:
        u = rng.random(2)
        u_pub, u_priv = float(u[0]), float(u[1])
    rho_next = _sample_index(np.cumsum(agent.public.matrix[state.rho]), u_pub)
    e_next = _sample_index(np.cumsum(agent.private.matrix[state.rho, state.e]), u_priv)
    return ArmState(theta=state.theta, e=e_next, rho=rho_next)


def check_derivative(
    env: Environment,
    agent_id: int,
    states: Sequence[ArmState],
    h: float = 1e-6,
) -> float:
    """Max gap between the declared theta-derivative and a central
    finite difference over the given states."""
    worst = 0.0
    theta_bar = env.agents[agent_id].distribution.theta_bar
    for s in states:
        lo = max(s.theta - h, 0.0)
        hi = min(s.theta + h, theta_bar)
        fd = (
            value(env, agent_id, ArmState(hi, s.e, s.rho))
            - value(env, agent_id, ArmState(lo, s.e, s.rho))
        ) / (hi - lo)
        worst = max(worst, abs(fd - value_theta_derivative(env, agent_id, s)))
    return worst


# ---------------------------------------------------------------------------
# Assumption validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    detail: str = ""

    def __post_init__(self):
        object.__setattr__(self, "passed", bool(self.passed))


@dataclass(frozen=True)
class ValidityReport:
    checks: tuple[AssumptionCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[AssumptionCheck]:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [
                {"name": c.name, "passed": c.passed, "detail": c.detail} for c in self.checks
            ],
        }


def _check_distribution(agent_id: int, dist: TypeDistribution, grid: int) -> list[AssumptionCheck]:
    checks = []
    tb = dist.theta_bar
    ts = np.linspace(0.0, tb, grid)
    f0, f1 = dist.cdf(0.0), dist.cdf(tb)
    cdf_vals = np.array([dist.cdf(float(t)) for t in ts])
    monotone = np.all(np.diff(cdf_vals) >= -1e-12)
    ok = abs(f0) <= 1e-9 and abs(f1 - 1.0) <= 1e-9 and bool(monotone)
    checks.append(
        AssumptionCheck(
            f"agent{agent_id}.cdf_bounds",
            ok,
            "" if ok else f"F(0)={f0!r}, F(theta_bar)={f1!r}, monotone={monotone}",
        )
    )
    fine = np.linspace(0.0, tb, 8 * grid + 1)
    dens = np.array([dist.pdf(float(t)) for t in fine])
    mass = float(simpson(dens, x=fine))
    ok = abs(mass - 1.0) <= 1e-6
    checks.append(
        AssumptionCheck(
            f"agent{agent_id}.density_mass",
            ok,
            "" if ok else f"density integrates to {mass:.8f}",
        )
    )
    interior = ts[1:-1]
    pdf_vals = np.array([dist.pdf(float(t)) for t in interior])
    bad = np.where(pdf_vals <= 0.0)[0]
    checks.append(
        AssumptionCheck(
            f"agent{agent_id}.density_positive",
            bad.size == 0,
            "" if bad.size == 0 else f"f({interior[bad[0]]:.6g}) <= 0",
        )
    )
    return checks


def _check_mhr(agent_id: int, dist: TypeDistribution, grid: int) -> AssumptionCheck:
    # Strictly decreasing inverse hazard on the interior grid; a flat
    # stretch (memoryless exponential) is a failure.
    tb = dist.theta_bar
    ts = np.linspace(0.0, tb, grid)[:-1]
    ih = []
    for t in ts:
        f = dist.pdf(float(t))
        if f <= 0.0:
            return AssumptionCheck(
                f"agent{agent_id}.monotone_hazard", False, f"f({t:.6g}) <= 0"
            )
        ih.append((1.0 - dist.cdf(float(t))) / f)
    diffs = np.diff(ih)
    bad = np.where(diffs >= -1e-12)[0]
    if bad.size:
        j = int(bad[0])
        return AssumptionCheck(
            f"agent{agent_id}.monotone_hazard",
            False,
            f"inverse hazard not decreasing at theta={ts[j + 1]:.6g} "
            f"({ih[j]:.6g} -> {ih[j + 1]:.6g})",
        )
    return AssumptionCheck(f"agent{agent_id}.monotone_hazard", True)


def _check_values(agent_id: int, agent: AgentModel, grid: int) -> list[AssumptionCheck]:
    checks = []
    tb = agent.distribution.theta_bar
    ts = np.linspace(tb / grid, tb, grid)
    val = agent.value
    if isinstance(val, MultiplicativeValue):
        a_vals = np.array([val.a(float(t)) for t in ts])
        if np.any(a_vals <= 0.0):
            j = int(np.argmax(a_vals <= 0.0))
            checks.append(
                AssumptionCheck(
                    f"agent{agent_id}.value_shape", False, f"A({ts[j]:.6g}) <= 0"
                )
            )
        elif np.any(np.diff(a_vals) < -1e-9):
            j = int(np.argmax(np.diff(a_vals) < -1e-9))
            checks.append(
                AssumptionCheck(
                    f"agent{agent_id}.value_shape",
                    False,
                    f"A decreasing at theta={ts[j + 1]:.6g}",
                )
            )
        else:
            log_a = np.log(a_vals)
            second = np.diff(log_a, 2)
            bad = np.where(second > 1e-9)[0]
            if bad.size:
                j = int(bad[0])
                checks.append(
                    AssumptionCheck(
                        f"agent{agent_id}.value_shape",
                        False,
                        f"log A not concave near theta={ts[j + 1]:.6g}",
                    )
                )
            else:
                checks.append(AssumptionCheck(f"agent{agent_id}.value_shape", True))
        nonneg = bool(np.all(val.b >= 0.0) and np.all(val.c >= 0.0))
        checks.append(
            AssumptionCheck(
                f"agent{agent_id}.experience_weights",
                nonneg and np.all(np.isfinite(val.b)) and np.all(np.isfinite(val.c)),
                "" if nonneg else "B or C has negative entries",
            )
        )
    else:
        worst: AssumptionCheck | None = None
        for rho in range(agent.public.n):
            a_vals = np.array([val.a(float(t), rho) for t in ts])
            if np.any(np.diff(a_vals) < -1e-9):
                j = int(np.argmax(np.diff(a_vals) < -1e-9))
                worst = AssumptionCheck(
                    f"agent{agent_id}.value_shape",
                    False,
                    f"A decreasing at theta={ts[j + 1]:.6g}, rho={rho}",
                )
                break
            second = np.diff(a_vals, 2)
            bad = np.where(second > 1e-9)[0]
            if bad.size:
                j = int(bad[0])
                worst = AssumptionCheck(
                    f"agent{agent_id}.value_shape",
                    False,
                    f"A not concave near theta={ts[j + 1]:.6g}, rho={rho}",
                )
                break
        checks.append(worst or AssumptionCheck(f"agent{agent_id}.value_shape", True))
        nonneg = bool(np.all(val.b >= 0.0))
        checks.append(
            AssumptionCheck(
                f"agent{agent_id}.experience_weights",
                nonneg and np.all(np.isfinite(val.b)),
                "" if nonneg else "B has negative entries",
            )
        )
    return checks


def validate_assumptions(env: Environment, grid: int = 64) -> ValidityReport:
    """Grid-based checks of the separable-environment requirements.

    Failures are report entries, never exceptions; each failing entry
    names the offending grid point.
    """
    checks: list[AssumptionCheck] = []
    for i, agent in enumerate(env.agents):
        g_ok = np.allclose(agent.public.matrix.sum(axis=1), 1.0, atol=_ROW_SUM_TOL)
        h_ok = np.allclose(agent.private.matrix.sum(axis=2), 1.0, atol=_ROW_SUM_TOL)
        checks.append(
            AssumptionCheck(
                f"agent{i}.separable_process",
                bool(g_ok and h_ok),
                "private kernel is theta-free by construction"
                if (g_ok and h_ok)
                else "kernel rows do not sum to one",
            )
        )
        checks.extend(_check_distribution(i, agent.distribution, grid))
        checks.extend(_check_values(i, agent, grid))
        checks.append(_check_mhr(i, agent.distribution, grid))
    return ValidityReport(checks=tuple(checks))


# ---------------------------------------------------------------------------
# Built-in environment families
# ---------------------------------------------------------------------------


def beta_posterior_states(prior: tuple[float, float], cap: int):
    """Enumerate Beta(prior) posterior states with at most ``cap`` total
    observations.

    Returns (labels, means, successor map) where successors[i] =
    (index after a success, index after a failure); a capped state maps
    to itself.
    """
    a0, b0 = float(prior[0]), float(prior[1])
    states = [(s, f) for n in range(cap + 1) for s in range(n + 1) for f in [n - s]]
    index = {sf: i for i, sf in enumerate(states)}
    labels = tuple(f"b{a0 + s:g}.{b0 + f:g}" for s, f in states)
    means = np.array([(a0 + s) / (a0 + b0 + s + f) for s, f in states])
    successors = []
    for s, f in states:
        if s + f >= cap:
            i = index[(s, f)]
            successors.append((i, i))
        else:
            successors.append((index[(s + 1, f)], index[(s, f + 1)]))
    return labels, means, successors


def _beta_click_kernel(labels, means, successors) -> PublicKernel:
    n = len(labels)
    g = np.zeros((n, n))
    for i in range(n):
        up, down = successors[i]
        if up == i and down == i:
            g[i, i] = 1.0
        else:
            g[i, up] += means[i]
            g[i, down] += 1.0 - means[i]
    return PublicKernel(matrix=g, labels=labels)


def sponsored_search(
    k: int,
    theta_bar: float = 1.0,
    click_prior: tuple[float, float] = (1.0, 1.0),
    purchase_prior: tuple[float, float] = (1.0, 1.0),
    cap: int = 20,
    delta: float = 0.8,
    dist: TypeDistribution | None = None,
) -> Environment:
    """Repeated ad auction: v = theta * Pr[purchase | e] * Pr[click | rho].

    rho is the click-belief Beta posterior, e the purchase-belief Beta
    posterior, each capped at ``cap`` total observations (frozen at the
    cap).  An allocation shows the ad: the click belief always updates;
    the purchase belief updates only when a click lands, which is why
    the private kernel conditions on the pre-transition rho.
    """
    rho_labels, rho_means, rho_succ = beta_posterior_states(click_prior, cap)
    e_labels, e_means, e_succ = beta_posterior_states(purchase_prior, cap)
    public = _beta_click_kernel(rho_labels, rho_means, rho_succ)
    n_rho, n_e = len(rho_labels), len(e_labels)
    h = np.zeros((n_rho, n_e, n_e))
    for r in range(n_rho):
        p_click = rho_means[r]
        for e in range(n_e):
            up, down = e_succ[e]
            if up == e and down == e:
                h[r, e, e] = 1.0
            else:
                h[r, e, up] += p_click * e_means[e]
                h[r, e, down] += p_click * (1.0 - e_means[e])
                h[r, e, e] += 1.0 - p_click
    private = PrivateKernel(matrix=h, labels=e_labels)
    val = MultiplicativeValue(
        a=lambda t: t,
        da=lambda t: 1.0,
        b=np.outer(e_means, rho_means),
        c=np.zeros(n_rho),
    )
    agent = AgentModel(
        distribution=dist or uniform_type(theta_bar),
        public=public,
        private=private,
        value=val,
    )
    return make_environment([agent] * k, delta)


def finite_chain(
    delta: float,
    agents: Sequence[AgentModel] | None = None,
    *,
    k: int = 1,
    g: np.ndarray | None = None,
    h: np.ndarray | None = None,
    value: SeparableValue | None = None,
    dist: TypeDistribution | None = None,
    e_labels: Sequence[str] | None = None,
    rho_labels: Sequence[str] | None = None,
) -> Environment:
    """Environment from explicit kernel and value tables.

    Either pass fully-built ``agents`` or a single (g, h, value, dist)
    spec replicated ``k`` times.  ``h`` may be given as (n_e, n_e) when
    the private move ignores rho.
    """
    if agents is not None:
        return make_environment(list(agents), delta)
    if g is None or h is None or value is None:
        raise DomainError("finite_chain needs agents or explicit g/h/value tables")
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    if h.ndim == 2:
        h = np.broadcast_to(h, (g.shape[0],) + h.shape).copy()
    rho_lab = tuple(rho_labels) if rho_labels else tuple(f"p{i}" for i in range(g.shape[0]))
    e_lab = tuple(e_labels) if e_labels else tuple(f"e{i}" for i in range(h.shape[1]))
    agent = AgentModel(
        distribution=dist or uniform_type(1.0),
        public=PublicKernel(matrix=g, labels=rho_lab),
        private=PrivateKernel(matrix=h, labels=e_lab),
        value=value,
    )
    return make_environment([agent] * k, delta)


def ar1(
    k: int,
    coeff: float,
    shock: np.ndarray,
    delta: float,
    *,
    dist: TypeDistribution | None = None,
    base_g: np.ndarray | None = None,
    base_h: np.ndarray | None = None,
    grid_step: float = 0.05,
    alloc_cap: int = 25,
) -> Environment:
    """Auto-regressive values: after the n-th allocation the value is
    coeff^n * theta + w, with w evolving as w' = coeff*w + shock[e, rho].

    Encoded additively: the public state carries (base rho, allocation
    count capped at alloc_cap), the private state carries (base e,
    running shock accumulation quantized to multiples of grid_step).
    Quantization and the allocation-count cap are documented
    approximations; shrink grid_step / raise alloc_cap to tighten them.
    """
    if not 0.0 <= coeff < 1.0:
        raise DomainError("ar1 coefficient must lie in [0, 1)")
    shock = np.atleast_2d(np.asarray(shock, dtype=float))
    if np.any(shock < 0.0):
        raise DomainError("ar1 shocks must be non-negative")
    n_eb, n_rb = shock.shape
    if base_g is None:
        base_g = np.eye(n_rb)
    if base_h is None:
        base_h = np.broadcast_to(np.eye(n_eb), (n_rb, n_eb, n_eb)).copy()
    base_g = np.asarray(base_g, dtype=float)
    base_h = np.asarray(base_h, dtype=float)
    if base_h.ndim == 2:
        base_h = np.broadcast_to(base_h, (n_rb,) + base_h.shape).copy()

    w_max = float(np.max(shock)) / (1.0 - coeff) if np.max(shock) > 0 else 0.0
    n_w = int(np.floor(w_max / grid_step + 1e-9)) + 1 if w_max > 0 else 1
    n_n = alloc_cap + 1
    n_rho = n_rb * n_n
    n_e = n_eb * n_w

    rho_labels = tuple(f"p{r}.n{n}" for r in range(n_rb) for n in range(n_n))
    e_labels = tuple(f"e{e}.w{iw}" for e in range(n_eb) for iw in range(n_w))

    g = np.zeros((n_rho, n_rho))
    for r in range(n_rb):
        for n in range(n_n):
            n_next = min(n + 1, alloc_cap)
            for r2 in range(n_rb):
                g[r * n_n + n, r2 * n_n + n_next] += base_g[r, r2]

    h = np.zeros((n_rho, n_e, n_e))
    for r in range(n_rb):
        for n in range(n_n):
            rho_idx = r * n_n + n
            for e in range(n_eb):
                for iw in range(n_w):
                    w_next = coeff * iw * grid_step + shock[e, r]
                    iw_next = min(max(int(round(w_next / grid_step)), 0), n_w - 1)
                    for e2 in range(n_eb):
                        h[rho_idx, e * n_w + iw, e2 * n_w + iw_next] += base_h[r, e, e2]

    alloc_counts = np.array([n for _ in range(n_rb) for n in range(n_n)])
    w_levels = np.array([iw * grid_step for _ in range(n_eb) for iw in range(n_w)])
    powers = coeff ** alloc_counts.astype(float)
    val = AdditiveValue(
        a=lambda t, rho: float(powers[rho]) * t,
        da=lambda t, rho: float(powers[rho]),
        b=np.tile(w_levels[:, None], (1, n_rho)),
    )
    agent = AgentModel(
        distribution=dist or uniform_type(1.0),
        public=PublicKernel(matrix=g, labels=rho_labels),
        private=PrivateKernel(matrix=h, labels=e_labels),
        value=val,
    )
    return make_environment([agent] * k, delta)
