"""The dynamic auction itself: period-0 reports and entry fees, per-round
index allocation, externality pricing, and pluggable reporting strategies.

Round structure: at the fictitious period 0 each agent reports a type;
that report pegs the agent's affine transform (and its entry fee, which
is charged at t=1 with discount weight 1).  At every round t >= 1 agents
re-report (theta, e); allocation uses the *current* reports inside the
index but the period-0 report inside (alpha, beta), so agents keep the
freedom to correct earlier misreports.  Only the winner pays, an affine
transformation of the externality it imposes on the other agents.

Agents whose pegged transform has alpha <= 0 (multiplicative variant)
are dormant: never allocated, never charged, so the price's division by
alpha is always safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .environments import (
    ArmState,
    DomainError,
    Environment,
    MultiplicativeValue,
    value,
)
from .gittins import (
    CompiledArm,
    allocate,
    compile_reward_arm,
    index_of_states,
    joint_optimal_value,
    optimal_stop_value,
    tail_horizon,
)
from .rng import ExperienceStreams, substream
from .virtual import (
    VirtualTransform,
    dormancy_threshold,
    inverse_hazard,
    transform_or_dormant,
    xi_table,
)

__all__ = [
    "Report",
    "Truthful",
    "MisreportTheta0",
    "MisreportThetaAlways",
    "MisreportExperience",
    "CorrectingDeviation",
    "Estimate",
    "MechanismRuntime",
    "per_round_price",
    "entry_price_P",
    "entry_fee_p0",
    "fee_quadrature",
    "run_episode",
    "marginal_contribution",
    "RoundRecord",
    "Transcript",
]


# ---------------------------------------------------------------------------
# Reports and strategies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Report:
    """One agent's report: theta_hat always, e_hat from t >= 1 on."""

    theta_hat: float
    e_hat: int | None = None


def _clamp(x: float, theta_bar: float) -> float:
    return min(max(x, 0.0), theta_bar)


class Truthful:
    """Report the true type and the true private experience every round."""

    def report(self, t: int, theta: float, e: int, theta_bar: float) -> Report:
        return Report(theta_hat=theta, e_hat=None if t == 0 else e)


class MisreportTheta0:
    """Shade the period-0 type report only; truthful from t = 1 on."""

    def __init__(self, offset: float):
        self.offset = offset

    def report(self, t: int, theta: float, e: int, theta_bar: float) -> Report:
        th = _clamp(theta + self.offset, theta_bar) if t == 0 else theta
        return Report(theta_hat=th, e_hat=None if t == 0 else e)


class MisreportThetaAlways:
    """Shade the type report in every round, period 0 included."""

    def __init__(self, offset: float):
        self.offset = offset

    def report(self, t: int, theta: float, e: int, theta_bar: float) -> Report:
        th = _clamp(theta + self.offset, theta_bar)
        return Report(theta_hat=th, e_hat=None if t == 0 else e)


class MisreportExperience:
    """Truthful except the private-experience report at one round."""

    def __init__(self, round_t: int, fake_e: int):
        self.round_t = round_t
        self.fake_e = fake_e

    def report(self, t: int, theta: float, e: int, theta_bar: float) -> Report:
        e_hat = self.fake_e if t == self.round_t else e
        return Report(theta_hat=theta, e_hat=None if t == 0 else e_hat)


class CorrectingDeviation:
    """Shade the type for rounds t < correct_round, then report truth."""

    def __init__(self, offset: float, correct_round: int = 3):
        self.offset = offset
        self.correct_round = correct_round

    def report(self, t: int, theta: float, e: int, theta_bar: float) -> Report:
        th = _clamp(theta + self.offset, theta_bar) if t < self.correct_round else theta
        return Report(theta_hat=th, e_hat=None if t == 0 else e)


# ---------------------------------------------------------------------------
# Runtime caches
# ---------------------------------------------------------------------------


class MechanismRuntime:
    """Compiled, cached machinery shared across episodes of one environment.

    Index tables and single-arm retirement values are cached per
    (agent, pegged report, current theta).  Multiplicative values with
    C = 0 use the positive-homogeneity of the index in the rewards:
    one base table of the experience process serves every
    (report, theta) pair through the scale alpha(report) * A(theta).
    """

    def __init__(
        self,
        env: Environment,
        *,
        index_tol: float = 1e-9,
        dp_tol: float = 1e-10,
        state_cap: int = 10_000,
        welfare_rollouts: int = 2000,
    ):
        self.env = env
        self.index_tol = index_tol
        self.dp_tol = dp_tol
        self.state_cap = state_cap
        self.welfare_rollouts = welfare_rollouts
        self._transforms: dict[tuple[int, float], VirtualTransform | None] = {}
        self._tables: dict[tuple[int, float, float], np.ndarray] = {}
        self._stops: dict[tuple[int, float, float], np.ndarray] = {}
        self._base_tables: dict[int, np.ndarray] = {}
        self._base_stops: dict[int, np.ndarray] = {}
        self._joint_w: dict[tuple, tuple[np.ndarray, list[int]]] = {}
        self._cum_g = []
        self._cum_h = []
        self._n_rho = []
        self._n_e = []
        self._scale_bound = []
        for agent in env.agents:
            self._cum_g.append([np.cumsum(row) for row in agent.public.matrix])
            self._cum_h.append(
                [[np.cumsum(agent.private.matrix[r, e]) for e in range(agent.private.n)] for r in range(agent.public.n)]
            )
            self._n_rho.append(agent.public.n)
            self._n_e.append(agent.private.n)
            if isinstance(agent.value, MultiplicativeValue):
                ts = np.linspace(0.0, agent.distribution.theta_bar, 65)
                self._scale_bound.append(max(1.0, max(abs(agent.value.a(float(t))) for t in ts)))
            else:
                self._scale_bound.append(1.0)

    # -- transforms -------------------------------------------------------

    def transform(self, agent_id: int, report: float) -> VirtualTransform | None:
        key = (agent_id, report)
        if key not in self._transforms:
            self._transforms[key] = transform_or_dormant(self.env, agent_id, report)
        return self._transforms[key]

    # -- per-agent tables -------------------------------------------------

    def _homogeneous_scale(self, agent_id: int, transform: VirtualTransform, theta: float):
        """scale s.t. xi = scale * B, or None when the shortcut is invalid."""
        val = self.env.agents[agent_id].value
        if not isinstance(val, MultiplicativeValue) or np.any(val.c != 0.0):
            return None
        scale = transform.alpha * val.a(theta)
        return scale if scale >= 0.0 else None

    def _base_arm(self, agent_id: int) -> CompiledArm:
        agent = self.env.agents[agent_id]
        return compile_reward_arm(agent, agent.value.b, self.env.delta)

    def index_flat(self, agent_id: int, transform: VirtualTransform, theta: float) -> np.ndarray:
        key = (agent_id, transform.pegged_report, theta)
        out = self._tables.get(key)
        if out is not None:
            return out
        scale = self._homogeneous_scale(agent_id, transform, theta)
        if scale is not None:
            # identical agent models (replicated built-ins) share one build
            base_key = id(self.env.agents[agent_id])
            base = self._base_tables.get(base_key)
            if base is None:
                arm = self._base_arm(agent_id)
                base = index_of_states(
                    arm, np.arange(arm.n), self.index_tol / self._scale_bound[agent_id]
                )
                self._base_tables[base_key] = base
            out = scale * base
        else:
            rewards = xi_table(transform, self.env, agent_id, theta)
            arm = compile_reward_arm(self.env.agents[agent_id], rewards, self.env.delta)
            out = index_of_states(arm, np.arange(arm.n), self.index_tol)
        self._tables[key] = out
        return out

    def stop_flat(self, agent_id: int, transform: VirtualTransform, theta: float) -> np.ndarray:
        """Optimal lone-arm-versus-zero-arm value over this agent's states."""
        key = (agent_id, transform.pegged_report, theta)
        out = self._stops.get(key)
        if out is not None:
            return out
        scale = self._homogeneous_scale(agent_id, transform, theta)
        if scale is not None:
            base_key = id(self.env.agents[agent_id])
            base = self._base_stops.get(base_key)
            if base is None:
                base = optimal_stop_value(self._base_arm(agent_id), tol=self.dp_tol)
                self._base_stops[base_key] = base
            out = scale * base
        else:
            rewards = xi_table(transform, self.env, agent_id, theta)
            arm = compile_reward_arm(self.env.agents[agent_id], rewards, self.env.delta)
            out = optimal_stop_value(arm, tol=self.dp_tol)
        self._stops[key] = out
        return out

    # -- externality values ------------------------------------------------

    def w_minus(
        self,
        others: list[tuple[int, VirtualTransform, float]],
        states: list[int],
    ) -> tuple[float, str]:
        """Optimal transformed surplus of the given arms from their flat
        states.  Exact DP when the joint space fits, else rollout."""
        if not others:
            return 0.0, "exact_dp"
        if len(others) == 1:
            agent_id, tr, theta = others[0]
            return float(self.stop_flat(agent_id, tr, theta)[states[0]]), "exact_dp"
        sizes = [self._n_e[a] * self._n_rho[a] for a, _, _ in others]
        total = int(np.prod(sizes))
        if total <= self.state_cap:
            key = tuple((a, tr.pegged_report, th) for a, tr, th in others)
            cached = self._joint_w.get(key)
            if cached is None:
                arms = [
                    compile_reward_arm(
                        self.env.agents[a],
                        xi_table(tr, self.env, a, th),
                        self.env.delta,
                    )
                    for a, tr, th in others
                ]
                v = joint_optimal_value(arms, self.env.delta, tol=self.dp_tol)
                cached = (v, sizes)
                self._joint_w[key] = cached
            v, sizes = cached
            flat = 0
            for s, size in zip(states, sizes):
                flat = flat * size + s
            return float(v[flat]), "exact_dp"
        return self._w_minus_rollout(others, states), "rollout"

    def _w_minus_rollout(self, others, states) -> float:
        env = self.env
        horizon = tail_horizon(env.delta, len(others), env.v_max)
        tables = [self.index_flat(a, tr, th) for a, tr, th in others]
        rewards = []
        for a, tr, th in others:
            rewards.append(xi_table(tr, env, a, th).reshape(-1))
        total = 0.0
        n = self.welfare_rollouts
        for path in range(n):
            gen = substream(0, "wminus", path)
            st = list(states)
            disc, acc = 1.0, 0.0
            for _ in range(horizon):
                w = allocate([tables[j][st[j]] for j in range(len(others))])
                if w > 0:
                    j = w - 1
                    agent_id = others[j][0]
                    acc += disc * rewards[j][st[j]]
                    e, rho = divmod(st[j], self._n_rho[agent_id])
                    u1 = float(gen.random())
                    rho2 = int(np.searchsorted(self._cum_g[agent_id][rho], u1, side="right"))
                    rho2 = min(rho2, self._n_rho[agent_id] - 1)
                    u2 = float(gen.random())
                    e2 = int(np.searchsorted(self._cum_h[agent_id][rho][e], u2, side="right"))
                    e2 = min(e2, self._n_e[agent_id] - 1)
                    st[j] = e2 * self._n_rho[agent_id] + rho2
                disc *= env.delta
            total += acc
        return total / n


# ---------------------------------------------------------------------------
# Payments
# ---------------------------------------------------------------------------


def per_round_price(
    env: Environment,
    transforms: dict[int, VirtualTransform],
    theta_hats,
    e_hats,
    rhos,
    winner: int,
    runtime: MechanismRuntime | None = None,
) -> float:
    """Price the winner pays this round:
    [(1 - delta) * W_without_winner(reported joint state) - beta] / alpha.
    """
    runtime = runtime or MechanismRuntime(env)
    tr = transforms.get(winner)
    if tr is None or tr.alpha <= 0.0:
        raise RuntimeError("internal invariant violated: dormant agent won a round")
    others = [
        (j, transforms[j], float(theta_hats[j]))
        for j in sorted(transforms)
        if j != winner
    ]
    states = [int(e_hats[j]) * env.agents[j].public.n + int(rhos[j]) for j, _, _ in others]
    w, _ = runtime.w_minus(others, states)
    beta = float(tr.beta[int(rhos[winner])])
    return ((1.0 - env.delta) * w - beta) / tr.alpha


# ---------------------------------------------------------------------------
# Episode engine
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RoundRecord:
    t: int
    theta_hat: tuple[float, ...]
    e_hat: tuple[int, ...]
    true_e: tuple[int, ...]
    rho: tuple[int, ...]
    winner: int  # 0 = no allocation, i in 1..k = agent i-1
    payment: float  # winner's payment (others pay 0 at t >= 1)


@dataclass
class Transcript:
    """Full record of one episode; revenue and utilities are recomputable
    from the rows alone."""

    seed: int
    delta: float
    horizon: int
    theta: tuple[float, ...]
    theta_hat0: tuple[float, ...]
    dormant: tuple[bool, ...]
    entry_fees: tuple[float, ...]
    entry_fee_se: tuple[float, ...]
    fee_mode: str
    w_mode: str
    tail_bound: float
    rounds: list[RoundRecord] = field(default_factory=list)
    revenue: float = 0.0
    utilities: tuple[float, ...] = ()
    values: tuple[float, ...] = ()

    def recompute_revenue(self) -> float:
        total = sum(self.entry_fees)
        for r in self.rounds:
            if r.winner > 0:
                total += self.delta ** (r.t - 1) * r.payment
        return total

    def recompute_utilities(self, env: Environment) -> tuple[float, ...]:
        out = []
        for i in range(len(self.theta)):
            u = -self.entry_fees[i]
            for r in self.rounds:
                if r.winner == i + 1:
                    v = value(env, i, ArmState(self.theta[i], r.true_e[i], r.rho[i]))
                    u += self.delta ** (r.t - 1) * (v - r.payment)
            out.append(u)
        return tuple(out)


@dataclass(frozen=True)
class Estimate:
    mean: float
    std_error: float
    quad_error: float = 0.0


class _EpisodeResult:
    __slots__ = ("values", "prices", "winners", "deriv", "rounds", "alloc_times", "virtual")

    def __init__(self, k: int):
        self.values = [0.0] * k
        self.prices = [0.0] * k
        self.winners: list[int] = []
        self.deriv = 0.0
        self.rounds: list[RoundRecord] = []
        self.alloc_times: list[int] = []
        self.virtual = 0.0


def _active_transforms(env, runtime, theta_hat0):
    transforms: dict[int, VirtualTransform] = {}
    for i in range(env.k):
        t = runtime.transform(i, float(theta_hat0[i]))
        if t is not None:
            transforms[i] = t
    return transforms


def _run_rounds(
    env: Environment,
    runtime: MechanismRuntime,
    transforms: dict[int, VirtualTransform],
    theta: list[float],
    strategies,
    streams: ExperienceStreams,
    horizon: int,
    *,
    monitored: bool = False,
    track_prices: bool = True,
    deriv_agent: int | None = None,
    record_rounds: bool = False,
    track_alloc_agent: int | None = None,
    track_virtual: bool = False,
) -> tuple[_EpisodeResult, str]:
    """Core t >= 1 loop.  Returns per-agent discounted values/prices and
    whichever extras were requested."""
    k = env.k
    res = _EpisodeResult(k)
    w_mode_seen = "exact_dp"
    n_rho = runtime._n_rho
    true_e = [0] * k
    rho = [0] * k
    active = sorted(transforms)
    cur_theta_hat: list[float | None] = [None] * k
    cur_table: list[np.ndarray | None] = [None] * k
    value_cache: list[np.ndarray | None] = [None] * k
    deriv_cache: np.ndarray | None = None
    virtual_cache: list[np.ndarray | None] = [None] * k
    # truthful reports are the hot path: skip Report construction for them
    truthful_mask = [isinstance(strategies[i], Truthful) for i in range(k)]
    theta_bars = [env.agents[i].distribution.theta_bar for i in range(k)]
    disc = 1.0
    for t in range(1, horizon + 1):
        theta_hats = list(theta)
        e_hats = list(true_e)
        for i in range(k):
            if not truthful_mask[i]:
                rep = strategies[i].report(t, theta[i], true_e[i], theta_bars[i])
                theta_hats[i] = rep.theta_hat
                e_hats[i] = int(rep.e_hat)
        e_used = true_e if monitored else e_hats
        vals = []
        for i in active:
            th = theta_hats[i]
            if th != cur_theta_hat[i]:
                cur_theta_hat[i] = th
                cur_table[i] = runtime.index_flat(i, transforms[i], th)
            vals.append(cur_table[i][e_used[i] * n_rho[i] + rho[i]])
        w_local = allocate(vals)
        winner = active[w_local - 1] + 1 if w_local > 0 else 0
        payment = 0.0
        if winner > 0:
            wi = winner - 1
            if track_prices:
                others = [(j, transforms[j], theta_hats[j]) for j in active if j != wi]
                states = [e_used[j] * n_rho[j] + rho[j] for j, _, _ in others]
                w_val, mode = runtime.w_minus(others, states)
                if mode == "rollout":
                    w_mode_seen = "rollout"
                tr = transforms[wi]
                payment = ((1.0 - env.delta) * w_val - float(tr.beta[rho[wi]])) / tr.alpha
                res.prices[wi] += disc * payment
            if value_cache[wi] is None:
                value_cache[wi] = _value_flat(env, wi, theta[wi])
            res.values[wi] += disc * value_cache[wi][true_e[wi] * n_rho[wi] + rho[wi]]
            if deriv_agent == wi:
                if deriv_cache is None:
                    deriv_cache = _deriv_flat(env, wi, theta[wi])
                res.deriv += disc * deriv_cache[true_e[wi] * n_rho[wi] + rho[wi]]
            if track_virtual:
                if virtual_cache[wi] is None:
                    ih = inverse_hazard(env.agents[wi].distribution, theta[wi])
                    virtual_cache[wi] = _value_flat(env, wi, theta[wi]) - ih * _deriv_flat(
                        env, wi, theta[wi]
                    )
                res.virtual += disc * virtual_cache[wi][true_e[wi] * n_rho[wi] + rho[wi]]
            if track_alloc_agent == wi:
                res.alloc_times.append(t)
        if record_rounds:
            res.rounds.append(
                RoundRecord(
                    t=t,
                    theta_hat=tuple(theta_hats),
                    e_hat=tuple(e_hats),
                    true_e=tuple(true_e),
                    rho=tuple(rho),
                    winner=winner,
                    payment=payment,
                )
            )
        if winner > 0:
            wi = winner - 1
            u_pub, u_priv = streams.draw_pair(wi)
            rho_pre = rho[wi]
            r2 = int(np.searchsorted(runtime._cum_g[wi][rho_pre], u_pub, side="right"))
            rho[wi] = min(r2, n_rho[wi] - 1)
            e2 = int(
                np.searchsorted(runtime._cum_h[wi][rho_pre][true_e[wi]], u_priv, side="right")
            )
            true_e[wi] = min(e2, runtime._n_e[wi] - 1)
        res.winners.append(winner)
        disc *= env.delta
    return res, w_mode_seen


def _value_flat(env: Environment, agent_id: int, theta: float) -> np.ndarray:
    agent = env.agents[agent_id]
    val = agent.value
    if isinstance(val, MultiplicativeValue):
        return (val.a(theta) * val.b - val.c[None, :]).reshape(-1)
    a_row = np.array([val.a(theta, r) for r in range(agent.public.n)])
    return (a_row[None, :] + val.b).reshape(-1)


def _deriv_flat(env: Environment, agent_id: int, theta: float) -> np.ndarray:
    agent = env.agents[agent_id]
    val = agent.value
    if isinstance(val, MultiplicativeValue):
        return (val.da(theta) * val.b).reshape(-1)
    da_row = np.array([val.da(theta, r) for r in range(agent.public.n)])
    return np.broadcast_to(da_row[None, :], val.b.shape).reshape(-1).copy()


# ---------------------------------------------------------------------------
# Entry fees
# ---------------------------------------------------------------------------


def _gauss_legendre(lo: float, hi: float, m: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(m)
    mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
    return mid + half * x, half * w


@dataclass(frozen=True)
class FeeQuadData:
    """Per-path quadrature pass shared by the fee and envelope machinery.

    values[j] / payments[j]: agent i's discounted value and payments on
    coupled path j under truthful play at the given reports.
    deriv[j, m]: discounted allocated theta-sensitivity at node m, with
    agent i's pegged report and type both set to the node; identical
    experience streams across nodes and the value run (the j-th
    allocation consumes the j-th draw everywhere).
    """

    nodes: np.ndarray
    weights: np.ndarray
    nodes2: np.ndarray
    weights2: np.ndarray
    lower: float
    values: np.ndarray
    payments: np.ndarray
    deriv: np.ndarray
    deriv2: np.ndarray

    def price_paths(self) -> np.ndarray:
        return self.values - self.deriv @ self.weights

    def integral_paths(self) -> np.ndarray:
        return self.deriv @ self.weights

    def quad_error(self) -> float:
        if len(self.nodes) == 0 or len(self.nodes2) == 0:
            return 0.0
        a = float(np.mean(self.deriv @ self.weights))
        b = float(np.mean(self.deriv2 @ self.weights2))
        return abs(a - b)


def fee_quadrature(
    env: Environment,
    theta_hat,
    i: int,
    nodes: int = 16,
    paths: int = 2000,
    seed: int = 0,
    horizon: int | None = None,
    runtime: MechanismRuntime | None = None,
    stream_purpose: str = "fee",
    path_offset: int = 0,
    error_nodes: bool = True,
) -> FeeQuadData:
    """One coupled Monte Carlo pass behind the period-0 charge.

    The allocated-derivative integrand is identically zero below the
    dormancy threshold (a dormant agent is never allocated), so the
    Gauss-Legendre panel covers [threshold, report] only; on that panel
    the integrand has no structural zero region.  ``error_nodes``
    additionally evaluates a doubled node set for the quadrature-error
    report.
    """
    runtime = runtime or MechanismRuntime(env)
    if horizon is None:
        horizon = tail_horizon(env.delta, env.k, env.v_max)
    theta_hat = [float(x) for x in theta_hat]
    lo = dormancy_threshold(env, i)
    hi = theta_hat[i]
    if hi > lo:
        z_m, w_m = _gauss_legendre(lo, hi, nodes)
        if error_nodes:
            z_2m, w_2m = _gauss_legendre(lo, hi, 2 * nodes)
        else:
            z_2m = w_2m = np.zeros(0)
    else:
        z_m = w_m = z_2m = w_2m = np.zeros(0)
    truthful = [Truthful()] * env.k
    values = np.zeros(paths)
    payments = np.zeros(paths)
    deriv = np.zeros((paths, len(z_m)))
    deriv2 = np.zeros((paths, len(z_2m)))
    base_transforms = _active_transforms(env, runtime, theta_hat)
    i_active = i in base_transforms
    for j in range(paths):
        if i_active:
            streams = ExperienceStreams(seed, path_offset + j, stream_purpose)
            res, _ = _run_rounds(
                env,
                runtime,
                base_transforms,
                theta_hat,
                truthful,
                streams,
                horizon,
                track_prices=True,
            )
            values[j] = res.values[i]
            payments[j] = res.prices[i]
        for which, zs in ((0, z_m), (1, z_2m)):
            for m, z in enumerate(zs):
                th = list(theta_hat)
                th[i] = float(z)
                transforms = _active_transforms(env, runtime, th)
                if i not in transforms:
                    continue
                streams = ExperienceStreams(seed, path_offset + j, stream_purpose)
                res, _ = _run_rounds(
                    env,
                    runtime,
                    transforms,
                    th,
                    truthful,
                    streams,
                    horizon,
                    track_prices=False,
                    deriv_agent=i,
                )
                if which == 0:
                    deriv[j, m] = res.deriv
                else:
                    deriv2[j, m] = res.deriv
    return FeeQuadData(
        nodes=z_m,
        weights=w_m,
        nodes2=z_2m,
        weights2=w_2m,
        lower=lo,
        values=values,
        payments=payments,
        deriv=deriv,
        deriv2=deriv2,
    )


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    if len(x) <= 1:
        return (float(x[0]) if len(x) else 0.0), 0.0
    return float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(len(x)))


def entry_price_P(
    env: Environment,
    theta_hat,
    i: int,
    nodes: int = 16,
    rollouts: int = 2000,
    seed: int = 0,
    horizon: int | None = None,
    runtime: MechanismRuntime | None = None,
) -> Estimate:
    """Target payment of agent i given the period-0 reports: value minus
    the information rent integral, by coupled quadrature rollouts."""
    data = fee_quadrature(env, theta_hat, i, nodes, rollouts, seed, horizon, runtime)
    mean, se = _mean_se(data.price_paths())
    return Estimate(mean=mean, std_error=se, quad_error=data.quad_error())


def entry_fee_p0(
    env: Environment,
    theta_hat,
    i: int,
    nodes: int = 16,
    rollouts: int = 2000,
    seed: int = 0,
    horizon: int | None = None,
    runtime: MechanismRuntime | None = None,
) -> Estimate:
    """Period-0 charge: the target payment minus the expected discounted
    future per-round payments under truthful continuation, estimated on
    the same coupled streams."""
    data = fee_quadrature(env, theta_hat, i, nodes, rollouts, seed, horizon, runtime)
    mean, se = _mean_se(data.price_paths() - data.payments)
    return Estimate(mean=mean, std_error=se, quad_error=data.quad_error())


# ---------------------------------------------------------------------------
# Episodes
# ---------------------------------------------------------------------------


def run_episode(
    env: Environment,
    strategies,
    seed: int,
    horizon: int | None = None,
    *,
    theta=None,
    runtime: MechanismRuntime | None = None,
    fee_mode: str = "full",
    entry_fees=None,
    fee_nodes: int = 16,
    fee_rollouts: int = 2000,
    monitored: bool = False,
    tail_eps: float = 1e-4,
) -> Transcript:
    """Execute one full episode of the mechanism.

    fee_mode: "full" estimates period-0 charges with the fee machinery,
    "skip" records zero fees (for audits that difference them out);
    explicit ``entry_fees`` override both.  ``monitored`` replaces the
    reported private experience with the true one inside allocation and
    pricing (the complete-monitoring counterfactual).
    """
    runtime = runtime or MechanismRuntime(env)
    if horizon is None:
        horizon = tail_horizon(env.delta, env.k, env.v_max, tail_eps)
    if theta is None:
        theta = [
            env.agents[i].distribution.sample(substream(seed, "types", i))
            for i in range(env.k)
        ]
    theta = [float(t) for t in theta]
    theta_hat0 = [
        strategies[i].report(0, theta[i], 0, env.agents[i].distribution.theta_bar).theta_hat
        for i in range(env.k)
    ]
    transforms = _active_transforms(env, runtime, theta_hat0)
    dormant = tuple(i not in transforms for i in range(env.k))
    if entry_fees is not None:
        fees = tuple(float(f) for f in entry_fees)
        fee_se = tuple(0.0 for _ in fees)
        fee_tag = "provided"
    elif fee_mode == "skip":
        fees = tuple(0.0 for _ in range(env.k))
        fee_se = fees
        fee_tag = "skipped"
    else:
        ests = [
            entry_fee_p0(env, theta_hat0, i, fee_nodes, fee_rollouts, seed, horizon, runtime)
            if not dormant[i]
            else Estimate(0.0, 0.0)
            for i in range(env.k)
        ]
        fees = tuple(e.mean for e in ests)
        fee_se = tuple(e.std_error for e in ests)
        fee_tag = "estimated"
    streams = ExperienceStreams(seed, 0, "episode")
    res, w_mode = _run_rounds(
        env,
        runtime,
        transforms,
        theta,
        strategies,
        streams,
        horizon,
        monitored=monitored,
        record_rounds=True,
    )
    transcript = Transcript(
        seed=seed,
        delta=env.delta,
        horizon=horizon,
        theta=tuple(theta),
        theta_hat0=tuple(theta_hat0),
        dormant=dormant,
        entry_fees=fees,
        entry_fee_se=fee_se,
        fee_mode=fee_tag,
        w_mode=w_mode,
        tail_bound=env.delta**horizon * env.k * env.v_max / (1.0 - env.delta),
        rounds=res.rounds,
    )
    transcript.revenue = transcript.recompute_revenue()
    transcript.utilities = transcript.recompute_utilities(env)
    transcript.values = tuple(res.values)
    return transcript


# ---------------------------------------------------------------------------
# Marginal contribution diagnostic
# ---------------------------------------------------------------------------


def marginal_contribution(
    env: Environment,
    transcript: Transcript,
    t: int,
    i: int,
    runtime: MechanismRuntime | None = None,
    state_cap: int = 10_000,
) -> float:
    """Round-t marginal contribution of agent i to the optimal
    transformed surplus: [W - W_without_i](state_t) minus the discounted
    expectation of the same gap after the winner's transition.

    Equals alpha_i * (v_i - price) on rounds agent i wins and 0
    otherwise; exact-DP-sized instances only.
    """
    runtime = runtime or MechanismRuntime(env)
    if not 1 <= t <= len(transcript.rounds):
        raise DomainError(f"round {t} outside transcript")
    round_rec = transcript.rounds[t - 1]
    transforms = _active_transforms(env, runtime, transcript.theta_hat0)
    if i not in transforms:
        return 0.0
    active = sorted(transforms)
    arms = []
    for j in active:
        rewards = xi_table(transforms[j], env, j, float(round_rec.theta_hat[j]))
        arms.append(compile_reward_arm(env.agents[j], rewards, env.delta))
    sizes = [a.n for a in arms]
    if int(np.prod(sizes)) > state_cap:
        raise DomainError("marginal contribution refused: joint space exceeds exact-DP cap")
    w_all = joint_optimal_value(arms, env.delta, tol=runtime.dp_tol)
    pos_i = active.index(i)
    arms_minus = [a for j, a in enumerate(arms) if j != pos_i]
    sizes_minus = [s for j, s in enumerate(sizes) if j != pos_i]
    w_minus = joint_optimal_value(arms_minus, env.delta, tol=runtime.dp_tol)

    comp = [
        arms[j].state_index(int(round_rec.e_hat[a]), int(round_rec.rho[a]))
        for j, a in enumerate(active)
    ]

    def gap(c: list[int]) -> float:
        f_all = 0
        for s, size in zip(c, sizes):
            f_all = f_all * size + s
        c_minus = [s for j, s in enumerate(c) if j != pos_i]
        f_minus = 0
        for s, size in zip(c_minus, sizes_minus):
            f_minus = f_minus * size + s
        base = float(w_minus[f_minus]) if sizes_minus else 0.0
        return float(w_all[f_all]) - base

    here = gap(comp)
    winner = round_rec.winner
    if winner == 0:
        expected = here
    else:
        wi = winner - 1
        if wi not in active:
            raise DomainError("transcript winner not in active set")
        pos_w = active.index(wi)
        row = arms[pos_w].transition.getrow(comp[pos_w])
        expected = 0.0
        for s2, pr in zip(row.indices, row.data):
            nxt = list(comp)
            nxt[pos_w] = int(s2)
            expected += float(pr) * gap(nxt)
    return here - env.delta * expected
