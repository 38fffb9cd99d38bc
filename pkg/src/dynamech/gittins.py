"""Gittins indices of transformed arms, the index allocation rule, and
weighted social welfare.

The index of a state is the supremum over stopping times of expected
discounted reward per expected discounted unit of time.  It is computed
through the retirement characterization: lambda* is the unique lambda at
which the option value of continuing, V_lambda(s) = max{lambda/(1-delta),
xi(s) + delta E[V_lambda(s')]}, equals the retirement value
lambda/(1-delta).  Bisection over lambda with value iteration inside
gives a clean tolerance contract for every finite arm; an exhaustive
stopping-set oracle and the exact largest-remaining-index method are
kept alongside as independent cross-checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .environments import AgentModel, ArmState, DomainError, Environment
from .rng import substream
from .virtual import VirtualTransform, transform_or_dormant, xi_table

__all__ = [
    "CompiledArm",
    "compile_arm",
    "compile_reward_arm",
    "gittins_index",
    "index_of_states",
    "BruteForceIndex",
    "brute_force_index",
    "vwb_indices",
    "IndexTable",
    "build_index_table",
    "allocate",
    "WelfareEstimate",
    "weighted_welfare",
    "optimal_stop_value",
    "tail_horizon",
]


def tail_horizon(delta: float, k: int, v_max: float, eps: float = 1e-4) -> int:
    """Smallest T with delta^T * k * v_max / (1 - delta) < eps."""
    scale = max(k, 1) * max(v_max, 1e-300) / (1.0 - delta)
    if scale <= eps:
        return 1
    return max(1, int(math.ceil(math.log(eps / scale) / math.log(delta))))


# ---------------------------------------------------------------------------
# Single-arm compilation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CompiledArm:
    """One agent's arm for a fixed theta: flat rewards and transition.

    States are flattened as s = e * n_rho + rho.
    """

    rewards: np.ndarray  # (n,)
    transition: sp.csr_matrix  # (n, n)
    delta: float
    n_e: int
    n_rho: int

    @property
    def n(self) -> int:
        return self.rewards.shape[0]

    def state_index(self, e: int, rho: int) -> int:
        return e * self.n_rho + rho


def _joint_transition(agent: AgentModel) -> sp.csr_matrix:
    n_e, n_rho = agent.private.n, agent.public.n
    g, h = agent.public.matrix, agent.private.matrix
    rows, cols, vals = [], [], []
    for e in range(n_e):
        for rho in range(n_rho):
            s = e * n_rho + rho
            h_row = h[rho, e]
            g_row = g[rho]
            for e2 in np.nonzero(h_row)[0]:
                pe = h_row[e2]
                for r2 in np.nonzero(g_row)[0]:
                    rows.append(s)
                    cols.append(int(e2) * n_rho + int(r2))
                    vals.append(pe * g_row[r2])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_e * n_rho, n_e * n_rho))


def compile_reward_arm(agent: AgentModel, rewards: np.ndarray, delta: float) -> CompiledArm:
    """Arm with an explicit per-(e, rho) reward table."""
    rewards = np.asarray(rewards, dtype=float)
    if rewards.shape != (agent.private.n, agent.public.n):
        raise DomainError("reward table shape does not match state spaces")
    if not np.all(np.isfinite(rewards)):
        raise DomainError("non-finite reward on some state")
    return CompiledArm(
        rewards=rewards.reshape(-1).copy(),
        transition=_joint_transition(agent),
        delta=delta,
        n_e=agent.private.n,
        n_rho=agent.public.n,
    )


def compile_arm(
    env: Environment, agent_id: int, transform: VirtualTransform, theta: float
) -> CompiledArm:
    rewards = xi_table(transform, env, agent_id, theta)
    return compile_reward_arm(env.agents[agent_id], rewards, env.delta)


def _reachable(transition: sp.csr_matrix, start: int) -> np.ndarray:
    indptr, indices = transition.indptr, transition.indices
    seen = np.zeros(transition.shape[0], dtype=bool)
    seen[start] = True
    stack = [start]
    while stack:
        s = stack.pop()
        for s2 in indices[indptr[s] : indptr[s + 1]]:
            if not seen[s2]:
                seen[s2] = True
                stack.append(int(s2))
    return np.nonzero(seen)[0]


class _RetirementSolver:
    """Shared value-iteration backend for the retirement bisection.

    V_lambda does not depend on the query state, so all states being
    bisected at the same lambda share a single solve; solves are
    memoized and warm-started from the nearest cached lambda.
    """

    def __init__(self, arm: CompiledArm, accuracy: float):
        self.arm = arm
        self.accuracy = accuracy
        self._cache: dict[float, np.ndarray] = {}

    def value(self, lam: float) -> np.ndarray:
        cached = self._cache.get(lam)
        if cached is not None:
            return cached
        arm = self.arm
        retire = lam / (1.0 - arm.delta)
        if self._cache:
            nearest = min(self._cache, key=lambda x: abs(x - lam))
            v = self._cache[nearest].copy()
        else:
            v = np.full(arm.n, retire)
        stop = self.accuracy * (1.0 - arm.delta) / max(arm.delta, 1e-12)
        for _ in range(200_000):
            w = arm.rewards + arm.delta * (arm.transition @ v)
            np.maximum(w, retire, out=w)
            resid = float(np.max(np.abs(w - v)))
            v = w
            if resid <= stop:
                break
        if len(self._cache) > 512:
            self._cache.clear()
        self._cache[lam] = v
        return v


def index_of_states(arm: CompiledArm, states: np.ndarray, tol: float) -> np.ndarray:
    """Gittins indices of the given flat states, each within tol.

    Brackets start at the reward range of each state's reachable set, so
    a state whose reachable rewards are constant resolves exactly.
    """
    if tol <= 0:
        raise DomainError("tolerance must be positive")
    states = np.asarray(states, dtype=int)
    lo = np.empty(len(states))
    hi = np.empty(len(states))
    for j, s in enumerate(states):
        reach = _reachable(arm.transition, int(s))
        rew = arm.rewards[reach]
        lo[j], hi[j] = float(np.min(rew)), float(np.max(rew))
    accuracy = tol / 10.0
    solver = _RetirementSolver(arm, accuracy)
    margin = 2.0 * accuracy
    active = (hi - lo) > tol
    while np.any(active):
        mids = 0.5 * (lo + hi)
        groups: dict[float, list[int]] = {}
        for j in np.nonzero(active)[0]:
            groups.setdefault(float(mids[j]), []).append(int(j))
        for lam, members in groups.items():
            v = solver.value(lam)
            retire = lam / (1.0 - arm.delta)
            for j in members:
                if v[states[j]] > retire + margin:
                    lo[j] = lam
                else:
                    hi[j] = lam
        active = (hi - lo) > tol
    out = 0.5 * (lo + hi)
    exact = hi == lo
    out[exact] = lo[exact]
    return out


def gittins_index(
    env: Environment,
    agent_id: int,
    transform: VirtualTransform,
    theta: float,
    e: int,
    rho: int,
    tol: float = 1e-9,
) -> float:
    """Index of one arm state under the pegged transform."""
    arm = compile_arm(env, agent_id, transform, theta)
    return float(index_of_states(arm, np.array([arm.state_index(e, rho)]), tol)[0])


# ---------------------------------------------------------------------------
# Exhaustive stopping-set oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BruteForceIndex:
    value: float
    tail_bound: float


def brute_force_index(
    env: Environment,
    agent_id: int,
    transform: VirtualTransform,
    state: ArmState,
    horizon: int,
    cap: int = 1024,
) -> BruteForceIndex:
    """Truncated-horizon index by enumerating every stationary stopping
    set over the reachable states (the optimal stopping region for the
    ratio problem is stationary, so this is exhaustive for the truncated
    problem up to the reported geometric tail).

    Refuses when |reachable states| * horizon exceeds ``cap`` or the
    subset enumeration would explode.
    """
    arm = compile_arm(env, agent_id, transform, state.theta)
    s0 = arm.state_index(state.e, state.rho)
    reach = _reachable(arm.transition, s0)
    n_r = len(reach)
    if n_r * horizon > cap:
        raise DomainError(f"brute force refused: {n_r} states * {horizon} steps > cap {cap}")
    if n_r > 16:
        raise DomainError(f"brute force refused: {n_r} states exceeds subset limit 16")
    pos = {int(s): j for j, s in enumerate(reach)}
    p = arm.transition[reach][:, reach].toarray()
    xi = arm.rewards[reach]
    delta = arm.delta
    j0 = pos[s0]

    n_sub = 1 << n_r
    masks = ((np.arange(n_sub)[:, None] >> np.arange(n_r)[None, :]) & 1).astype(float)
    cont_n = np.zeros((n_sub, n_r))
    cont_d = np.zeros((n_sub, n_r))
    for _ in range(horizon - 1):
        cont_n = masks * (xi[None, :] + delta * (cont_n @ p.T))
        cont_d = masks * (1.0 + delta * (cont_d @ p.T))
    num = xi[j0] + delta * (cont_n @ p[j0])
    den = 1.0 + delta * (cont_d @ p[j0])
    best = float(np.max(num / den))
    tail = delta**horizon * float(np.max(np.abs(xi))) / (1.0 - delta)
    return BruteForceIndex(value=best, tail_bound=tail)


# ---------------------------------------------------------------------------
# Exact largest-remaining-index method (small chains)
# ---------------------------------------------------------------------------


def vwb_indices(rewards: np.ndarray, transition: np.ndarray, delta: float) -> np.ndarray:
    """Exact Gittins indices of every state of a finite chain via the
    largest-remaining-index recursion (continuation set grown from the
    top).  Intended for chains of at most ~64 states.
    """
    xi = np.asarray(rewards, dtype=float)
    p = np.asarray(transition, dtype=float)
    n = xi.shape[0]
    if n > 64:
        raise DomainError("largest-index method limited to 64 states")
    indices = np.full(n, np.nan)
    ranked: list[int] = []
    remaining = set(range(n))
    top = int(np.argmax(xi))
    indices[top] = xi[top]
    ranked.append(top)
    remaining.discard(top)
    while remaining:
        s_list = sorted(remaining)
        k = len(ranked)
        p_ss = p[np.ix_(ranked, ranked)]
        w = np.linalg.inv(np.eye(k) - delta * p_ss)
        w_xi = w @ xi[ranked]
        w_one = w @ np.ones(k)
        w_p = w @ p[np.ix_(ranked, s_list)]  # (k, m) columns per candidate
        best_ratio, best_s = -np.inf, s_list[0]
        for col, s in enumerate(s_list):
            p_s_ranked = p[s, ranked]
            denom = 1.0 - delta * p[s, s] - delta**2 * float(p_s_ranked @ w_p[:, col])
            num = (xi[s] + delta * float(p_s_ranked @ w_xi)) / denom
            dur = (1.0 + delta * float(p_s_ranked @ w_one)) / denom
            ratio = num / dur
            if ratio > best_ratio:
                best_ratio, best_s = ratio, s
        indices[best_s] = best_ratio
        ranked.append(best_s)
        remaining.discard(best_s)
    return indices


# ---------------------------------------------------------------------------
# Index tables and allocation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IndexTable:
    """Memoized indices over every (e, rho) cell for one fixed theta.

    Entries are a deterministic function of (agent, transform, theta,
    tol): rebuilding with identical inputs reproduces identical bits.
    """

    agent_id: int
    pegged_report: float
    theta: float
    tol: float
    values: np.ndarray  # (n_e, n_rho)

    def lookup(self, e: int, rho: int) -> float:
        return float(self.values[e, rho])


def build_index_table(
    env: Environment,
    agent_id: int,
    transform: VirtualTransform,
    theta: float,
    tol: float = 1e-9,
) -> IndexTable:
    arm = compile_arm(env, agent_id, transform, theta)
    vals = index_of_states(arm, np.arange(arm.n), tol)
    return IndexTable(
        agent_id=agent_id,
        pegged_report=transform.pegged_report,
        theta=theta,
        tol=tol,
        values=vals.reshape(arm.n_e, arm.n_rho),
    )


def allocate(index_values, zero_arm_index: float = 0.0) -> int:
    """Winner under the index rule: 0 means the zero arm (no
    allocation), i in 1..k means agent i.

    The zero arm wins ties at exactly its own index; ties among agents
    go to the lowest agent id.
    """
    best, best_i = -np.inf, -1
    for i, g in enumerate(index_values):
        if g > best:
            best, best_i = g, i
    if best_i < 0 or best <= zero_arm_index:
        return 0
    return best_i + 1


# ---------------------------------------------------------------------------
# Weighted social welfare
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WelfareEstimate:
    mean: float
    std_error: float
    method: str


def optimal_stop_value(arm: CompiledArm, tol: float = 1e-10) -> np.ndarray:
    """V(s) = max(0, xi(s) + delta E[V(s')]): play-or-retire value of a
    lone arm against the zero arm.  Exact to ``tol`` in sup norm."""
    v = np.zeros(arm.n)
    stop = tol * (1.0 - arm.delta) / max(arm.delta, 1e-12)
    for _ in range(200_000):
        w = arm.rewards + arm.delta * (arm.transition @ v)
        np.maximum(w, 0.0, out=w)
        resid = float(np.max(np.abs(w - v)))
        v = w
        if resid <= stop:
            return v
    raise RuntimeError("value iteration did not converge")


class _JointIndexPolicy:
    """Index policy over the product state space of the included arms."""

    def __init__(self, arms: list[CompiledArm], tables: list[np.ndarray]):
        self.arms = arms
        self.flat_tables = [t.reshape(-1) for t in tables]
        self.sizes = [a.n for a in arms]

    def winner(self, states: tuple[int, ...]) -> int:
        """0 = zero arm, j>=1 = included arm j-1."""
        vals = [self.flat_tables[j][states[j]] for j in range(len(self.arms))]
        return allocate(vals)


def _joint_states(sizes: list[int]):
    total = int(np.prod(sizes)) if sizes else 1
    for flat in range(total):
        rem, comp = flat, []
        for size in reversed(sizes):
            comp.append(rem % size)
            rem //= size
        yield flat, tuple(reversed(comp))


def _joint_flat(states, sizes) -> int:
    flat = 0
    for s, size in zip(states, sizes):
        flat = flat * size + s
    return flat


def joint_policy_matrix(
    arms: list[CompiledArm], winners: np.ndarray
) -> tuple[sp.csr_matrix, np.ndarray]:
    """Transition matrix and per-state reward of a fixed joint policy.

    ``winners[flat]`` is 0 for the zero arm or j for included arm j-1.
    """
    sizes = [a.n for a in arms]
    total = int(np.prod(sizes)) if sizes else 1
    rows, cols, vals = [], [], []
    rewards = np.zeros(total)
    for flat, comp in _joint_states(sizes):
        w = int(winners[flat])
        if w == 0:
            rows.append(flat)
            cols.append(flat)
            vals.append(1.0)
            continue
        arm = arms[w - 1]
        rewards[flat] = arm.rewards[comp[w - 1]]
        row = arm.transition.getrow(comp[w - 1])
        for s2, pr in zip(row.indices, row.data):
            nxt = list(comp)
            nxt[w - 1] = int(s2)
            rows.append(flat)
            cols.append(_joint_flat(nxt, sizes))
            vals.append(float(pr))
    t = sp.csr_matrix((vals, (rows, cols)), shape=(total, total))
    return t, rewards


def joint_policy_value(arms: list[CompiledArm], winners: np.ndarray, delta: float) -> np.ndarray:
    """Exact discounted value of a fixed joint policy (sparse solve)."""
    t, rewards = joint_policy_matrix(arms, winners)
    total = t.shape[0]
    system = sp.identity(total, format="csr") - delta * t
    return spla.spsolve(system.tocsc(), rewards)


def joint_optimal_value(arms: list[CompiledArm], delta: float, tol: float = 1e-10) -> np.ndarray:
    """Unconstrained optimum of the joint allocation MDP by value
    iteration (actions: each included arm or the zero arm)."""
    sizes = [a.n for a in arms]
    shape = tuple(sizes) if sizes else (1,)
    v = np.zeros(shape)
    stop = tol * (1.0 - delta) / max(delta, 1e-12)
    for _ in range(200_000):
        best = delta * v  # zero arm: nothing moves, no reward
        for j, arm in enumerate(arms):
            moved = np.moveaxis(v, j, 0)
            rest = moved.shape[1:]
            cont = (arm.transition @ moved.reshape(arm.n, -1)).reshape((arm.n,) + rest)
            q = arm.rewards.reshape((arm.n,) + (1,) * len(rest)) + delta * cont
            best = np.maximum(best, np.moveaxis(q, 0, j))
        resid = float(np.max(np.abs(best - v)))
        v = best
        if resid <= stop:
            return v.reshape(-1)
    raise RuntimeError("value iteration did not converge")


def weighted_welfare(
    env: Environment,
    reports,
    theta,
    e,
    rho,
    exclude: int | None = None,
    mode: str = "exact_dp",
    *,
    n_paths: int = 2000,
    horizon: int | None = None,
    seed: int = 0,
    index_tol: float = 1e-9,
    dp_tol: float = 1e-10,
    state_cap: int = 10_000,
    tail_eps: float = 1e-4,
) -> WelfareEstimate:
    """Expected discounted transformed reward of the index policy over
    the included arms plus the zero arm, started from the given joint
    state.

    Dormant agents are excluded from the arm set (their rewards are
    non-positive pointwise, so this leaves the optimum unchanged while
    matching the mechanism's hard exclusion).
    """
    included: list[int] = []
    transforms: dict[int, VirtualTransform] = {}
    for i in range(env.k):
        if i == exclude:
            continue
        t = transform_or_dormant(env, i, float(reports[i]))
        if t is not None:
            included.append(i)
            transforms[i] = t
    arms = [compile_arm(env, i, transforms[i], float(theta[i])) for i in included]
    start = tuple(
        arms[j].state_index(int(e[i]), int(rho[i])) for j, i in enumerate(included)
    )
    if mode == "exact_dp":
        total = int(np.prod([a.n for a in arms])) if arms else 1
        if total > state_cap:
            raise DomainError(f"exact_dp refused: {total} joint states > cap {state_cap}")
        if not arms:
            return WelfareEstimate(mean=0.0, std_error=0.0, method="exact_dp")
        tables = [
            build_index_table(env, i, transforms[i], float(theta[i]), tol=index_tol).values
            for i in included
        ]
        policy = _JointIndexPolicy(arms, tables)
        winners = np.zeros(total, dtype=int)
        for flat, comp in _joint_states([a.n for a in arms]):
            winners[flat] = policy.winner(comp)
        v = joint_policy_value(arms, winners, env.delta)
        return WelfareEstimate(
            mean=float(v[_joint_flat(start, [a.n for a in arms])]),
            std_error=0.0,
            method="exact_dp",
        )
    if mode != "rollout":
        raise DomainError(f"unknown welfare mode {mode!r}")
    if horizon is None:
        horizon = tail_horizon(env.delta, max(len(arms), 1), env.v_max, tail_eps)
    if not arms:
        return WelfareEstimate(mean=0.0, std_error=0.0, method="rollout")
    tables = [
        build_index_table(env, i, transforms[i], float(theta[i]), tol=index_tol).values.reshape(-1)
        for i in included
    ]
    cums = [_cumulative_rows(a.transition) for a in arms]
    totals = np.empty(n_paths)
    for path in range(n_paths):
        gen = substream(seed, "welfare", path)
        states = list(start)
        disc, acc = 1.0, 0.0
        for _ in range(horizon):
            w = allocate([tables[j][states[j]] for j in range(len(arms))])
            if w > 0:
                j = w - 1
                acc += disc * arms[j].rewards[states[j]]
                starts, cols, cumvals = cums[j]
                s = states[j]
                seg = slice(starts[s], starts[s + 1])
                u = float(gen.random())
                k = int(np.searchsorted(cumvals[seg], u, side="right"))
                states[j] = int(cols[seg][min(k, starts[s + 1] - starts[s] - 1)])
            disc *= env.delta
        totals[path] = acc
    tail = env.delta**horizon * len(arms) * env.v_max / (1.0 - env.delta)
    se = float(np.std(totals, ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return WelfareEstimate(mean=float(np.mean(totals)), std_error=se + tail, method="rollout")


def _cumulative_rows(transition: sp.csr_matrix):
    """CSR rows as (indptr, indices, per-row cumulative probabilities)."""
    cum = transition.data.copy()
    indptr = transition.indptr
    for s in range(transition.shape[0]):
        seg = slice(indptr[s], indptr[s + 1])
        cum[seg] = np.cumsum(cum[seg])
    return indptr, transition.indices, cum
