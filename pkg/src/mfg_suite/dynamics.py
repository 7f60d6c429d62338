"""Exact forward/backward inductions on the finite game, and the
exploitability metric every solver reports.

All expectations here are computed from the transition rows themselves;
Monte Carlo sampling only ever happens inside the deep solvers (and in test
oracles). Each function is pure, so independent (policy, env) pairs can be
processed in parallel.
"""

from __future__ import annotations

import numpy as np

from .core import (
    EnvironmentModel,
    MeanFieldFlow,
    Policy,
    QTable,
    ShapeMismatch,
    floored_log,
)


def _check_shapes(policy: Policy, env: EnvironmentModel):
    want = (env.horizon.n_t + 1, env.num_states, env.num_actions)
    if policy.probs.shape != want:
        raise ShapeMismatch(f"policy shape {policy.probs.shape}, env wants {want}")


def forward_distribution(policy: Policy, env: EnvironmentModel) -> MeanFieldFlow:
    """Flow induced by a policy: mu_0 = m0, then one push-forward per step."""
    _check_shapes(policy, env)
    n_t = env.horizon.n_t
    flow = np.empty((n_t + 1, env.num_states))
    flow[0] = env.initial_distribution().mass
    for n in range(n_t):
        t = env.transition_profile(n, flow[n])  # (X, A, X')
        flow[n + 1] = np.einsum("x,xa,xay->y", flow[n], policy.probs[n], t)
        # renormalize away accumulated rounding so long horizons stay exact
        flow[n + 1] = np.maximum(flow[n + 1], 0.0)
        flow[n + 1] /= flow[n + 1].sum()
    return MeanFieldFlow(flow)


def evaluate_policy(
    policy: Policy,
    mu: MeanFieldFlow,
    env: EnvironmentModel,
    entropy_coef: float = 0.0,
) -> QTable:
    """Backward induction for Q of a fixed policy under a fixed flow.

    With entropy_coef > 0, continuation values carry an entropic penalty
    -entropy_coef * log pi for each future step (the regularized-game variant;
    the current step's penalty is excluded, as the mirror step supplies it).
    """
    _check_shapes(policy, env)
    n_t = env.horizon.n_t
    if mu.flow.shape != (n_t + 1, env.num_states):
        raise ShapeMismatch(f"flow shape {mu.flow.shape} does not match env")
    q = np.empty((n_t + 1, env.num_states, env.num_actions))
    q[n_t] = env.reward_profile(n_t, mu.flow[n_t])
    for n in range(n_t - 1, -1, -1):
        cont = q[n + 1]
        if entropy_coef:
            cont = cont - entropy_coef * floored_log(policy.probs[n + 1])
        v_next = np.einsum("xa,xa->x", policy.probs[n + 1], cont)
        t = env.transition_profile(n, mu.flow[n])
        q[n] = env.reward_profile(n, mu.flow[n]) + t @ v_next
    return QTable(q, kind="plain")


def optimal_q(mu: MeanFieldFlow, env: EnvironmentModel) -> QTable:
    """Backward induction for the optimal Q against a fixed flow."""
    n_t = env.horizon.n_t
    if mu.flow.shape != (n_t + 1, env.num_states):
        raise ShapeMismatch(f"flow shape {mu.flow.shape} does not match env")
    q = np.empty((n_t + 1, env.num_states, env.num_actions))
    q[n_t] = env.reward_profile(n_t, mu.flow[n_t])
    for n in range(n_t - 1, -1, -1):
        v_next = q[n + 1].max(axis=1)
        t = env.transition_profile(n, mu.flow[n])
        q[n] = env.reward_profile(n, mu.flow[n]) + t @ v_next
    return QTable(q, kind="plain")


def greedy_policy(q: QTable) -> Policy:
    """Deterministic argmax policy; ties break to the smallest action index."""
    n_t1, num_states, num_actions = q.values.shape
    best = q.values.argmax(axis=2)
    probs = np.zeros_like(q.values)
    n_idx, x_idx = np.meshgrid(np.arange(n_t1), np.arange(num_states), indexing="ij")
    probs[n_idx, x_idx, best] = 1.0
    return Policy(probs)


def total_reward(policy: Policy, mu: MeanFieldFlow, env: EnvironmentModel) -> float:
    """Expected total reward J(policy; mu) from the initial distribution."""
    q = evaluate_policy(policy, mu, env)
    m0 = env.initial_distribution().mass
    return float(np.einsum("x,xa,xa->", m0, policy.probs[0], q.values[0]))


def exploitability(policy: Policy, env: EnvironmentModel) -> float:
    """max_pi' J(pi'; mu^pi) - J(pi; mu^pi); zero exactly at a Nash equilibrium."""
    mu = forward_distribution(policy, env)
    q_star = optimal_q(mu, env)
    best = greedy_policy(q_star)
    return total_reward(best, mu, env) - total_reward(policy, mu, env)
