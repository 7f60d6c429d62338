"""Independent brute-force oracles used to pin expected values in the tests.

Everything here is deliberately written with plain Python loops and its own
recursions so it shares no code path with the library's vectorized
implementations. Only usable at toy scale.
"""

from __future__ import annotations

import itertools

import numpy as np

from mfg_suite.core import Distribution


def deterministic_policies(env):
    """Every deterministic policy as an (n_t+1, |X|) action table."""
    n_t1 = env.horizon.n_t + 1
    cells = n_t1 * env.num_states
    for assignment in itertools.product(range(env.num_actions), repeat=cells):
        yield np.asarray(assignment).reshape(n_t1, env.num_states)


def policy_from_table(env, table):
    """Probability tensor of a deterministic action table."""
    n_t1 = env.horizon.n_t + 1
    probs = np.zeros((n_t1, env.num_states, env.num_actions))
    for n in range(n_t1):
        for x in range(env.num_states):
            probs[n, x, table[n, x]] = 1.0
    return probs


def own_flow(env, probs):
    """Flow induced by a policy, plain loops."""
    n_t = env.horizon.n_t
    flow = [np.asarray(env.initial_distribution().mass)]
    for n in range(n_t):
        mu_n = flow[-1]
        nxt = np.zeros(env.num_states)
        for x in range(env.num_states):
            for a in range(env.num_actions):
                w = mu_n[x] * probs[n, x, a]
                if w > 0.0:
                    nxt += w * env.transition(n, x, a, Distribution(mu_n)).mass
        flow.append(nxt)
    return np.asarray(flow)


def value_of(env, probs, flow):
    """J(policy; flow) by forward occupancy accumulation, plain loops."""
    n_t = env.horizon.n_t
    occ = np.asarray(env.initial_distribution().mass, dtype=float)
    total = 0.0
    for n in range(n_t + 1):
        mu_n = Distribution(flow[n])
        nxt = np.zeros(env.num_states)
        for x in range(env.num_states):
            for a in range(env.num_actions):
                w = occ[x] * probs[n, x, a]
                if w == 0.0:
                    continue
                total += w * env.reward(n, x, a, mu_n)
                if n < n_t:
                    nxt += w * env.transition(n, x, a, mu_n).mass
        occ = nxt
    return total


def q_of(env, probs, flow):
    """Q^{policy, flow} by plain backward recursion."""
    n_t = env.horizon.n_t
    q = np.zeros((n_t + 1, env.num_states, env.num_actions))
    for n in range(n_t, -1, -1):
        mu_n = Distribution(flow[n])
        for x in range(env.num_states):
            for a in range(env.num_actions):
                val = env.reward(n, x, a, mu_n)
                if n < n_t:
                    row = env.transition(n, x, a, mu_n).mass
                    for x2 in range(env.num_states):
                        for a2 in range(env.num_actions):
                            val += row[x2] * probs[n + 1, x2, a2] * q[n + 1, x2, a2]
                q[n, x, a] = val
    return q


def best_value_and_q(env, flow):
    """Enumerate all deterministic policies against a fixed flow; returns
    (max J, argmax table, entrywise-max Q over all policies)."""
    best_j, best_table, best_q = -np.inf, None, None
    for table in deterministic_policies(env):
        probs = policy_from_table(env, table)
        j = value_of(env, probs, flow)
        q = q_of(env, probs, flow)
        best_q = q if best_q is None else np.maximum(best_q, q)
        if j > best_j:
            best_j, best_table = j, table
    return best_j, best_table, best_q


def exploitability_of(env, probs):
    """max_pi' J(pi'; mu^pi) - J(pi; mu^pi) via full enumeration."""
    flow = own_flow(env, probs)
    best_j, _, _ = best_value_and_q(env, flow)
    return best_j - value_of(env, probs, flow)


def rollout_value(env, probs, flow, episodes, rng):
    """Monte Carlo estimate of J(policy; flow); returns (mean, standard error)."""
    n_t = env.horizon.n_t
    m0 = np.asarray(env.initial_distribution().mass)
    totals = np.zeros(episodes)
    for e in range(episodes):
        x = rng.choice(env.num_states, p=m0)
        for n in range(n_t + 1):
            mu_n = Distribution(flow[n])
            a = rng.choice(env.num_actions, p=probs[n, x])
            totals[e] += env.reward(n, x, a, mu_n)
            if n < n_t:
                x = env.sample_next(n, x, a, mu_n, rng)
    return totals.mean(), totals.std(ddof=1) / np.sqrt(episodes)
