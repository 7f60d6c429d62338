"""Tabular equilibrium-learning iterations.

Every solver alternates an exact flow update with a policy update and records
the exploitability of the policy it would return at that iteration. The
mirror-descent family supports an entropy-regularized variant (KL prox with an
extra entropy term), which is how the Munchausen recursion relates back to
plain mirror descent on a regularized game.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (
    EnvironmentModel,
    MeanFieldFlow,
    Policy,
    QTable,
    SolverParams,
    ZeroSupportReference,
    LOG_FLOOR,
    floored_log,
    softmax_rows,
)
from .dynamics import (
    evaluate_policy,
    exploitability,
    forward_distribution,
    greedy_policy,
    optimal_q,
)


@dataclass
class SolverTrace:
    """Per-iteration exploitability plus the solver's returned artifacts.

    ``policies`` (populated when requested) holds one snapshot per iteration:
    the policy whose exploitability was recorded, except for fictitious play
    where it holds the per-iteration best responses (the mixture components).
    ``seconds_per_iteration`` is measured wall time; everything else in the
    trace is deterministic given the seed.
    """

    exploitability_per_iteration: np.ndarray
    final_policy: Policy
    final_flow: MeanFieldFlow
    policies: Optional[list] = None
    seconds_per_iteration: Optional[np.ndarray] = None

    def __post_init__(self):
        e = np.asarray(self.exploitability_per_iteration, dtype=float)
        if (e < -1e-9).any():
            raise ValueError("negative exploitability recorded: exact BR must dominate")
        self.exploitability_per_iteration = e


class _Stopwatch:
    def __init__(self):
        self.laps = []
        self._last = time.perf_counter()

    def lap(self):
        now = time.perf_counter()
        self.laps.append(now - self._last)
        self._last = now


def _trace(values, policy, flow, snaps, watch: Optional[_Stopwatch] = None) -> SolverTrace:
    seconds = np.asarray(watch.laps) if watch is not None else None
    return SolverTrace(np.asarray(values), policy, flow, snaps, seconds)


def _improved_policy(q: QTable, params: SolverParams) -> Policy:
    if params.soft:
        return Policy(softmax_rows(q.values, 1.0 / params.eta))
    return greedy_policy(q)


def banach_picard(env: EnvironmentModel, params: SolverParams) -> SolverTrace:
    """Plain fixed-point iterations: flow of last policy, then best response."""
    pi = Policy.uniform(env.horizon.n_t, env.num_states, env.num_actions)
    gaps, snaps = [], [] if params.snapshot_policies else None
    watch = _Stopwatch()
    for _ in range(params.iterations):
        mu = forward_distribution(pi, env)
        pi = _improved_policy(optimal_q(mu, env), params)
        gaps.append(exploitability(pi, env))
        watch.lap()
        if snaps is not None:
            snaps.append(pi)
    return _trace(gaps, pi, forward_distribution(pi, env), snaps, watch)


def fictitious_play(env: EnvironmentModel, params: SolverParams) -> SolverTrace:
    """Best response against the running average of induced flows.

    Iteration k best-responds to the average flow mu_bar^{k-1} (mu_bar^0 is
    the initial distribution held constant), pushes the new best response
    forward, and folds its flow into the average via the running recurrence
    mu_bar^k = (k-1)/k * mu_bar^{k-1} + 1/k * mu^k. The reported policy is the
    mixture generating the average flow, reconstructed from the stored best
    responses: pi_bar_n(a|x) proportional to sum_i mu^i_n(x) * pi^i_n(a|x).
    Snapshots (when enabled) store the per-iteration best responses.
    """
    n_t, X, A = env.horizon.n_t, env.num_states, env.num_actions
    mu_bar = MeanFieldFlow.constant(env.initial_distribution(), n_t)
    mass_sum = np.zeros((n_t + 1, X))
    mix_sum = np.zeros((n_t + 1, X, A))
    gaps, snaps = [], [] if params.snapshot_policies else None
    watch = _Stopwatch()
    avg = Policy.uniform(n_t, X, A)
    for k in range(1, params.iterations + 1):
        br = greedy_policy(optimal_q(mu_bar, env))
        mu_k = forward_distribution(br, env)
        if k == 1:
            mu_bar = mu_k
        else:
            mu_bar = MeanFieldFlow((k - 1) / k * mu_bar.flow + mu_k.flow / k)
        mass_sum += mu_k.flow
        mix_sum += mu_k.flow[:, :, None] * br.probs
        avg_probs = np.where(
            mass_sum[:, :, None] > 0.0, mix_sum / np.maximum(mass_sum[:, :, None], 1e-300), 1.0 / A
        )
        avg = Policy(avg_probs / avg_probs.sum(axis=2, keepdims=True))
        gaps.append(exploitability(avg, env))
        watch.lap()
        if snaps is not None:
            snaps.append(br)
    return _trace(gaps, avg, mu_bar, snaps, watch)


def policy_iteration(env: EnvironmentModel, params: SolverParams) -> SolverTrace:
    """Evaluate the current policy, then act greedily (or softly) on its Q."""
    pi = Policy.uniform(env.horizon.n_t, env.num_states, env.num_actions)
    gaps, snaps = [], [] if params.snapshot_policies else None
    watch = _Stopwatch()
    for _ in range(params.iterations):
        mu = forward_distribution(pi, env)
        q = evaluate_policy(pi, mu, env)
        pi = _improved_policy(q, params)
        gaps.append(exploitability(pi, env))
        watch.lap()
        if snaps is not None:
            snaps.append(pi)
    return _trace(gaps, pi, forward_distribution(pi, env), snaps, watch)


def omd(
    env: EnvironmentModel,
    params: SolverParams,
    *,
    kl_coef: Optional[float] = None,
    entropy_coef: float = 0.0,
) -> SolverTrace:
    """Online mirror descent: accumulate evaluated Q-tables, project by softmax.

    The defaults give the standard update q_bar += Q / tau followed by
    pi = softmax(q_bar). Passing kl_coef / entropy_coef switches to the prox
    argmax(<pi, Q> - kl_coef * KL(pi || pi_prev) + entropy_coef * H(pi)) with
    the entropy penalty also charged inside policy evaluation, i.e. mirror
    descent on the entropy-regularized game.
    """
    kappa = params.tau if kl_coef is None else kl_coef
    if kappa <= 0:
        raise ValueError("kl_coef must be > 0")
    n_t, X, A = env.horizon.n_t, env.num_states, env.num_actions
    logits = np.zeros((n_t + 1, X, A))
    pi = Policy(softmax_rows(logits))
    gaps, snaps = [], [] if params.snapshot_policies else None
    watch = _Stopwatch()
    for _ in range(params.iterations):
        mu = forward_distribution(pi, env)
        q = evaluate_policy(pi, mu, env, entropy_coef=entropy_coef)
        logits = (kappa * logits + q.values) / (kappa + entropy_coef)
        pi = Policy(softmax_rows(logits))
        gaps.append(exploitability(pi, env))
        watch.lap()
        if snaps is not None:
            snaps.append(pi)
    return _trace(gaps, pi, forward_distribution(pi, env), snaps, watch)


def momd(env: EnvironmentModel, params: SolverParams) -> SolverTrace:
    """Munchausen OMD: one Bellman-like recursion with a log-policy bonus (the
    previous policy's log, scaled by alpha*tau) and a matching compensation in
    the continuation. With alpha = 1 this reproduces omd exactly; alpha < 1
    solves the game regularized by (1 - alpha) * tau * entropy.
    """
    tau, alpha = params.tau, params.alpha
    n_t, X, A = env.horizon.n_t, env.num_states, env.num_actions
    pi = Policy.uniform(n_t, X, A)
    gaps, snaps = [], [] if params.snapshot_policies else None
    watch = _Stopwatch()
    for _ in range(params.iterations):
        mu = forward_distribution(pi, env)
        log_pi = floored_log(pi.probs)
        q = np.empty((n_t + 1, X, A))
        q[n_t] = env.reward_profile(n_t, mu.flow[n_t]) + alpha * tau * log_pi[n_t]
        for n in range(n_t - 1, -1, -1):
            inner = q[n + 1] - tau * log_pi[n + 1]
            v_next = np.einsum("xa,xa->x", pi.probs[n + 1], inner)
            t = env.transition_profile(n, mu.flow[n])
            q[n] = env.reward_profile(n, mu.flow[n]) + alpha * tau * log_pi[n] + t @ v_next
        pi = Policy(softmax_rows(q, 1.0 / tau))
        gaps.append(exploitability(pi, env))
        watch.lap()
        if snaps is not None:
            snaps.append(pi)
    return _trace(gaps, pi, forward_distribution(pi, env), snaps, watch)


def boltzmann_iteration(
    env: EnvironmentModel, params: SolverParams, reference_policy: Policy
) -> SolverTrace:
    """Reference-weighted softmax of the optimal Q at temperature eta."""
    if reference_policy.probs.min() < LOG_FLOOR:
        raise ZeroSupportReference("reference policy must have entries >= 1e-12")
    log_ref = np.log(reference_policy.probs)
    pi = reference_policy
    gaps, snaps = [], [] if params.snapshot_policies else None
    watch = _Stopwatch()
    for _ in range(params.iterations):
        mu = forward_distribution(pi, env)
        q = optimal_q(mu, env)
        pi = Policy(softmax_rows(log_ref + q.values / params.eta))
        gaps.append(exploitability(pi, env))
        watch.lap()
        if snaps is not None:
            snaps.append(pi)
    return _trace(gaps, pi, forward_distribution(pi, env), snaps, watch)
