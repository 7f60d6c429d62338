"""Model-free deep solvers: DQN best response, average-network fictitious
play, Munchausen mirror descent, and the fixed-point / policy-iteration /
Boltzmann baselines.

Population flows are always updated with the exact model; learning only ever
consumes sampled transitions. Episodes start at n = 0 with x0 drawn from m0
and are simulated in vectorized batches (many independent episodes at once,
all under the same frozen flow). Between hard target-network refreshes the
bootstrap values are static, so they are tabulated once per refresh.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .core import (
    Distribution,
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
from .dynamics import exploitability, forward_distribution, greedy_policy
from .exact_solvers import SolverTrace, _Stopwatch, _trace
from .neural import (
    Mlp,
    OptimizerState,
    ReplayBuffer,
    ReservoirBuffer,
    StateEncoder,
    forward,
    grad_cross_entropy,
    grad_squared_loss,
    optimizer_step,
    reservoir_offer,
)


def _encoder(env: EnvironmentModel, params: SolverParams) -> StateEncoder:
    return StateEncoder(env.horizon.n_t, env.num_states, joint=params.joint_onehot)


def _new_net(env: EnvironmentModel, params: SolverParams, encoder: StateEncoder,
             rng: np.random.Generator) -> Mlp:
    sizes = [encoder.width, *params.hidden_sizes, env.num_actions]
    return Mlp.create(sizes, rng)


def _q_table(net: Mlp, encoder: StateEncoder, env: EnvironmentModel) -> np.ndarray:
    """Evaluate the net at every (n, x); returns (n_t+1, |X|, |A|)."""
    out = forward(net, encoder.all_inputs())
    return out.reshape(env.horizon.n_t + 1, env.num_states, env.num_actions)


def _epsilon(params: SolverParams, progress: float) -> float:
    """Linear decay from epsilon_start to epsilon_end over the first half of
    the inner loop, then flat."""
    frac = min(1.0, 2.0 * progress)
    return params.epsilon_start + frac * (params.epsilon_end - params.epsilon_start)


def _reward_table(env: EnvironmentModel, mu: MeanFieldFlow) -> np.ndarray:
    return np.stack(
        [env.reward_profile(n, mu.flow[n]) for n in range(env.horizon.n_t + 1)]
    )


def _sample_m0(env: EnvironmentModel, count: int, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(env.initial_distribution().mass)
    draws = (cdf <= rng.random(count)[:, None]).sum(axis=1)
    return np.minimum(draws, env.num_states - 1)


def _collect_episodes(
    env: EnvironmentModel,
    mu: MeanFieldFlow,
    rewards: np.ndarray,
    net: Mlp,
    encoder: StateEncoder,
    epsilon: float,
    episodes: int,
    buffer: ReplayBuffer,
    rng: np.random.Generator,
) -> None:
    """Run a batch of episodes with an epsilon-greedy policy on the net,
    pushing every transition into the replay buffer."""
    n_t = env.horizon.n_t
    states = _sample_m0(env, episodes, rng)
    for n in range(n_t + 1):
        q = forward(net, encoder.encode(np.full(episodes, n), states))
        acts = q.argmax(axis=1)
        explore = rng.random(episodes) < epsilon
        acts = np.where(explore, rng.integers(0, env.num_actions, episodes), acts)
        r = rewards[n][states, acts]
        nxt = env.sample_next_many(n, states, acts, Distribution(mu.flow[n]), rng)
        buffer.push_many(np.full(episodes, n), states, acts, r, nxt, np.full(episodes, n == n_t))
        states = nxt


def _policy_episodes(
    env: EnvironmentModel,
    mu: MeanFieldFlow,
    policy: Policy,
    episodes: int,
    rng: np.random.Generator,
):
    """Sample (n, x, a) visits of a fixed policy under a fixed flow."""
    n_t = env.horizon.n_t
    states = _sample_m0(env, episodes, rng)
    ns, xs, acts_out = [], [], []
    for n in range(n_t + 1):
        rows = policy.probs[n][states]  # (E, A)
        acts = (np.cumsum(rows, axis=1) <= rng.random(episodes)[:, None]).sum(axis=1)
        acts = np.minimum(acts, env.num_actions - 1)
        ns.append(np.full(episodes, n)), xs.append(states.copy()), acts_out.append(acts)
        if n < n_t:
            states = env.sample_next_many(n, states, acts, Distribution(mu.flow[n]), rng)
    return np.concatenate(ns), np.concatenate(xs), np.concatenate(acts_out)


@dataclass
class _InnerLoop:
    """Shared chunked inner loop: interleave episode collection with gradient
    steps; bootstrap values are tabulated from the frozen target net and
    refreshed (hard copy of the training net) every target_refresh steps."""

    env: EnvironmentModel
    params: SolverParams
    encoder: StateEncoder
    rng: np.random.Generator
    chunks: int = 10

    def run(self, net, opt, mu, rewards, make_values, make_targets, start_target: Mlp):
        p = self.params
        target_net = start_target.copy()
        values = make_values(target_net)
        if p.exact_minibatch:
            inputs, acts, _ = self._exhaustive_batch()
            for step in range(p.inner_steps):
                targets = make_targets(None, values)
                grads, _ = grad_squared_loss(net, inputs, acts, targets)
                optimizer_step(net, opt, grads)
                if (step + 1) % p.target_refresh == 0:
                    target_net = net.copy()
                    values = make_values(target_net)
            if not net.params_finite():
                raise RuntimeError("non-finite network parameters")
            return
        buffer = ReplayBuffer(p.replay_capacity)
        per_chunk = max(1, p.episodes_per_iteration // self.chunks)
        step = 0
        for chunk in range(self.chunks):
            eps = _epsilon(p, step / p.inner_steps)
            _collect_episodes(
                self.env, mu, rewards, net, self.encoder, eps, per_chunk, buffer, self.rng
            )
            for _ in range(p.inner_steps // self.chunks):
                batch = buffer.sample(p.batch_size, self.rng)
                targets = make_targets(batch, values)
                grads, _ = grad_squared_loss(
                    net, self.encoder.encode(batch["n"], batch["x"]), batch["a"], targets
                )
                optimizer_step(net, opt, grads)
                step += 1
                if step % p.target_refresh == 0:
                    target_net = net.copy()
                    values = make_values(target_net)
            if not net.params_finite():
                raise RuntimeError("non-finite network parameters")

    def _exhaustive_batch(self):
        n_t1 = self.env.horizon.n_t + 1
        X, A = self.env.num_states, self.env.num_actions
        ns, xs, acts = np.meshgrid(np.arange(n_t1), np.arange(X), np.arange(A), indexing="ij")
        ns, xs, acts = ns.ravel(), xs.ravel(), acts.ravel()
        return self.encoder.encode(ns, xs), acts, (ns, xs)


def _exact_targets(env, rewards, mu, bonus, next_values):
    """Exhaustive-batch targets: exact expectation over the next state."""
    n_t = env.horizon.n_t
    t_full = np.empty((n_t + 1, env.num_states, env.num_actions))
    for n in range(n_t + 1):
        t_full[n] = rewards[n] + (bonus[n] if bonus is not None else 0.0)
        if n < n_t:
            trans = env.transition_profile(n, mu.flow[n])
            t_full[n] += trans @ next_values[n + 1]
    return t_full.ravel()


# ---------------------------------------------------------------------------
# DQN best response
# ---------------------------------------------------------------------------


def dqn_best_response(
    env: EnvironmentModel,
    mu: MeanFieldFlow,
    params: SolverParams,
    rng: np.random.Generator,
) -> Tuple[Mlp, Policy]:
    """Train a fresh Q-network against a frozen flow; return it with its
    greedy policy. Episodic sampling, epsilon-greedy behavior, replay,
    hard target refreshes, target r + max_a' Q(n+1, x', a')."""
    encoder = _encoder(env, params)
    net = _new_net(env, params, encoder, rng)
    opt = OptimizerState.create(net, params.learning_rate)
    rewards = _reward_table(env, mu)
    n_t = env.horizon.n_t

    def make_values(target_net):
        return _q_table(target_net, encoder, env).max(axis=2)  # (n_t+1, X)

    def make_targets(batch, values):
        if batch is None:
            return _exact_targets(env, rewards, mu, None, values)
        boot = np.where(batch["terminal"], 0.0, values[np.minimum(batch["n"] + 1, n_t), batch["x_next"]])
        return batch["r"] + boot

    loop = _InnerLoop(env, params, encoder, rng)
    loop.run(net, opt, mu, rewards, make_values, make_targets, start_target=net)
    policy = greedy_policy(QTable(_q_table(net, encoder, env)))
    return net, policy


# ---------------------------------------------------------------------------
# Munchausen targets and Deep Munchausen OMD
# ---------------------------------------------------------------------------


def munchausen_next_values(
    policy_prev: Policy, target_net: Mlp, encoder: StateEncoder, env: EnvironmentModel, tau: float
) -> np.ndarray:
    """Table of sum_a' pi_prev(a'|n,x') [Q_target(n,x',a') - tau log pi_prev(a'|n,x')]."""
    q = _q_table(target_net, encoder, env)
    log_pi = floored_log(policy_prev.probs)
    return np.einsum("nxa,nxa->nx", policy_prev.probs, q - tau * log_pi)


def munchausen_target(
    batch: dict,
    policy_prev: Policy,
    target_net: Mlp,
    encoder: StateEncoder,
    env: EnvironmentModel,
    tau: float,
    alpha: float,
) -> np.ndarray:
    """Per-sample regression target: r + alpha*tau*log pi_prev(a | n, x) plus,
    for non-terminal samples, the compensated continuation value at
    (n+1, x_next). Probabilities are floored before every log."""
    values = munchausen_next_values(policy_prev, target_net, encoder, env, tau)
    n_t = env.horizon.n_t
    red = alpha * tau * floored_log(policy_prev.probs[batch["n"], batch["x"], batch["a"]])
    boot = np.where(
        batch["terminal"], 0.0, values[np.minimum(batch["n"] + 1, n_t), batch["x_next"]]
    )
    return batch["r"] + red + boot


def d_momd(env: EnvironmentModel, params: SolverParams, rng: np.random.Generator) -> SolverTrace:
    """Deep Munchausen OMD: one persistent network carries the cumulative
    table implicitly; each outer iteration regresses it onto the Munchausen
    targets built from the frozen previous iterate."""
    encoder = _encoder(env, params)
    net = _new_net(env, params, encoder, rng)
    opt = OptimizerState.create(net, params.learning_rate)
    tau, alpha = params.tau, params.alpha
    pi = Policy(softmax_rows(_q_table(net, encoder, env), 1.0 / tau))
    gaps, snaps = [], [] if params.snapshot_policies else None
    watch = _Stopwatch()
    loop = _InnerLoop(env, params, encoder, rng)
    for it in range(params.iterations):
        opt.learning_rate = params.learning_rate * params.lr_decay**it
        pi_prev = pi
        prev_net = net.copy()
        mu = forward_distribution(pi_prev, env)
        rewards = _reward_table(env, mu)
        log_prev = floored_log(pi_prev.probs)
        red = alpha * tau * log_prev

        def make_values(target_net):
            return munchausen_next_values(pi_prev, target_net, encoder, env, tau)

        def make_targets(batch, values):
            if batch is None:
                return _exact_targets(env, rewards, mu, red, values)
            n_t = env.horizon.n_t
            red_b = red[batch["n"], batch["x"], batch["a"]]
            boot = np.where(
                batch["terminal"], 0.0, values[np.minimum(batch["n"] + 1, n_t), batch["x_next"]]
            )
            return batch["r"] + red_b + boot

        loop.run(net, opt, mu, rewards, make_values, make_targets, start_target=prev_net)
        pi = Policy(softmax_rows(_q_table(net, encoder, env), 1.0 / tau))
        gaps.append(exploitability(pi, env))
        watch.lap()
        if snaps is not None:
            snaps.append(pi)
    return _trace(gaps, pi, forward_distribution(pi, env), snaps, watch)


# ---------------------------------------------------------------------------
# Deep baselines: D-BP, D-PI, D-BI
# ---------------------------------------------------------------------------


def d_bp(env: EnvironmentModel, params: SolverParams, rng: np.random.Generator) -> SolverTrace:
    """Deep Banach-Picard: exact flow of the current policy, DQN best response."""
    pi = Policy.uniform(env.horizon.n_t, env.num_states, env.num_actions)
    gaps, snaps = [], [] if params.snapshot_policies else None
    watch = _Stopwatch()
    for _ in range(params.iterations):
        mu = forward_distribution(pi, env)
        _, pi = dqn_best_response(env, mu, params, rng)
        gaps.append(exploitability(pi, env))
        watch.lap()
        if snaps is not None:
            snaps.append(pi)
    return _trace(gaps, pi, forward_distribution(pi, env), snaps, watch)


def d_pi(env: EnvironmentModel, params: SolverParams, rng: np.random.Generator) -> SolverTrace:
    """Deep policy iteration: fitted evaluation of the current policy (fresh
    net each iteration), then greedy (or soft) improvement."""
    encoder = _encoder(env, params)
    n_t = env.horizon.n_t
    pi = Policy.uniform(n_t, env.num_states, env.num_actions)
    gaps, snaps = [], [] if params.snapshot_policies else None
    watch = _Stopwatch()
    loop = _InnerLoop(env, params, encoder, rng)
    for _ in range(params.iterations):
        pi_prev = pi
        mu = forward_distribution(pi_prev, env)
        rewards = _reward_table(env, mu)
        net = _new_net(env, params, encoder, rng)
        opt = OptimizerState.create(net, params.learning_rate)

        def make_values(target_net):
            q = _q_table(target_net, encoder, env)
            return np.einsum("nxa,nxa->nx", pi_prev.probs, q)

        def make_targets(batch, values):
            if batch is None:
                return _exact_targets(env, rewards, mu, None, values)
            boot = np.where(
                batch["terminal"], 0.0, values[np.minimum(batch["n"] + 1, n_t), batch["x_next"]]
            )
            return batch["r"] + boot

        loop.run(net, opt, mu, rewards, make_values, make_targets, start_target=net)
        q_fit = QTable(_q_table(net, encoder, env))
        if params.soft:
            pi = Policy(softmax_rows(q_fit.values, 1.0 / params.eta))
        else:
            pi = greedy_policy(q_fit)
        gaps.append(exploitability(pi, env))
        watch.lap()
        if snaps is not None:
            snaps.append(pi)
    return _trace(gaps, pi, forward_distribution(pi, env), snaps, watch)


def d_bi(
    env: EnvironmentModel,
    params: SolverParams,
    reference_policy: Policy,
    rng: np.random.Generator,
) -> SolverTrace:
    """Deep Boltzmann iteration: DQN-estimated optimal Q, then the
    reference-weighted softmax policy at temperature eta."""
    if reference_policy.probs.min() < LOG_FLOOR:
        raise ZeroSupportReference("reference policy must have entries >= 1e-12")
    encoder = _encoder(env, params)
    log_ref = np.log(reference_policy.probs)
    pi = reference_policy
    gaps, snaps = [], [] if params.snapshot_policies else None
    watch = _Stopwatch()
    for _ in range(params.iterations):
        mu = forward_distribution(pi, env)
        net, _ = dqn_best_response(env, mu, params, rng)
        q = _q_table(net, encoder, env)
        pi = Policy(softmax_rows(log_ref + q / params.eta))
        gaps.append(exploitability(pi, env))
        watch.lap()
        if snaps is not None:
            snaps.append(pi)
    return _trace(gaps, pi, forward_distribution(pi, env), snaps, watch)


# ---------------------------------------------------------------------------
# Deep average-network fictitious play
# ---------------------------------------------------------------------------


def d_afp(env: EnvironmentModel, params: SolverParams, rng: np.random.Generator) -> SolverTrace:
    """Average-network fictitious play: per iteration, a DQN best response to
    the current average flow; its state-action visits go into a reservoir;
    the average-policy net is then fit by cross-entropy on reservoir samples
    and its exact flow becomes the next average flow."""
    encoder = _encoder(env, params)
    n_t = env.horizon.n_t
    reservoir = ReservoirBuffer(params.reservoir_capacity)
    avg_net = _new_net(env, params, encoder, rng)
    avg_opt = OptimizerState.create(avg_net, params.sl_learning_rate)
    mu_bar = MeanFieldFlow.constant(env.initial_distribution(), n_t)
    gaps, snaps = [], [] if params.snapshot_policies else None
    watch = _Stopwatch()
    avg_policy = Policy.uniform(n_t, env.num_states, env.num_actions)
    for it in range(params.iterations):
        avg_opt.learning_rate = params.sl_learning_rate * params.lr_decay**it
        _, br_policy = dqn_best_response(env, mu_bar, params, rng)
        ns, xs, acts = _policy_episodes(env, mu_bar, br_policy, params.n_samples, rng)
        for item in zip(ns.tolist(), xs.tolist(), acts.tolist()):
            reservoir_offer(reservoir, item, rng)
        items = np.asarray(reservoir.items, dtype=np.int64)
        for _ in range(params.sl_steps):
            idx = rng.integers(0, len(items), params.batch_size)
            take = items[idx]
            grads, _ = grad_cross_entropy(avg_net, encoder.encode(take[:, 0], take[:, 1]), take[:, 2])
            optimizer_step(avg_net, avg_opt, grads)
        if not avg_net.params_finite():
            raise RuntimeError("non-finite average-policy parameters")
        avg_policy = Policy(softmax_rows(_q_table(avg_net, encoder, env)))
        mu_bar = forward_distribution(avg_policy, env)
        gaps.append(exploitability(avg_policy, env))
        watch.lap()
        if snaps is not None:
            snaps.append(avg_policy)
    return _trace(gaps, avg_policy, mu_bar, snaps, watch)
