"""Comparison learners: independent Q self-play and joint tabular minimax Q.

The independent learner gives every agent its own Q function, its own
bounded replay buffer, and its own target snapshot; each agent optimizes
its team-signed reward and treats everyone else as part of the environment.
The joint learner keeps one table over the full joint action space and does
plain minimax temporal-difference updates, which shares its fixed point
with the exact solvers and pins down what the factorization should reach.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .games import AugmentedState, JointAction, TabularGame, TwoTeamGame, initial_augmented, step
from .learner import (
    Coordinator,
    ReplayBuffer,
    encode_history,
    history_feature_dim,
    round_batches,
)
from .seeding import derive_rng


@dataclass
class IndependentQConfig:
    episodes: int
    updates_per_round: int = 10
    buffer_capacity: int = 5000
    backend: str = "tabular"  # "tabular" or "neural"
    alpha: float = 0.1
    learning_rate: float = 5e-4
    hidden_layers: tuple = (64, 64)
    utility_activation: str = "relu"
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.2
    seed: int = 0
    checkpoint_every: int | None = None
    eval_every: int | None = None

    def validate(self):
        if self.episodes < 0:
            raise ValueError("episodes must be nonnegative")
        if self.backend not in ("tabular", "neural"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.backend == "tabular" and not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0.0 < self.epsilon_end <= 1.0:
            raise ValueError("exploration must stay strictly positive")
        if self.buffer_capacity < 1:
            raise ValueError("buffer_capacity must be positive")


class _TabularAgent:
    """One agent's table over (state, own action); opponents are invisible."""

    def __init__(self, n_states: int, n_actions: int, sign: float, alpha: float):
        self.q = np.zeros((n_states, n_actions))
        self.target = self.q.copy()
        self.sign = sign
        self.alpha = alpha

    def values(self, s: int) -> np.ndarray:
        return self.q[s]

    def update_batch(self, records, gamma: float):
        for s, a, r, s_next, done in records:
            boot = 0.0 if done else float(self.target[s_next].max())
            target = self.sign * r + gamma * boot
            self.q[s, a] += self.alpha * (target - self.q[s, a])

    def refresh_target(self):
        self.target = self.q.copy()


class _NeuralAgent:
    """One agent's dense Q net with its own flat parameters and optimizer."""

    def __init__(self, game, team, idx, hidden, activation, seed):
        count = (game.pro_action_counts if team == "pro" else game.ant_action_counts)[idx]
        in_dim = history_feature_dim(game, team, idx, 1)
        self.game = game
        self.team = team
        self.idx = idx
        self.sign = 1.0 if team == "pro" else -1.0
        self.net = nm.DenseNet(f"{team}{idx}", (in_dim, *hidden, count), hidden_activation=activation)
        self.layout = self.net.layout()
        self.params = self.layout.zeros()
        self.net.init_into(self.layout, self.params, derive_rng(seed, "iql-init", team, idx))
        self.target_params = self.params.copy()
        self.adam = nm.AdamState.for_size(self.layout.size)

    def values(self, obs_vec: np.ndarray) -> np.ndarray:
        return self.net.forward(self.layout, self.params, obs_vec)

    def update_batch(self, records, gamma: float, lr: float):
        obs = np.vstack([r[0] for r in records])
        actions = np.array([r[1] for r in records], dtype=np.int64)
        rewards = np.array([r[2] for r in records])
        next_obs = np.vstack([r[3] for r in records])
        done = np.array([r[4] for r in records])
        boot = self.net.forward(self.layout, self.target_params, next_obs).max(axis=1)
        targets = self.sign * rewards + gamma * np.where(done, 0.0, boot)
        tape = nm.Tape()
        tparams = nm.TapeParams(tape, self.layout, self.params)
        out = self.net.forward_tape(tape, tparams, obs)
        picked = nm.t_gather_cols(tape, out, actions)
        total = nm.t_mean(tape, nm.t_square(tape, nm.t_sub_from_const(tape, targets, picked)))
        nm.backward(tape, total, 1.0)
        self.params = nm.adam_step(self.params, tparams.grad(), self.adam, lr)
        return float(total.value)

    def refresh_target(self):
        self.target_params = self.params.copy()


class IndependentPolicyPair:
    """Greedy play from a set of independent per-agent learners."""

    def __init__(self, game, pro_agents, ant_agents):
        self.game = game
        self.pro_agents = pro_agents
        self.ant_agents = ant_agents

    def _agent_values(self, agent, team, idx, s_aug: AugmentedState) -> np.ndarray:
        if isinstance(agent, _TabularAgent):
            return agent.values(s_aug.state)
        history = s_aug.pro_histories[idx] if team == "pro" else s_aug.ant_histories[idx]
        return agent.values(encode_history(self.game, team, idx, history))

    def pro_actions(self, s_aug: AugmentedState, rng=None):
        return tuple(
            int(np.argmax(self._agent_values(agent, "pro", i, s_aug)))
            for i, agent in enumerate(self.pro_agents)
        )

    def ant_actions(self, s_aug: AugmentedState, rng=None):
        return tuple(
            int(np.argmax(self._agent_values(agent, "ant", j, s_aug)))
            for j, agent in enumerate(self.ant_agents)
        )

    def state_tables(self, game: TabularGame):
        pro = np.zeros((game.n, game.n_states), dtype=np.int64)
        ant = np.zeros((game.m, game.n_states), dtype=np.int64)
        for s in range(game.n_states):
            aug = initial_augmented(game, s, 1)
            pro[:, s] = self.pro_actions(aug)
            ant[:, s] = self.ant_actions(aug)
        return pro, ant


@dataclass
class IndependentTrainResult:
    policies: IndependentPolicyPair
    metrics: list
    rounds: list
    snapshots: list
    episodes_run: int


def selfplay_independent_train(game: TwoTeamGame, config: IndependentQConfig, eval_fn=None) -> IndependentTrainResult:
    """Self-play with fully independent per-agent TD learning.

    Mirrors the factorized trainer's coordinator arithmetic (U update steps
    per round on batches of max(1, L // U), target refresh after the round)
    but every agent trains on its own signed reward with no coordination.
    """
    config.validate()
    tab = config.backend == "tabular"
    if tab and not getattr(game, "is_tabular", False):
        raise ValueError("the tabular backend needs a tabular game")
    if tab:
        pro_agents = [
            _TabularAgent(game.n_states, c, 1.0, config.alpha) for c in game.pro_action_counts
        ]
        ant_agents = [
            _TabularAgent(game.n_states, c, -1.0, config.alpha) for c in game.ant_action_counts
        ]
    else:
        pro_agents = [
            _NeuralAgent(game, "pro", i, config.hidden_layers, config.utility_activation, config.seed)
            for i in range(game.n)
        ]
        ant_agents = [
            _NeuralAgent(game, "ant", j, config.hidden_layers, config.utility_activation, config.seed)
            for j in range(game.m)
        ]
    agents = pro_agents + ant_agents
    buffers = [ReplayBuffer("large", config.buffer_capacity) for _ in agents]
    coordinator = Coordinator(config.updates_per_round)
    policies = IndependentPolicyPair(game, pro_agents, ant_agents)
    rollout_rng = derive_rng(config.seed, "iql-rollout")
    batch_rng = derive_rng(config.seed, "iql-batches")
    decay_span = max(1, int(round(config.epsilon_decay_fraction * config.episodes)))
    metrics: list[dict] = []
    snapshots: list[tuple[int, object]] = []
    episodes_run = 0
    for episode in range(1, config.episodes + 1):
        frac = min(1.0, (episode - 1) / decay_span)
        eps = config.epsilon_start + (config.epsilon_end - config.epsilon_start) * frac
        s = game.sample_initial(rollout_rng)
        aug = initial_augmented(game, s, 1)
        t = 0
        while True:
            pro, ant = [], []
            for i, agent in enumerate(pro_agents):
                greedy = int(np.argmax(policies._agent_values(agent, "pro", i, aug)))
                pro.append(int(rollout_rng.integers(game.pro_action_counts[i])) if rollout_rng.random() < eps else greedy)
            for j, agent in enumerate(ant_agents):
                greedy = int(np.argmax(policies._agent_values(agent, "ant", j, aug)))
                ant.append(int(rollout_rng.integers(game.ant_action_counts[j])) if rollout_rng.random() < eps else greedy)
            ep_step = step(game, aug, JointAction(tuple(pro), tuple(ant)), rng=rollout_rng, t=t)
            for k, agent in enumerate(agents):
                team = "pro" if k < game.n else "ant"
                idx = k if k < game.n else k - game.n
                if tab:
                    rec = (
                        ep_step.state.state,
                        ep_step.action.pro[idx] if team == "pro" else ep_step.action.ant[idx],
                        ep_step.reward,
                        ep_step.next_state.state,
                        ep_step.done,
                    )
                else:
                    hist = ep_step.state.pro_histories[idx] if team == "pro" else ep_step.state.ant_histories[idx]
                    nxt = ep_step.next_state.pro_histories[idx] if team == "pro" else ep_step.next_state.ant_histories[idx]
                    rec = (
                        encode_history(game, team, idx, hist),
                        ep_step.action.pro[idx] if team == "pro" else ep_step.action.ant[idx],
                        ep_step.reward,
                        encode_history(game, team, idx, nxt),
                        ep_step.done,
                    )
                buffers[k].add(rec)
            aug = ep_step.next_state
            t += 1
            if ep_step.done:
                break
        size = len(buffers[0])
        batch_size = coordinator.batch_size(size)
        losses = []
        for k, agent in enumerate(agents):
            for idx in round_batches(batch_rng, len(buffers[k]), config.updates_per_round, batch_size):
                records = buffers[k].take(idx)
                if tab:
                    agent.update_batch(records, game.gamma)
                else:
                    losses.append(agent.update_batch(records, game.gamma, config.learning_rate))
            agent.refresh_target()
        coordinator.record(episode, size, batch_size, config.updates_per_round)
        row = {
            "episode": episode,
            "loss": float(np.mean(losses)) if losses else 0.0,
            "epsilon": eps,
            "buffer_size": size,
            "batch_size": batch_size,
        }
        episodes_run = episode
        if eval_fn is not None and config.eval_every and episode % config.eval_every == 0:
            row.update(eval_fn(policies, episode))
        metrics.append(row)
        if config.checkpoint_every and episode % config.checkpoint_every == 0 and tab:
            snapshots.append((episode, policies.state_tables(game)))
    return IndependentTrainResult(policies, metrics, coordinator.rounds, snapshots, episodes_run)


# ---------------------------------------------------------------------------
# joint tabular minimax Q


class JointMinimaxQLearner:
    """One table over (state, joint Pro action, joint Ant action)."""

    def __init__(self, game: TabularGame):
        if not getattr(game, "is_tabular", False):
            raise ValueError("the joint learner needs a tabular game")
        self.game = game
        self.q = np.zeros_like(game.R)

    def minimax_values(self) -> np.ndarray:
        return self.q.max(axis=1).min(axis=1)

    def policy_pair(self):
        from .games import TablePolicyPair

        game = self.game
        col_max = self.q.max(axis=1)
        row_min = self.q.min(axis=2)
        ant_joint = np.argmin(col_max, axis=1)
        pro_joint = np.argmax(row_min, axis=1)
        pro = np.array([game.decode_pro(int(j)) for j in pro_joint]).T
        ant = np.array([game.decode_ant(int(j)) for j in ant_joint]).T
        return TablePolicyPair(pro, ant)


def joint_minimaxq_update(learner: JointMinimaxQLearner, ep_step, alpha: float, gamma: float) -> np.ndarray:
    """One minimax TD step: Q <- (1 - alpha) Q + alpha (r + gamma min max Q')."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    game = learner.game
    s = ep_step.state.state
    ja = game.encode_pro(ep_step.action.pro)
    jb = game.encode_ant(ep_step.action.ant)
    boot = 0.0
    if not ep_step.done:
        nxt = ep_step.next_state.state
        boot = float(learner.q[nxt].max(axis=0).min())
    target = ep_step.reward + gamma * boot
    learner.q[s, ja, jb] = (1.0 - alpha) * learner.q[s, ja, jb] + alpha * target
    return learner.q


def joint_minimax_sweeps(
    learner: JointMinimaxQLearner,
    dataset,
    passes: int,
    alpha: float = 1.0,
    alpha_decay: float = 1.0,
) -> JointMinimaxQLearner:
    """Repeated sweeps over a fixed dataset with an optional alpha decay."""
    game = learner.game
    a = alpha
    for _ in range(passes):
        values = learner.q.max(axis=1).min(axis=1)
        targets = dataset.r + game.gamma * np.where(dataset.done, 0.0, values[dataset.s_next])
        for s, ja, jb, tgt in zip(dataset.s, dataset.ja, dataset.jb, targets):
            learner.q[s, ja, jb] = (1.0 - a) * learner.q[s, ja, jb] + a * tgt
        a *= alpha_decay
    return learner
