"""Command-line entry point: train, oracle, eval, ablate.

Configs are JSON; every run directory is self-describing (resolved config
echo, seed, package version, outputs), and rerunning with the echoed config
reproduces the outputs byte for byte. Schema problems exit with code 1 and
name the offending field path; runtime failures exit with code 2.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import baselines, evaluation, games, learner, oracle
from .seeding import derive_rng

METRIC_COLUMNS = ("episode", "loss", "epsilon", "buffer_size", "batch_size")


class ConfigError(ValueError):
    """Schema violation; carries the dotted field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _want(doc: dict, path: str, key: str, kind, default=..., choices=None):
    here = f"{path}.{key}" if path else key
    if key not in doc:
        if default is ...:
            raise ConfigError(here, "missing required field")
        return default
    value = doc[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(here, f"expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}")
    if choices is not None and value not in choices:
        raise ConfigError(here, f"must be one of {sorted(choices)}")
    return value


def build_game(spec: dict, path: str = "game") -> games.TwoTeamGame:
    kind = _want(spec, path, "kind", str, choices={"random_tabular", "random_deterministic", "matrix", "grid", "file"})
    if kind == "file":
        return games.load_game(_want(spec, path, "path", str))
    if kind == "grid":
        return games.GridKeepawayGame(
            games.GridConfig(
                side=_want(spec, path, "side", int, 5),
                horizon=_want(spec, path, "horizon", int, 30),
                view_radius=_want(spec, path, "view_radius", int, None),
            )
        )
    if kind == "matrix":
        payoff = _want(spec, path, "payoff", list)
        return games.matrix_team_game(payoff, _want(spec, path, "n", int, 1), _want(spec, path, "m", int, 1))
    maker = games.random_tabular_game if kind == "random_tabular" else games.random_deterministic_game
    return maker(
        seed=_want(spec, path, "seed", int, 0),
        n_states=_want(spec, path, "n_states", int),
        n=_want(spec, path, "n", int),
        m=_want(spec, path, "m", int),
        actions_per_agent=_want(spec, path, "actions_per_agent", int),
        gamma=_want(spec, path, "gamma", float, 0.99),
        horizon=_want(spec, path, "horizon", int, None),
    )


@dataclass
class RunConfig:
    game_spec: dict
    method: str
    episodes: int
    learning_rate: float = 5e-4
    hidden_layers: tuple = (64, 64)
    mix_hidden_dim: int = 32
    updates_per_round: int = 10
    buffer_mode: str = "full"
    buffer_capacity: int | None = None
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.2
    history_window: int = 1
    seed: int = 0
    checkpoint_every: int | None = None
    eval_every: int | None = None
    alpha: float = 0.1
    backend: str = "tabular"
    buffer_sizes: dict | None = None
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_document(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("", "config must be a JSON object")
        game_spec = _want(doc, "", "game", dict)
        method = _want(doc, "", "method", str, choices={"fm3q", "iql", "jminimax"})
        episodes = _want(doc, "", "episodes", int)
        if episodes < 0:
            raise ConfigError("episodes", "must be nonnegative")
        eps_end = _want(doc, "", "epsilon_end", float, 0.05)
        if eps_end <= 0.0:
            raise ConfigError("epsilon_end", "training data must stay exploratory: epsilon must be positive")
        hidden = _want(doc, "", "hidden_layers", list, [64, 64])
        sizes = _want(doc, "", "buffer_sizes", dict, None)
        if sizes is not None:
            for key in ("small", "large", "full"):
                if key not in sizes:
                    raise ConfigError(f"buffer_sizes.{key}", "missing required field")
            small, large, full = sizes["small"], sizes["large"], sizes["full"]
            effective = np.inf if full is None else full
            if not (small < large < effective):
                raise ConfigError("buffer_sizes", "must be strictly increasing (small < large < full)")
        return cls(
            game_spec=game_spec,
            method=method,
            episodes=episodes,
            learning_rate=_want(doc, "", "learning_rate", float, 5e-4),
            hidden_layers=tuple(hidden),
            mix_hidden_dim=_want(doc, "", "mix_hidden_dim", int, 32),
            updates_per_round=_want(doc, "", "updates_per_round", int, 10),
            buffer_mode=_want(doc, "", "buffer_mode", str, "full", choices=set(learner.ReplayBuffer.MODES)),
            buffer_capacity=_want(doc, "", "buffer_capacity", int, None),
            epsilon_start=_want(doc, "", "epsilon_start", float, 1.0),
            epsilon_end=eps_end,
            epsilon_decay_fraction=_want(doc, "", "epsilon_decay_fraction", float, 0.2),
            history_window=_want(doc, "", "history_window", int, 1),
            seed=_want(doc, "", "seed", int, 0),
            checkpoint_every=_want(doc, "", "checkpoint_every", int, None),
            eval_every=_want(doc, "", "eval_every", int, None),
            alpha=_want(doc, "", "alpha", float, 0.1),
            backend=_want(doc, "", "backend", str, "tabular", choices={"tabular", "neural"}),
            buffer_sizes=sizes,
            raw=dict(doc),
        )

    def echo_document(self) -> dict:
        doc = dict(self.raw)
        doc.setdefault("epsilon_end", self.epsilon_end)
        doc.setdefault("seed", self.seed)
        return {"package_version": __version__, "config": doc}

    def train_config(self) -> learner.TrainConfig:
        return learner.TrainConfig(
            episodes=self.episodes,
            updates_per_round=self.updates_per_round,
            buffer_mode=self.buffer_mode,
            buffer_capacity=self.buffer_capacity,
            learning_rate=self.learning_rate,
            hidden_layers=self.hidden_layers,
            mix_hidden_dim=self.mix_hidden_dim,
            epsilon_start=self.epsilon_start,
            epsilon_end=self.epsilon_end,
            epsilon_decay_fraction=self.epsilon_decay_fraction,
            history_window=self.history_window,
            seed=self.seed,
            checkpoint_every=self.checkpoint_every,
            eval_every=self.eval_every,
        )


def write_metrics_csv(path: str, metrics: list[dict]) -> None:
    extras = sorted({k for row in metrics for k in row} - set(METRIC_COLUMNS))
    columns = list(METRIC_COLUMNS) + extras
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in metrics:
            out = []
            for col in columns:
                value = row.get(col, "")
                if isinstance(value, float):
                    value = repr(value)
                out.append(value)
            writer.writerow(out)


def _write_json(path: str, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def _load_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _tabular_eval_fn(game, tol: float = 1e-8):
    if not getattr(game, "is_tabular", False):
        return None

    def eval_fn(model, episode):
        if isinstance(model, learner.NeuralFactorizedQ):
            pair = learner.GreedyPolicyPair(model)
        else:
            pair = model
        return {"nashconv": oracle.nashconv_of_pair(game, pair, tol)}

    return eval_fn


def cmd_train(config_path: str, out_dir: str, seed_override: int | None = None) -> int:
    config = RunConfig.from_document(_load_json(config_path))
    if seed_override is not None:
        config.seed = seed_override
        config.raw["seed"] = seed_override
    game = build_game(config.game_spec)
    os.makedirs(out_dir, exist_ok=True)
    _write_json(os.path.join(out_dir, "config.json"), config.echo_document())
    eval_fn = _tabular_eval_fn(game) if config.eval_every else None
    ckpt_dir = os.path.join(out_dir, "checkpoints")
    if config.method == "fm3q":
        result = learner.train(game, config.train_config(), eval_fn=eval_fn)
        metrics = result.metrics
        os.makedirs(ckpt_dir, exist_ok=True)
        snapshots = result.snapshots or [(result.episodes_run, result.fq.params.copy())]
        for episode, params in snapshots:
            doc = learner.checkpoint_document(
                result.fq.with_params(params), episode=episode, method="fm3q", seed=config.seed
            )
            _write_json(os.path.join(ckpt_dir, f"ckpt_ep{episode:06d}.json"), doc)
    elif config.method == "iql":
        iql_config = baselines.IndependentQConfig(
            episodes=config.episodes,
            updates_per_round=config.updates_per_round,
            buffer_capacity=config.buffer_capacity or 5000,
            backend=config.backend,
            alpha=config.alpha,
            learning_rate=config.learning_rate,
            hidden_layers=config.hidden_layers,
            epsilon_start=config.epsilon_start,
            epsilon_end=config.epsilon_end,
            epsilon_decay_fraction=config.epsilon_decay_fraction,
            seed=config.seed,
            checkpoint_every=config.checkpoint_every,
            eval_every=config.eval_every,
        )
        result = baselines.selfplay_independent_train(game, iql_config, eval_fn=eval_fn)
        metrics = result.metrics
        os.makedirs(ckpt_dir, exist_ok=True)
        if getattr(game, "is_tabular", False):
            pro, ant = result.policies.state_tables(game)
            doc = {
                "version": 1,
                "kind": "state_tables",
                "method": "iql",
                "episode": result.episodes_run,
                "seed": config.seed,
                "pro": pro.tolist(),
                "ant": ant.tolist(),
            }
            _write_json(os.path.join(ckpt_dir, f"ckpt_ep{result.episodes_run:06d}.json"), doc)
    else:
        metrics = _train_joint_minimax(game, config, ckpt_dir)
    write_metrics_csv(os.path.join(out_dir, "metrics.csv"), metrics)
    return 0


def _train_joint_minimax(game, config: RunConfig, ckpt_dir: str) -> list[dict]:
    if not getattr(game, "is_tabular", False):
        raise ValueError("the joint minimax baseline needs a tabular game")
    lrn = baselines.JointMinimaxQLearner(game)
    rng = derive_rng(config.seed, "jminimax")
    metrics = []
    for episode in range(1, config.episodes + 1):
        span = max(1, int(round(config.epsilon_decay_fraction * config.episodes)))
        frac = min(1.0, (episode - 1) / span)
        eps = config.epsilon_start + (config.epsilon_end - config.epsilon_start) * frac
        alpha = max(0.05, config.alpha / (1.0 + 0.01 * episode))
        s = game.sample_initial(rng)
        aug = games.initial_augmented(game, s, 1)
        pair = lrn.policy_pair()
        t = 0
        while True:
            if rng.random() < eps:
                pro = tuple(int(rng.integers(c)) for c in game.pro_action_counts)
                ant = tuple(int(rng.integers(c)) for c in game.ant_action_counts)
            else:
                pro = pair.pro_actions(aug)
                ant = pair.ant_actions(aug)
            ep_step = games.step(game, aug, games.JointAction(pro, ant), rng=rng, t=t)
            baselines.joint_minimaxq_update(lrn, ep_step, alpha, game.gamma)
            aug = ep_step.next_state
            t += 1
            if ep_step.done:
                break
        metrics.append(
            {"episode": episode, "loss": 0.0, "epsilon": eps, "buffer_size": 0, "batch_size": 0}
        )
    os.makedirs(ckpt_dir, exist_ok=True)
    pro, ant = lrn.policy_pair().state_tables(game)
    doc = {
        "version": 1,
        "kind": "state_tables",
        "method": "jminimax",
        "episode": config.episodes,
        "seed": config.seed,
        "pro": pro.tolist(),
        "ant": ant.tolist(),
    }
    _write_json(os.path.join(ckpt_dir, f"ckpt_ep{config.episodes:06d}.json"), doc)
    return metrics


def cmd_oracle(game_path: str, tol: float, out_dir: str) -> int:
    game = games.load_game(game_path)
    solution = oracle.solve_superb_q(game, tol=tol)
    os.makedirs(out_dir, exist_ok=True)
    _write_json(os.path.join(out_dir, "oracle.json"), solution.to_document())
    v_text = " ".join(f"{v:.6f}" for v in solution.v_star)
    print(f"oracle: iterations={solution.iterations} residual={solution.residual:.3e}")
    print(f"oracle: V* per state: {v_text}")
    return 0


def load_checkpoint(game, path: str) -> evaluation.Checkpoint:
    doc = _load_json(path)
    kind = doc.get("kind")
    if kind == "fm3q_neural":
        fq = learner.fq_from_checkpoint(game, doc)
        policies = learner.GreedyPolicyPair(fq)
    elif kind == "state_tables":
        policies = games.TablePolicyPair.from_document(doc)
    else:
        raise ValueError(f"unknown checkpoint kind {kind!r}")
    return evaluation.Checkpoint(
        method=doc.get("method", kind),
        episode=int(doc.get("episode", 0)),
        seed=int(doc.get("seed", 0)),
        policies=policies,
    )


def cmd_eval(checkpoints_dir: str, game_path: str, mode: str, out_dir: str, tol: float, seed: int, episodes: int) -> int:
    game = games.load_game(game_path)
    paths = sorted(
        os.path.join(checkpoints_dir, f)
        for f in os.listdir(checkpoints_dir)
        if f.endswith(".json")
    )
    checkpoints = []
    for path in paths:
        try:
            checkpoints.append(load_checkpoint(game, path))
        except (ValueError, KeyError) as exc:
            print(f"warning: skipping {path}: {exc}", file=sys.stderr)
    if not checkpoints:
        raise ConfigError("checkpoints", "no loadable checkpoints found")
    checkpoints.sort(key=lambda c: c.episode)
    report = evaluation.EvalReport(config={"mode": mode, "game": game_path}, seeds=[seed])
    if mode in ("roundrobin", "trend"):
        if len(checkpoints) < 2:
            raise ConfigError("checkpoints", f"mode {mode!r} needs at least 2 checkpoints")
        table, rr_raw, rr_norm = evaluation.round_robin(checkpoints, game, episodes, seed)
        report.tables["roundrobin"] = table
        report.extras["rr_raw"] = [float(v) for v in rr_raw]
        report.extras["rr_norm"] = [float(v) for v in rr_norm]
        if mode == "trend":
            report.extras["trend_fraction"] = evaluation.optimization_trend(table)
    elif mode == "nashconv":
        report.curves["nashconv"] = evaluation.nashconv_curve(checkpoints, game, tol)
    elif mode == "vsbot":
        bot = games.scripted_bot_pair(game)
        report.curves["vsbot"] = evaluation.vs_bot_curve(checkpoints, game, bot, episodes, seed)
    else:
        raise ConfigError("mode", "must be one of ['nashconv', 'roundrobin', 'trend', 'vsbot']")
    report.write(out_dir)
    print(f"eval: wrote {mode} report to {out_dir}")
    return 0


def cmd_ablate(config_path: str, out_dir: str, seed_override: int | None = None) -> int:
    config = RunConfig.from_document(_load_json(config_path))
    if seed_override is not None:
        config.seed = seed_override
        config.raw["seed"] = seed_override
    if config.buffer_sizes is None:
        raise ConfigError("buffer_sizes", "missing required field")
    game = build_game(config.game_spec)
    train_config = config.train_config()
    if train_config.checkpoint_every is None:
        train_config.checkpoint_every = max(1, config.episodes // 5)
    os.makedirs(out_dir, exist_ok=True)
    _write_json(os.path.join(out_dir, "config.json"), config.echo_document())
    report = evaluation.ablate_buffer(game, config.buffer_sizes, train_config)
    report.write(out_dir)
    print(f"ablate: final normalized RR returns {report.extras['final_rr_norm']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fm3q", description="Two-team minimax Q-learning runs")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a method from a JSON config")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", default="runs/train")
    p_train.add_argument("--seed", type=int, default=None)

    p_oracle = sub.add_parser("oracle", help="solve a tabular game exactly")
    p_oracle.add_argument("--game", required=True)
    p_oracle.add_argument("--tol", type=float, default=1e-8)
    p_oracle.add_argument("--out", default="runs/oracle")

    p_eval = sub.add_parser("eval", help="evaluate saved checkpoints")
    p_eval.add_argument("--checkpoints", required=True)
    p_eval.add_argument("--game", required=True)
    p_eval.add_argument("--mode", required=True, choices=["roundrobin", "nashconv", "trend", "vsbot"])
    p_eval.add_argument("--out", default="runs/eval")
    p_eval.add_argument("--tol", type=float, default=1e-8)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--episodes", type=int, default=4)

    p_ablate = sub.add_parser("ablate", help="replay-buffer size ablation")
    p_ablate.add_argument("--config", required=True)
    p_ablate.add_argument("--out", default="runs/ablate")
    p_ablate.add_argument("--seed", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return cmd_train(args.config, args.out, args.seed)
        if args.command == "oracle":
            return cmd_oracle(args.game, args.tol, args.out)
        if args.command == "eval":
            return cmd_eval(args.checkpoints, args.game, args.mode, args.out, args.tol, args.seed, args.episodes)
        if args.command == "ablate":
            return cmd_ablate(args.config, args.out, args.seed)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
