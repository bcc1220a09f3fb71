"""Clipped-surrogate policy optimization over discrete action spaces.

Actor and critic are two-hidden-layer tanh networks (64 units each by
default) trained with Adam at learning rate 1e-3. Updates follow the
standard recipe: generalized advantage estimation (gamma = 0.99,
lambda = 0.95), batch-level advantage normalization, ten epochs of
shuffled minibatches of 64, ratio clip 0.2, value-loss weight 0.5, and
entropy bonus off by default (a config knob, since very wide action
spaces may need it). All gradients are computed by explicit reverse
accumulation in nets.Mlp; the test suite checks them against central
finite differences, which is the load-bearing numerical test here.

Environments are duck-typed: ``reset() -> obs``,
``step(action) -> (obs, reward, done, info)``, plus ``observation_size``
and ``n_actions`` attributes. On terminal steps the info dict may carry
``b_values``; the trainer tracks the best terminal reward ever seen and
its protocol.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .ivim import AcquisitionProtocol
from .nets import Adam, Mlp, log_softmax, softmax

__all__ = [
    "PpoConfig",
    "PpoAgent",
    "RolloutBuffer",
    "PpoNanError",
    "ppo_update",
    "train",
    "rollout_greedy",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_VERSION = 1


class PpoNanError(RuntimeError):
    """Loss or weights became non-finite; training aborted with diagnostics."""


@dataclass(frozen=True)
class PpoConfig:
    total_steps: int = 100_000
    rollout_steps: int = 2048
    minibatch_size: int = 64
    n_epochs: int = 10
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_range: float = 0.2
    ent_coef: float = 0.0
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    learning_rate: float = 1.0e-3
    hidden_size: int = 64
    adam_eps: float = 1.0e-5

    def __post_init__(self) -> None:
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if self.rollout_steps < 1 or self.minibatch_size < 1 or self.n_epochs < 1:
            raise ValueError("rollout_steps, minibatch_size and n_epochs must be >= 1")


class PpoAgent:
    """Actor/critic pair sharing nothing but their input."""

    def __init__(
        self,
        observation_size: int,
        n_actions: int,
        rng: np.random.Generator,
        config: PpoConfig = PpoConfig(),
    ):
        self.observation_size = observation_size
        self.n_actions = n_actions
        self.config = config
        h = config.hidden_size
        # small-gain head keeps the initial policy near uniform
        self.actor = Mlp((observation_size, h, h, n_actions), rng, out_gain=0.01)
        self.critic = Mlp((observation_size, h, h, 1), rng, out_gain=1.0)
        self.optimizer = Adam(
            self.actor.parameters + self.critic.parameters,
            lr=config.learning_rate,
            eps=config.adam_eps,
        )

    def policy_forward(self, observation: np.ndarray):
        """(action probabilities, value estimate) for a single observation."""
        obs = np.atleast_2d(np.asarray(observation, dtype=float))
        logits, _ = self.actor.forward(obs)
        value, _ = self.critic.forward(obs)
        return softmax(logits)[0], float(value[0, 0])

    def act(self, observation: np.ndarray, rng: np.random.Generator):
        """Sample an action; returns (action, log_probability, value)."""
        probs, value = self.policy_forward(observation)
        action = int(rng.choice(self.n_actions, p=probs))
        return action, float(np.log(probs[action])), value

    def greedy_action(self, observation: np.ndarray) -> int:
        probs, _ = self.policy_forward(observation)
        return int(np.argmax(probs))

    def check_finite(self) -> None:
        for p in self.actor.parameters + self.critic.parameters:
            if not np.isfinite(p).all():
                raise PpoNanError("non-finite network weights after update")


class RolloutBuffer:
    """Fixed-capacity on-policy storage with GAE post-processing."""

    def __init__(self, capacity: int, observation_size: int):
        self.capacity = capacity
        self.observations = np.empty((capacity, observation_size))
        self.actions = np.empty(capacity, dtype=int)
        self.log_probs = np.empty(capacity)
        self.rewards = np.empty(capacity)
        self.values = np.empty(capacity)
        self.dones = np.empty(capacity, dtype=bool)
        self.size = 0

    def add(self, obs, action, log_prob, reward, value, done) -> None:
        i = self.size
        if i >= self.capacity:
            raise IndexError("rollout buffer full")
        self.observations[i] = obs
        self.actions[i] = action
        self.log_probs[i] = log_prob
        self.rewards[i] = reward
        self.values[i] = value
        self.dones[i] = done
        self.size = i + 1

    def compute_advantages(self, last_value: float, gamma: float, gae_lambda: float):
        """Backward GAE recursion; returns (advantages, returns).

        ``last_value`` bootstraps the state following the final stored
        step; it is masked out when that step ended its episode.
        """
        n = self.size
        advantages = np.zeros(n)
        gae = 0.0
        for t in range(n - 1, -1, -1):
            non_terminal = 0.0 if self.dones[t] else 1.0
            next_value = last_value if t == n - 1 else self.values[t + 1]
            delta = self.rewards[t] + gamma * next_value * non_terminal - self.values[t]
            gae = delta + gamma * gae_lambda * non_terminal * gae
            advantages[t] = gae
        returns = advantages + self.values[:n]
        if not (np.isfinite(advantages).all() and np.isfinite(returns).all()):
            raise PpoNanError("non-finite advantages in rollout")
        return advantages, returns


def _clip_global_norm(grads, max_norm: float):
    total = np.sqrt(sum(float((g**2).sum()) for g in grads))
    if max_norm > 0.0 and total > max_norm:
        scale = max_norm / total
        grads = [g * scale for g in grads]
    return grads


def ppo_update(agent: PpoAgent, buffer: RolloutBuffer, last_value: float,
               rng: np.random.Generator, config: PpoConfig | None = None):
    """One full optimization phase over a collected rollout.

    Runs n_epochs of shuffled minibatches with one Adam step each and
    returns mean loss statistics. Raises PpoNanError if any loss or
    weight goes non-finite.
    """
    config = config or agent.config
    n = buffer.size
    if n == 0:
        raise ValueError("cannot update from an empty rollout")
    advantages, returns = buffer.compute_advantages(last_value, config.gamma, config.gae_lambda)
    advantages = (advantages - advantages.mean()) / (advantages.std() + 1.0e-8)

    observations = buffer.observations[:n]
    actions = buffer.actions[:n]
    log_probs_old = buffer.log_probs[:n]

    stats = {"policy_loss": [], "value_loss": [], "entropy": [], "approx_kl": []}
    for _ in range(config.n_epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            idx = order[start : start + config.minibatch_size]
            batch = len(idx)
            obs_mb = observations[idx]
            act_mb = actions[idx]
            adv_mb = advantages[idx]
            ret_mb = returns[idx]
            logp_old_mb = log_probs_old[idx]

            logits, actor_cache = agent.actor.forward(obs_mb)
            logp_all = log_softmax(logits)
            probs = np.exp(logp_all)
            rows = np.arange(batch)
            logp_act = logp_all[rows, act_mb]
            ratio = np.exp(logp_act - logp_old_mb)
            unclipped = ratio * adv_mb
            clipped = np.clip(ratio, 1.0 - config.clip_range, 1.0 + config.clip_range) * adv_mb
            policy_loss = -np.minimum(unclipped, clipped).mean()

            entropy_per = -(probs * logp_all).sum(axis=1)
            entropy = entropy_per.mean()

            values, critic_cache = agent.critic.forward(obs_mb)
            value_err = values[:, 0] - ret_mb
            value_loss = float((value_err**2).mean())

            total_loss = policy_loss + config.vf_coef * value_loss - config.ent_coef * entropy
            if not np.isfinite(total_loss):
                raise PpoNanError(
                    f"non-finite loss (policy={policy_loss}, value={value_loss}, "
                    f"entropy={entropy})"
                )

            # d(policy_loss)/d(logp_act): the clipped branch has zero slope
            active = unclipped <= clipped
            dlogp_act = np.where(active, ratio * adv_mb, 0.0) * (-1.0 / batch)
            dlogits = -probs * dlogp_act[:, None]
            dlogits[rows, act_mb] += dlogp_act
            if config.ent_coef != 0.0:
                # dH/dlogits = -p * (logp + H)
                d_entropy = -probs * (logp_all + entropy_per[:, None])
                dlogits += (-config.ent_coef / batch) * d_entropy
            dvalues = (2.0 * config.vf_coef / batch) * value_err[:, None]

            grads = agent.actor.backward(actor_cache, dlogits) + agent.critic.backward(
                critic_cache, dvalues
            )
            grads = _clip_global_norm(grads, config.max_grad_norm)
            agent.optimizer.step(grads)
            agent.check_finite()

            stats["policy_loss"].append(float(policy_loss))
            stats["value_loss"].append(value_loss)
            stats["entropy"].append(float(entropy))
            stats["approx_kl"].append(float((logp_old_mb - logp_act).mean()))
    return {key: float(np.mean(values)) for key, values in stats.items()}


@dataclass
class TrainResult:
    agent: PpoAgent
    best_reward: float
    best_protocol: AcquisitionProtocol | None
    curve: list = field(default_factory=list)  # (env_step, mean_episode_reward, best_reward)
    episodes: int = 0
    update_stats: list = field(default_factory=list)


def _protocol_from_info(info: dict) -> AcquisitionProtocol | None:
    b_values = info.get("b_values")
    return AcquisitionProtocol(tuple(b_values)) if b_values is not None else None


def train(env, config: PpoConfig, rng: np.random.Generator, agent: PpoAgent | None = None) -> TrainResult:
    """Rollout/update loop until the step budget is exhausted.

    Tracks the best terminal reward ever seen (and its protocol, when the
    environment reports one). A zero-step budget returns the freshly
    initialized agent with the environment's initial protocol.
    """
    if agent is None:
        agent = PpoAgent(env.observation_size, env.n_actions, rng, config)
    result = TrainResult(
        agent=agent,
        best_reward=-np.inf,
        best_protocol=getattr(env, "initial_protocol", None),
    )
    if config.total_steps == 0:
        return result

    obs = env.reset()
    steps_done = 0
    episode_return = 0.0
    while steps_done < config.total_steps:
        horizon = min(config.rollout_steps, config.total_steps - steps_done)
        buffer = RolloutBuffer(horizon, env.observation_size)
        episode_rewards = []
        for _ in range(horizon):
            action, log_prob, value = agent.act(obs, rng)
            next_obs, reward, done, info = env.step(action)
            buffer.add(obs, action, log_prob, reward, value, done)
            episode_return += reward
            if done:
                result.episodes += 1
                episode_rewards.append(episode_return)
                if episode_return > result.best_reward:
                    result.best_reward = episode_return
                    protocol = _protocol_from_info(info)
                    if protocol is not None:
                        result.best_protocol = protocol
                episode_return = 0.0
                next_obs = env.reset()
            obs = next_obs
        _, last_value = agent.policy_forward(obs)
        result.update_stats.append(ppo_update(agent, buffer, last_value, rng, config))
        steps_done += horizon
        mean_reward = float(np.mean(episode_rewards)) if episode_rewards else np.nan
        best = result.best_reward if np.isfinite(result.best_reward) else np.nan
        result.curve.append((steps_done, mean_reward, best))
    return result


def rollout_greedy(agent: PpoAgent, env):
    """One argmax-policy episode; returns (protocol_or_None, total_reward, info)."""
    obs = env.reset()
    done = False
    total = 0.0
    info: dict = {}
    while not done:
        obs, reward, done, info = env.step(agent.greedy_action(obs))
        total += reward
    return _protocol_from_info(info), total, info


def save_checkpoint(path, agent: PpoAgent, steps_done: int, extra: dict | None = None,
                    rng: np.random.Generator | None = None) -> None:
    """Versioned dump of weights, optimizer moments, counters and RNG state."""
    arrays = {}
    for i, p in enumerate(agent.actor.parameters):
        arrays[f"actor_{i}"] = p
    for i, p in enumerate(agent.critic.parameters):
        arrays[f"critic_{i}"] = p
    opt_state = agent.optimizer.get_state()
    for i, m in enumerate(opt_state["m"]):
        arrays[f"adam_m_{i}"] = m
    for i, v in enumerate(opt_state["v"]):
        arrays[f"adam_v_{i}"] = v
    meta = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "observation_size": agent.observation_size,
        "n_actions": agent.n_actions,
        "adam_t": opt_state["t"],
        "steps_done": int(steps_done),
        "config": asdict(agent.config),
        "rng_state": rng.bit_generator.state if rng is not None else None,
        "extra": extra or {},
    }
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    # write the npz container by hand with pinned entry timestamps, so a
    # rerun with the same seed produces byte-identical checkpoints
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(path.suffix + ".npz")
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as archive:
        for name in sorted(arrays):
            buffer = io.BytesIO()
            np.save(buffer, np.asarray(arrays[name]))
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            archive.writestr(info, buffer.getvalue())


def restore_rng(meta: dict) -> np.random.Generator | None:
    """Generator resuming exactly where a checkpointed stream stopped."""
    state = meta.get("rng_state")
    if state is None:
        return None
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng


def load_checkpoint(path):
    """Rebuild (agent, steps_done, meta) from a checkpoint file."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta["checkpoint_version"] != CHECKPOINT_VERSION:
            raise ValueError(
                f"checkpoint version {meta['checkpoint_version']} not supported "
                f"(expected {CHECKPOINT_VERSION})"
            )
        config = PpoConfig(**meta["config"])
        agent = PpoAgent(
            meta["observation_size"], meta["n_actions"], np.random.default_rng(0), config
        )
        n_params = len(agent.actor.parameters)
        agent.actor.set_state([data[f"actor_{i}"] for i in range(n_params)])
        agent.critic.set_state([data[f"critic_{i}"] for i in range(len(agent.critic.parameters))])
        total = n_params + len(agent.critic.parameters)
        agent.optimizer.set_state(
            {
                "m": [data[f"adam_m_{i}"] for i in range(total)],
                "v": [data[f"adam_v_{i}"] for i in range(total)],
                "t": meta["adam_t"],
            }
        )
    return agent, meta["steps_done"], meta
