"""The four training frameworks and the episodic rollout/update loop.

Framework taxonomy (critic side; actors always see only local observations):

    illr  local state,  local reward,   4 individual critics
    ilgr  local state,  global reward,  4 individual critics
    cdic  global state, global reward,  4 individual critics
    cdsc  global state + agent id, global reward, 1 shared critic

Global-reward frameworks are trained in the sparse terminal setting: the
only nonzero reward is the quartic makespan reward on the final transition.
For cdsc, value chains (TD errors, GAE) run over the merged time-ordered
stream of all agents; the other frameworks chain per agent.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import AGENTS, EnvConfig, TrainConfig
from .nn import Adam, Mlp, POLICY_HEAD_GAIN, VALUE_HEAD_GAIN, load_checkpoint, save_checkpoint
from .orders import OrderSet
from .rl import (Rollout, Transition, async_gae, explained_variance, masked_probs,
                 mc_advantage, modified_td_errors, ppo_clip_grad_coef, reward_to_go,
                 sample_masked, terminal_global_reward)
from .sim import DecisionRequest, PickingEnv

AGENT_IDX = {a: i for i, a in enumerate(AGENTS)}
VALUE_STAT_MOMENTUM = 0.99  # EMA horizon of the per-critic return statistics


def one_hot_agent(agent: str) -> np.ndarray:
    v = np.zeros(len(AGENTS))
    v[AGENT_IDX[agent]] = 1.0
    return v


def shared_critic_input(state: np.ndarray, agent: str) -> np.ndarray:
    """Global state concatenated with a one-hot agent-ID block."""
    return np.concatenate([state, one_hot_agent(agent)])


@dataclass
class AgentBundle:
    """Actors (one per agent) plus critics as dictated by the framework."""

    framework: str
    actors: dict[str, Mlp]
    critics: dict[str, Mlp]  # per-agent, or {"shared": net}
    obs_dims: dict[str, int]
    action_dims: dict[str, int]
    state_dim: int
    obs_scale: float  # count features are divided by this before the nets
    optimizers: dict[str, Adam] = field(default_factory=dict)
    # per-critic running return statistics; critics regress normalized targets
    # (keeps tanh layers out of saturation whatever the reward scale)
    value_stats: dict[str, tuple[float, float]] = field(default_factory=dict)

    @classmethod
    def create(cls, framework: str, env: PickingEnv, cfg: TrainConfig,
               seed: int) -> "AgentBundle":
        obs_dims = {a: len(env.observe(a)) for a in AGENTS}
        action_dims = env.action_sizes()
        state_dim = len(env.global_state())
        hidden = [cfg.hidden_units] * cfg.hidden_layers
        ss = seed if isinstance(seed, np.random.SeedSequence) \
            else np.random.SeedSequence(seed)
        seeds = ss.spawn(2 * len(AGENTS) + 1)
        actors = {}
        critics = {}
        for i, a in enumerate(AGENTS):
            actors[a] = Mlp.init([obs_dims[a] + 1] + hidden + [action_dims[a]],
                                 POLICY_HEAD_GAIN, seeds[i])
        if framework == "cdsc":
            critics["shared"] = Mlp.init([state_dim + len(AGENTS)] + hidden + [1],
                                         VALUE_HEAD_GAIN, seeds[len(AGENTS)])
        else:
            for i, a in enumerate(AGENTS):
                dim = state_dim if framework == "cdic" else obs_dims[a] + 1
                critics[a] = Mlp.init([dim] + hidden + [1], VALUE_HEAD_GAIN,
                                      seeds[len(AGENTS) + 1 + i])
        bundle = cls(framework, actors, critics, obs_dims, action_dims, state_dim,
                     obs_scale=float(max(1, env.orders.n_items)))
        bundle.optimizers = {
            **{f"actor/{a}": Adam(actors[a].params(), cfg.lr_actor,
                                  decay=cfg.lr_decay, decay_every=cfg.lr_decay_every)
               for a in AGENTS},
            **{f"critic/{name}": Adam(net.params(), cfg.lr_critic,
                                      decay=cfg.lr_decay, decay_every=cfg.lr_decay_every)
               for name, net in critics.items()},
        }
        return bundle

    # -- network inputs ---------------------------------------------------

    def actor_input(self, tr_obs: np.ndarray, time_feat: float) -> np.ndarray:
        return np.append(tr_obs / self.obs_scale, time_feat)

    def critic_input(self, tr: Transition) -> np.ndarray:
        if self.framework == "cdsc":
            return shared_critic_input(tr.state / self.obs_scale, tr.agent)
        if self.framework == "cdic":
            return tr.state / self.obs_scale
        return self.actor_input(tr.obs, tr.time_feat)

    def critic_for(self, agent: str) -> Mlp:
        return self.critics["shared"] if self.framework == "cdsc" else self.critics[agent]

    def critic_name(self, agent: str) -> str:
        return "shared" if self.framework == "cdsc" else agent

    def normalize_targets(self, name: str, targets: np.ndarray) -> np.ndarray:
        """Fold a batch of return targets into the running statistics and
        return the batch in normalized units."""
        mean = float(np.mean(targets))
        std = float(np.std(targets)) + 1e-8
        if name in self.value_stats:
            m0, s0 = self.value_stats[name]
            mean = VALUE_STAT_MOMENTUM * m0 + (1 - VALUE_STAT_MOMENTUM) * mean
            std = VALUE_STAT_MOMENTUM * s0 + (1 - VALUE_STAT_MOMENTUM) * std
        self.value_stats[name] = (mean, std)
        return (np.asarray(targets, dtype=float) - mean) / std

    def _denormalize(self, name: str, raw: np.ndarray) -> np.ndarray:
        mean, std = self.value_stats.get(name, (0.0, 1.0))
        return raw * std + mean

    def predict_values(self, transitions: list[Transition]) -> np.ndarray:
        """Batched critic evaluation in transition order (reward units)."""
        values = np.empty(len(transitions))
        if self.framework == "cdsc":
            x = np.stack([self.critic_input(tr) for tr in transitions])
            values[:] = self._denormalize("shared",
                                          self.critics["shared"].forward(x)[0][:, 0])
        else:
            for agent in AGENTS:
                idx = [i for i, tr in enumerate(transitions) if tr.agent == agent]
                if idx:
                    x = np.stack([self.critic_input(transitions[i]) for i in idx])
                    values[idx] = self._denormalize(
                        agent, self.critics[agent].forward(x)[0][:, 0])
        return values

    # -- checkpoints ------------------------------------------------------

    def save(self, path: str | Path, meta: dict[str, str] | None = None) -> None:
        nets = {f"actor/{a}": net for a, net in self.actors.items()}
        nets.update({f"critic/{name}": net for name, net in self.critics.items()})
        base = {"framework": self.framework, "obs_scale": repr(self.obs_scale),
                "state_dim": str(self.state_dim)}
        for name, (mean, std) in self.value_stats.items():
            base[f"vstat/{name}"] = f"{mean!r} {std!r}"
        base.update(meta or {})
        save_checkpoint(path, nets, self.optimizers, base)

    @classmethod
    def load(cls, path: str | Path) -> "AgentBundle":
        nets, opt_states, meta = load_checkpoint(path)
        actors = {a: nets[f"actor/{a}"] for a in AGENTS}
        critics = {k.split("/", 1)[1]: v for k, v in nets.items() if k.startswith("critic/")}
        obs_dims = {a: actors[a].sizes[0] - 1 for a in AGENTS}
        action_dims = {a: actors[a].sizes[-1] for a in AGENTS}
        bundle = cls(meta["framework"], actors, critics, obs_dims, action_dims,
                     int(meta["state_dim"]), float(meta["obs_scale"]))
        for key, raw in meta.items():
            if key.startswith("vstat/"):
                mean, std = (float(v) for v in raw.split())
                bundle.value_stats[key[len("vstat/"):]] = (mean, std)
        for name in list(actors) + list(critics):
            key = f"actor/{name}" if name in actors else f"critic/{name}"
            net = actors.get(name) or critics[name]
            if key in opt_states:
                bundle.optimizers[key] = Adam.from_state(net.params(), opt_states[key])
        return bundle


class NetworkPolicy:
    """Decision function backed by a bundle's actors (sampled or greedy)."""

    def __init__(self, bundle: AgentBundle, seed: int, greedy: bool = False,
                 actor_override: dict[str, Mlp] | None = None):
        self.bundle = bundle
        self.actors = dict(bundle.actors)
        if actor_override:
            self.actors.update(actor_override)
        self.rng = np.random.default_rng(seed)
        self.greedy = greedy

    def __call__(self, env: PickingEnv, req: DecisionRequest) -> int:
        x = self.bundle.actor_input(req.observation, env.time_feature())
        logits, _ = self.actors[req.agent].forward(x)
        probs = masked_probs(logits, req.mask)
        if self.greedy:
            return int(np.argmax(probs))
        return int(self.rng.choice(len(probs), p=probs))


# -- rollout collection ---------------------------------------------------


def collect_rollout(env: PickingEnv, bundle: AgentBundle, cfg: TrainConfig,
                    env_seed: int, policy_seed: int) -> Rollout:
    """Run one episode with the current (masked, stochastic) policies and
    return the fully annotated rollout: successor links, rewards, value
    targets, and advantages per the framework."""
    rng = np.random.default_rng(policy_seed)
    requests = env.reset(env_seed)
    transitions: list[Transition] = []
    last_by_agent: dict[str, Transition] = {}
    done = env.done
    while not done:
        decisions = {}
        if requests:
            state = env.global_state()
            for req in requests:
                x = bundle.actor_input(req.observation, env.time_feature())
                logits, _ = bundle.actors[req.agent].forward(x)
                action, logp = sample_masked(logits, req.mask, rng)
                decisions[req.agent] = action
                tr = Transition(agent=req.agent, t=env.tick, obs=req.observation,
                                time_feat=env.time_feature(), state=state,
                                action=action, mask=req.mask, logp_old=logp)
                prev = last_by_agent.get(req.agent)
                if prev is not None:
                    prev.dt = tr.t - prev.t
                    prev.obs_next = tr.obs
                    prev.state_next = state
                last_by_agent[req.agent] = tr
                transitions.append(tr)
        requests, done = env.step(decisions)

    rollout = Rollout(transitions, env.makespan_ticks,
                      env.makespan_ticks * env.cfg.tick_seconds)
    for tr in last_by_agent.values():
        tr.dt = max(1, env.makespan_ticks - tr.t)
        tr.terminal = True
    annotate_rollout(rollout, bundle, cfg, env.cfg)
    return rollout


def annotate_rollout(rollout: Rollout, bundle: AgentBundle, cfg: TrainConfig,
                     env_cfg: EnvConfig) -> None:
    """Attach rewards, value predictions, return targets, and advantages."""
    framework = bundle.framework
    r_tml = terminal_global_reward(rollout.makespan_seconds, cfg.reward.t_ofs,
                                   cfg.reward.time_scale, cfg.reward.literal_eq5)
    for tr in rollout.transitions:
        if framework == "illr":
            # local penalty: time between consecutive own decisions; the final
            # decision has no successor, so it carries a single-tick penalty
            # rather than the time to episode end
            tr.reward = -(1 if tr.terminal else tr.dt) * env_cfg.tick_seconds
        else:
            tr.reward = 0.0

    values = bundle.predict_values(rollout.transitions)
    for tr, v in zip(rollout.transitions, values):
        tr.value = float(v)

    if framework == "cdsc":
        chains = [sorted(rollout.transitions, key=lambda tr: (tr.t, AGENT_IDX[tr.agent]))]
        # merged chain: gaps run decision-to-next-decision across agents, and
        # the single terminal reward sits at the end of the merged stream
        for chain in chains:
            for a, b in zip(chain[:-1], chain[1:]):
                a._merged_dt = b.t - a.t
            chain[-1]._merged_dt = max(1, rollout.makespan_ticks - chain[-1].t)
            chain[-1].reward = r_tml
    else:
        if framework != "illr":
            # per-agent chains: each agent's last transition carries the
            # terminal reward, received at episode end
            for tr in rollout.transitions:
                if tr.terminal:
                    tr.reward = r_tml
        chains = [rollout.by_agent(a) for a in AGENTS]

    zeta = cfg.zeta
    illr_dense = framework == "illr" and not cfg.reward.illr_zeta_scaling
    for chain in chains:
        if not chain:
            continue
        dts = np.array([getattr(tr, "_merged_dt", tr.dt) for tr in chain], dtype=float)
        if illr_dense:
            # dense local rewards: unit discount steps, no tick scaling
            dts = np.ones_like(dts)
            chain_zeta = 1.0
        else:
            chain_zeta = zeta
        rewards = np.array([tr.reward for tr in chain])
        vals = np.array([tr.value for tr in chain])
        rets = reward_to_go(rewards, dts, cfg.gamma, chain_zeta)
        if cfg.advantage == "mc":
            advs = mc_advantage(rets, vals)
        elif cfg.advantage == "td0":
            advs = modified_td_errors(rewards, vals, dts, cfg.gamma, chain_zeta)
        else:
            advs = async_gae(rewards, vals, dts, cfg.gamma, cfg.lam, chain_zeta)
        for tr, ret, adv in zip(chain, rets, advs):
            tr.ret = float(ret)
            tr.adv = float(adv)


# -- PPO update -----------------------------------------------------------


def _entropy_grad(probs: np.ndarray) -> np.ndarray:
    """dH/dlogits for a (masked) categorical distribution, per sample."""
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.where(probs > 0, np.log(probs), 0.0)
    ent = -(probs * logp).sum(axis=1, keepdims=True)
    return -probs * (logp + ent)


def update(bundle: AgentBundle, rollouts: list[Rollout], cfg: TrainConfig,
           episode: int, rng: np.random.Generator) -> dict[str, float]:
    """One episodic PPO update over the rollout buffer.

    Each actor trains only on its own agent's transitions; the shared critic
    trains on all transitions, individual critics on their agent's.
    """
    transitions = [tr for ro in rollouts for tr in ro.transitions]
    metrics: dict[str, float] = {}
    for opt in bundle.optimizers.values():
        opt.set_episode(episode)

    per_agent: dict[str, dict[str, np.ndarray]] = {}
    for agent in AGENTS:
        trs = [tr for tr in transitions if tr.agent == agent]
        if not trs:
            continue
        adv = np.array([tr.adv for tr in trs])
        if cfg.advantage_norm and len(trs) > 1:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        per_agent[agent] = {
            "x": np.stack([bundle.actor_input(tr.obs, tr.time_feat) for tr in trs]),
            "a": np.array([tr.action for tr in trs]),
            "mask": np.stack([tr.mask for tr in trs]),
            "logp_old": np.array([tr.logp_old for tr in trs]),
            "adv": adv,
        }

    critic_data: dict[str, dict[str, np.ndarray]] = {}
    for name, net in bundle.critics.items():
        trs = transitions if name == "shared" else [tr for tr in transitions
                                                    if tr.agent == name]
        critic_data[name] = {
            "x": np.stack([bundle.critic_input(tr) for tr in trs]),
            "y": bundle.normalize_targets(name, np.array([tr.ret for tr in trs])),
        }

    clip_hits = clip_total = 0
    actor_obj = []
    entropies = []
    critic_losses = []
    for _epoch in range(cfg.epochs):
        for agent, data in per_agent.items():
            n = len(data["a"])
            order = rng.permutation(n)
            actor = bundle.actors[agent]
            opt = bundle.optimizers[f"actor/{agent}"]
            for start in range(0, n, cfg.minibatch):
                mb = order[start:start + cfg.minibatch]
                logits, cache = actor.forward(data["x"][mb])
                probs = masked_probs(logits, data["mask"][mb])
                rows = np.arange(len(mb))
                logp = np.log(probs[rows, data["a"][mb]])
                rho = np.exp(logp - data["logp_old"][mb])
                adv = data["adv"][mb]
                coef = ppo_clip_grad_coef(rho, adv, cfg.clip_eps)
                clip_hits += int(np.sum(coef == 0.0))
                clip_total += len(mb)
                onehot = np.zeros_like(probs)
                onehot[rows, data["a"][mb]] = 1.0
                d_logits = coef[:, None] * (onehot - probs) / len(mb)
                if cfg.entropy_coef:
                    d_logits = d_logits + cfg.entropy_coef * _entropy_grad(probs) / len(mb)
                dw, db, _ = actor.backward(cache, -d_logits)  # minimize -objective
                opt.step(actor.params(), dw + db)
                clipped = np.clip(rho, 1 - cfg.clip_eps, 1 + cfg.clip_eps)
                actor_obj.append(float(np.mean(np.minimum(rho * adv, clipped * adv))))
                with np.errstate(divide="ignore", invalid="ignore"):
                    lp = np.where(probs > 0, np.log(probs), 0.0)
                entropies.append(float(np.mean(-(probs * lp).sum(axis=1))))
        for name, data in critic_data.items():
            n = len(data["y"])
            order = rng.permutation(n)
            net = bundle.critics[name]
            opt = bundle.optimizers[f"critic/{name}"]
            for start in range(0, n, cfg.minibatch):
                mb = order[start:start + cfg.minibatch]
                v, cache = net.forward(data["x"][mb])
                err = v[:, 0] - data["y"][mb]
                critic_losses.append(float(np.mean(err ** 2)))
                dv = (2.0 * err / len(mb))[:, None]
                dw, db, _ = net.backward(cache, dv)
                opt.step(net.params(), dw + db)

    metrics["actor_objective"] = float(np.mean(actor_obj)) if actor_obj else 0.0
    metrics["critic_loss"] = float(np.mean(critic_losses)) if critic_losses else 0.0
    metrics["entropy"] = float(np.mean(entropies)) if entropies else 0.0
    metrics["clip_fraction"] = clip_hits / clip_total if clip_total else 0.0
    return metrics


# -- training loop --------------------------------------------------------

METRIC_FIELDS = ["episode", "seed", "makespan_mean", "makespan_std",
                 "actor_objective", "critic_loss", "entropy", "clip_fraction",
                 "lr_actor", "wall_seconds"] + [f"ev_{a}" for a in AGENTS]


def train(cfg: TrainConfig, orders: OrderSet, env_cfg: EnvConfig | None,
          seed: int, out_dir: str | Path, run_label: str | None = None,
          progress_every: int = 0) -> tuple[Path, list[dict[str, float]]]:
    """Full episodic training of one framework on one order set with one
    master seed. Writes a metric CSV and a final checkpoint; returns both."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    label = run_label or f"{cfg.framework}_{cfg.advantage}_s{seed}"
    env = PickingEnv(orders, env_cfg)
    root = np.random.SeedSequence([seed, 0xA0BE])
    bundle_seed, update_seed = root.spawn(2)
    bundle = AgentBundle.create(cfg.framework, env, cfg, bundle_seed)
    upd_rng = np.random.default_rng(update_seed)

    metrics_path = out_dir / f"metrics_{label}.csv"
    ckpt_path = out_dir / f"checkpoint_{label}.npz"
    history: list[dict[str, float]] = []
    t_start = time.time()
    with open(metrics_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        writer.writeheader()
        for episode in range(cfg.episodes):
            rollouts = []
            for ridx in range(cfg.rollouts_per_episode):
                ss = np.random.SeedSequence([seed, episode, ridx])
                env_seed, pol_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
                rollouts.append(collect_rollout(env, bundle, cfg, env_seed, pol_seed))
            spans = np.array([ro.makespan_seconds for ro in rollouts])
            evs = {}
            for a in AGENTS:
                trs = [tr for ro in rollouts for tr in ro.by_agent(a)]
                ev = explained_variance(np.array([tr.ret for tr in trs]),
                                        np.array([tr.value for tr in trs])) \
                    if len(trs) > 1 else None
                evs[f"ev_{a}"] = float("nan") if ev is None else ev
            m = update(bundle, rollouts, cfg, episode, upd_rng)
            row = {"episode": episode, "seed": seed,
                   "makespan_mean": float(spans.mean()),
                   "makespan_std": float(spans.std(ddof=1)) if len(spans) > 1 else 0.0,
                   "lr_actor": bundle.optimizers[f"actor/{AGENTS[0]}"].lr,
                   "wall_seconds": round(time.time() - t_start, 2),
                   **m, **evs}
            writer.writerow(row)
            fh.flush()
            history.append(row)
            if progress_every and (episode + 1) % progress_every == 0:
                print(f"[{label}] episode {episode + 1}/{cfg.episodes} "
                      f"makespan {row['makespan_mean']:.1f}s")
            if cfg.checkpoint_every and (episode + 1) % cfg.checkpoint_every == 0:
                bundle.save(out_dir / f"checkpoint_{label}_ep{episode + 1}.npz",
                            {"episode": str(episode + 1)})
    bundle.save(ckpt_path, {"episode": str(cfg.episodes), "seed": str(seed)})
    return ckpt_path, history
