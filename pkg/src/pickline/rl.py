"""Policy-optimization math: masked categorical policies, the clipped PPO
objective, and advantage estimation over irregularly spaced decisions.

Decisions of the four controllers are asynchronous, so consecutive entries of
a value chain can be separated by many ticks. All discount exponents are
therefore ``delta_ticks / zeta`` where ``zeta`` rescales tick gaps to keep
terminal credit from vanishing over long episodes. The recursions:

    C_t    = r_t + gamma**(dt_t/zeta) * C_{t+1}
    delta_t = r_t + gamma**(dt_t/zeta) * V(s_{t+1}, i_{t+1}) - V(s_t, i_t)
    A_t    = delta_t + (gamma*lambda)**(dt_t/zeta) * A_{t+1}

with a zero bootstrap after the last transition. ``lambda=0`` collapses the
advantage to the TD error; ``lambda=1`` telescopes to the Monte-Carlo
advantage ``C_t - V(s_t)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Transition:
    """One decision record of one agent."""

    agent: str
    t: int  # decision tick
    obs: np.ndarray  # local observation at t (without time feature)
    time_feat: float
    state: np.ndarray  # global state vector at t
    action: int
    mask: np.ndarray
    logp_old: float
    # successor side, filled when the agent's next decision (or the terminal
    # state) is known
    dt: int = 0  # ticks to the agent-relevant successor
    reward: float = 0.0
    obs_next: np.ndarray | None = None
    state_next: np.ndarray | None = None
    terminal: bool = False
    # training annotations
    ret: float = 0.0  # reward-to-go target C_t
    value: float = 0.0
    adv: float = 0.0


@dataclass
class Rollout:
    transitions: list[Transition] = field(default_factory=list)
    makespan_ticks: int = 0
    makespan_seconds: float = 0.0

    def by_agent(self, agent: str) -> list[Transition]:
        return [tr for tr in self.transitions if tr.agent == agent]


# -- masked categorical policy -------------------------------------------


def masked_probs(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Probabilities renormalized over valid actions; invalid actions get 0."""
    logits = np.asarray(logits, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if logits.ndim == 1:
        return masked_probs(logits[None], mask[None])[0]
    if not mask.any(axis=-1).all():
        raise ValueError("all actions masked invalid")
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def renormalize_probs(probs: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Mask an existing probability vector and renormalize over valid actions."""
    probs = np.asarray(probs, dtype=float) * np.asarray(mask, dtype=float)
    total = probs.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise ValueError("all actions masked invalid")
    return probs / total


def masked_log_probs(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Log of masked probabilities; -inf on invalid actions."""
    p = masked_probs(logits, mask)
    with np.errstate(divide="ignore"):
        return np.log(p)


def sample_masked(logits: np.ndarray, mask: np.ndarray,
                  rng: np.random.Generator) -> tuple[int, float]:
    """Sample an action; returns (action, log-probability)."""
    p = masked_probs(logits, mask)
    a = int(rng.choice(len(p), p=p))
    return a, float(np.log(p[a]))


# -- PPO objective pieces -------------------------------------------------


def ppo_clip_objective(rho: np.ndarray, adv: np.ndarray, eps: float) -> float:
    """Mean clipped surrogate objective (to be maximized)."""
    rho = np.asarray(rho, dtype=float)
    adv = np.asarray(adv, dtype=float)
    clipped = np.clip(rho, 1.0 - eps, 1.0 + eps)
    return float(np.mean(np.minimum(rho * adv, clipped * adv)))


def ppo_clip_grad_coef(rho: np.ndarray, adv: np.ndarray, eps: float) -> np.ndarray:
    """d(objective)/d(log pi) per sample: rho*adv where the unclipped branch
    is active, 0 where the clip binds."""
    rho = np.asarray(rho, dtype=float)
    adv = np.asarray(adv, dtype=float)
    clipped = np.clip(rho, 1.0 - eps, 1.0 + eps)
    active = rho * adv <= clipped * adv
    return np.where(active, rho * adv, 0.0)


def critic_loss(values: np.ndarray, targets: np.ndarray) -> float:
    """Mean squared regression error of the value head."""
    values = np.asarray(values, dtype=float)
    targets = np.asarray(targets, dtype=float)
    return float(np.mean((values - targets) ** 2))


# -- rewards --------------------------------------------------------------


def local_reward(elapsed_ticks: int, tick_seconds: float = 0.1) -> float:
    """Immediate penalty: negative elapsed time between consecutive decisions."""
    if elapsed_ticks < 0:
        raise ValueError("negative elapsed time")
    return -elapsed_ticks * tick_seconds

def terminal_global_reward(makespan_seconds: float, t_ofs: float,
                           time_scale: float = 1000.0,
                           literal_eq5: bool = False) -> float:
    """Quartic terminal reward of the completion time.

    The default ("corrected") form decreases monotonically with the makespan.
    ``literal_eq5`` restores the published branch ordering, which instead
    rewards long makespans above the offset; it is kept only for audits.
    """
    if makespan_seconds <= 0:
        raise ValueError("makespan must be positive")
    t = makespan_seconds / time_scale
    above = 2.0 * ((t - t_ofs) ** 4 - 1.0)
    below = -2.0 * ((t - t_ofs) ** 4 + 1.0)
    if literal_eq5:
        return above if t >= t_ofs else below
    return below if t >= t_ofs else above


# -- advantage estimation -------------------------------------------------


def discount_coefs(dts: np.ndarray, base: float, zeta: float) -> np.ndarray:
    return np.asarray(base, dtype=float) ** (np.asarray(dts, dtype=float) / zeta)


def reward_to_go(rewards: np.ndarray, dts: np.ndarray,
                 gamma: float, zeta: float) -> np.ndarray:
    """Backward one-pass discounted reward-to-go over a chain."""
    rewards = np.asarray(rewards, dtype=float)
    coefs = discount_coefs(dts, gamma, zeta)
    out = np.empty_like(rewards)
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + coefs[i] * acc
        out[i] = acc
    return out


def mc_advantage(returns: np.ndarray, values: np.ndarray) -> np.ndarray:
    return np.asarray(returns, dtype=float) - np.asarray(values, dtype=float)


def modified_td_errors(rewards: np.ndarray, values: np.ndarray, dts: np.ndarray,
                       gamma: float, zeta: float) -> np.ndarray:
    """TD errors along a chain; the successor of the last entry bootstraps 0."""
    values = np.asarray(values, dtype=float)
    next_values = np.append(values[1:], 0.0)
    coefs = discount_coefs(dts, gamma, zeta)
    return np.asarray(rewards, dtype=float) + coefs * next_values - values


def async_gae(rewards: np.ndarray, values: np.ndarray, dts: np.ndarray,
              gamma: float, lam: float, zeta: float) -> np.ndarray:
    """Interval-aware GAE by backward recursion over a chain."""
    deltas = modified_td_errors(rewards, values, dts, gamma, zeta)
    coefs = discount_coefs(dts, gamma * lam, zeta)
    out = np.empty_like(deltas)
    acc = 0.0
    for i in range(len(deltas) - 1, -1, -1):
        acc = deltas[i] + coefs[i] * acc
        out[i] = acc
    return out


# -- diagnostics ----------------------------------------------------------


def explained_variance(v_exp: np.ndarray, v_pred: np.ndarray,
                       denominator: str = "pred") -> float | None:
    """1 - Var(residual)/Var(denominator); None when the denominator variance
    vanishes. ``denominator="pred"`` matches the published diagnostic,
    ``"exp"`` is the conventional variant."""
    v_exp = np.asarray(v_exp, dtype=float)
    v_pred = np.asarray(v_pred, dtype=float)
    if v_exp.shape != v_pred.shape or v_exp.size < 2:
        raise ValueError("need two same-length samples")
    denom = np.var(v_pred) if denominator == "pred" else np.var(v_exp)
    if denom <= 0:
        return None
    return float(1.0 - np.var(v_exp - v_pred) / denom)
