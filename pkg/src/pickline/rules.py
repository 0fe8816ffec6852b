"""Rule-based controllers for the four processes, the seed scoring rule for
box allocation, a uniform-random baseline, and exhaustive grid search over
rule combinations (8 rules per process, 4096 combinations).

Rule encoding
=============
FR (box allocation), indices 0-7:
    0 most items, 1 fewest items, 2 most types, 3 fewest types,
    4-7 seed-score argmax with weights (1,0), (0,1), (1,-1), (-1,1).

PC / PR1 / PR2, indices 0-7, composite keys ``(primary, secondary)``:
    index = primary_key * 4 + primary_dir * 2 + secondary_dir
    primary_key: 0 = item count, 1 = distance; dir: 0 = most/farthest,
    1 = fewest/closest; the other key breaks ties, then the lowest action id.
Count and distance keys per process:
    PC : count = unreleased items of the candidate type; distance = nearest
         conveyor currently holding that type, measured from PR1 (types not
         present anywhere rank farthest).
    PR1: count = items on the candidate conveyor matching its head type;
         distance = conveyor distance from PR1.
    PR2: count = unsorted items of the candidate box; distance = rack-slot
         distance from PR2.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .config import AGENTS, EnvConfig
from .orders import OrderSet
from .sim import FR, PC, PR1, PR2, PORT_LOADING, DecisionRequest, PickingEnv, run_episode

SEED_WEIGHTS = ((1, 0), (0, 1), (1, -1), (-1, 1))
N_RULES = 8


def seed_score(candidate_types: set[int] | list[int],
               allocated_needs: list[dict[int, int]],
               weights: tuple[int, int]) -> int:
    """Similarity of a candidate box to the allocated ones: w_s per distinct
    type the allocated boxes still require, w_d per type they exclude."""
    w_s, w_d = weights
    required = {t for need in allocated_needs for t, c in need.items() if c > 0}
    return sum(w_s if t in required else w_d for t in set(candidate_types))


def _argbest(candidates: list[int], keys: dict[int, tuple]) -> int:
    return max(candidates, key=lambda a: keys[a] + (-a,))


def _composite(rule: int, count: float, dist: float) -> tuple:
    primary_key = (rule >> 2) & 1
    p_sign = 1.0 if (rule >> 1) & 1 == 0 else -1.0
    s_sign = 1.0 if rule & 1 == 0 else -1.0
    first, second = (count, dist) if primary_key == 0 else (dist, count)
    return (p_sign * first, s_sign * second)


def rule_decide(env: PickingEnv, req: DecisionRequest, rule: int) -> int:
    if not 0 <= rule < N_RULES:
        raise ValueError(f"rule index {rule} out of range")
    candidates = [int(a) for a in np.flatnonzero(req.mask)]
    if not candidates:
        raise ValueError("empty action mask")
    keys: dict[int, tuple] = {}

    if req.agent == FR:
        if rule < 4:
            sign = 1.0 if rule % 2 == 0 else -1.0
            for b in candidates:
                size = env.box_remaining[b] if rule < 2 else len(env.required[b])
                keys[b] = (sign * size,)
        else:
            weights = SEED_WEIGHTS[rule - 4]
            allocated = [env.box_need[b] for b in range(env.n_boxes)
                         if env.box_status[b] == 1]
            for b in candidates:
                keys[b] = (float(seed_score(set(env.required[b]), allocated, weights)),)
    elif req.agent == PC:
        loc = env.pr1["loc"]
        far = float(env.cfg.n_conveyors)
        for t in candidates:
            dist = far
            for c, belt in enumerate(env.belts):
                present = t in belt or any(
                    p[0] == PORT_LOADING and p[1] == t and p[2] > 0 for p in env.ports[c])
                if present:
                    dist = min(dist, float(abs(c - loc)))
            keys[t] = _composite(rule, float(env.unreleased[t]), dist)
    elif req.agent == PR1:
        loc = env.pr1["loc"]
        for c in candidates:
            head = env.belts[c][0]
            count = sum(1 for t in env.belts[c] if t == head)
            keys[c] = _composite(rule, float(count), float(abs(c - loc)))
    elif req.agent == PR2:
        loc = env.pr2["loc"]
        for k in candidates:
            box = env.fr_slots[k]
            keys[k] = _composite(rule, float(env.box_remaining[box]), float(abs(k - loc)))
    else:
        raise ValueError(f"unknown agent {req.agent!r}")
    return _argbest(candidates, keys)


@dataclass(frozen=True)
class RuleCombo:
    fr: int
    pc: int
    pr1: int
    pr2: int

    def rule_for(self, agent: str) -> int:
        return {FR: self.fr, PC: self.pc, PR1: self.pr1, PR2: self.pr2}[agent]

    @property
    def combo_id(self) -> int:
        return ((self.fr * N_RULES + self.pc) * N_RULES + self.pr1) * N_RULES + self.pr2

    @classmethod
    def from_id(cls, combo_id: int) -> "RuleCombo":
        if not 0 <= combo_id < N_RULES ** 4:
            raise ValueError(f"combo id out of range: {combo_id}")
        pr2 = combo_id % N_RULES
        pr1 = combo_id // N_RULES % N_RULES
        pc = combo_id // N_RULES ** 2 % N_RULES
        fr = combo_id // N_RULES ** 3
        return cls(fr, pc, pr1, pr2)


class RulePolicy:
    """Deterministic decision function for a fixed rule combination."""

    def __init__(self, combo: RuleCombo):
        self.combo = combo

    def __call__(self, env: PickingEnv, req: DecisionRequest) -> int:
        return rule_decide(env, req, self.combo.rule_for(req.agent))


class RandomPolicy:
    """Uniform choice over valid actions, with its own decision stream."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def __call__(self, env: PickingEnv, req: DecisionRequest) -> int:
        valid = np.flatnonzero(req.mask)
        return int(valid[self.rng.integers(len(valid))])


@dataclass
class ComboResult:
    combo: RuleCombo
    mean: float
    std: float
    n: int


def grid_search(orders: OrderSet, env_cfg: EnvConfig | None = None,
                seeds_per_combo: int = 2, base_seed: int = 0,
                combos: list[RuleCombo] | None = None,
                progress: bool = False) -> list[ComboResult]:
    """Evaluate rule combinations; returns results sorted by mean makespan.

    Every combination sees the same environment seeds, so rankings are
    reproducible and comparisons are paired.
    """
    if combos is None:
        combos = [RuleCombo(*idx) for idx in product(range(N_RULES), repeat=4)]
    env = PickingEnv(orders, env_cfg)
    seeds = [base_seed + i for i in range(seeds_per_combo)]
    results = []
    for i, combo in enumerate(combos):
        policy = RulePolicy(combo)
        spans = [run_episode(env, policy, seed) * env.cfg.tick_seconds for seed in seeds]
        results.append(ComboResult(combo, float(np.mean(spans)),
                                   float(np.std(spans, ddof=1)) if len(spans) > 1 else 0.0,
                                   len(spans)))
        if progress and (i + 1) % 256 == 0:
            print(f"  grid search: {i + 1}/{len(combos)} combos")
    results.sort(key=lambda r: (r.mean, r.combo.combo_id))
    return results
