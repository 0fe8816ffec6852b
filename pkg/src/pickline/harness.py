"""Experiment orchestration: policy evaluation, the policy-switch study,
Welch's t-test, learning-curve emission, and reproducibility manifests.

Every experiment directory gets a ``manifest.json`` with the full
configuration, seeds, and library versions, sufficient to reproduce the run.
"""

from __future__ import annotations

import csv
import json
import os
import platform
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats as sps

from . import __version__
from .config import AGENTS, EnvConfig, TrainConfig, as_dict
from .marl import AgentBundle, NetworkPolicy
from .orders import OrderSet
from .rules import RandomPolicy, RuleCombo, RulePolicy
from .sim import PickingEnv, run_episode


@dataclass
class MakespanStats:
    mean: float
    std: float
    n: int
    raw: list[float]

    def row(self) -> dict[str, float]:
        return {"mean": self.mean, "std": self.std, "n": self.n}


def worker_count() -> int:
    return max(1, int(os.environ.get("PICKLINE_WORKERS", "1")))


# -- policy sources -------------------------------------------------------


def make_policy(source, seed: int, greedy: bool = False,
                actor_override: dict | None = None):
    """Build a decision function from a checkpoint path, bundle, rule combo,
    or the string ``"random"``."""
    if source == "random":
        return RandomPolicy(seed)
    if isinstance(source, RuleCombo):
        return RulePolicy(source)
    if isinstance(source, (str, Path)):
        source = AgentBundle.load(source)
    if isinstance(source, AgentBundle):
        return NetworkPolicy(source, seed, greedy=greedy, actor_override=actor_override)
    raise TypeError(f"unsupported policy source {type(source)!r}")


def evaluate(source, orders: OrderSet, env_cfg: EnvConfig | None = None,
             n_rollouts: int = 192, seed: int = 0, greedy: bool = False,
             actor_override: dict | None = None,
             trace_path: str | Path | None = None) -> MakespanStats:
    """Mean and standard deviation of the makespan over ``n_rollouts``
    episodes. Policies sample stochastically by default, matching how they
    behaved during training; ``greedy`` switches to argmax actions."""
    env = PickingEnv(orders, env_cfg, trace=trace_path is not None)
    spans: list[float] = []
    for i in range(n_rollouts):
        policy = make_policy(source, seed=seed * 1_000_003 + i, greedy=greedy,
                             actor_override=actor_override)
        ticks = run_episode(env, policy, seed=seed + i)
        spans.append(ticks * env.cfg.tick_seconds)
        if trace_path is not None and i == 0:
            with open(trace_path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["tick", "agent", "event", "detail"])
                writer.writerows(env.trace_rows)
    arr = np.array(spans)
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return MakespanStats(float(arr.mean()), std, len(arr), spans)


# -- statistics -----------------------------------------------------------


def welch_t(sample_a, sample_b) -> tuple[float, float, float]:
    """Welch's unequal-variance t-test; returns (t, dof, two-sided p)."""
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("need at least two samples per group")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va <= 0 and vb <= 0:
        raise ValueError("degenerate variance in both samples")
    sa, sb = va / len(a), vb / len(b)
    t = (a.mean() - b.mean()) / np.sqrt(sa + sb)
    dof = (sa + sb) ** 2 / (sa ** 2 / (len(a) - 1) + sb ** 2 / (len(b) - 1))
    p = 2.0 * float(sps.t.sf(abs(t), dof))
    return float(t), float(dof), p


# -- policy-switch study --------------------------------------------------


def switch_study(cdsc_ckpt, illr_ckpt, orders: OrderSet,
                 env_cfg: EnvConfig | None = None, n_rollouts: int = 64,
                 seed: int = 0, greedy: bool = False) -> dict[str, dict[str, float]]:
    """Replace one trained policy at a time with its locally-trained
    counterpart and measure the makespan change against the baseline."""
    base_bundle = cdsc_ckpt if isinstance(cdsc_ckpt, AgentBundle) else AgentBundle.load(cdsc_ckpt)
    swap_bundle = illr_ckpt if isinstance(illr_ckpt, AgentBundle) else AgentBundle.load(illr_ckpt)
    baseline = evaluate(base_bundle, orders, env_cfg, n_rollouts, seed,
                        greedy=greedy)
    out: dict[str, dict[str, float]] = {
        "baseline": {"mean": baseline.mean, "std": baseline.std, "n": baseline.n}}
    for agent in AGENTS:
        switched = evaluate(base_bundle, orders, env_cfg, n_rollouts, seed,
                            greedy=greedy,
                            actor_override={agent: swap_bundle.actors[agent]})
        t, dof, p = welch_t(switched.raw, baseline.raw)
        out[agent] = {
            "mean": switched.mean, "std": switched.std, "n": switched.n,
            "pct_change": 100.0 * (switched.mean - baseline.mean) / baseline.mean,
            "t": t, "dof": dof, "p": p,
        }
    return out


# -- learning-curve emission ----------------------------------------------


def moving_average(values: np.ndarray, window: int) -> np.ndarray:
    """Trailing moving average with a warm-up (partial windows at the start)."""
    if window <= 1:
        return np.asarray(values, dtype=float)
    out = np.empty(len(values))
    csum = np.cumsum(np.insert(np.asarray(values, dtype=float), 0, 0.0))
    for i in range(len(values)):
        lo = max(0, i - window + 1)
        out[i] = (csum[i + 1] - csum[lo]) / (i + 1 - lo)
    return out


def read_metric_log(path: str | Path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def emit_curves(metric_logs: dict[str, list[str | Path]], out_dir: str | Path,
                window: int = 50, figures: bool = True) -> list[Path]:
    """Aggregate per-label metric logs (one file per seed) into plot-ready
    CSVs: makespan mean/std over seeds per episode, and smoothed explained
    variance per agent. Optionally renders figures next to the CSVs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    curves: dict[str, dict[str, np.ndarray]] = {}
    for label, paths in metric_logs.items():
        logs = [read_metric_log(p) for p in paths]
        if not logs or not logs[0]:
            raise ValueError(f"empty metric log for {label!r}")
        n_ep = min(len(log) for log in logs)
        spans = np.array([[row["makespan_mean"] for row in log[:n_ep]] for log in logs])
        data = {"episode": np.arange(n_ep),
                "mean": spans.mean(axis=0),
                "std": spans.std(axis=0, ddof=1) if len(logs) > 1 else np.zeros(n_ep)}
        path = out_dir / f"curve_makespan_{label}.csv"
        _write_columns(path, data)
        written.append(path)
        ev_data = {"episode": np.arange(n_ep)}
        for agent in AGENTS:
            ev = np.array([[row[f"ev_{agent}"] for row in log[:n_ep]] for log in logs])
            ev_data[f"ev_{agent}"] = moving_average(np.nanmean(ev, axis=0), window)
        ev_path = out_dir / f"curve_ev_{label}.csv"
        _write_columns(ev_path, ev_data)
        written.append(ev_path)
        curves[label] = {**data, **{k: v for k, v in ev_data.items() if k != "episode"}}
    if figures:
        from . import plots
        written.append(plots.learning_curves(curves, out_dir / "fig_learning_curves.png"))
        written.append(plots.ev_curves(curves, out_dir / "fig_explained_variance.png"))
    return written


def _write_columns(path: Path, data: dict[str, np.ndarray]) -> None:
    keys = list(data)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(keys)
        for i in range(len(data[keys[0]])):
            writer.writerow([data[k][i] for k in keys])


# -- manifests ------------------------------------------------------------


def write_manifest(out_dir: str | Path, command: str, seeds: list[int],
                   train_cfg: TrainConfig | None = None,
                   env_cfg: EnvConfig | None = None,
                   extra: dict | None = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "seeds": seeds,
        "pickline_version": __version__,
        "python": sys.version,
        "numpy": np.__version__,
        "platform": platform.platform(),
        "train_config": as_dict(train_cfg) if train_cfg else None,
        "env_config": as_dict(env_cfg or EnvConfig()),
    }
    manifest.update(extra or {})
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return path


def write_stats_csv(path: str | Path, rows: list[dict]) -> None:
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
