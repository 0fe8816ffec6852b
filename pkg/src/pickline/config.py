"""Environment and run configuration, backed by INI files (sections of key/value pairs).

Kinematic and stochastic parameters of the picking line are not fixed by the
control problem itself, so everything lives here with documented defaults.
Durations are integer ticks; one tick is 0.1 s.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

AGENTS = ("FR", "PC", "PR1", "PR2")
FRAMEWORKS = ("illr", "ilgr", "cdic", "cdsc")
ADVANTAGES = ("mc", "td0", "gae")


@dataclass
class EnvConfig:
    # time
    tick_seconds: float = 0.1
    max_ticks: int = 400_000  # hard safety bound per episode

    # parallel conveyors
    n_conveyors: int = 3
    conveyor_slots: int = 12
    conveyor_period: int = 10  # ticks per one-slot advance
    n_ports: int = 6
    port_load_ticks: int = 80  # mean ticks to move one queued item onto the belt
    port_replace_ticks: int = 200  # mean ticks to refresh a port after a batch

    # carousel ring between the two picking robots
    carousel_slots: int = 28
    carousel_period: int = 13  # ticks per one-position rotation
    carousel_input_station: int = 0
    carousel_output_station: int = 14

    # picking robot at the conveyor side
    pr1_travel_ticks: int = 80  # per unit of conveyor distance
    pr1_pick_ticks: int = 130  # mean ticks per pick-and-place cycle

    # picking robot at the shipping-box side
    pr2_travel_ticks: int = 60  # per unit of box-slot distance
    pr2_pick_ticks: int = 105  # mean ticks per grab

    # flow rack
    fr_slots: int = 4
    fr_replace_ticks: int = 260  # ticks to swap out a completed box

    # stochastic durations: d ~ Normal(mu, sigma_frac * mu), truncated at >= 1
    sigma_frac: float = 0.1

    def port_slot(self, port: int) -> int:
        """Belt slot fed by a loading port; ports are spread along the belt."""
        span = self.conveyor_slots - 2
        return 1 + port * span // (self.n_ports - 1)


@dataclass
class RewardConfig:
    t_ofs: float = 6.6  # offset of the quartic terminal reward, in time-scale units
    time_scale: float = 1000.0  # seconds per terminal-reward time unit
    literal_eq5: bool = False  # keep the uncorrected branch ordering of the quartic
    illr_zeta_scaling: bool = False  # apply zeta scaling to dense local-reward returns


@dataclass
class TrainConfig:
    framework: str = "cdsc"
    advantage: str = "mc"  # mc | td0 | gae
    lam: float = 0.95
    gamma: float = 0.99
    zeta: float = 800.0
    clip_eps: float = 0.2
    rollouts_per_episode: int = 64
    epochs: int = 5
    episodes: int = 5000
    minibatch: int = 64
    lr_actor: float = 1e-3
    lr_critic: float = 3e-4
    lr_decay: float = 0.8
    lr_decay_every: int = 250
    entropy_coef: float = 0.0
    advantage_norm: bool = True
    hidden_units: int = 128
    hidden_layers: int = 2
    checkpoint_every: int = 0  # 0 = only final
    reward: RewardConfig = field(default_factory=RewardConfig)

    def __post_init__(self) -> None:
        if self.framework not in FRAMEWORKS:
            raise ValueError(f"unknown framework {self.framework!r}")
        if self.advantage not in ADVANTAGES:
            raise ValueError(f"unknown advantage estimator {self.advantage!r}")
        if self.framework != "cdsc" and self.advantage != "mc":
            raise ValueError("td0/gae advantages require the shared-critic framework")


# -- INI round trip -------------------------------------------------------

_ENV_SECTIONS = {
    "time": ["tick_seconds", "max_ticks"],
    "conveyor": [
        "n_conveyors", "conveyor_slots", "conveyor_period",
        "n_ports", "port_load_ticks", "port_replace_ticks",
    ],
    "carousel": [
        "carousel_slots", "carousel_period",
        "carousel_input_station", "carousel_output_station",
    ],
    "pr1": ["pr1_travel_ticks", "pr1_pick_ticks"],
    "pr2": ["pr2_travel_ticks", "pr2_pick_ticks"],
    "fr": ["fr_slots", "fr_replace_ticks"],
    "stochastic": ["sigma_frac"],
}

_RUN_SECTIONS = {
    "run": ["framework", "advantage", "episodes", "rollouts_per_episode", "checkpoint_every"],
    "ppo": [
        "lam", "gamma", "zeta", "clip_eps", "epochs", "minibatch",
        "entropy_coef", "advantage_norm",
    ],
    "optimizer": ["lr_actor", "lr_critic", "lr_decay", "lr_decay_every"],
    "network": ["hidden_units", "hidden_layers"],
}

_REWARD_KEYS = ["t_ofs", "time_scale", "literal_eq5", "illr_zeta_scaling"]


def _coerce(current: Any, raw: str) -> Any:
    if isinstance(current, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw


def _read_sections(obj: Any, parser: configparser.ConfigParser, layout: dict[str, list[str]]) -> None:
    known = {k for keys in layout.values() for k in keys}
    for section in parser.sections():
        if section == "reward":
            continue
        for key, raw in parser.items(section):
            if key not in known:
                raise ValueError(f"unknown config key [{section}] {key}")
            setattr(obj, key, _coerce(getattr(obj, key), raw))


def load_env_config(path: str | Path) -> EnvConfig:
    parser = configparser.ConfigParser()
    parser.read_string(Path(path).read_text(encoding="utf-8"))
    cfg = EnvConfig()
    _read_sections(cfg, parser, _ENV_SECTIONS)
    return cfg


def save_env_config(cfg: EnvConfig, path: str | Path) -> None:
    parser = configparser.ConfigParser()
    for section, keys in _ENV_SECTIONS.items():
        parser[section] = {k: str(getattr(cfg, k)) for k in keys}
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def load_run_config(path: str | Path) -> TrainConfig:
    parser = configparser.ConfigParser()
    parser.read_string(Path(path).read_text(encoding="utf-8"))
    cfg = TrainConfig()
    _read_sections(cfg, parser, _RUN_SECTIONS)
    if parser.has_section("reward"):
        for key, raw in parser.items("reward"):
            if key not in _REWARD_KEYS:
                raise ValueError(f"unknown config key [reward] {key}")
            setattr(cfg.reward, key, _coerce(getattr(cfg.reward, key), raw))
    cfg.__post_init__()
    return cfg


def save_run_config(cfg: TrainConfig, path: str | Path) -> None:
    parser = configparser.ConfigParser()
    for section, keys in _RUN_SECTIONS.items():
        parser[section] = {k: str(getattr(cfg, k)) for k in keys}
    parser["reward"] = {k: str(getattr(cfg.reward, k)) for k in _REWARD_KEYS}
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def as_dict(cfg: Any) -> dict[str, Any]:
    """Flat dict view for manifests."""
    return dataclasses.asdict(cfg)
