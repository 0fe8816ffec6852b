"""Minimal neural-network engine: tanh MLPs with exact reverse-mode gradients.

Only what the training stack needs: a fixed feed-forward architecture
(affine / tanh alternating, linear output), orthogonal initialization, and
Adam with a stepwise learning-rate decay driven by the episode counter.
Everything is plain numpy; forward/backward are pure given a parameter
snapshot.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1

# Default orthogonal gains: sqrt(2) for hidden layers, small for policy
# heads so initial action distributions are near uniform, 1.0 for value heads.
HIDDEN_GAIN = float(np.sqrt(2.0))
POLICY_HEAD_GAIN = 0.01
VALUE_HEAD_GAIN = 1.0


def orthogonal(shape: tuple[int, int], gain: float, rng: np.random.Generator) -> np.ndarray:
    """Gain-scaled orthogonal matrix (semi-orthogonal for non-square shapes)."""
    rows, cols = shape
    a = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))  # make the decomposition unique
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class Mlp:
    """Fully-connected net: affine -> tanh repeated, then a linear output layer."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.weights = weights
        self.biases = biases
        for w, b in zip(weights, biases):
            if w.shape[0] != b.shape[0]:
                raise ValueError("inconsistent layer shapes")

    @classmethod
    def init(cls, sizes: list[int], head_gain: float, seed: int | np.random.SeedSequence) -> "Mlp":
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = head_gain if i == len(sizes) - 2 else HIDDEN_GAIN
            weights.append(orthogonal((n_out, n_in), gain, rng))
            biases.append(np.zeros(n_out))
        return cls(weights, biases)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Returns (output, cache); ``x`` is (batch, in) or (in,)."""
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite network input")
        squeeze = x.ndim == 1
        h = np.atleast_2d(x)
        cache = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if i < last:
                h = np.tanh(h)
            cache.append(h)
        return (h[0] if squeeze else h), cache

    def backward(self, cache: list[np.ndarray], dy: np.ndarray
                 ) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
        """Exact gradients of sum(dy * output) w.r.t. parameters and input."""
        dh = np.atleast_2d(dy)
        if dh.shape != cache[-1].shape:
            raise ValueError(f"dy shape {dh.shape} != output shape {cache[-1].shape}")
        d_weights = [np.empty(0)] * len(self.weights)
        d_biases = [np.empty(0)] * len(self.biases)
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            if i < last:
                dh = dh * (1.0 - cache[i + 1] ** 2)  # tanh'
            d_weights[i] = dh.T @ cache[i]
            d_biases[i] = dh.sum(axis=0)
            dh = dh @ self.weights[i]
        return d_weights, d_biases, dh

    # -- parameter plumbing ----------------------------------------------

    def params(self) -> list[np.ndarray]:
        return self.weights + self.biases

    def set_params(self, params: list[np.ndarray]) -> None:
        n = len(self.weights)
        self.weights = [p.copy() for p in params[:n]]
        self.biases = [p.copy() for p in params[n:]]

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])


class Adam:
    """Adam with bias correction and a multiplicative episodic lr decay."""

    def __init__(self, params: list[np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 decay: float = 1.0, decay_every: int = 0):
        self.lr0 = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.decay = decay
        self.decay_every = decay_every
        self.episode = 0
        self.step_count = 0
        self.skipped = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    @property
    def lr(self) -> float:
        if self.decay_every <= 0 or self.decay == 1.0:
            return self.lr0
        return self.lr0 * self.decay ** (self.episode // self.decay_every)

    def set_episode(self, episode: int) -> None:
        self.episode = episode

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> bool:
        """In-place update; returns False (and skips) on non-finite gradients."""
        if any(not np.all(np.isfinite(g)) for g in grads):
            self.skipped += 1
            return False
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        lr = self.lr
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return True

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"scalars": np.array([self.lr0, self.beta1, self.beta2, self.eps,
                                    self.decay, float(self.decay_every),
                                    float(self.episode), float(self.step_count),
                                    float(self.skipped)])}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m{i}"] = m
            out[f"v{i}"] = v
        return out

    @classmethod
    def from_state(cls, params: list[np.ndarray], state: dict[str, np.ndarray]) -> "Adam":
        s = state["scalars"]
        opt = cls(params, lr=float(s[0]), beta1=float(s[1]), beta2=float(s[2]),
                  eps=float(s[3]), decay=float(s[4]), decay_every=int(s[5]))
        opt.episode = int(s[6])
        opt.step_count = int(s[7])
        opt.skipped = int(s[8])
        opt.m = [state[f"m{i}"].copy() for i in range(len(opt.m))]
        opt.v = [state[f"v{i}"].copy() for i in range(len(opt.v))]
        return opt


# -- checkpoints ----------------------------------------------------------


def save_checkpoint(path: str | Path, nets: dict[str, Mlp],
                    optimizers: dict[str, Adam] | None = None,
                    meta: dict[str, str] | None = None) -> None:
    arrays: dict[str, np.ndarray] = {"__version__": np.array(CHECKPOINT_VERSION)}
    for key, value in (meta or {}).items():
        arrays[f"meta/{key}"] = np.array(str(value))
    for name, net in nets.items():
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            arrays[f"net/{name}/w{i}"] = w
            arrays[f"net/{name}/b{i}"] = b
    for name, opt in (optimizers or {}).items():
        for key, arr in opt.state_arrays().items():
            arrays[f"opt/{name}/{key}"] = arr
    np.savez(path, **arrays)


def load_checkpoint(path: str | Path
                    ) -> tuple[dict[str, Mlp], dict[str, dict[str, np.ndarray]], dict[str, str]]:
    """Returns (nets, raw optimizer states, meta). Optimizer states are keyed
    like ``Adam.state_arrays`` and can be revived with ``Adam.from_state``."""
    with np.load(path, allow_pickle=False) as data:
        version = int(data["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        nets: dict[str, Mlp] = {}
        opts: dict[str, dict[str, np.ndarray]] = {}
        meta: dict[str, str] = {}
        net_layers: dict[str, int] = {}
        for key in data.files:
            if key.startswith("net/"):
                # net names may themselves contain slashes
                name, part = key[4:].rsplit("/", 1)
                net_layers[name] = max(net_layers.get(name, 0), int(part[1:]) + 1)
        for name, n in net_layers.items():
            weights = [data[f"net/{name}/w{i}"] for i in range(n)]
            biases = [data[f"net/{name}/b{i}"] for i in range(n)]
            nets[name] = Mlp(weights, biases)
        for key in data.files:
            if key.startswith("opt/"):
                name, part = key[4:].rsplit("/", 1)
                opts.setdefault(name, {})[part] = data[key]
            elif key.startswith("meta/"):
                meta[key[5:]] = str(data[key])
    return nets, opts, meta
