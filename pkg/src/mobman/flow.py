"""Flow-matching imitation policy at toy scale.

A small MLP regresses the transport field v(tau, X, o) on straight-line
interpolants X_tau = tau*A + (1-tau)*Z between Gaussian noise and expert
action chunks; inference is plain Euler integration with few steps. The
network and its reverse-mode gradients are self-contained (float64
throughout) so gradient correctness is checkable against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from mobman import datasets as dio
from mobman import rng
from mobman.datasets import Demonstration

TAU_EMBED_DIM = 8


def _silu(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return z * s, s


def _silu_grad(z, s):
    return s * (1.0 + z * (1.0 - s))


def tau_embedding(tau) -> np.ndarray:
    """Sinusoidal embedding of the flow time, shape (..., TAU_EMBED_DIM)."""
    tau = np.asarray(tau, dtype=np.float64)[..., None]
    freqs = 2.0 ** np.arange(TAU_EMBED_DIM // 2) * np.pi
    ang = tau * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


class FlowNet:
    """MLP vector field over (tau embedding, flattened chunk, observation)."""

    def __init__(self, obs_dim: int, horizon: int, act_dim: int,
                 hidden: tuple[int, ...] = (128, 128, 128), seed: int = 0):
        self.obs_dim = obs_dim
        self.horizon = horizon
        self.act_dim = act_dim
        self.hidden = tuple(hidden)
        self.chunk_dim = horizon * act_dim
        in_dim = TAU_EMBED_DIM + self.chunk_dim + obs_dim
        sizes = [in_dim, *self.hidden, self.chunk_dim]
        gen = rng.stream(seed, 0, rng.STREAM_TRAIN)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            self.weights.append(gen.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        i = 0
        for p in self.params:
            p[...] = flat[i : i + p.size].reshape(p.shape)
            i += p.size

    def forward(self, tau, chunks: np.ndarray, obs: np.ndarray, cache: list | None = None) -> np.ndarray:
        """v(tau, X, o) for a batch; chunks is (B, H, D), obs is (B, obs_dim)."""
        b = chunks.shape[0]
        x = np.concatenate(
            [np.broadcast_to(tau_embedding(tau), (b, TAU_EMBED_DIM)),
             chunks.reshape(b, self.chunk_dim), obs], axis=1)
        h = x
        n_hidden = len(self.hidden)
        for i in range(n_hidden):
            z = h @ self.weights[i] + self.biases[i]
            a, s = _silu(z)
            if cache is not None:
                cache.append((h, z, s))
            h = a
        if cache is not None:
            cache.append((h, None, None))
        out = h @ self.weights[-1] + self.biases[-1]
        return out.reshape(b, self.horizon, self.act_dim)

    def backward(self, cache: list, d_out: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients given d(loss)/d(output); order matches params."""
        b = d_out.shape[0]
        g = d_out.reshape(b, self.chunk_dim)
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        h_last = cache[-1][0]
        grads_w[-1] = h_last.T @ g
        grads_b[-1] = g.sum(axis=0)
        g = g @ self.weights[-1].T
        for i in range(len(self.hidden) - 1, -1, -1):
            h, z, s = cache[i]
            g = g * _silu_grad(z, s)
            grads_w[i] = h.T @ g
            grads_b[i] = g.sum(axis=0)
            g = g @ self.weights[i].T
        out = []
        for w, bgrad in zip(grads_w, grads_b):
            out.extend((w, bgrad))
        return out

    def clone(self) -> "FlowNet":
        other = FlowNet(self.obs_dim, self.horizon, self.act_dim, self.hidden)
        other.set_flat(self.get_flat())
        return other


def interpolate(chunk: np.ndarray, noise: np.ndarray, tau) -> np.ndarray:
    """Straight-line interpolant between noise (tau=0) and data (tau=1)."""
    tau = np.asarray(tau, dtype=np.float64)
    while tau.ndim < np.ndim(chunk):
        tau = tau[..., None]
    return tau * chunk + (1.0 - tau) * noise


def fm_loss(net: FlowNet, obs: np.ndarray, chunks: np.ndarray, seed: int,
            levels: int = 100, episode: int = 0):
    """Flow-matching loss and analytic parameter gradients on one batch.

    Per example: Z ~ N(0, I), tau uniform on the discrete training grid
    {0, 1/levels, ..., (levels-1)/levels}, target A - Z. Deterministic per
    (seed, episode).
    """
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    chunks = np.asarray(chunks, dtype=np.float64)
    b = chunks.shape[0]
    if b == 0:
        raise ValueError("empty batch")
    gen = rng.stream(seed, episode, rng.STREAM_TRAIN)
    z = gen.normal(size=chunks.shape)
    tau = gen.integers(0, levels, size=b) / levels
    x_tau = interpolate(chunks, z, tau)
    cache: list = []
    v = net.forward(tau, x_tau, obs, cache)
    resid = v - (chunks - z)
    loss = float(np.mean(np.sum(resid.reshape(b, -1) ** 2, axis=1)))
    grads = net.backward(cache, 2.0 * resid / b)
    return loss, grads


def sample_actions(net: FlowNet, obs: np.ndarray, n_steps: int, seed: int,
                   episode: int = 0) -> np.ndarray:
    """Euler integration of the learned field from Gaussian noise; (H, D)."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    gen = rng.stream(seed, episode, rng.STREAM_SAMPLE)
    x = gen.normal(size=(1, net.horizon, net.act_dim))
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    for k in range(n_steps):
        v = net.forward(np.array([k / n_steps]), x, obs)
        x = x + v / n_steps
    return x[0]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    total_steps: int = 2000
    peak_lr: float = 1e-4
    min_lr: float = 1e-6
    warmup_steps: int = 500
    weight_decay: float = 1e-6
    clip_norm: float = 10.0
    train_levels: int = 100
    infer_steps: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.warmup_steps > self.total_steps:
            raise ValueError("warmup must not exceed total steps")
        if self.peak_lr <= 0 or self.min_lr <= 0:
            raise ValueError("learning rates must be positive")


def learning_rate(cfg: TrainConfig, step: int) -> float:
    """Linear warmup to peak_lr, then cosine decay to min_lr at total_steps."""
    if step <= cfg.warmup_steps:
        return cfg.peak_lr * step / max(cfg.warmup_steps, 1)
    span = max(cfg.total_steps - cfg.warmup_steps, 1)
    frac = (step - cfg.warmup_steps) / span
    return cfg.min_lr + 0.5 * (cfg.peak_lr - cfg.min_lr) * (1.0 + np.cos(np.pi * frac))


class AdamW:
    """Adam with decoupled weight decay and global-norm gradient clipping."""

    def __init__(self, params: list[np.ndarray], cfg: TrainConfig,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.cfg = cfg
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray], lr: float) -> None:
        gnorm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
        scale = min(1.0, self.cfg.clip_norm / gnorm) if gnorm > 0 else 1.0
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = g * scale
            m[...] = self.beta1 * m + (1.0 - self.beta1) * g
            v[...] = self.beta2 * v + (1.0 - self.beta2) * g * g
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p -= lr * self.cfg.weight_decay * p


@dataclass
class Normalization:
    obs_mean: np.ndarray
    obs_std: np.ndarray
    act_mean: np.ndarray
    act_std: np.ndarray

    def norm_obs(self, obs):
        return (obs - self.obs_mean) / self.obs_std

    def norm_act(self, act):
        return (act - self.act_mean) / self.act_std

    def denorm_act(self, act):
        return act * self.act_std + self.act_mean


def _dataset_arrays(demos: list[Demonstration]):
    obs = np.concatenate([d.observations.astype(np.float64) for d in demos])
    act = np.concatenate([d.actions.astype(np.float64) for d in demos])
    return obs, act


def compute_normalization(demos: list[Demonstration]) -> Normalization:
    obs, act = _dataset_arrays(demos)
    return Normalization(
        obs.mean(axis=0), np.maximum(obs.std(axis=0), 1e-6),
        act.mean(axis=0), np.maximum(act.std(axis=0), 1e-6),
    )


def _draw_chunk(demo: Demonstration, t: int, horizon: int) -> np.ndarray:
    act = demo.actions.astype(np.float64)
    chunk = act[t : t + horizon]
    if chunk.shape[0] < horizon:
        pad = np.repeat(act[-1:], horizon - chunk.shape[0], axis=0)
        chunk = np.concatenate([chunk, pad])
    return chunk


def sample_batch(sim: list[Demonstration], real: list[Demonstration],
                 horizon: int, batch_size: int, gen: np.random.Generator,
                 norm: Normalization):
    """Batch of (obs, chunk) pairs; each element picks the sim or real set
    with probability 0.5 when both are non-empty."""
    obs_out, chunk_out, from_sim = [], [], []
    for _ in range(batch_size):
        if sim and real:
            use_sim = gen.random() < 0.5
        else:
            use_sim = bool(sim)
        pool = sim if use_sim else real
        demo = pool[int(gen.integers(0, len(pool)))]
        t = int(gen.integers(0, demo.steps))
        obs_out.append(norm.norm_obs(demo.observations[t].astype(np.float64)))
        chunk_out.append(norm.norm_act(_draw_chunk(demo, t, horizon)))
        from_sim.append(use_sim)
    return np.array(obs_out), np.array(chunk_out), np.array(from_sim)


@dataclass
class TrainResult:
    net: FlowNet
    normalization: Normalization
    history: list[tuple[int, float, float]]  # (step, loss, lr)


def co_train(net: FlowNet, sim: list[Demonstration], real: list[Demonstration],
             cfg: TrainConfig) -> TrainResult:
    """Train the field on an equal-probability sim/real mixture.

    Deterministic for a fixed (config, seed, data) on a single execution lane.
    """
    if not sim and not real:
        raise ValueError("both demonstration sets are empty")
    norm = compute_normalization(sim + real)
    opt = AdamW(net.params, cfg)
    gen = rng.stream(cfg.seed, 0, rng.STREAM_TRAIN)
    history = []
    for step in range(1, cfg.total_steps + 1):
        obs, chunks, _ = sample_batch(sim, real, net.horizon, cfg.batch_size, gen, norm)
        z = gen.normal(size=chunks.shape)
        tau = gen.integers(0, cfg.train_levels, size=chunks.shape[0]) / cfg.train_levels
        x_tau = interpolate(chunks, z, tau)
        cache: list = []
        v = net.forward(tau, x_tau, obs, cache)
        resid = v - (chunks - z)
        loss = float(np.mean(np.sum(resid.reshape(chunks.shape[0], -1) ** 2, axis=1)))
        grads = net.backward(cache, 2.0 * resid / chunks.shape[0])
        lr = learning_rate(cfg, step)
        opt.step(grads, lr)
        history.append((step, loss, lr))
    return TrainResult(net, norm, history)


@dataclass
class ChunkPolicy:
    """Receding-horizon wrapper: sample a chunk, execute the first few steps."""

    net: FlowNet
    normalization: Normalization
    infer_steps: int = 10
    execute_horizon: int | None = None  # default H/2

    def actions(self, obs_raw: np.ndarray, seed: int, episode: int = 0) -> np.ndarray:
        obs = self.normalization.norm_obs(np.asarray(obs_raw, dtype=np.float64))
        chunk = sample_actions(self.net, obs, self.infer_steps, seed, episode)
        exec_h = self.execute_horizon or max(1, self.net.horizon // 2)
        return self.normalization.denorm_act(chunk)[:exec_h]


def kinematic_rollout_eval(policy, env_factory, episodes: int, horizon: int,
                           seed: int = 0) -> float:
    """Closed-loop success rate in a kinematic (no-physics) environment.

    `policy` maps (obs, seed, episode) to an array of actions to execute;
    `env_factory(episode)` returns an env with reset() -> obs,
    step(action) -> obs, and succeeded() -> bool.
    """
    successes = 0
    for ep in range(episodes):
        env = env_factory(ep)
        obs = env.reset()
        steps = 0
        call = 0
        while steps < horizon and not env.succeeded():
            acts = policy.actions(obs, seed, ep * 100003 + call)
            call += 1
            for a in acts:
                obs = env.step(a)
                steps += 1
                if steps >= horizon or env.succeeded():
                    break
        if env.succeeded():
            successes += 1
    return successes / episodes


def save_checkpoint(result: TrainResult, cfg: TrainConfig, directory: str | Path) -> Path:
    """Checkpoint: manifest plus parameter/normalizer arrays in block format."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    net = result.net
    lines = [
        f"obs_dim: {net.obs_dim}",
        f"horizon: {net.horizon}",
        f"act_dim: {net.act_dim}",
        f"hidden: {list(net.hidden)}",
        f"seed: {cfg.seed}",
        f"infer_steps: {cfg.infer_steps}",
        f"train_levels: {cfg.train_levels}",
    ]
    for i, p in enumerate(net.params):
        dio.write_array(p, directory / f"param_{i:03d}.mbrt")
    norm = result.normalization
    for name, arr in (("obs_mean", norm.obs_mean), ("obs_std", norm.obs_std),
                      ("act_mean", norm.act_mean), ("act_std", norm.act_std)):
        dio.write_array(arr, directory / f"{name}.mbrt")
    manifest = directory / "checkpoint.txt"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def load_checkpoint(directory: str | Path) -> tuple[FlowNet, Normalization, dict]:
    directory = Path(directory)
    fields = {}
    for line in (directory / "checkpoint.txt").read_text(encoding="utf-8").splitlines():
        key, _, value = line.partition(":")
        fields[key.strip()] = value.strip()
    hidden = tuple(int(x) for x in fields["hidden"].strip("[]").split(","))
    net = FlowNet(int(fields["obs_dim"]), int(fields["horizon"]), int(fields["act_dim"]), hidden)
    for i, p in enumerate(net.params):
        p[...] = dio.read_array(directory / f"param_{i:03d}.mbrt").astype(np.float64)
    norm = Normalization(
        *(dio.read_array(directory / f"{n}.mbrt").astype(np.float64)
          for n in ("obs_mean", "obs_std", "act_mean", "act_std"))
    )
    return net, norm, fields
