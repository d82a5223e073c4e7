"""Feedforward noise-prediction network with hand-derived gradients.

The architecture is deliberately small and auditable: a fully connected MLP
over [x, Fourier time features] with a smooth sigmoidal activation, trained
by Adam on the denoising objective.  Reverse-mode gradients are written out
layer by layer instead of pulling in an autodiff framework.

The same MLP machinery drives the auxiliary recording head h_phi(t), a
time-only network trained with a stop-gradient mean-squared objective to
track the model's output mean over q_t during or after training.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import mixture as mx
from .errors import ConfigError, DomainError, ParseError, TrainingError
from .parametrize import PARAMETRIZATIONS, dsm_target, dsm_weight, weighting
from .schedule import (
    T_MIN,
    NoiseSchedule,
    alpha_sigma,
    discrete_time_grid,
    schedule_from_text,
    schedule_to_text,
)
from .util import substream

CHECKPOINT_MAGIC = "dpmlab-checkpoint v1"


@dataclass(frozen=True)
class NetConfig:
    """Architecture of the prediction network.

    ``time_only=True`` drops x from the input and yields the recording head
    h_phi(t); its conventional widths are (512, 512, 512).
    """

    dim: int
    hidden: tuple[int, ...] = (128, 128, 128)
    activation: str = "tanh"
    n_freqs: int = 16
    freq_min: float = 1.0
    freq_max: float = 1000.0
    parametrization: str = "noise"
    time_only: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.dim < 1 or any(h < 1 for h in self.hidden):
            raise ConfigError("net widths must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(
                f"activation: unknown value {self.activation!r}; choose from {sorted(_ACTIVATIONS)}"
            )
        if self.n_freqs < 1 or self.freq_min <= 0 or self.freq_max < self.freq_min:
            raise ConfigError("time embedding frequencies must be positive and ordered")
        if self.parametrization not in PARAMETRIZATIONS:
            raise ConfigError(f"unknown parametrization {self.parametrization!r}")

    @property
    def in_features(self) -> int:
        return (0 if self.time_only else self.dim) + 2 * self.n_freqs

    @property
    def layer_sizes(self) -> list[tuple[int, int]]:
        dims = [self.in_features, *self.hidden, self.dim]
        return list(zip(dims[:-1], dims[1:]))

    def frequencies(self) -> np.ndarray:
        return np.geomspace(self.freq_min, self.freq_max, self.n_freqs)


def recorder_config(dim: int, hidden: tuple[int, ...] = (512, 512, 512)) -> NetConfig:
    """Config of the recording head h_phi(t)."""
    return NetConfig(dim=dim, hidden=hidden, time_only=True)


_ACTIVATIONS = {
    "tanh": (np.tanh, lambda z, a: 1.0 - a**2),
    "sigmoid": (
        lambda z: 1.0 / (1.0 + np.exp(-z)),
        lambda z, a: a * (1.0 - a),
    ),
}


# Parameters are a flat list [W_0, b_0, W_1, b_1, ...] with W of shape
# (n_in, n_out) so a batch propagates as x @ W + b.
NetParams = list


def init_params(config: NetConfig, rng: np.random.Generator) -> NetParams:
    params = []
    for n_in, n_out in config.layer_sizes:
        scale = np.sqrt(1.0 / n_in)
        params.append(rng.normal(0.0, scale, size=(n_in, n_out)))
        params.append(np.zeros(n_out))
    return params


def n_parameters(config: NetConfig) -> int:
    return sum(n_in * n_out + n_out for n_in, n_out in config.layer_sizes)


def flatten(params: NetParams) -> np.ndarray:
    return np.concatenate([p.ravel() for p in params])


def unflatten(flat: np.ndarray, config: NetConfig) -> NetParams:
    params = []
    pos = 0
    for n_in, n_out in config.layer_sizes:
        params.append(flat[pos : pos + n_in * n_out].reshape(n_in, n_out).copy())
        pos += n_in * n_out
        params.append(flat[pos : pos + n_out].copy())
        pos += n_out
    if pos != flat.size:
        raise ConfigError(f"flat parameter vector has {flat.size} entries, expected {pos}")
    return params


def embed(config: NetConfig, x: np.ndarray, t) -> np.ndarray:
    """Input features: [x,] sin(2 pi f_j t), cos(2 pi f_j t)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
    phases = 2.0 * np.pi * t[:, None] * config.frequencies()[None, :]
    feats = np.concatenate([np.sin(phases), np.cos(phases)], axis=1)
    if config.time_only:
        return feats
    return np.concatenate([x, feats], axis=1)


@dataclass
class LossContext:
    """Everything backward needs from one recorded forward pass."""

    activations: list  # a_0 = features, a_1 ... a_{L-1} hidden activations
    pre_acts: list     # z_1 ... z_{L-1}
    dout: np.ndarray   # dLoss / d network output
    loss: float


def _forward_cached(params: NetParams, config: NetConfig, feats: np.ndarray):
    act, _ = _ACTIVATIONS[config.activation]
    a = feats
    activations = [a]
    pre_acts = []
    n_layers = len(config.layer_sizes)
    for layer in range(n_layers):
        w, b = params[2 * layer], params[2 * layer + 1]
        z = a @ w + b
        if layer < n_layers - 1:
            a = act(z)
            pre_acts.append(z)
            activations.append(a)
        else:
            out = z
    return out, activations, pre_acts


def forward(params: NetParams, config: NetConfig, x, t) -> np.ndarray:
    """Network output under the configured parametrization."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1 and not config.time_only
    feats = embed(config, x if not config.time_only else np.zeros((_batch_len(x, t), 1)), t)
    if not np.all(np.isfinite(feats)):
        raise ConfigError("non-finite network input")
    out, _, _ = _forward_cached(params, config, feats)
    return out[0] if single else out


def _batch_len(x: np.ndarray, t) -> int:
    t = np.asarray(t)
    if t.ndim > 0:
        return t.shape[0]
    return 1 if x.ndim <= 1 else x.shape[0]


def backward(params: NetParams, config: NetConfig, ctx: LossContext) -> NetParams:
    """Exact reverse-mode gradients for the recorded pass; same shapes as params."""
    _, act_grad = _ACTIVATIONS[config.activation]
    n_layers = len(config.layer_sizes)
    grads = [None] * (2 * n_layers)
    delta = ctx.dout
    for layer in reversed(range(n_layers)):
        a_prev = ctx.activations[layer]
        grads[2 * layer] = a_prev.T @ delta
        grads[2 * layer + 1] = delta.sum(axis=0)
        if layer > 0:
            w = params[2 * layer]
            da = delta @ w.T
            delta = da * act_grad(ctx.pre_acts[layer - 1], ctx.activations[layer])
    return grads


def dsm_loss(params: NetParams, config: NetConfig, schedule: NoiseSchedule,
             x0: np.ndarray, eps: np.ndarray, ts: np.ndarray,
             weight_name: str = "uniform", return_ctx: bool = False):
    """Denoising loss on a batch of (x_0, eps) draws at per-sample times.

    The loss is the batch mean of lambda(t) w(t) ||out - target||^2 with the
    weight and target determined by the configured parametrization;
    x_t = alpha_t x_0 + sigma_t eps.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    ts = np.broadcast_to(np.asarray(ts, dtype=float), (x0.shape[0],))
    if x0.shape[0] == 0:
        raise ConfigError("dsm_loss needs a nonempty batch")
    if np.any(ts < T_MIN - 1e-15):
        raise DomainError(f"dsm_loss times must be >= {T_MIN}")
    a, s = alpha_sigma(schedule, ts)
    x_t = a[:, None] * x0 + s[:, None] * eps
    target = dsm_target(config.parametrization, x0, eps, ts, schedule)
    w = dsm_weight(config.parametrization, ts, schedule) * weighting(weight_name, ts, schedule)
    feats = embed(config, x_t, ts)
    out, activations, pre_acts = _forward_cached(params, config, feats)
    resid = out - target
    n = x0.shape[0]
    loss = float(np.mean(w * np.sum(resid**2, axis=1)))
    if not return_ctx:
        return loss
    dout = (2.0 / n) * w[:, None] * resid
    return loss, LossContext(activations, pre_acts, dout, loss)


def dsm_loss_grad(params, config, schedule, x0, eps, ts, weight_name="uniform"):
    loss, ctx = dsm_loss(params, config, schedule, x0, eps, ts, weight_name, return_ctx=True)
    return loss, backward(params, config, ctx)


def recorder_loss(phi: NetParams, rconfig: NetConfig, t: float, targets: np.ndarray,
                  return_ctx: bool = False):
    """Mean squared error ||h_phi(t) - target_i||^2 averaged over the batch.

    Targets are model outputs treated as constants: no gradient reaches the
    prediction network through this objective.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    n = targets.shape[0]
    feats = embed(rconfig, np.zeros((n, 1)), t)
    out, activations, pre_acts = _forward_cached(phi, rconfig, feats)
    resid = out - targets
    loss = float(np.mean(np.sum(resid**2, axis=1)))
    if not return_ctx:
        return loss
    dout = (2.0 / n) * resid
    return loss, LossContext(activations, pre_acts, dout, loss)


@dataclass(frozen=True)
class TrainConfig:
    """Adam training hyperparameters for the denoising objective."""

    steps: int = 1000
    batch: int = 128
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weighting: str = "uniform"
    beta_recorder: float = 1.0
    seed: int = 0
    # training-time floor on t draws; the noise-prediction weight 1/(2 sigma^2)
    # is heavy-tailed down at T_MIN and destabilizes Adam
    t_lo: float = 0.05
    discrete_steps: int | None = None  # restrict t draws to a uniform grid

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("learning rate must be >= 0")
        if self.batch < 1:
            raise ConfigError("batch size must be >= 1")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n))


def adam_step(flat: np.ndarray, grad: np.ndarray, state: AdamState,
              tcfg: TrainConfig) -> np.ndarray:
    state.step += 1
    state.m = tcfg.beta1 * state.m + (1 - tcfg.beta1) * grad
    state.v = tcfg.beta2 * state.v + (1 - tcfg.beta2) * grad**2
    m_hat = state.m / (1 - tcfg.beta1**state.step)
    v_hat = state.v / (1 - tcfg.beta2**state.step)
    return flat - tcfg.lr * m_hat / (np.sqrt(v_hat) + tcfg.eps)


def _draw_x0(source, batch: int, rng: np.random.Generator, dim: int) -> np.ndarray:
    if isinstance(source, mx.GaussianMixture):
        pts, _ = mx.sample_data(source, batch, rng)
        return pts
    data = np.asarray(source, dtype=float)
    if data.ndim != 2 or data.shape[1] != dim:
        raise ConfigError("dataset must have shape (n, dim)")
    idx = rng.integers(0, data.shape[0], size=batch)
    return data[idx]


def _draw_times(tcfg: TrainConfig, schedule: NoiseSchedule, batch: int,
                rng: np.random.Generator) -> np.ndarray:
    ts = rng.uniform(tcfg.t_lo, schedule.T, size=batch)
    if tcfg.discrete_steps is not None:
        grid = discrete_time_grid(schedule, tcfg.discrete_steps)
        idx = np.minimum(
            np.searchsorted(grid, ts), tcfg.discrete_steps
        )
        ts = np.maximum(grid[idx], tcfg.t_lo)
    return ts


@dataclass
class TrainResult:
    params: NetParams
    losses: np.ndarray
    recorder: NetParams | None = None
    recorder_losses: np.ndarray | None = None


def train(params: NetParams, config: NetConfig, schedule: NoiseSchedule, source,
          tcfg: TrainConfig, recorder: NetParams | None = None,
          rconfig: NetConfig | None = None) -> TrainResult:
    """Adam on the denoising objective; deterministic given the seed.

    Passing ``recorder`` trains h_phi(t) jointly with stop-gradient targets;
    its updates draw nothing from the main stream, so the prediction
    network's trajectory is bit-identical with or without it.
    """
    rng = substream(tcfg.seed, "train")
    flat = flatten(params)
    state = AdamState.zeros(flat.size)
    losses = np.empty(tcfg.steps)
    rec_flat = flatten(recorder) if recorder is not None else None
    rec_state = AdamState.zeros(rec_flat.size) if recorder is not None else None
    rec_losses = np.empty(tcfg.steps) if recorder is not None else None

    for step in range(tcfg.steps):
        x0 = _draw_x0(source, tcfg.batch, rng, config.dim)
        eps = rng.standard_normal((tcfg.batch, config.dim))
        ts = _draw_times(tcfg, schedule, tcfg.batch, rng)
        cur = unflatten(flat, config)
        loss, grads = dsm_loss_grad(cur, config, schedule, x0, eps, ts, tcfg.weighting)
        if not np.isfinite(loss):
            raise TrainingError("training diverged (non-finite loss)", step)
        losses[step] = loss
        flat = adam_step(flat, flatten(grads), state, tcfg)

        if recorder is not None:
            a, s = alpha_sigma(schedule, ts)
            x_t = a[:, None] * x0 + s[:, None] * eps
            cur_model = unflatten(flat, config)
            targets = forward(cur_model, config, x_t, ts)
            rec_params = unflatten(rec_flat, rconfig)
            r_loss, r_ctx = _recorder_batch_loss(rec_params, rconfig, ts, targets)
            rec_losses[step] = tcfg.beta_recorder * r_loss
            rec_grads = backward(rec_params, rconfig, r_ctx)
            rec_flat = adam_step(
                rec_flat, tcfg.beta_recorder * flatten(rec_grads), rec_state, tcfg
            )

    return TrainResult(
        params=unflatten(flat, config),
        losses=losses,
        recorder=unflatten(rec_flat, rconfig) if recorder is not None else None,
        recorder_losses=rec_losses,
    )


def _recorder_batch_loss(phi, rconfig, ts, targets):
    """Recorder loss with per-row times (used by joint training)."""
    feats = embed(rconfig, np.zeros((targets.shape[0], 1)), ts)
    out, activations, pre_acts = _forward_cached(phi, rconfig, feats)
    resid = out - targets
    n = targets.shape[0]
    loss = float(np.mean(np.sum(resid**2, axis=1)))
    dout = (2.0 / n) * resid
    return loss, LossContext(activations, pre_acts, dout, loss)


def train_recorder(phi: NetParams, rconfig: NetConfig, model, schedule: NoiseSchedule,
                   source, epochs: int, batch: int, seed: int,
                   lr: float = 1e-3, eval_times=None, eval_targets=None,
                   eval_every: int = 10):
    """Post-hoc recorder training against a frozen model.

    Each epoch draws one time t, a batch x_t ~ q_t, and regresses h_phi(t)
    onto the frozen model outputs.  If ``eval_times``/``eval_targets`` are
    given, the MSE against those ground-truth vectors is logged every
    ``eval_every`` epochs; returns (phi, eval_log) with eval_log rows
    (epoch, mse).
    """
    rng = substream(seed, "recorder")
    tcfg = TrainConfig(lr=lr)
    flat = flatten(phi)
    state = AdamState.zeros(flat.size)
    eval_log = []
    dim = rconfig.dim
    for epoch in range(epochs):
        t = float(rng.uniform(T_MIN, schedule.T))
        x0 = _draw_x0(source, batch, rng, dim)
        eps = rng.standard_normal((batch, dim))
        a, s = alpha_sigma(schedule, t)
        x_t = float(a) * x0 + float(s) * eps
        targets = model(x_t, t)
        cur = unflatten(flat, rconfig)
        loss, ctx = recorder_loss(cur, rconfig, t, targets, return_ctx=True)
        if not np.isfinite(loss):
            raise TrainingError("recorder training diverged", epoch)
        flat = adam_step(flat, flatten(backward(cur, rconfig, ctx)), state, tcfg)
        if eval_times is not None and (epoch % eval_every == 0 or epoch == epochs - 1):
            cur = unflatten(flat, rconfig)
            preds = np.stack([recorder_predict(cur, rconfig, tv) for tv in eval_times])
            mse = float(np.mean(np.sum((preds - eval_targets) ** 2, axis=1)))
            eval_log.append((epoch, mse))
    return unflatten(flat, rconfig), eval_log


def recorder_predict(phi: NetParams, rconfig: NetConfig, t: float) -> np.ndarray:
    feats = embed(rconfig, np.zeros((1, 1)), float(t))
    out, _, _ = _forward_cached(phi, rconfig, feats)
    return out[0]


class NetModel:
    """Model handle around trained parameters.

    Times below T_MIN are clamped (the net was never trained there and the
    noise parametrization is singular at t = 0 for VP schedules).
    """

    def __init__(self, params: NetParams, config: NetConfig, schedule: NoiseSchedule):
        self.params = params
        self.config = config
        self.schedule = schedule
        self.parametrization = config.parametrization

    def __call__(self, x, t, y=None):
        t = np.maximum(np.asarray(t, dtype=float), T_MIN)
        return forward(self.params, self.config, x, t)

    def describe(self) -> str:
        return f"net({self.parametrization}, hidden={self.config.hidden})"


# ---------------------------------------------------------------------------
# checkpoint io: text header + little-endian float64 parameter block


def _config_to_dict(config: NetConfig) -> dict:
    return {
        "dim": config.dim,
        "hidden": list(config.hidden),
        "activation": config.activation,
        "n_freqs": config.n_freqs,
        "freq_min": config.freq_min,
        "freq_max": config.freq_max,
        "parametrization": config.parametrization,
        "time_only": config.time_only,
    }


def save_checkpoint(path, params: NetParams, config: NetConfig, schedule: NoiseSchedule,
                    seed: int, meta: dict | None = None) -> None:
    flat = flatten(params)
    header = {
        "config": _config_to_dict(config),
        "schedule": schedule_to_text(schedule),
        "parametrization": config.parametrization,
        "seed": int(seed),
        "n_params": int(flat.size),
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write((CHECKPOINT_MAGIC + "\n").encode())
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        fh.write(flat.astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns (params, config, schedule, header dict)."""
    with open(path, "rb") as fh:
        magic = fh.readline().decode(errors="replace").rstrip("\n")
        if magic != CHECKPOINT_MAGIC:
            raise ParseError(f"line 1: unsupported checkpoint version {magic!r}")
        try:
            header = json.loads(fh.readline().decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ParseError(f"line 2: bad checkpoint header ({exc})") from None
        blob = fh.read()
    config = NetConfig(
        dim=header["config"]["dim"],
        hidden=tuple(header["config"]["hidden"]),
        activation=header["config"]["activation"],
        n_freqs=header["config"]["n_freqs"],
        freq_min=header["config"]["freq_min"],
        freq_max=header["config"]["freq_max"],
        parametrization=header["config"]["parametrization"],
        time_only=header["config"]["time_only"],
    )
    n = header["n_params"]
    if n != n_parameters(config):
        raise ParseError("header parameter count does not match the architecture")
    if len(blob) != 8 * n:
        raise ParseError(f"parameter block holds {len(blob)} bytes, expected {8 * n}")
    flat = np.frombuffer(blob, dtype="<f8").astype(float)
    schedule = schedule_from_text(header["schedule"])
    return unflatten(flat, config), config, schedule, header
