"""Rate-distortion training at desk scale: RD loss, gradients, Adam and a
small deterministic training loop.

Training always uses additive uniform noise in place of rounding; there is
no straight-through path.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autograd as ag
from . import entropy
from .codec import load_weights, save_weights, tensors_from_bytes, tensors_to_bytes
from .config import ModelConfig
from .tensor import DTYPE, Rng
from .blocks import patch_expand, patch_merge, vss_block
from .transforms import _expand_shapes, _merge_shapes, g_a, g_s, h_a, h_s, init_weights, vss_shapes

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
RD_LAMBDAS = (100, 50, 30, 10)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, trace: list):
        super().__init__(message)
        self.trace = trace


class UnreachableParameterError(ValueError):
    pass


@dataclass
class ForwardOutputs:
    x_hat: object
    y_likelihoods: object
    z_likelihoods: object


@dataclass
class RdLoss:
    """``loss = distortion + lmbda * rate``; fields are floats or graph nodes."""

    distortion: object
    rate: object
    lmbda: float
    loss: object

    def floats(self) -> tuple[float, float, float]:
        return tuple(float(ag.value(v)) for v in (self.loss, self.distortion, self.rate))


def draw_noise(config: ModelConfig, height: int, width: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """Uniform quantization noise for y and z of a ``height x width`` input."""
    yh, yw = height // config.ga_factor, width // config.ga_factor
    zh, zw = yh // config.ha_factor, yw // config.ha_factor
    noise_y = rng.uniform(-0.5, 0.5, (yh, yw, config.latent_channels))
    noise_z = rng.uniform(-0.5, 0.5, (zh, zw, config.hyper_channels))
    return noise_y, noise_z


def forward_train(x, params: Mapping, config: ModelConfig, noise_y: np.ndarray, noise_z: np.ndarray) -> ForwardOutputs:
    """Noise-quantized forward pass with a parallel (teacher-forced) context."""
    y = g_a(x, params, config)
    z = h_a(y, params, config)
    z_tilde = entropy.quantize(z, "noise", noise=noise_z)
    z_lik = entropy.factorized_likelihood(z_tilde, params)
    psi = h_s(z_tilde, params, config)
    y_tilde = entropy.quantize(y, "noise", noise=noise_y)
    phi = entropy.context_forward(y_tilde, params["context.weight"], params["context.bias"])
    mu, sigma = entropy.entropy_parameters(psi, phi, params)
    y_lik = entropy.gaussian_likelihood(y_tilde, mu, sigma)
    x_hat = g_s(y_tilde, params, config)
    return ForwardOutputs(x_hat, y_lik, z_lik)


def rd_loss(x, out: ForwardOutputs, lmbda: float, num_pixels: int | None = None) -> RdLoss:
    """MSE on unit-range RGB plus ``lmbda`` times bits per pixel."""
    if num_pixels is None:
        num_pixels = ag.value(x).shape[0] * ag.value(x).shape[1]
    distortion = ag.mean(ag.square(x - out.x_hat))
    bits = ag.sum(ag.log(out.y_likelihoods)) + ag.sum(ag.log(out.z_likelihoods))
    rate = bits / (-LN2 * num_pixels)
    loss = distortion + lmbda * rate
    for name, v in (("distortion", distortion), ("rate", rate), ("loss", loss)):
        if not np.isfinite(ag.value(v)).all():
            raise FloatingPointError(f"non-finite {name} in RD loss")
    return RdLoss(distortion, rate, lmbda, loss)


def value_and_gradients(
    loss_fn: Callable[[Mapping], object], params: Mapping[str, np.ndarray], strict: bool = False
) -> tuple[object, dict[str, np.ndarray]]:
    """Evaluate ``loss_fn`` on tracked copies of ``params`` and backpropagate.

    ``loss_fn`` returns a scalar node or an :class:`RdLoss`. Parameters the
    loss never touches get zero gradients and are logged (or raise if
    ``strict``).
    """
    tracked = {k: ag.Var(v, requires_grad=True, name=k) for k, v in params.items()}
    result = loss_fn(tracked)
    scalar = result.loss if isinstance(result, RdLoss) else result
    if not isinstance(scalar, ag.Var):
        raise UnreachableParameterError("loss does not depend on any parameter")
    scalar.backward()
    grads = {}
    unreachable = []
    for k, v in tracked.items():
        if v.grad is None:
            unreachable.append(k)
            grads[k] = np.zeros_like(v.data)
        else:
            grads[k] = v.grad
    if unreachable:
        if strict:
            raise UnreachableParameterError("parameters unreachable from the loss: " + ", ".join(unreachable))
        log.warning("%d parameter(s) unreachable from the loss: %s", len(unreachable), ", ".join(unreachable))
    return result, grads


def gradients(loss_fn: Callable[[Mapping], object], params: Mapping[str, np.ndarray], strict: bool = False) -> dict[str, np.ndarray]:
    return value_and_gradients(loss_fn, params, strict)[1]


def fixed_coordinates(params: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Boolean masks of coordinates that are structurally zero (masked context taps)."""
    out = {}
    if "context.weight" in params:
        k = params["context.weight"].shape[0]
        mask = entropy.context_mask(k)[:, :, None, None] == 0
        out["context.weight"] = np.broadcast_to(mask, params["context.weight"].shape)
    return out


def numeric_gradients(
    loss_fn: Callable[[Mapping], object],
    params: Mapping[str, np.ndarray],
    eps: float = 1e-5,
    fixed: Mapping[str, np.ndarray] | None = None,
) -> dict[str, np.ndarray]:
    """Central finite differences of a scalar loss, one coordinate at a time.

    Coordinates flagged in ``fixed`` are not perturbed and get a zero entry.
    """
    fixed = fixed_coordinates(params) if fixed is None else fixed

    def scalar(p):
        result = loss_fn(p)
        return float(ag.value(result.loss if isinstance(result, RdLoss) else result))

    probe = {k: np.array(v, dtype=DTYPE, copy=True) for k, v in params.items()}
    out = {}
    for k, arr in probe.items():
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        skip = np.asarray(fixed[k]).reshape(-1) if k in fixed else np.zeros(flat.size, dtype=bool)
        for i in range(flat.size):
            if skip[i]:
                continue
            orig = flat[i]
            flat[i] = orig + eps
            up = scalar(probe)
            flat[i] = orig - eps
            down = scalar(probe)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * eps)
        out[k] = g
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``|a - n| / max(|a|, |n|)`` in the 2-norm; 0 when both vanish."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    return 0.0 if scale == 0 else float(np.linalg.norm(analytic - numeric) / scale)


# gradient-check problem

# Widths of at least 2 everywhere: RMSNorm over a single channel is
# sign(x) * scale, whose gradient vanishes almost everywhere.
GRADCHECK_CONFIG = ModelConfig(
    ga_stages=((2, 1),),
    ha_stages=((1, 1),),
    state_dim=1,
    d_inner_ratio=1,
    mlp_ratio=1,
    context_size=3,
    pad_multiple=4,
)


def gradcheck_problem(seed: int = 0, size: int = 4, lmbda: float = 10.0, spread: float = 0.5):
    """A tiny model holding one of every parameterized layer type.

    patch merge -> VSS block gives y; noisy y feeds patch expand (x_hat), the
    masked context and entropy-parameters nets (Gaussian rate of y) and the
    factorized prior (rate of one noisy channel of y). Weights are the usual
    init plus N(0, ``spread``) so every gradient sits well above finite
    difference resolution. Returns ``(params, loss_fn)``.
    """
    cfg = GRADCHECK_CONFIG
    rng = Rng(seed)
    cy = cfg.latent_channels
    shapes = {f"merge.{k}": v for k, v in _merge_shapes(cfg.image_channels, cy).items()}
    shapes.update({f"vss.{k}": v for k, v in vss_shapes(cfg, cy).items()})
    shapes.update({f"expand.{k}": v for k, v in _expand_shapes(cy, cfg.image_channels).items()})
    base = init_weights(cfg, rng)
    params = {}
    for path, shape in shapes.items():
        if path.endswith(".scale") or path.endswith("ss2d.D"):
            arr = np.ones(shape)
        elif path.endswith("A_log"):
            arr = np.log(np.arange(1, shape[2] + 1, dtype=DTYPE)) * np.ones(shape)
        elif path.endswith("dt_proj.bias"):
            arr = np.full(shape, math.log(math.expm1(0.5)))  # step size ~0.5
        else:
            arr = np.zeros(shape)
        params[path] = arr
    for path in entropy.parameter_shapes(cfg):
        params[path] = base[path]
    fixed = fixed_coordinates(params)
    for path, arr in params.items():
        noise = rng.normal(arr.shape, spread)
        if path in fixed:
            noise = noise * ~fixed[path]
        params[path] = arr + noise
    x = rng.uniform(0.0, 1.0, (size, size, cfg.image_channels))
    half = size // 2
    noise_y = rng.uniform(-0.5, 0.5, (half, half, cy))
    noise_z = rng.uniform(-0.5, 0.5, (half, half, cfg.hyper_channels))
    psi = rng.normal((half, half, 2 * cy))

    def loss_fn(p):
        y = vss_block(patch_merge(x, p, "merge."), p, "vss.")
        y_tilde = y + noise_y
        x_hat = patch_expand(y_tilde, p, "expand.")
        phi = entropy.context_forward(y_tilde, p["context.weight"], p["context.bias"])
        mu, sigma = entropy.entropy_parameters(psi, phi, p)
        y_lik = entropy.gaussian_likelihood(y_tilde, mu, sigma)
        z_tilde = ag.split(y, (cfg.hyper_channels, cy - cfg.hyper_channels), axis=-1)[0] + noise_z
        z_lik = entropy.factorized_likelihood(z_tilde, p)
        return rd_loss(x, ForwardOutputs(x_hat, y_lik, z_lik), lmbda)

    return params, loss_fn


# Adam


@dataclass
class OptimState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: OptimState, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update; returns new parameter arrays."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    out = {}
    for k, p in params.items():
        g = grads[k]
        m = state.m.get(k)
        v = state.v.get(k)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[k], state.v[k] = m, v
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        out[k] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out


def save_optim_state(state: OptimState, path: str | Path) -> None:
    tensors = {f"m/{k}": v for k, v in state.m.items()}
    tensors.update({f"v/{k}": v for k, v in state.v.items()})
    tensors["hyper"] = np.array([state.lr, state.beta1, state.beta2, state.eps, state.step], dtype=DTYPE)
    Path(path).write_bytes(tensors_to_bytes(tensors))


def load_optim_state(path: str | Path) -> OptimState:
    tensors = tensors_from_bytes(Path(path).read_bytes())
    lr, b1, b2, eps, step = tensors.pop("hyper").tolist()
    state = OptimState(lr, b1, b2, eps, int(step))
    for k, v in tensors.items():
        kind, name = k.split("/", 1)
        (state.m if kind == "m" else state.v)[name] = v
    return state


def save_checkpoint(prefix: str | Path, weights: Mapping, state: OptimState) -> tuple[Path, Path]:
    prefix = Path(prefix)
    wpath, opath = prefix.with_suffix(".weights"), prefix.with_suffix(".optim")
    save_weights(weights, wpath)
    save_optim_state(state, opath)
    return wpath, opath


def load_checkpoint(prefix: str | Path, config: ModelConfig) -> tuple[dict, OptimState]:
    prefix = Path(prefix)
    return load_weights(prefix.with_suffix(".weights"), config), load_optim_state(prefix.with_suffix(".optim"))


# toy training loop


@dataclass(frozen=True)
class TraceRow:
    step: int
    loss: float
    distortion: float
    rate: float


@dataclass
class TrainResult:
    trace: list[TraceRow]
    weights: dict[str, np.ndarray]
    state: OptimState


def _crop(img: np.ndarray, size: int, rng: Rng) -> np.ndarray:
    h, w = img.shape[:2]
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} is smaller than the {size}x{size} crop")
    i = int(rng.integers(0, h - size + 1))
    j = int(rng.integers(0, w - size + 1))
    return img[i : i + size, j : j + size]


def train_toy(
    config: ModelConfig,
    images: Sequence[np.ndarray],
    lmbda: float,
    steps: int,
    lr: float = 1e-4,
    seed: int = 0,
    crop: int = 64,
    batch_size: int = 1,
    weights: Mapping[str, np.ndarray] | None = None,
    divergence_factor: float = 1e3,
) -> TrainResult:
    """Adam on ``D + lmbda * R`` over random crops of unit-range images.

    Every random draw (init, crops, noise) comes from one seeded stream, so
    equal arguments give bit-identical traces.
    """
    rng = Rng(seed)
    params = dict(weights) if weights is not None else init_weights(config, rng)
    state = OptimState(lr=lr)
    trace: list[TraceRow] = []
    first = None
    for step in range(steps):
        batch = []
        for _ in range(batch_size):
            img = images[int(rng.integers(0, len(images)))]
            x = _crop(np.asarray(img, dtype=DTYPE), crop, rng)
            batch.append((x, *draw_noise(config, crop, crop, rng)))

        def loss_fn(p):
            parts = [rd_loss(x, forward_train(x, p, config, ny, nz), lmbda) for x, ny, nz in batch]
            scale = 1.0 / len(parts)
            total = parts[0]
            for part in parts[1:]:
                total = RdLoss(
                    total.distortion + part.distortion, total.rate + part.rate, lmbda, total.loss + part.loss
                )
            return RdLoss(total.distortion * scale, total.rate * scale, lmbda, total.loss * scale)

        try:
            result, grads = value_and_gradients(loss_fn, params)
        except (FloatingPointError, ValueError) as exc:
            if step == 0:
                raise
            # the optimizer pushed the weights out of the valid range
            raise TrainingDiverged(f"forward pass failed at step {step}: {exc}", trace) from exc
        loss, dist, rate = result.floats()
        trace.append(TraceRow(step, loss, dist, rate))
        if first is None:
            first = loss
        if not math.isfinite(loss) or loss > divergence_factor * first:
            raise TrainingDiverged(f"loss {loss:.4g} at step {step} (initial {first:.4g})", trace)
        params = adam_step(state, params, grads)
        if step % 50 == 0:
            log.info("step %d  L=%.5f  D=%.5f  R=%.4f bpp", step, loss, dist, rate)
    return TrainResult(trace, params, state)


def write_trace_csv(trace: Sequence[TraceRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "loss", "distortion", "rate"])
        for row in trace:
            writer.writerow([row.step, repr(row.loss), repr(row.distortion), repr(row.rate)])
