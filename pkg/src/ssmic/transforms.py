"""Analysis/synthesis transforms g_a, g_s and hyper transforms h_a, h_s, plus
the canonical parameter layout shared by every network in the codec.

A WeightStore is an ordered ``dict`` from a dotted parameter path such as
``"ga.stage0.vss1.mlp1.weight"`` to an array.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from . import autograd as ag
from . import entropy
from .blocks import patch_expand, patch_merge, vss_block
from .config import ModelConfig
from .ssm import init_a_log, init_dt_bias
from .tensor import DTYPE, Rng

WeightStore = dict  # str -> np.ndarray, insertion-ordered

INIT_STD = 0.02


def vss_shapes(config: ModelConfig, width: int) -> dict[str, tuple[int, ...]]:
    d = config.d_inner_ratio * width
    n = config.state_dim
    r = config.dt_rank(width)
    k = config.dwconv_size
    hidden = config.mlp_ratio * width
    return {
        "norm1.scale": (width,),
        "mlp1.weight": (width, d),
        "mlp1.bias": (d,),
        "dwconv.weight": (k, k, d),
        "dwconv.bias": (d,),
        "ss2d.x_proj.weight": (4, d, r + 2 * n),
        "ss2d.dt_proj.weight": (4, r, d),
        "ss2d.dt_proj.bias": (4, d),
        "ss2d.A_log": (4, d, n),
        "ss2d.D": (4, d),
        "norm2.scale": (d,),
        "mlp2.weight": (d, width),
        "mlp2.bias": (width,),
        "norm3.scale": (width,),
        "mlp3.fc1.weight": (width, hidden),
        "mlp3.fc1.bias": (hidden,),
        "mlp3.fc2.weight": (hidden, width),
        "mlp3.fc2.bias": (width,),
    }


def _merge_shapes(c_in: int, c_out: int) -> dict[str, tuple[int, ...]]:
    return {"norm.scale": (4 * c_in,), "proj.weight": (4 * c_in, c_out), "proj.bias": (c_out,)}


def _expand_shapes(c_in: int, c_out: int) -> dict[str, tuple[int, ...]]:
    return {"proj.weight": (c_in, 4 * c_out), "proj.bias": (4 * c_out,)}


def _encoder_shapes(config, name, stages, c_in) -> dict[str, tuple[int, ...]]:
    out = {}
    for i, (width, depth) in enumerate(stages):
        for k, s in _merge_shapes(c_in, width).items():
            out[f"{name}.stage{i}.merge.{k}"] = s
        for j in range(depth):
            for k, s in vss_shapes(config, width).items():
                out[f"{name}.stage{i}.vss{j}.{k}"] = s
        c_in = width
    return out


def _decoder_shapes(config, name, stages, c_out) -> dict[str, tuple[int, ...]]:
    """Mirror of an encoder: stage i holds d_i VSS blocks at C_i then an
    expand to the previous width (``c_out`` for the last one)."""
    out = {}
    widths = [w for w, _ in stages]
    for i, (width, depth) in enumerate(reversed(stages)):
        for j in range(depth):
            for k, s in vss_shapes(config, width).items():
                out[f"{name}.stage{i}.vss{j}.{k}"] = s
        idx = len(stages) - 1 - i
        target = widths[idx - 1] if idx > 0 else c_out
        for k, s in _expand_shapes(width, target).items():
            out[f"{name}.stage{i}.expand.{k}"] = s
    return out


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter of the codec, in canonical order."""
    cy = config.latent_channels
    shapes: dict[str, tuple[int, ...]] = {}
    shapes.update(_encoder_shapes(config, "ga", config.ga_stages, config.image_channels))
    shapes.update(_decoder_shapes(config, "gs", config.ga_stages, config.image_channels))
    shapes.update(_encoder_shapes(config, "ha", config.ha_stages, cy))
    shapes.update(_decoder_shapes(config, "hs", config.ha_stages, 2 * cy))
    shapes.update(entropy.parameter_shapes(config))
    return shapes


def init_weights(config: ModelConfig, seed: int | Rng = 0) -> WeightStore:
    """Random initialization: truncated normal (std 0.02) projections, zero
    biases, unit norm scales, S4D-real ``A`` and unit skip ``D``."""
    rng = seed if isinstance(seed, Rng) else Rng(seed)
    weights: WeightStore = {}
    for path, shape in parameter_shapes(config).items():
        if path.startswith("prior."):
            continue
        if path.endswith(".scale") or path.endswith("ss2d.D"):
            arr = np.ones(shape)
        elif path.endswith("dt_proj.bias"):
            arr = np.stack([init_dt_bias(rng, shape[1]) for _ in range(shape[0])])
        elif path.endswith("A_log"):
            arr = np.stack([init_a_log(shape[1], shape[2]) for _ in range(shape[0])])
        elif path.endswith(".bias"):
            arr = np.zeros(shape)
        else:
            arr = rng.truncated_normal(shape, INIT_STD)
        weights[path] = np.asarray(arr, dtype=DTYPE)
    weights["context.weight"] = weights["context.weight"] * entropy.context_mask(config.context_size)[
        :, :, None, None
    ]
    weights.update(entropy.init_prior(config, rng))
    ordered = {p: weights[p] for p in parameter_shapes(config)}
    return ordered


def check_divisible(h: int, w: int, factor: int, what: str) -> None:
    if h % factor or w % factor:
        raise ValueError(f"{what}: spatial size {h}x{w} is not divisible by {factor}")


def _encode(x, params: Mapping, name: str, stages) -> object:
    for i, (_, depth) in enumerate(stages):
        x = patch_merge(x, params, f"{name}.stage{i}.merge.")
        for j in range(depth):
            x = vss_block(x, params, f"{name}.stage{i}.vss{j}.")
    return x


def _decode(x, params: Mapping, name: str, stages) -> object:
    for i, (_, depth) in enumerate(reversed(stages)):
        for j in range(depth):
            x = vss_block(x, params, f"{name}.stage{i}.vss{j}.")
        x = patch_expand(x, params, f"{name}.stage{i}.expand.")
    return x


def g_a(x, params: Mapping, config: ModelConfig):
    """Image ``H x W x 3`` to latent ``y``."""
    h, w, _ = ag.value(x).shape
    check_divisible(h, w, config.ga_factor, "g_a")
    return _encode(x, params, "ga", config.ga_stages)


def g_s(y_hat, params: Mapping, config: ModelConfig):
    """Latent to reconstruction ``H x W x 3`` (unclamped)."""
    return _decode(y_hat, params, "gs", config.ga_stages)


def h_a(y, params: Mapping, config: ModelConfig):
    h, w, _ = ag.value(y).shape
    check_divisible(h, w, config.ha_factor, "h_a")
    return _encode(y, params, "ha", config.ha_stages)


def h_s(z_hat, params: Mapping, config: ModelConfig):
    """Hyper-latent to ``2 * C_y`` entropy-parameter features."""
    return _decode(z_hat, params, "hs", config.ha_stages)
