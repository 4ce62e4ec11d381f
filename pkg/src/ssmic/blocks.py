"""Building blocks: RMSNorm, linear layers, patch merge/expand, SS2D and the
VSS block.

Block functions take a feature map ``H x W x C`` and a flat parameter
mapping addressed by ``prefix + local name``. They accept plain arrays or
:class:`~ssmic.autograd.Var` values for both.
"""

from __future__ import annotations

import enum
from functools import lru_cache
from typing import Mapping

import numpy as np

from . import autograd as ag
from .ssm import selective_scan_op

RMS_EPS = 1e-6


class ScanPath(enum.IntEnum):
    """The four SS2D traversal orders, in merge order."""

    ROW_FORWARD = 0
    COL_FORWARD = 1
    ROW_BACKWARD = 2
    COL_BACKWARD = 3


def rms_norm(f, scale, eps: float = RMS_EPS):
    """``f / sqrt(mean(f^2) + eps) * scale`` over the last (channel) axis."""
    if ag.value(scale).shape != ag.value(f).shape[-1:]:
        raise ValueError(
            f"norm scale shape {ag.value(scale).shape} does not match channels {ag.value(f).shape[-1]}"
        )
    ms = ag.mean(ag.square(f), axis=-1, keepdims=True)
    return f / ag.sqrt(ms + eps) * scale


def linear(f, weight, bias=None):
    """Token-wise projection; ``weight`` is ``C_in x C_out``."""
    out = ag.matmul(f, weight)
    return out if bias is None else out + bias


def space_to_depth(f):
    """``H x W x C -> H/2 x W/2 x 4C``.

    Channel blocks are ordered top-left, top-right, bottom-left, bottom-right.
    """
    h, w, c = ag.value(f).shape
    if h % 2 or w % 2:
        raise ValueError(f"space_to_depth needs even H and W, got {h}x{w}")
    x = ag.reshape(f, (h // 2, 2, w // 2, 2, c))
    x = ag.transpose(x, (0, 2, 1, 3, 4))
    return ag.reshape(x, (h // 2, w // 2, 4 * c))


def depth_to_space(f):
    """Inverse of :func:`space_to_depth`: ``H x W x 4C -> 2H x 2W x C``."""
    h, w, c4 = ag.value(f).shape
    if c4 % 4:
        raise ValueError(f"depth_to_space needs channels divisible by 4, got {c4}")
    c = c4 // 4
    x = ag.reshape(f, (h, w, 2, 2, c))
    x = ag.transpose(x, (0, 2, 1, 3, 4))
    return ag.reshape(x, (2 * h, 2 * w, c))


def patch_merge(f, params: Mapping, prefix: str = "", eps: float = RMS_EPS):
    """Space-to-depth by 2, RMSNorm over the 4C stacked channels, then a
    linear projection to the stage width."""
    x = space_to_depth(f)
    x = rms_norm(x, params[prefix + "norm.scale"], eps)
    return linear(x, params[prefix + "proj.weight"], params[prefix + "proj.bias"])


def patch_expand(f, params: Mapping, prefix: str = ""):
    """Linear projection to ``4 * C_out`` then depth-to-space by 2."""
    width = ag.value(params[prefix + "proj.weight"]).shape[1]
    if width % 4:
        raise ValueError(f"patch_expand projection width {width} is not divisible by 4")
    return depth_to_space(linear(f, params[prefix + "proj.weight"], params[prefix + "proj.bias"]))


@lru_cache(maxsize=128)
def scan_permutations(h: int, w: int) -> np.ndarray:
    """``4 x L`` flat grid indices visited by each :class:`ScanPath`."""
    grid = np.arange(h * w).reshape(h, w)
    row = grid.reshape(-1)
    col = grid.T.reshape(-1)
    perms = np.stack([row, col, row[::-1], col[::-1]])
    perms.flags.writeable = False
    return perms


@lru_cache(maxsize=128)
def _inverse_permutations(h: int, w: int) -> np.ndarray:
    inv = np.argsort(scan_permutations(h, w), axis=1)
    inv.flags.writeable = False
    return inv


def cross_scan(f):
    """Unfold ``H x W x D`` into four ``L x D`` sequences, stacked ``4 x L x D``."""
    h, w, d = ag.value(f).shape
    flat = ag.reshape(f, (h * w, d))
    return ag.take(flat, scan_permutations(h, w), axis=0)


def cross_merge(ys, h: int, w: int):
    """Map each of the four sequences back onto the grid and sum them."""
    k, length, d = ag.value(ys).shape
    if k != 4 or length != h * w:
        raise ValueError(f"cross_merge expects 4 x {h * w} x D sequences, got {ag.value(ys).shape}")
    inv = _inverse_permutations(h, w)
    parts = [ag.take(ag.getitem(ys, i), inv[i], axis=0) for i in range(4)]
    # fixed merge order: path 0 + 1 + 2 + 3
    total = ((parts[0] + parts[1]) + parts[2]) + parts[3]
    return ag.reshape(total, (h, w, d))


def ss2d(f, params: Mapping, prefix: str = ""):
    """Cross-scan, four independent selective scans, cross-merge.

    Per-path parameters are stacked on a leading axis of 4:
    ``x_proj.weight`` (4, D, R+2N), ``dt_proj.weight`` (4, R, D),
    ``dt_proj.bias`` (4, D), ``A_log`` (4, D, N), ``D`` (4, D).
    """
    h, w, _ = ag.value(f).shape
    a_log = params[prefix + "A_log"]
    n = ag.value(a_log).shape[-1]
    rank = ag.value(params[prefix + "dt_proj.weight"]).shape[1]
    xs = cross_scan(f)
    proj = ag.matmul(xs, params[prefix + "x_proj.weight"])
    dt_low, b, c = ag.split(proj, (rank, n, n), axis=-1)
    dt = ag.matmul(dt_low, params[prefix + "dt_proj.weight"])
    delta = ag.softplus(dt + ag.reshape(params[prefix + "dt_proj.bias"], (4, 1, -1)))
    a = -ag.exp(a_log)
    ys = selective_scan_op(xs, delta, a, b, c, params[prefix + "D"])
    return cross_merge(ys, h, w)


def mlp(f, params: Mapping, prefix: str):
    """Two linear layers with SiLU between."""
    x = linear(f, params[prefix + "fc1.weight"], params[prefix + "fc1.bias"])
    return linear(ag.silu(x), params[prefix + "fc2.weight"], params[prefix + "fc2.bias"])


def vss_block(f, params: Mapping, prefix: str = ""):
    """Visual state-space block with two residual branches.

    ``f2 = f + mlp2(norm2(ss2d(silu(dwconv(mlp1(norm1(f)))))))`` and
    ``out = f2 + mlp3(norm3(f2))``.
    """
    channels = ag.value(f).shape[-1]
    if ag.value(params[prefix + "norm1.scale"]).shape != (channels,):
        raise ValueError(f"{prefix or 'vss block'}: input has {channels} channels, params do not match")
    x = rms_norm(f, params[prefix + "norm1.scale"])
    x = linear(x, params[prefix + "mlp1.weight"], params[prefix + "mlp1.bias"])
    x = ag.conv2d_depthwise(x, params[prefix + "dwconv.weight"]) + params[prefix + "dwconv.bias"]
    x = ag.silu(x)
    x = ss2d(x, params, prefix + "ss2d.")
    x = rms_norm(x, params[prefix + "norm2.scale"])
    x = linear(x, params[prefix + "mlp2.weight"], params[prefix + "mlp2.bias"])
    f2 = f + x
    return f2 + mlp(rms_norm(f2, params[prefix + "norm3.scale"]), params, prefix + "mlp3.")
