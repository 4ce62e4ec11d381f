"""Entropy models: quantization, the factorized prior for z, the conditional
Gaussian for y, the masked-convolution context model, the entropy-parameters
network, and the integer coding tables derived from them.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Mapping

import numpy as np
from scipy import special

from . import autograd as ag
from .config import ModelConfig
from .rangecoder import ESCAPE_LENGTH_BITS, IntTable, build_cdf_table, zigzag
from .tensor import DTYPE, Rng, round_half_even

SIGMA_MIN = 0.11
P_MIN = 2.0**-16
TAIL_MASS = 1e-9
PRIOR_FILTERS = (3, 3, 3)
PRIOR_INIT_SCALE = 10.0
# 64 log-spaced scales from SIGMA_MIN to 256; frozen, part of the stream format
SCALE_TABLE = np.exp(np.linspace(math.log(SIGMA_MIN), math.log(256.0), 64))
TAIL_QUANTILE = float(-special.ndtri(TAIL_MASS / 2))


# quantization


def quantize(y, mode: str, rng: Rng | None = None, noise: np.ndarray | None = None):
    """``noise``: ``y + U(-0.5, 0.5)``; ``round``: nearest integer, ties to even.

    In noise mode a pre-drawn ``noise`` array may be supplied instead of
    ``rng`` so the result is a fixed function of ``y``.
    """
    if mode == "noise":
        if noise is None:
            if rng is None:
                raise ValueError("noise-mode quantization needs an rng or a noise array")
            noise = rng.uniform(-0.5, 0.5, ag.value(y).shape)
        return y + noise
    if mode == "round":
        return round_half_even(ag.value(y))
    raise ValueError(f"unknown quantization mode {mode!r}")


# conditional Gaussian


def gaussian_likelihood(y_hat, mu, sigma, floor: bool = True):
    """Probability mass of the unit bin around ``y_hat`` under N(mu, sigma^2).

    Evaluated as ``Phi((0.5 - |v|)/sigma) - Phi((-0.5 - |v|)/sigma)`` with
    ``v = y_hat - mu`` to keep precision in the tails.
    """
    v = ag.abs(y_hat - mu)
    upper = ag.normal_cdf((0.5 - v) / sigma)
    lower = ag.normal_cdf((-0.5 - v) / sigma)
    lik = upper - lower
    return ag.lower_bound(lik, P_MIN) if floor else lik


# factorized prior


def prior_shapes(channels: int) -> dict[str, tuple[int, ...]]:
    dims = (1,) + PRIOR_FILTERS + (1,)
    shapes = {}
    for i in range(len(dims) - 1):
        shapes[f"prior.matrix{i}"] = (channels, dims[i + 1], dims[i])
        shapes[f"prior.bias{i}"] = (channels, dims[i + 1], 1)
        if i < len(PRIOR_FILTERS):
            shapes[f"prior.factor{i}"] = (channels, dims[i + 1], 1)
    return shapes


def init_prior(config: ModelConfig, rng: Rng) -> dict[str, np.ndarray]:
    dims = (1,) + PRIOR_FILTERS + (1,)
    scale = PRIOR_INIT_SCALE ** (1 / (len(PRIOR_FILTERS) + 1))
    out = {}
    for path, shape in prior_shapes(config.hyper_channels).items():
        i = int(path[-1])
        if path.startswith("prior.matrix"):
            out[path] = np.full(shape, math.log(math.expm1(1 / scale / dims[i + 1])))
        elif path.startswith("prior.bias"):
            out[path] = rng.uniform(-0.5, 0.5, shape)
        else:
            out[path] = np.zeros(shape)
    return out


def prior_logits(values, params: Mapping):
    """Logit of the per-channel CDF. ``values`` is ``C x M``."""
    x = ag.reshape(values, (ag.value(values).shape[0], 1, -1))
    n_layers = len(PRIOR_FILTERS) + 1
    for i in range(n_layers):
        x = ag.matmul(ag.softplus(params[f"prior.matrix{i}"]), x) + params[f"prior.bias{i}"]
        if i < len(PRIOR_FILTERS):
            x = x + ag.tanh(params[f"prior.factor{i}"]) * ag.tanh(x)
    return ag.reshape(x, ag.value(values).shape)


def prior_cdf(values, params: Mapping):
    return ag.sigmoid(prior_logits(values, params))


def check_prior_monotone(params: Mapping, lo: float = -50.0, hi: float = 50.0, points: int = 1000) -> None:
    """Raise if any channel's CDF fails to increase strictly on a grid."""
    channels = ag.value(params["prior.matrix0"]).shape[0]
    grid = np.tile(np.linspace(lo, hi, points), (channels, 1))
    logits = prior_logits(grid, {k: ag.value(v) for k, v in params.items() if k.startswith("prior.")})
    bad = np.flatnonzero((np.diff(logits, axis=1) <= 0).any(axis=1))
    if bad.size:
        raise ValueError(f"factorized prior CDF is not strictly increasing in channel(s) {bad.tolist()}")


def factorized_likelihood(z_hat, params: Mapping, floor: bool = True):
    """``c(z + 0.5) - c(z - 0.5)`` per channel; ``z_hat`` is ``H x W x C``."""
    h, w, c = ag.value(z_hat).shape
    v = ag.reshape(ag.transpose(z_hat, (2, 0, 1)), (c, h * w))
    lower = prior_logits(v - 0.5, params)
    upper = prior_logits(v + 0.5, params)
    # evaluate on the side of the median where the sigmoid is not saturated
    sign = -np.sign(ag.value(lower) + ag.value(upper))
    lik = ag.abs(ag.sigmoid(sign * upper) - ag.sigmoid(sign * lower))
    lik = ag.transpose(ag.reshape(lik, (c, h, w)), (1, 2, 0))
    return ag.lower_bound(lik, P_MIN) if floor else lik


def prior_quantiles(params: Mapping, mass: float = TAIL_MASS) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel values where the CDF equals ``mass/2`` and ``1 - mass/2``."""
    p = {k: ag.value(v) for k, v in params.items() if k.startswith("prior.")}
    channels = p["prior.matrix0"].shape[0]
    target = math.log(mass / 2) - math.log1p(-mass / 2)

    def solve(t):
        lo = np.full(channels, -1.0)
        hi = np.full(channels, 1.0)
        for _ in range(200):
            low_bad = prior_logits(lo[:, None], p)[:, 0] > t
            hi_bad = prior_logits(hi[:, None], p)[:, 0] < t
            if not (low_bad.any() or hi_bad.any()):
                break
            lo = np.where(low_bad, lo * 2, lo)
            hi = np.where(hi_bad, hi * 2, hi)
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            above = prior_logits(mid[:, None], p)[:, 0] > t
            hi = np.where(above, mid, hi)
            lo = np.where(above, lo, mid)
        return 0.5 * (lo + hi)

    return solve(target), solve(-target)


# context model and entropy parameters


def context_mask(k: int) -> np.ndarray:
    """Strictly causal raster mask: rows above, and left of centre in the
    centre row."""
    mask = np.zeros((k, k))
    c = k // 2
    mask[:c, :] = 1.0
    mask[c, :c] = 1.0
    return mask


def check_context_mask(weight) -> None:
    w = ag.value(weight)
    mask = context_mask(w.shape[0])
    if np.any(w[mask == 0] != 0):
        raise ValueError("context weights are non-zero at masked (centre or raster-later) taps")


def context_forward(y_hat, weight, bias):
    """Masked convolution over the whole latent (parallel/teacher-forced form)."""
    check_context_mask(weight)
    mask = context_mask(ag.value(weight).shape[0])[:, :, None, None]
    return ag.conv2d(y_hat, weight * mask) + bias


def context_at(y_padded: np.ndarray, i: int, j: int, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Context features at one latent position from a zero-padded latent.

    ``y_padded`` carries ``k//2`` zeros on every side. Only causal taps are
    read, so positions not yet decoded may hold anything.
    """
    k = weight.shape[0]
    c = k // 2
    out = bias.copy()
    for a in range(c + 1):
        cols = k if a < c else c
        patch = y_padded[i + a, j : j + cols, :]
        out += np.einsum("bc,bco->o", patch, weight[a, :cols])
    return out


def entropy_parameters(psi, phi, params: Mapping):
    """Three 1x1 projections with SiLU between, split into ``mu`` and a
    lower-bounded ``sigma``."""
    x = ag.concat([psi, phi], axis=-1)
    for i in range(3):
        x = ag.matmul(x, params[f"entropy_parameters.fc{i}.weight"]) + params[f"entropy_parameters.fc{i}.bias"]
        if i < 2:
            x = ag.silu(x)
    cy = ag.value(x).shape[-1] // 2
    mu, raw = ag.split(x, (cy, cy), axis=-1)
    sigma = ag.lower_bound(ag.softplus(raw), SIGMA_MIN)
    return mu, sigma


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    cy = config.latent_channels
    k = config.context_size
    shapes = {"context.weight": (k, k, cy, 2 * cy), "context.bias": (2 * cy,)}
    widths = config.entropy_widths
    for i in range(3):
        shapes[f"entropy_parameters.fc{i}.weight"] = (widths[i], widths[i + 1])
        shapes[f"entropy_parameters.fc{i}.bias"] = (widths[i + 1],)
    shapes.update(prior_shapes(config.hyper_channels))
    return shapes


def rate_estimate(likelihoods) -> float:
    """Total bits ``-sum log2 p``."""
    p = np.concatenate([np.ravel(ag.value(l)) for l in _as_list(likelihoods)])
    if p.size and (not np.all(p > 0) or np.any(p > 1)):
        raise ValueError("likelihoods must lie in (0, 1]")
    return float(-np.log2(p).sum()) if p.size else 0.0


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


# integer coding tables


def scale_index(sigma: np.ndarray) -> np.ndarray:
    """Index of the smallest table scale ``>= sigma`` (clamped to the table)."""
    idx = np.searchsorted(SCALE_TABLE, np.asarray(sigma, dtype=DTYPE), side="left")
    return np.minimum(idx, SCALE_TABLE.size - 1)


def _int_table(pmf: np.ndarray, offset: int) -> IntTable:
    tail = max(1.0 - float(pmf.sum()), 0.0)
    probs = np.maximum(np.append(pmf, tail), P_MIN)
    return IntTable(build_cdf_table(probs), offset)


@lru_cache(maxsize=None)
def gaussian_table(index: int) -> IntTable:
    """Coding table for the residual ``round(y - mu)`` at one table scale."""
    s = float(SCALE_TABLE[index])
    radius = max(1, math.ceil(s * TAIL_QUANTILE))
    r = np.arange(-radius, radius + 1, dtype=DTYPE)
    v = np.abs(r)
    pmf = special.ndtr((0.5 - v) / s) - special.ndtr((-0.5 - v) / s)
    return _int_table(pmf, -radius)


def factorized_tables(params: Mapping) -> list[IntTable]:
    """One table per hyper-latent channel over its tail-quantile support."""
    lo, hi = prior_quantiles(params)
    p = {k: ag.value(v) for k, v in params.items() if k.startswith("prior.")}
    tables = []
    for c in range(lo.size):
        start, stop = math.floor(lo[c]), math.ceil(hi[c])
        support = np.arange(start, stop + 1, dtype=DTYPE)
        single = {k: v[c : c + 1] for k, v in p.items()}
        lower = prior_logits((support - 0.5)[None, :], single)[0]
        upper = prior_logits((support + 0.5)[None, :], single)[0]
        sign = -np.sign(lower + upper)
        pmf = np.abs(special.expit(sign * upper) - special.expit(sign * lower))
        tables.append(_int_table(pmf, start))
    return tables


def coded_probability(value: int, table: IntTable) -> float:
    """Model probability of one coded integer, escape payload included."""
    s = value - table.offset
    if 0 <= s < table.escape:
        return table.table.probability(s)
    n = zigzag(value).bit_length()
    return table.table.probability(table.escape) * 2.0 ** -(ESCAPE_LENGTH_BITS + n)
