"""Analytic MAC/FLOP/parameter accounting for a :class:`ModelConfig`.

Counting rules (normative for this package):

* linear ``in -> out`` over T tokens: ``T*in*out`` MACs, plus ``T*out`` FLOPs
  for the bias add.
* depthwise ``k x k`` conv over T tokens, C channels: ``T*k*k*C`` MACs plus
  ``T*C`` bias FLOPs.
* masked context conv: only the causal taps are counted.
* selective scan, per path: ``2*L*D*N`` MACs (state update and output
  contraction) plus ``L*D`` for the skip term; ``4*L*D*N`` elementwise FLOPs
  (``delta*A``, ``exp``, ``delta*B``, ``*x``).
* elementwise costs in FLOPs per element: add/mul 1, SiLU 4, softplus 3;
  RMSNorm 4 per element plus 2 per token.
* FLOPs = 2 * MACs + the elementwise FLOPs above.

The factorized prior contributes parameters only; likelihood evaluation and
range coding are not counted.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

from .config import ModelConfig
from .entropy import PRIOR_FILTERS, context_mask

FLOPS_PER_MAC = 2
SILU_FLOPS = 4
SOFTPLUS_FLOPS = 3
NORM_FLOPS_PER_ELEMENT = 4
NORM_FLOPS_PER_TOKEN = 2
SCAN_ELEMENTWISE_FLOPS = 4

REPORT_RESOLUTIONS = ((768, 512), (1024, 768), (1280, 1280))


@dataclass(frozen=True)
class LayerCost:
    name: str
    kind: str
    macs: int
    flops: int
    params: int


@dataclass
class ComplexityReport:
    height: int
    width: int
    layers: list[LayerCost] = field(default_factory=list)

    @property
    def macs(self) -> int:
        return sum(l.macs for l in self.layers)

    @property
    def flops(self) -> int:
        return sum(l.flops for l in self.layers)

    @property
    def params(self) -> int:
        return sum(l.params for l in self.layers)

    def add(self, name: str, kind: str, macs: int = 0, extra_flops: int = 0, params: int = 0) -> None:
        self.layers.append(LayerCost(name, kind, macs, FLOPS_PER_MAC * macs + extra_flops, params))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("name,kind,macs,flops,params\n")
        for l in self.layers:
            buf.write(f"{l.name},{l.kind},{l.macs},{l.flops},{l.params}\n")
        buf.write(f"total,total,{self.macs},{self.flops},{self.params}\n")
        return buf.getvalue()

    def to_table(self, per_layer: bool = True) -> str:
        rows = [("layer", "kind", "MACs", "FLOPs", "params")]
        if per_layer:
            rows += [(l.name, l.kind, f"{l.macs:,}", f"{l.flops:,}", f"{l.params:,}") for l in self.layers]
        rows.append(("TOTAL", f"{self.width}x{self.height}", human(self.macs), human(self.flops), f"{self.params / 1e6:.2f}M"))
        widths = [max(len(r[i]) for r in rows) for i in range(5)]
        lines = ["  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))) for r in rows]
        return "\n".join(lines) + "\n"


def human(n: float) -> str:
    for unit, scale in (("T", 1e12), ("G", 1e9), ("M", 1e6), ("K", 1e3)):
        if n >= scale:
            return f"{n / scale:.3f}{unit}"
    return str(int(n))


def linear_cost(tokens: int, c_in: int, c_out: int, bias: bool = True) -> tuple[int, int, int]:
    """(MACs, extra FLOPs, params) of a token-wise linear layer."""
    return tokens * c_in * c_out, tokens * c_out if bias else 0, c_in * c_out + (c_out if bias else 0)


def _norm(r: ComplexityReport, name: str, tokens: int, c: int) -> None:
    r.add(name, "rmsnorm", 0, tokens * (NORM_FLOPS_PER_ELEMENT * c + NORM_FLOPS_PER_TOKEN), c)


def _linear(r: ComplexityReport, name: str, tokens: int, c_in: int, c_out: int, bias: bool = True) -> None:
    macs, extra, params = linear_cost(tokens, c_in, c_out, bias)
    r.add(name, "linear", macs, extra, params)


def _vss(r: ComplexityReport, name: str, config: ModelConfig, tokens: int, c: int) -> None:
    d = config.d_inner_ratio * c
    n = config.state_dim
    rank = config.dt_rank(c)
    k = config.dwconv_size
    hidden = config.mlp_ratio * c
    _norm(r, f"{name}.norm1", tokens, c)
    _linear(r, f"{name}.mlp1", tokens, c, d)
    r.add(f"{name}.dwconv", "dwconv", tokens * k * k * d, tokens * d, k * k * d + d)
    r.add(f"{name}.silu", "act", 0, SILU_FLOPS * tokens * d, 0)
    macs, _, _ = linear_cost(4 * tokens, d, rank + 2 * n, bias=False)
    r.add(f"{name}.ss2d.x_proj", "linear", macs, 0, 4 * d * (rank + 2 * n))
    macs, extra, _ = linear_cost(4 * tokens, rank, d)
    r.add(f"{name}.ss2d.dt_proj", "linear", macs, extra + SOFTPLUS_FLOPS * 4 * tokens * d, 4 * (rank * d + d))
    r.add(
        f"{name}.ss2d.scan",
        "selective_scan",
        4 * (2 * tokens * d * n + tokens * d),
        4 * SCAN_ELEMENTWISE_FLOPS * tokens * d * n,
        4 * (d * n + d),
    )
    r.add(f"{name}.ss2d.merge", "add", 0, 3 * tokens * d, 0)
    _norm(r, f"{name}.norm2", tokens, d)
    _linear(r, f"{name}.mlp2", tokens, d, c)
    r.add(f"{name}.residual1", "add", 0, tokens * c, 0)
    _norm(r, f"{name}.norm3", tokens, c)
    _linear(r, f"{name}.mlp3.fc1", tokens, c, hidden)
    r.add(f"{name}.mlp3.silu", "act", 0, SILU_FLOPS * tokens * hidden, 0)
    _linear(r, f"{name}.mlp3.fc2", tokens, hidden, c)
    r.add(f"{name}.residual2", "add", 0, tokens * c, 0)


def _encoder(r, config, name, stages, c_in, h, w):
    for i, (c, depth) in enumerate(stages):
        h, w = h // 2, w // 2
        tokens = h * w
        _norm(r, f"{name}.stage{i}.merge.norm", tokens, 4 * c_in)
        _linear(r, f"{name}.stage{i}.merge.proj", tokens, 4 * c_in, c)
        for j in range(depth):
            _vss(r, f"{name}.stage{i}.vss{j}", config, tokens, c)
        c_in = c
    return h, w


def _decoder(r, config, name, stages, c_out, h, w):
    widths = [c for c, _ in stages]
    for i, (c, depth) in enumerate(reversed(stages)):
        for j in range(depth):
            _vss(r, f"{name}.stage{i}.vss{j}", config, h * w, c)
        idx = len(stages) - 1 - i
        target = widths[idx - 1] if idx > 0 else c_out
        _linear(r, f"{name}.stage{i}.expand.proj", h * w, c, 4 * target)
        h, w = 2 * h, 2 * w
    return h, w


def count_complexity(config: ModelConfig, height: int, width: int) -> ComplexityReport:
    """Per-layer costs of one forward pass of g_a, h_a, h_s, the context
    model, the entropy-parameters net and g_s at ``height x width``.

    The size must be divisible by the model's total downsampling factor.
    """
    f = config.total_factor
    if height % f or width % f:
        raise ValueError(f"{height}x{width} is not divisible by the total factor {f}")
    r = ComplexityReport(height, width)
    yh, yw = _encoder(r, config, "ga", config.ga_stages, config.image_channels, height, width)
    cy = config.latent_channels
    zh, zw = _encoder(r, config, "ha", config.ha_stages, cy, yh, yw)
    _decoder(r, config, "hs", config.ha_stages, 2 * cy, zh, zw)
    tokens = yh * yw
    k = config.context_size
    taps = int(context_mask(k).sum())
    r.add("context", "masked_conv", tokens * taps * cy * 2 * cy, tokens * 2 * cy, k * k * cy * 2 * cy + 2 * cy)
    widths = config.entropy_widths
    for i in range(3):
        _linear(r, f"entropy_parameters.fc{i}", tokens, widths[i], widths[i + 1])
        if i < 2:
            r.add(f"entropy_parameters.silu{i}", "act", 0, SILU_FLOPS * tokens * widths[i + 1], 0)
    r.add("entropy_parameters.softplus", "act", 0, SOFTPLUS_FLOPS * tokens * cy, 0)
    _decoder(r, config, "gs", config.ga_stages, config.image_channels, yh, yw)
    dims = (1,) + PRIOR_FILTERS + (1,)
    per_channel = sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))
    per_channel += sum(PRIOR_FILTERS)
    r.add("prior", "factorized_prior", 0, 0, config.hyper_channels * per_channel)
    return r


def parameter_count(config: ModelConfig) -> int:
    """Analytic parameter count (independent of the weight layout code)."""
    f = config.total_factor
    return count_complexity(config, f, f).params
