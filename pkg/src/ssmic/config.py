"""Model configuration and its JSON file form."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

Stage = tuple[int, int]  # (width C_i, depth d_i)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``ga_stages``/``ha_stages`` list ``(C_i, d_i)`` per encoder stage; the
    decoders g_s and h_s mirror them in reverse. Every stage changes spatial
    extents by a factor of 2.
    """

    ga_stages: tuple[Stage, ...] = ((128, 2), (192, 2), (256, 6), (320, 2))
    ha_stages: tuple[Stage, ...] = ((192, 2), (192, 2))
    state_dim: int = 16
    d_inner_ratio: int = 2
    mlp_ratio: int = 4
    dwconv_size: int = 3
    context_size: int = 5
    image_channels: int = 3
    pad_multiple: int = 256

    def __post_init__(self):
        object.__setattr__(self, "ga_stages", tuple(tuple(map(int, s)) for s in self.ga_stages))
        object.__setattr__(self, "ha_stages", tuple(tuple(map(int, s)) for s in self.ha_stages))
        if not self.ga_stages or not self.ha_stages:
            raise ValueError("ga_stages and ha_stages must be non-empty")
        for name, stages in (("ga_stages", self.ga_stages), ("ha_stages", self.ha_stages)):
            for width, depth in stages:
                if width < 1 or depth < 1:
                    raise ValueError(f"{name}: every stage needs C_i >= 1 and d_i >= 1, got {(width, depth)}")
        if self.state_dim < 1 or self.d_inner_ratio < 1 or self.mlp_ratio < 1:
            raise ValueError("state_dim, d_inner_ratio and mlp_ratio must be >= 1")
        for name in ("dwconv_size", "context_size"):
            k = getattr(self, name)
            if k < 1 or k % 2 == 0:
                raise ValueError(f"{name} must be odd, got {k}")
        if self.pad_multiple % self.total_factor:
            raise ValueError(
                f"pad_multiple {self.pad_multiple} is not a multiple of the total "
                f"downsampling factor {self.total_factor}"
            )

    @property
    def latent_channels(self) -> int:
        return self.ga_stages[-1][0]

    @property
    def hyper_channels(self) -> int:
        return self.ha_stages[-1][0]

    @property
    def ga_factor(self) -> int:
        return 2 ** len(self.ga_stages)

    @property
    def ha_factor(self) -> int:
        return 2 ** len(self.ha_stages)

    @property
    def total_factor(self) -> int:
        return self.ga_factor * self.ha_factor

    def dt_rank(self, width: int) -> int:
        return max(1, math.ceil(width / 16))

    @property
    def entropy_widths(self) -> tuple[int, int, int, int]:
        """Input, two hidden and output widths of the entropy-parameters net."""
        cy = self.latent_channels
        return (4 * cy, max(1, 10 * cy // 3), max(1, 8 * cy // 3), 2 * cy)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ga_stages"] = [list(s) for s in self.ga_stages]
        d["ha_stages"] = [list(s) for s in self.ha_stages]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self) -> bytes:
        """SHA-256 of the canonical (compact, key-sorted) JSON form."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).digest()


PRESETS: dict[str, ModelConfig] = {
    "default": ModelConfig(),
    # desk-scale model used by the codec tests and toy training
    "micro": ModelConfig(
        ga_stages=((8, 1), (12, 1)),
        ha_stages=((8, 1), (8, 1)),
        state_dim=4,
        mlp_ratio=2,
        pad_multiple=16,
    ),
    # small enough for finite-difference gradient checks
    "nano": ModelConfig(
        ga_stages=((1, 1),),
        ha_stages=((1, 1),),
        state_dim=2,
        d_inner_ratio=1,
        mlp_ratio=2,
        context_size=3,
        pad_multiple=4,
    ),
}


def load_config(source: str | Path | None) -> ModelConfig:
    """A preset name, a JSON file path, or ``None`` for the default."""
    if source is None:
        return PRESETS["default"]
    if str(source) in PRESETS:
        return PRESETS[str(source)]
    path = Path(source)
    if not path.exists():
        raise FileNotFoundError(f"config {source!r} is neither a preset ({', '.join(PRESETS)}) nor a file")
    return ModelConfig.from_dict(json.loads(path.read_text()))


def save_config(config: ModelConfig, path: str | Path) -> None:
    Path(path).write_text(config.to_json() + "\n")
