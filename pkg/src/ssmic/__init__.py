"""SSM-based learned image compression in NumPy.

Encoder and decoder transforms are stacks of visual state-space blocks
(four-direction selective scans); a hyperprior with a masked context model
supplies Gaussian entropy parameters for a bit-exact range coder.
"""

from .codec import compress, decode_image, decompress, encode_image
from .config import PRESETS, ModelConfig, load_config
from .transforms import init_weights

__version__ = "0.1.0"

__all__ = [
    "ModelConfig",
    "PRESETS",
    "compress",
    "decode_image",
    "decompress",
    "encode_image",
    "init_weights",
    "load_config",
]
