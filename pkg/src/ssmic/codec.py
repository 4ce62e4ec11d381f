"""End-to-end image codec and its file formats.

Container layout (all integers big-endian)::

    offset  size  field
    0       4     magic b"SSMI"
    4       1     format version (1)
    5       4     original height
    9       4     original width
    13      4     padded height
    17      4     padded width
    21      32    SHA-256 digest of the model config
    53      1     lambda tag length n
    54      n     lambda tag, UTF-8
    ..      4     z-stream length, then the z-stream bytes
    ..      4     y-stream length, then the y-stream bytes

Weight files (little-endian)::

    b"SSMW", u8 version, u32 tensor count, then per tensor sorted by path:
    u16 path length, UTF-8 path, u8 ndim, u32 extents..., float64 data
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from . import entropy, rangecoder
from .config import ModelConfig
from .tensor import DTYPE
from .transforms import WeightStore, g_a, g_s, h_a, h_s, parameter_shapes

MAGIC = b"SSMI"
FORMAT_VERSION = 1
WEIGHTS_MAGIC = b"SSMW"
WEIGHTS_VERSION = 1
PAD_MULTIPLE = 256


class CodecError(ValueError):
    pass


class MagicMismatchError(CodecError):
    pass


class VersionMismatchError(CodecError):
    pass


class DigestMismatchError(CodecError):
    pass


class TruncatedStreamError(CodecError):
    def __init__(self, stream: str, detail: str = ""):
        self.stream = stream
        super().__init__(f"truncated {stream} stream" + (f": {detail}" if detail else ""))


class WeightMismatchError(CodecError):
    pass


# images


def to_unit_float(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise TypeError(f"expected a uint8 image, got {img.dtype}")
    return img.astype(DTYPE) / 255.0


def from_unit_float(x: np.ndarray) -> np.ndarray:
    """Clamp to ``[0, 1]`` and round to 8 bits, ties to even."""
    return np.rint(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def read_png(path: str | Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_png(path: str | Path, img: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def pad_image(x: np.ndarray, multiple: int = PAD_MULTIPLE) -> tuple[np.ndarray, tuple[int, int]]:
    """Zero-pad bottom/right up to the next multiple; returns original dims."""
    h, w = x.shape[:2]
    if h < 1 or w < 1:
        raise ValueError(f"image must be at least 1x1, got {h}x{w}")
    ph = -(-h // multiple) * multiple
    pw = -(-w // multiple) * multiple
    pad = [(0, ph - h), (0, pw - w)] + [(0, 0)] * (x.ndim - 2)
    return np.pad(x, pad), (h, w)


def crop_image(x: np.ndarray, dims: tuple[int, int]) -> np.ndarray:
    return x[: dims[0], : dims[1]]


# container


@dataclass(frozen=True)
class CompressedContainer:
    orig_h: int
    orig_w: int
    pad_h: int
    pad_w: int
    digest: bytes
    lambda_tag: str
    z_stream: bytes
    y_stream: bytes
    version: int = FORMAT_VERSION

    @property
    def stream_bits(self) -> int:
        return 8 * (len(self.z_stream) + len(self.y_stream))

    @property
    def bpp(self) -> float:
        """Coded stream bits per original pixel."""
        return self.stream_bits / (self.orig_h * self.orig_w)

    def to_bytes(self) -> bytes:
        tag = self.lambda_tag.encode()
        if len(tag) > 255:
            raise ValueError("lambda tag longer than 255 bytes")
        if len(self.digest) != 32:
            raise ValueError("config digest must be 32 bytes")
        return b"".join(
            [
                MAGIC,
                struct.pack(">B4I", self.version, self.orig_h, self.orig_w, self.pad_h, self.pad_w),
                self.digest,
                struct.pack(">B", len(tag)),
                tag,
                struct.pack(">I", len(self.z_stream)),
                self.z_stream,
                struct.pack(">I", len(self.y_stream)),
                self.y_stream,
            ]
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "CompressedContainer":
        if data[:4] != MAGIC:
            raise MagicMismatchError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
        if len(data) < 54:
            raise TruncatedStreamError("header")
        version, oh, ow, ph, pw = struct.unpack(">B4I", data[4:21])
        if version != FORMAT_VERSION:
            raise VersionMismatchError(f"container version {version}, this build reads {FORMAT_VERSION}")
        digest = data[21:53]
        n = data[53]
        pos = 54 + n
        if len(data) < pos:
            raise TruncatedStreamError("header")
        tag = data[54:pos].decode()
        streams = []
        for name in ("z", "y"):
            if len(data) < pos + 4:
                raise TruncatedStreamError(name, "length field missing")
            (length,) = struct.unpack(">I", data[pos : pos + 4])
            pos += 4
            if len(data) < pos + length:
                raise TruncatedStreamError(name, f"declared {length} bytes, {len(data) - pos} present")
            streams.append(data[pos : pos + length])
            pos += length
        if pos != len(data):
            raise CodecError(f"{len(data) - pos} trailing bytes after the y stream")
        return cls(oh, ow, ph, pw, digest, tag, streams[0], streams[1], version)


# weights


def check_weights(weights: Mapping, config: ModelConfig) -> None:
    """Raise listing every unknown, missing or mis-shaped parameter."""
    expected = parameter_shapes(config)
    unknown = sorted(set(weights) - set(expected))
    missing = sorted(set(expected) - set(weights))
    shapes = sorted(
        f"{p} {tuple(np.shape(weights[p]))} != {expected[p]}"
        for p in set(expected) & set(weights)
        if tuple(np.shape(weights[p])) != tuple(expected[p])
    )
    problems = []
    if unknown:
        problems.append("unknown parameters: " + ", ".join(unknown))
    if missing:
        problems.append("missing parameters: " + ", ".join(missing))
    if shapes:
        problems.append("shape mismatches: " + "; ".join(shapes))
    if problems:
        raise WeightMismatchError(" | ".join(problems))


def tensors_to_bytes(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [WEIGHTS_MAGIC, struct.pack("<BI", WEIGHTS_VERSION, len(tensors))]
    for path in sorted(tensors):
        arr = np.ascontiguousarray(tensors[path], dtype="<f8")
        name = path.encode()
        parts.append(struct.pack("<H", len(name)) + name)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def tensors_from_bytes(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != WEIGHTS_MAGIC:
        raise MagicMismatchError(f"bad weight-file magic {data[:4]!r}")
    version, count = struct.unpack("<BI", data[4:9])
    if version != WEIGHTS_VERSION:
        raise VersionMismatchError(f"weight file version {version}, this build reads {WEIGHTS_VERSION}")
    pos = 9
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack("<H", data[pos : pos + 2])
            path = data[pos + 2 : pos + 2 + n].decode()
            pos += 2 + n
            ndim = data[pos]
            shape = struct.unpack(f"<{ndim}I", data[pos + 1 : pos + 1 + 4 * ndim])
            pos += 1 + 4 * ndim
            size = int(np.prod(shape, dtype=np.int64)) * 8
            if len(data) < pos + size:
                raise TruncatedStreamError("weights", f"tensor {path!r}")
            out[path] = np.frombuffer(data[pos : pos + size], dtype="<f8").reshape(shape).astype(DTYPE)
            pos += size
    except (struct.error, IndexError) as exc:
        raise TruncatedStreamError("weights", str(exc)) from None
    return out


def save_weights(weights: Mapping[str, np.ndarray], path: str | Path) -> None:
    Path(path).write_bytes(tensors_to_bytes(weights))


def load_weights(path: str | Path, config: ModelConfig | None = None) -> WeightStore:
    weights = tensors_from_bytes(Path(path).read_bytes())
    if config is not None:
        check_weights(weights, config)
        weights = {p: weights[p] for p in parameter_shapes(config)}
    return weights


# coding


@dataclass
class EncodeResult:
    container: CompressedContainer
    y_hat: np.ndarray
    z_hat: np.ndarray
    x_hat: np.ndarray  # unit-range float reconstruction of the padded image
    y_probabilities: np.ndarray
    z_probabilities: np.ndarray


@dataclass
class DecodeResult:
    image: np.ndarray  # uint8, cropped
    y_hat: np.ndarray
    z_hat: np.ndarray
    x_hat: np.ndarray


def _code_z(z_hat: np.ndarray, tables, coder, decode: bool) -> tuple[np.ndarray, list[float]]:
    h, w, c = z_hat.shape
    probs = []
    for i in range(h):
        for j in range(w):
            for ch in range(c):
                t = tables[ch]
                if decode:
                    z_hat[i, j, ch] = coder.decode_int(t)
                else:
                    coder.encode_int(int(z_hat[i, j, ch]), t)
                probs.append(entropy.coded_probability(int(z_hat[i, j, ch]), t))
    return z_hat, probs


def _code_y(psi: np.ndarray, weights: Mapping, config: ModelConfig, coder, y=None):
    """Raster-serial loop shared by encoder (``y`` given) and decoder.

    At each position the context features come only from already coded
    positions, so both sides derive identical ``mu`` and scale indices.
    """
    h, w, two_cy = psi.shape
    cy = two_cy // 2
    k = config.context_size
    c = k // 2
    wc = np.asarray(weights["context.weight"], dtype=DTYPE)
    bc = np.asarray(weights["context.bias"], dtype=DTYPE)
    entropy.check_context_mask(wc)
    ypad = np.zeros((h + 2 * c, w + 2 * c, cy), dtype=DTYPE)
    probs = []
    for i in range(h):
        for j in range(w):
            phi = entropy.context_at(ypad, i, j, wc, bc)
            mu, sigma = entropy.entropy_parameters(psi[i, j][None], phi[None], weights)
            mu, idx = mu[0], entropy.scale_index(sigma[0])
            res = np.empty(cy, dtype=DTYPE)
            for ch in range(cy):
                t = entropy.gaussian_table(int(idx[ch]))
                if y is None:
                    r = coder.decode_int(t)
                else:
                    r = int(np.rint(y[i, j, ch] - mu[ch]))
                    coder.encode_int(r, t)
                res[ch] = r
                probs.append(entropy.coded_probability(r, t))
            ypad[i + c, j + c] = res + mu
    return ypad[c : c + h, c : c + w].copy(), probs


def compress(image: np.ndarray, weights: Mapping, config: ModelConfig, lambda_tag: str = "") -> EncodeResult:
    """Encode a uint8 ``H x W x 3`` image."""
    check_weights(weights, config)
    entropy.check_prior_monotone(weights)
    if image.ndim != 3 or image.shape[2] != config.image_channels:
        raise ValueError(f"expected H x W x {config.image_channels} image, got {image.shape}")
    x, (oh, ow) = pad_image(to_unit_float(image), config.pad_multiple)
    y = g_a(x, weights, config)
    z = h_a(y, weights, config)
    # adding 0.0 turns -0.0 into 0.0 so encoder and decoder agree bytewise
    z_hat = entropy.quantize(z, "round") + 0.0
    enc = rangecoder.Encoder()
    z_hat, z_probs = _code_z(z_hat, entropy.factorized_tables(weights), enc, decode=False)
    z_stream = enc.finish()
    psi = h_s(z_hat, weights, config)
    enc = rangecoder.Encoder()
    y_hat, y_probs = _code_y(psi, weights, config, enc, y=y)
    y_stream = enc.finish()
    x_hat = g_s(y_hat, weights, config)
    container = CompressedContainer(
        oh, ow, x.shape[0], x.shape[1], config.digest(), lambda_tag, z_stream, y_stream
    )
    return EncodeResult(container, y_hat, z_hat, x_hat, np.array(y_probs), np.array(z_probs))


def decompress(container: CompressedContainer | bytes, weights: Mapping, config: ModelConfig) -> DecodeResult:
    if isinstance(container, (bytes, bytearray)):
        container = CompressedContainer.from_bytes(bytes(container))
    if container.digest != config.digest():
        raise DigestMismatchError("container was produced with a different model config")
    check_weights(weights, config)
    ph, pw = container.pad_h, container.pad_w
    if ph % config.total_factor or pw % config.total_factor:
        raise CodecError(f"padded size {ph}x{pw} incompatible with the model's factor {config.total_factor}")
    zh, zw = ph // config.total_factor, pw // config.total_factor
    z_hat = np.zeros((zh, zw, config.hyper_channels), dtype=DTYPE)
    try:
        dec = rangecoder.Decoder(container.z_stream)
        z_hat, _ = _code_z(z_hat, entropy.factorized_tables(weights), dec, decode=True)
        dec.finish()
    except rangecoder.TruncatedStreamError as exc:
        raise TruncatedStreamError("z", str(exc)) from None
    except rangecoder.RangeCoderError as exc:
        raise CodecError(f"corrupt z stream: {exc}") from None
    psi = h_s(z_hat, weights, config)
    try:
        dec = rangecoder.Decoder(container.y_stream)
        y_hat, _ = _code_y(psi, weights, config, dec)
        dec.finish()
    except rangecoder.TruncatedStreamError as exc:
        raise TruncatedStreamError("y", str(exc)) from None
    except rangecoder.RangeCoderError as exc:
        raise CodecError(f"corrupt y stream: {exc}") from None
    x_hat = g_s(y_hat, weights, config)
    image = from_unit_float(crop_image(x_hat, (container.orig_h, container.orig_w)))
    return DecodeResult(image, y_hat, z_hat, x_hat)


def encode_image(image: np.ndarray, weights: Mapping, config: ModelConfig, lambda_tag: str = "") -> CompressedContainer:
    return compress(image, weights, config, lambda_tag).container


def decode_image(container: CompressedContainer | bytes, weights: Mapping, config: ModelConfig) -> np.ndarray:
    return decompress(container, weights, config).image
