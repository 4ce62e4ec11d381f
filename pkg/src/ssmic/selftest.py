"""Fast oracle checks over every module, runnable without pytest."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import expm

from . import blocks, codec, complexity, metrics, rangecoder, ssm, trainer
from .config import PRESETS
from .tensor import Rng
from .transforms import init_weights


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail} ({self.seconds:.2f}s)"


def _ssm_equivalence() -> str:
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(10):
        n, length = int(rng.integers(1, 9)), int(rng.integers(1, 65))
        A = rng.normal(size=(n, n)) / n - 1.5 * np.eye(n)
        p = ssm.SsmParams(A, rng.normal(size=(n, 1)), rng.normal(size=(1, n)))
        d = ssm.discretize_zoh(p, float(rng.uniform(0.01, 0.5)))
        x = rng.normal(size=length)
        y_rec = ssm.scan_recurrent(d, p.C, x)
        y_conv = ssm.scan_convolutional(ssm.build_kernel(d, p.C, length), x)
        worst = max(worst, float(np.max(np.abs(y_rec - y_conv))))
    assert worst <= 1e-10, f"max deviation {worst:.3g}"
    return f"max deviation {worst:.2g}"


def _zoh() -> str:
    rng = np.random.default_rng(1)
    worst = 0.0
    for scale in (1.0, 1e-4):
        n = 4
        A = scale * rng.normal(size=(n, n))
        B = rng.normal(size=(n, 1))
        step = 0.3
        d = ssm.discretize_zoh(ssm.SsmParams(A, B, np.ones((1, n))), step)
        aug = np.zeros((n + 1, n + 1))
        aug[:n, :n] = step * A
        aug[:n, n:] = step * B
        ref = expm(aug)
        worst = max(worst, float(np.max(np.abs(d.A_bar - ref[:n, :n]))), float(np.max(np.abs(d.B_bar - ref[:n, n:]))))
    assert worst <= 1e-10, f"max deviation {worst:.3g}"
    return f"max deviation {worst:.2g}"


def _cross_scan() -> str:
    for h in range(1, 5):
        for w in range(1, 5):
            f = np.arange(h * w * 2, dtype=float).reshape(h, w, 2)
            back = blocks.cross_merge(blocks.cross_scan(f), h, w)
            assert np.array_equal(back, 4 * f), f"{h}x{w}"
    return "merge(scan(f)) == 4 f on all grids up to 4x4"


def _range_coder() -> str:
    rng = np.random.default_rng(2)
    table = rangecoder.build_cdf_table([0.6, 0.25, 0.1, 0.05])
    syms = rng.choice(4, size=20000, p=[0.6, 0.25, 0.1, 0.05]).tolist()
    data = rangecoder.encode_symbols(syms, table)
    assert rangecoder.decode_symbols(data, table, len(syms)) == syms, "round trip differs"
    ideal = rangecoder.ideal_bits(syms, table)
    bits = 8 * len(data)
    assert bits <= 1.01 * ideal + 32, f"{bits} bits vs ideal {ideal:.1f}"
    return f"{bits} bits vs ideal {ideal:.1f}"


def _codec() -> str:
    config = PRESETS["micro"]
    weights = init_weights(config, 3)
    img = Rng(3).integers(0, 256, (21, 37, 3)).astype(np.uint8)
    enc = codec.compress(img, weights, config)
    dec = codec.decompress(enc.container.to_bytes(), weights, config)
    assert np.array_equal(enc.y_hat, dec.y_hat) and np.array_equal(enc.z_hat, dec.z_hat), "latents differ"
    assert np.array_equal(enc.x_hat, dec.x_hat), "reconstruction differs"
    return f"bit-exact at {enc.container.bpp:.3f} bpp"


def _gradients() -> str:
    params, loss_fn = trainer.gradcheck_problem(0)
    _, analytic = trainer.value_and_gradients(loss_fn, params, strict=True)
    numeric = trainer.numeric_gradients(loss_fn, params)
    worst = max(trainer.relative_error(analytic[k], numeric[k]) for k in params)
    assert worst <= 1e-4, f"worst relative error {worst:.3g}"
    return f"worst relative error {worst:.2g} over {sum(v.size for v in params.values())} params"


def _bd_rate() -> str:
    base = [metrics.RdPoint(b, q) for b, q in ((0.1, 28.0), (0.2, 30.5), (0.4, 33.0), (0.8, 35.2))]
    doubled = [metrics.RdPoint(2 * p.bpp, p.psnr) for p in base]
    same = metrics.bd_rate(base, base)
    up = metrics.bd_rate(base, doubled)
    assert abs(same) <= 1e-9 and abs(up - 100.0) <= 1e-6, f"{same}, {up}"
    return f"identical {same:.2f}%, doubled {up:.6f}%"


def _complexity() -> str:
    macs, _, _ = complexity.linear_cost(256, 64, 128)
    assert macs == 2_097_152, macs
    a = complexity.count_complexity(PRESETS["micro"], 64, 64).macs
    b = complexity.count_complexity(PRESETS["micro"], 128, 64).macs
    assert b == 2 * a, (a, b)
    return "hand count and token linearity hold"


def _padding() -> str:
    x = np.ones((300, 500, 3))
    padded, dims = codec.pad_image(x)
    assert padded.shape[:2] == (512, 512) and np.array_equal(codec.crop_image(padded, dims), x)
    return "300x500 -> 512x512 and back"


CHECKS: dict[str, Callable[[], str]] = {
    "ssm-equivalence": _ssm_equivalence,
    "zoh": _zoh,
    "cross-scan": _cross_scan,
    "range-coder": _range_coder,
    "codec-roundtrip": _codec,
    "gradients": _gradients,
    "bd-rate": _bd_rate,
    "complexity": _complexity,
    "padding": _padding,
}


def run_selftest(names=None) -> list[CheckResult]:
    results = []
    for name in names or CHECKS:
        t0 = time.perf_counter()
        try:
            detail = CHECKS[name]()
            ok = True
        except AssertionError as exc:
            detail, ok = f"assertion failed: {exc}", False
        results.append(CheckResult(name, ok, detail, time.perf_counter() - t0))
    return results
