"""Regenerate the golden range-coder streams and codec container.

Run from the repository root: ``python3 tests/fixtures/make_golden.py``.
The outputs are committed; tests only read them.
"""

import hashlib
import json
import random
from pathlib import Path

import numpy as np

from ssmic import codec, rangecoder as rc
from ssmic.config import PRESETS
from ssmic.tensor import Rng
from ssmic.transforms import init_weights

HERE = Path(__file__).parent


def _cases():
    rnd = random.Random(20240)
    uniform = rc.build_cdf_table([1, 1, 1, 1])
    skewed = rc.build_cdf_table([0.999, 0.001])
    mixed = rc.build_cdf_table([0.5, 0.2, 0.1, 0.1, 0.05, 0.05])
    ints = rc.IntTable(rc.build_cdf_table([0.1, 0.2, 0.4, 0.2, 0.05, 0.05]), -2)
    yield "uniform", [uniform], [], [("sym", 0, rnd.randrange(4)) for _ in range(64)]
    yield "skewed", [skewed], [], [("sym", 0, int(rnd.random() < 0.002)) for _ in range(4000)]
    ops = []
    for _ in range(500):
        k = rnd.randrange(3)
        if k == 0:
            ops.append(("sym", 0, rnd.randrange(6)))
        elif k == 1:
            nb = rnd.randint(1, 33)
            ops.append(("bits", nb, rnd.getrandbits(nb)))
        else:
            v = rnd.randint(-5000, 5000) if rnd.random() < 0.1 else rnd.randint(-3, 3)
            ops.append(("int", 0, v))
    yield "mixed", [mixed], [ints], ops
    yield "empty", [uniform], [], []


def encode_case(tables, int_tables, ops) -> bytes:
    enc = rc.Encoder()
    for kind, a, v in ops:
        if kind == "sym":
            enc.encode(v, tables[a])
        elif kind == "bits":
            enc.encode_bits(v, a)
        else:
            enc.encode_int(v, int_tables[a])
    return enc.finish()


def main():
    manifest = {"streams": [], "container": {}}
    for name, tables, int_tables, ops in _cases():
        data = encode_case(tables, int_tables, ops)
        (HERE / f"golden_{name}.bin").write_bytes(data)
        manifest["streams"].append(
            {
                "name": name,
                "file": f"golden_{name}.bin",
                "tables": [list(t.cdf) for t in tables],
                "int_tables": [{"cdf": list(t.table.cdf), "offset": t.offset} for t in int_tables],
                "ops": [list(op) for op in ops],
            }
        )
    config = PRESETS["micro"]
    weights = init_weights(config, 0)
    image = Rng(11).integers(0, 256, (24, 40, 3)).astype(np.uint8)
    result = codec.compress(image, weights, config, "10")
    data = result.container.to_bytes()
    (HERE / "golden_micro.ssmi").write_bytes(data)
    decoded = codec.decode_image(data, weights, config)
    manifest["container"] = {
        "file": "golden_micro.ssmi",
        "config": "micro",
        "weights_seed": 0,
        "image_seed": 11,
        "image_shape": [24, 40, 3],
        "y_hat_sha256": hashlib.sha256(np.ascontiguousarray(result.y_hat).tobytes()).hexdigest(),
        "z_hat_sha256": hashlib.sha256(np.ascontiguousarray(result.z_hat).tobytes()).hexdigest(),
        "image_sha256": hashlib.sha256(decoded.tobytes()).hexdigest(),
    }
    (HERE / "golden.json").write_text(json.dumps(manifest, separators=(",", ":")) + "\n")


if __name__ == "__main__":
    main()
