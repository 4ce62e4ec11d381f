import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import vss_oracle
from ssmic import blocks
from ssmic.config import PRESETS
from ssmic.transforms import vss_shapes


def random_vss_params(config, width, seed):
    r = np.random.default_rng(seed)
    p = {}
    for k, s in vss_shapes(config, width).items():
        if k.endswith("scale"):
            p[k] = 1 + 0.3 * r.normal(size=s)
        elif k.endswith("A_log"):
            p[k] = r.uniform(-1, 1, s)
        else:
            p[k] = r.normal(0, 0.5, s)
    return p


def test_space_to_depth_sub_pixel_order():
    f = np.arange(16, dtype=float).reshape(4, 4, 1)
    out = blocks.space_to_depth(f)
    assert out.shape == (2, 2, 4)
    # top-left, top-right, bottom-left, bottom-right of the first 2x2 block
    np.testing.assert_array_equal(out[0, 0], [0, 1, 4, 5])
    np.testing.assert_array_equal(out[1, 1], [10, 11, 14, 15])


@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3))
def test_depth_to_space_inverts_space_to_depth(h, w, c):
    f = np.random.default_rng(h * 100 + w * 10 + c).normal(size=(2 * h, 2 * w, c))
    np.testing.assert_array_equal(blocks.depth_to_space(blocks.space_to_depth(f)), f)


def test_space_to_depth_rejects_odd():
    with pytest.raises(ValueError):
        blocks.space_to_depth(np.ones((3, 4, 1)))
    with pytest.raises(ValueError):
        blocks.depth_to_space(np.ones((2, 2, 3)))


def test_rms_norm_definition():
    f = np.random.default_rng(0).normal(size=(3, 2, 5))
    scale = np.linspace(0.5, 2, 5)
    out = blocks.rms_norm(f, scale)
    ref = f / np.sqrt((f**2).mean(-1, keepdims=True) + 1e-6) * scale
    np.testing.assert_allclose(out, ref, rtol=1e-15)
    with pytest.raises(ValueError):
        blocks.rms_norm(f, np.ones(4))


def test_patch_merge_and_expand_shapes():
    r = np.random.default_rng(1)
    f = r.normal(size=(6, 4, 3))
    merge = {"norm.scale": np.ones(12), "proj.weight": r.normal(size=(12, 8)), "proj.bias": np.zeros(8)}
    out = blocks.patch_merge(f, merge)
    assert out.shape == (3, 2, 8)
    expand = {"proj.weight": r.normal(size=(8, 12)), "proj.bias": np.zeros(12)}
    assert blocks.patch_expand(out, expand).shape == (6, 4, 3)
    with pytest.raises(ValueError):
        blocks.patch_expand(out, {"proj.weight": np.ones((8, 10)), "proj.bias": np.zeros(10)})


def test_scan_permutations_cover_grid():
    perms = blocks.scan_permutations(2, 3)
    np.testing.assert_array_equal(perms[blocks.ScanPath.ROW_FORWARD], [0, 1, 2, 3, 4, 5])
    np.testing.assert_array_equal(perms[blocks.ScanPath.COL_FORWARD], [0, 3, 1, 4, 2, 5])
    np.testing.assert_array_equal(perms[blocks.ScanPath.ROW_BACKWARD], [5, 4, 3, 2, 1, 0])
    np.testing.assert_array_equal(perms[blocks.ScanPath.COL_BACKWARD], [5, 2, 4, 1, 3, 0])
    for p in perms:
        assert sorted(p) == list(range(6))


def test_cross_merge_of_cross_scan_exhaustive():
    for h in range(1, 6):
        for w in range(1, 6):
            f = np.random.default_rng(h * 7 + w).normal(size=(h, w, 3))
            np.testing.assert_array_equal(blocks.cross_merge(blocks.cross_scan(f), h, w), 4 * f)


def test_cross_merge_shape_check():
    with pytest.raises(ValueError):
        blocks.cross_merge(np.ones((3, 4, 1)), 2, 2)


@pytest.mark.parametrize("width,h,w", [(8, 4, 4), (12, 3, 5), (8, 1, 6)])
def test_vss_block_matches_transcription_oracle(width, h, w):
    config = PRESETS["micro"]
    p = random_vss_params(config, width, seed=width + h)
    f = np.random.default_rng(h * w).normal(size=(h, w, width))
    np.testing.assert_allclose(blocks.vss_block(f, p), vss_oracle(f, p), rtol=0, atol=1e-12)


def test_vss_block_channel_mismatch():
    p = random_vss_params(PRESETS["micro"], 8, 0)
    with pytest.raises(ValueError):
        blocks.vss_block(np.ones((2, 2, 12)), p)


def test_ss2d_path_structure():
    # with all four paths identical, the row-forward scan seen through the
    # permutation equals path 0 of the stacked scans
    config = PRESETS["micro"]
    p = random_vss_params(config, 8, 3)
    for key in ("ss2d.x_proj.weight", "ss2d.dt_proj.weight", "ss2d.dt_proj.bias", "ss2d.A_log", "ss2d.D"):
        p[key] = np.stack([p[key][0]] * 4)
    x = np.random.default_rng(2).normal(size=(3, 3, 16))
    out = blocks.ss2d(x, p, "ss2d.")
    # transposing the grid swaps the roles of row and column scans
    out_t = blocks.ss2d(np.transpose(x, (1, 0, 2)), p, "ss2d.")
    np.testing.assert_allclose(out, np.transpose(out_t, (1, 0, 2)), atol=1e-12)
