"""Smoke tests for the python bindings."""

import math
import os
import sys
import tempfile

import numpy as np

import sparseformer as spf


def test_positional_encoding():
    pe = spf.positional_encoding(5, 7, bands=2)
    assert pe.shape == (5, 7, 10)
    center = pe[2, 3]
    assert center[0] == 0.0 and center[1] == 0.0
    assert center[3] == 1.0  # cos channel at the center
    assert pe[0, 0, 0] == -1.0 and pe[4, 6, 0] == 1.0


def test_softmax_masked():
    x = np.array([[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]])
    mask = np.array([1.0, 1.0, 0.0])
    y = spf.softmax_masked(x, mask)
    assert np.all(y[:, 2] == 0.0)
    assert np.allclose(y[:, :2].sum(axis=1), 1.0, atol=1e-12)
    assert abs(y[0, 0] - 0.5) < 1e-12


def test_matmul():
    a = np.random.default_rng(0).normal(size=(3, 4))
    b = np.random.default_rng(1).normal(size=(4, 2))
    assert np.allclose(spf.matmul(a, b), a @ b, atol=1e-12)


def test_scene_determinism_and_landmarks():
    s1 = spf.generate_scene(height=32, width=32, density=8 / 1024, n_fixed=12, seed=7)
    s2 = spf.generate_scene(height=32, width=32, density=8 / 1024, n_fixed=12, seed=7)
    assert np.array_equal(s1["gt_depth"], s2["gt_depth"])
    assert np.array_equal(s1["uv"], s2["uv"])
    valid = s1["valid"]
    assert valid.sum() == 8
    uv = s1["uv"][valid]
    depths = s1["d_in"][valid]
    gt = s1["gt_depth"][uv[:, 1], uv[:, 0]]
    assert np.array_equal(depths, gt)  # exact copies, no outliers by default


def test_model_forward_and_roundtrip():
    cfg = {
        "enc_channels": [2, 3, 4, 5],
        "dec_channels": [4, 3, 2, 2],
        "attn_width": 3,
        "pos_bands": 1,
        "refine_layers": 1,
        "refine_heads": 1,
    }
    model = spf.DepthModel(cfg, seed=3)
    assert model.param_count() > 0

    sc = spf.generate_scene(height=32, width=32, density=8 / 1024, n_fixed=12, seed=9)
    out = model.forward(sc["image"], sc["uv"], sc["d_in"], sc["valid"])
    depth = out["final_depth"]
    assert depth.shape == (32, 32)
    assert np.all(np.isfinite(depth)) and np.all(depth > 0)
    assert [d.shape for d in out["d_outs"]] == [(4, 4), (8, 8), (16, 16), (32, 32)]

    # interpolated depths respect the convex-combination bound
    dvalid = sc["d_in"][sc["valid"]]
    finest = out["d_outs"][3]
    assert finest.min() >= dvalid.min() - 1e-9
    assert finest.max() <= dvalid.max() + 1e-9
    a = out["attention"]
    assert np.allclose(a.sum(axis=1), 1.0, atol=1e-6)
    assert a.min() >= 0.0

    # landmark permutation leaves the prediction unchanged
    n = sc["uv"].shape[0]
    perm = np.random.default_rng(0).permutation(n)
    out_p = model.forward(sc["image"], sc["uv"][perm], sc["d_in"][perm], sc["valid"][perm])
    assert np.allclose(out_p["final_depth"], depth, atol=1e-9)

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.spfc")
        model.save(path)
        loaded = spf.DepthModel.load(path)
        out2 = loaded.forward(sc["image"], sc["uv"], sc["d_in"], sc["valid"])
        # parameters are stored as f32; the reloaded model is close, not exact
        assert np.allclose(out2["final_depth"], depth, rtol=1e-4, atol=1e-4)

    val = model.loss(sc["image"], sc["uv"], sc["d_in"], sc["valid"], sc["gt_depth"], sc["gt_valid"])
    assert math.isfinite(val) and val >= 0


def test_metrics():
    rng = np.random.default_rng(5)
    gt = rng.uniform(0.5, 9.0, size=100)
    pred = gt * rng.uniform(0.9, 1.1, size=100)
    valid = np.ones(100)
    m = spf.compute_metrics(pred, gt, valid)
    rel = np.mean(np.abs((gt - pred) / gt))
    assert abs(m["rel"] - rel) < 1e-12
    assert m["a1"] >= 0.99  # ratios within 1.1 < 1.25
    assert m["a1"] <= m["a2"] <= m["a3"]


def test_grad_check():
    r = spf.grad_check("sparseformer", seed=515)
    assert r["pass"], r


def main():
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for t in tests:
        t()
        print(f"ok {t.__name__}")
    print(f"{len(tests)} python smoke tests passed")


if __name__ == "__main__":
    sys.exit(main())
