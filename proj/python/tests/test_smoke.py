import math
import struct

import numpy as np
import pytest

import smseg


def test_tensor_round_trip(tmp_path):
    a = np.arange(6, dtype=np.float32).reshape(2, 3)
    p = tmp_path / "a.smtf"
    smseg.save_tensor(a, p)
    b = smseg.load_tensor(p)
    assert b.dtype == np.float32
    np.testing.assert_array_equal(a, b)
    raw = smseg.encode_tensor(np.array([[1, 2], [3, 4]], dtype=np.float32))
    assert len(raw) == 42
    assert raw[:4] == b"SMTF"
    assert struct.unpack("<I", raw[4:8])[0] == 1
    m = smseg.load_tensor(p)
    assert m.shape == (2, 3)


def test_bad_file_raises(tmp_path):
    p = tmp_path / "bad.smtf"
    p.write_bytes(b"XXXX" + bytes(10))
    with pytest.raises(smseg.SmsegError, match="bad_magic"):
        smseg.load_tensor(p)


def test_kernels():
    assert smseg.dice_loss([1, 1, 0], [0, 1, 1]) == pytest.approx(0.4)
    assert smseg.bce_mask([2.0, -2.0], [1, 0]) == pytest.approx(math.log1p(math.exp(-2)), rel=1e-6)
    assert smseg.focal_loss([0.5], 0) == pytest.approx(0.25 * 0.25 * math.log(2), rel=1e-6)
    assert smseg.cross_entropy_map(np.zeros((4, 2, 3), np.float32), np.zeros((2, 3), np.int32)) == pytest.approx(
        math.log(4), rel=1e-6
    )
    assert smseg.hiou(87.7, 83.1) == pytest.approx(85.3, abs=0.05)


def test_hungarian():
    r = smseg.hungarian(np.array([[4, 1, 3], [2, 0, 5], [3, 2, 2]], np.float32))
    assert r["total_cost"] == 5.0
    assert [p["query"] for p in r["pairs"]] == [1, 0, 2]


def test_window_seeds_and_kmeans():
    f = np.arange(16, dtype=np.float32).reshape(1, 4, 4)
    s = smseg.window_seeds(f, 2)
    assert s.shape == (9, 1)
    assert s[0, 0] == 2.5
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 16, 16)).astype(np.float32)
    assign, cent, trace = smseg.kmeans(x, windows=[4, 8])
    assert assign.shape == (16, 16)
    assert all(b <= a for a, b in zip(trace, trace[1:]))
    masks, fc = smseg.fuse_masks(assign, cent, 0.9)
    assert masks.dtype == np.uint8
    assert masks.sum() == 256


def test_random_queries_first_values():
    q = smseg.random_queries(1, 8, seed=0)
    bits = [struct.unpack("<I", struct.pack("<f", v))[0] for v in q[0]]
    assert bits[:3] == [0xBC024EC5, 0xBBCB6BB8, 0x3CE33878]


def test_mfe_and_gradcheck():
    rng = np.random.default_rng(1)
    f2 = rng.standard_normal((8, 8, 8)).astype(np.float32)
    f1 = f2.reshape(8, 4, 2, 4, 2).mean(axis=(2, 4))
    f0 = f1.reshape(8, 2, 2, 2, 2).mean(axis=(2, 4))
    p = smseg.random_mfe_params(8, seed=0, groups=4)
    out = smseg.mfe_forward(f0, f1, f2, p, groups=4)
    assert out.shape == (8, 8, 8)
    assert np.isfinite(out).all()
    for op in smseg.gradcheck_ops():
        assert smseg.grad_check(op, 0) < 1e-4


def test_synthetic_pipeline(tmp_path):
    smseg.save_synth(0, tmp_path)
    (tmp_path / "run.ini").write_text(
        "[input]\nfeatures = O.smtf\nseen_labels = Ys.smtf\nignore = ignore.smtf\n"
        "seen_embeddings = As.smtf\nunseen_embeddings = Au.smtf\ngt = gt.smtf\n"
        "seen_ids = 0,1,2\nunseen_ids = 3,4\n[mfe]\ngroups = 4\n"
    )
    r = smseg.run_pipeline(tmp_path / "run.ini", out_dir=tmp_path / "out")
    assert r["candidates"] >= 2
    assert r["uiou"] >= 90.0
    assert r["labels"].shape == (64, 64)
    fx = smseg.gen_synth(seed=0)
    ev = smseg.evaluate(r["labels"], fx["gt"], 5, fx["seen_ids"], fx["unseen_ids"])
    assert ev["hiou"] == pytest.approx(r["hiou"])
