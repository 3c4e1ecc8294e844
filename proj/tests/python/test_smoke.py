import numpy as np
import pytest

import spgat


def test_synth_scene_shapes_and_determinism():
    cube, labels = spgat.synth_scene(classes=3, bands=8, height=10, width=12, seed=5)
    assert cube.shape == (8, 10, 12)
    assert labels.shape == (10, 12)
    assert labels.min() >= 1 and labels.max() == 3

    cube2, labels2 = spgat.synth_scene(classes=3, bands=8, height=10, width=12, seed=5)
    np.testing.assert_array_equal(cube, cube2)
    np.testing.assert_array_equal(labels, labels2)

    cube3, _ = spgat.synth_scene(classes=3, bands=8, height=10, width=12, seed=6)
    assert not np.array_equal(cube, cube3)


def test_atrous_conv_matches_numpy_oracle():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 9, 2, 2))
    w = rng.normal(size=(4, 3, 3))
    b = rng.normal(size=4)
    rate = 2
    got = spgat.atrous_conv_spectral(x, w, b, rate=rate, pad="zero")

    want = np.zeros((2, 4, 9, 2, 2))
    pad = rate * (w.shape[2] - 1) // 2
    for co in range(4):
        want[:, co] = b[co]
        for ci in range(3):
            for k in range(w.shape[2]):
                shift = rate * k - pad
                for s in range(9):
                    src = s + shift
                    if 0 <= src < 9:
                        want[:, co, s] += w[co, ci, k] * x[:, ci, src]
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_pointwise_conv_is_channel_matmul():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 3, 4, 5))
    w = rng.normal(size=(6, 3))
    b = rng.normal(size=6)
    got = spgat.conv_pointwise(x, w, b)
    want = np.einsum("oc,bcxy->boxy", w, x) + b[None, :, None, None]
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_softmax_rows_and_activations():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 5))
    sm = spgat.softmax(x)
    np.testing.assert_allclose(sm.sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(spgat.sigmoid(x), 1 / (1 + np.exp(-x)), atol=1e-12)
    np.testing.assert_allclose(
        spgat.leaky_relu(x, 0.2), np.where(x >= 0, x, 0.2 * x), atol=1e-15
    )


def test_gat_attention_is_row_stochastic():
    rng = np.random.default_rng(3)
    d, de = 4, 3
    h = rng.normal(size=(2, 6, d))
    alpha = spgat.gat_attention(
        h,
        theta_w=rng.normal(size=(de, d)),
        theta_b=np.zeros(de),
        phi_w=rng.normal(size=(de, d)),
        phi_b=np.zeros(de),
        psi_w=rng.normal(size=(1, de)),
    )
    assert alpha.shape == (2, 6, 6)
    assert (alpha >= 0).all()
    np.testing.assert_allclose(alpha.sum(axis=-1), 1.0, atol=1e-9)


def test_lattice_adjacency_is_symmetric():
    m = spgat.lattice_adjacency(3)
    assert m.shape == (9, 9)
    np.testing.assert_allclose(m, m.T, atol=0)
    # Center node touches everything on a 3x3 grid.
    assert (m[4] > 0).all()


def test_metrics_against_formula():
    conf = np.array([[8, 2], [1, 9]], dtype=np.int64)
    r = spgat.metrics(conf)
    total = conf.sum()
    oa = np.trace(conf) / total
    rows = conf.sum(axis=1)
    cols = conf.sum(axis=0)
    pe = float(rows @ cols) / total**2
    assert r["oa"] == pytest.approx(oa, abs=1e-12)
    assert r["kappa"] == pytest.approx((oa - pe) / (1 - pe), abs=1e-12)
    assert r["aa"] == pytest.approx(0.5 * (8 / 10 + 9 / 10), abs=1e-12)

    with pytest.raises(ValueError):
        spgat.metrics(np.zeros((2, 2), dtype=np.int64))


def test_split_and_patches_round_trip():
    cube, labels = spgat.synth_scene(classes=3, bands=8, height=10, width=10, seed=9)
    norm = spgat.normalize_bands(cube, labels)
    train, test = spgat.make_split(labels, count=5, seed=4)
    assert train.shape == (15, 3)
    assert train.shape[0] + test.shape[0] == (labels > 0).sum()

    inputs, y = spgat.extract_patches(norm, labels, train, patch=3)
    assert inputs.shape == (15, 1, 8, 3, 3)
    # Patch centers carry the coord's class, shifted to 0-based.
    np.testing.assert_array_equal(y, train[:, 0] - 1)
    centers = norm[:, train[:, 1], train[:, 2]].T  # [B, S]
    np.testing.assert_allclose(inputs[:, 0, :, 1, 1], centers, atol=1e-12)


def test_labels_to_ppm_header():
    labels = np.zeros((2, 3), dtype=np.uint16)
    raw = spgat.labels_to_ppm(labels)
    assert raw.startswith(b"P6\n3 2\n255\n")
    assert raw[11:] == b"\x00" * 18


def test_run_experiment_end_to_end():
    result = spgat.run_experiment(
        """
        synth_classes = 3
        synth_bands = 8
        synth_height = 12
        synth_width = 12
        synth_noise = 0.1
        rates = 1, 2
        branch_channels = 3
        bottleneck_mids = 2, 2
        expansion = 2
        pooled_stream = false
        patch = 3
        epochs = 2
        sessions = 1
        train_count = 4
        seed = 13
        """
    )
    assert result["classes"] == 3
    assert 0.0 <= result["mean_oa"] <= 1.0
    assert len(result["sessions"]) == 1
    assert len(result["sessions"][0]["epoch_loss"]) == 2
    assert result["sessions"][0]["confusion"].shape == (3, 3)

    with pytest.raises(ValueError):
        spgat.run_experiment("bogus_key = 1")


def test_gradcheck_samples():
    results = spgat.gradcheck_suite(1e-4)
    names = {name for name, _, _ in results}
    assert "end_to_end" in names
    for name, err, ok in results:
        assert ok, f"{name}: {err}"
