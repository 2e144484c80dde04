import numpy as np
import pytest

from lesionviz import network, viz
from lesionviz.errors import InvalidArgumentError
from lesionviz.imaging import chw_to_hwc, load_rgb8, quantize
from lesionviz.network import NetworkConfig, build_model, model_from_arrays, parameter_shapes, zeros_like_model
from lesionviz.viz import FeatureMapId, Heatmap

from oracles import central_difference

TINY = NetworkConfig(conv_block_filters=(4, 8), dense_units=(16,), input_shape=(3, 32, 32))
# one filter per layer keeps 224x224 forwards cheap
THIN = NetworkConfig(conv_block_filters=(1, 1, 1, 1), convs_per_block=1, dense_units=(2,))


def random_image(shape, seed=0, dtype=np.float32):
    return np.random.default_rng(seed).random(shape).astype(dtype)


# --- ids -------------------------------------------------------------------


def test_feature_map_id_ranges():
    cfg = NetworkConfig()
    assert FeatureMapId(7, 28).validate(cfg)
    with pytest.raises(InvalidArgumentError, match="layer 0 has 8 filters"):
        FeatureMapId(0, 9).validate(cfg)
    with pytest.raises(InvalidArgumentError, match=r"0\.\.7"):
        FeatureMapId(9, 0).validate(cfg)
    with pytest.raises(InvalidArgumentError):
        FeatureMapId(-1, 0).validate(cfg)
    assert FeatureMapId.parse(" 7:28 ") == FeatureMapId(7, 28)
    for bad in ("7", "a:b", "1:2:3"):
        with pytest.raises(InvalidArgumentError):
            FeatureMapId.parse(bad)


def test_deepest_map_shape_on_default_model():
    cfg = NetworkConfig(dense_units=(4,))  # the dense head does not affect conv maps
    model = build_model(cfg, 0)
    hm = viz.extract_feature_map(model, random_image(cfg.input_shape), FeatureMapId(7, 28))
    assert hm.shape == (28, 28) and hm.kind == "feature-map"
    assert hm.values.min() >= 0


def test_zero_model_gives_zero_map():
    model = zeros_like_model(build_model(TINY, 0))
    hm = viz.extract_feature_map(model, random_image(TINY.input_shape), FeatureMapId(3, 5))
    assert not hm.values.any()


# --- upscale / normalize -----------------------------------------------------


def test_upscale_examples():
    const = viz.upscale(Heatmap(np.full((4, 4), 2.5), "feature-map"), 9, 9)
    assert np.all(const.values == 2.5)
    mid = viz.upscale(Heatmap(np.array([[0.0, 1.0], [0.0, 1.0]]), "feature-map"), 2, 3)
    assert np.all(mid.values[:, 1] == 0.5)
    src = np.random.default_rng(0).random((224, 224))
    assert np.array_equal(viz.upscale(Heatmap(src, "saliency")).values, src)


def test_upscale_never_overshoots():
    rng = np.random.default_rng(3)
    for _ in range(20):
        h, w = rng.integers(1, 30, 2)
        src = rng.normal(size=(h, w)) * 100
        up = viz.upscale(Heatmap(src, "feature-map"), 224, 224).values
        assert src.min() <= up.min() and up.max() <= src.max()


def test_normalize_records_range():
    hm = viz.normalize(Heatmap(np.array([[2.0, 4.0], [3.0, 6.0]]), "feature-map"))
    assert hm.norm == (2.0, 6.0)
    assert hm.values.min() == 0.0 and hm.values.max() == 1.0
    assert not viz.normalize(Heatmap(np.full((3, 3), 7.0), "feature-map")).values.any()


# --- overlay -----------------------------------------------------------------


def test_zero_activation_is_exact_copy():
    img = random_image((3, 16, 16))
    v = np.zeros((16, 16))
    v[4:8, 4:8] = 1.0
    out = viz.render_overlay(img, Heatmap(v, "feature-map"))
    ref = chw_to_hwc(img)
    untouched = v == 0
    assert out.dtype == img.dtype
    assert np.array_equal(out[untouched], ref[untouched])
    # a constant map is fully transparent
    assert np.array_equal(viz.render_overlay(img, Heatmap(np.full((16, 16), 3.0), "x")), ref)
    # so is alpha_max = 0, whatever the map
    assert np.array_equal(viz.render_overlay(img, Heatmap(v, "x"), alpha_max=0.0), ref)


def test_white_pixel_blend():
    img = np.ones((3, 1, 2))
    out = viz.render_overlay(img, Heatmap(np.array([[0.0, 1.0]]), "x"), alpha_max=0.7)
    assert np.allclose(out[0, 1], [0.3, 0.3 + 0.7 * 100 / 255, 0.3], atol=1e-12)
    assert np.allclose(out[0, 1], [0.3, 0.5745, 0.3], atol=1e-4)
    assert np.array_equal(out[0, 0], [1.0, 1.0, 1.0])


def test_overlay_rejects_bad_arguments():
    img = random_image((3, 8, 8))
    hm = Heatmap(np.zeros((8, 8)), "x")
    for a in (-0.1, 1.01):
        with pytest.raises(InvalidArgumentError, match="alpha_max"):
            viz.render_overlay(img, hm, alpha_max=a)
    with pytest.raises(InvalidArgumentError, match="upscale"):
        viz.render_overlay(img, Heatmap(np.zeros((4, 4)), "x"))


def test_overlay_scale_invariant():
    img = random_image((3, 12, 12), dtype=np.float64)
    v = np.random.default_rng(1).random((12, 12))
    base = viz.render_overlay(img, Heatmap(v, "x"))
    assert np.array_equal(base, viz.render_overlay(img, Heatmap(4.0 * v, "x")))
    scaled = viz.render_overlay(img, Heatmap(3.7 * v, "x"))
    assert np.allclose(base, scaled, atol=1e-12)
    assert np.array_equal(quantize(base), quantize(scaled))


def test_overlay_pipeline_deterministic():
    model = build_model(TINY, 2)
    x = random_image(TINY.input_shape, 4)
    a, hm_a = viz.feature_overlay(model, x, FeatureMapId(2, 1))
    b, hm_b = viz.feature_overlay(model, x, FeatureMapId(2, 1))
    assert np.array_equal(a, b) and np.array_equal(hm_a.values, hm_b.values)
    assert a.shape == (32, 32, 3) and 0 <= a.min() and a.max() <= 1


# --- grid --------------------------------------------------------------------


def test_grid_layout_and_cells(tmp_path):
    model = build_model(TINY, 1)
    images = [random_image(TINY.input_shape, s) for s in range(3)]
    ids = [FeatureMapId(0, 0), FeatureMapId(1, 3), FeatureMapId(2, 7), FeatureMapId(3, 2)]
    grid = viz.render_grid(model, images, ids, tmp_path / "g.png")
    n = 32
    assert grid.shape == (3 * n + 2 * 2, 5 * n + 4 * 2, 3)
    for r, x in enumerate(images):
        top = r * (n + 2)
        assert np.array_equal(grid[top : top + n, :n], chw_to_hwc(x))
        for c, fid in enumerate(ids, start=1):
            left = c * (n + 2)
            overlay, _ = viz.feature_overlay(model, x, fid)
            assert np.array_equal(grid[top : top + n, left : left + n], overlay)
    # gutters are white
    assert np.all(grid[n : n + 2] == 1.0) and np.all(grid[:, n : n + 2] == 1.0)
    png = load_rgb8(tmp_path / "g.png")
    assert np.array_equal(png, quantize(grid))


def test_single_cell_grid_at_full_size():
    model = build_model(THIN, 0)
    grid = viz.render_grid(model, [random_image(THIN.input_shape)], [FeatureMapId(3, 0)])
    assert grid.shape == (224, 2 * 224 + 2, 3)


def test_grid_needs_content():
    model = build_model(TINY, 0)
    with pytest.raises(InvalidArgumentError):
        viz.render_grid(model, [], [FeatureMapId(0, 0)])
    with pytest.raises(InvalidArgumentError):
        viz.render_grid(model, [random_image(TINY.input_shape)], [])
    with pytest.raises(InvalidArgumentError, match="filters"):
        viz.render_grid(model, [random_image(TINY.input_shape)], [FeatureMapId(0, 4)])


# --- saliency ----------------------------------------------------------------

LINEAR = NetworkConfig(conv_block_filters=(1,), convs_per_block=1, dense_units=(1,), input_shape=(3, 2, 2))


def linear_model(a, d1, d2):
    """On a 2x2 input every 3x3 window sees all four pixels, so a kernel that
    is constant per channel makes each conv output sum_c a_c * sum(x_c) + b.
    Positive biases keep every ReLU open, so the logit is linear in x."""
    w = np.zeros((1, 3, 3, 3))
    w[0] = np.asarray(a)[:, None, None]
    arrays = [w, np.array([5.0]), np.array([[d1]]), np.array([1.0]), np.array([[d2]]), np.array([0.0])]
    return model_from_arrays(LINEAR, arrays)


def test_linear_model_saliency():
    a = np.array([0.5, -2.0, 1.25])
    d1, d2 = 0.75, -1.5
    model = linear_model(a, d1, d2)
    x = random_image((3, 2, 2), dtype=np.float64) * 0.1
    _, grad = network.input_gradient(model, x)
    expected = d2 * d1 * a[:, None, None] * np.ones((3, 2, 2))
    assert np.allclose(grad, expected, rtol=1e-12)
    sal = viz.saliency(model, x)
    assert sal.kind == "saliency"
    assert np.allclose(sal.values, abs(d1 * d2) * np.abs(a).max(), rtol=1e-12)


def test_zero_model_saliency_and_occlusion():
    model = zeros_like_model(build_model(TINY, 0))
    x = random_image(TINY.input_shape)
    assert not viz.saliency(model, x).values.any()
    occ = viz.occlusion_map(model, x, patch=8, stride=4)
    assert occ.shape == (7, 7) and not occ.values.any()


def test_saliency_matches_finite_differences():
    model = build_model(TINY, 7, dtype=np.float64)
    x = random_image(TINY.input_shape, 11, dtype=np.float64)
    sal = viz.saliency(model, x).values
    rng = np.random.default_rng(5)
    xp = x.copy()
    for _ in range(20):
        i, j = rng.integers(0, 32, 2)
        pixel = [np.ravel_multi_index((c, i, j), x.shape) for c in range(3)]
        fd = central_difference(lambda: network.forward(model, xp).logit, xp, step=1e-5, indices=pixel)
        expected = np.abs(fd.reshape(-1)[pixel]).max()
        assert abs(sal[i, j] - expected) <= 1e-3 * max(expected, 1e-8)


def test_saliency_leaves_model_untouched():
    model = build_model(TINY, 3)
    before = [p.copy() for p in model.parameters()]
    viz.saliency(model, random_image(TINY.input_shape))
    assert all(np.array_equal(a, b) for a, b in zip(before, model.parameters()))


# --- occlusion ---------------------------------------------------------------


def test_occlusion_default_geometry():
    model = build_model(THIN, 0)
    occ = viz.occlusion_map(model, random_image(THIN.input_shape), threads=4)
    assert occ.shape == (25, 25) and occ.kind == "occlusion"
    assert np.all(np.isfinite(occ.values))


def test_occlusion_matches_direct_evaluation():
    model = build_model(TINY, 4)
    x = random_image(TINY.input_shape, 2)
    occ = viz.occlusion_map(model, x, patch=8, stride=12, fill=0.25)
    assert occ.shape == (3, 3)
    base = network.predict_proba(model, x)
    xo = x.copy()
    xo[:, 12:20, 24:32] = 0.25
    assert occ.values[1, 2] == base - network.predict_proba(model, xo)
    # threads do not change the result
    assert np.array_equal(occ.values, viz.occlusion_map(model, x, patch=8, stride=12, fill=0.25, threads=3).values)


def test_whole_image_patch_collapses():
    model = build_model(TINY, 4)
    x = random_image(TINY.input_shape, 2)
    occ = viz.occlusion_map(model, x, patch=32, stride=1)
    grey = np.full(TINY.input_shape, 0.5, dtype=np.float32)
    assert occ.shape == (1, 1)
    assert occ.values[0, 0] == network.predict_proba(model, x) - network.predict_proba(model, grey)


def test_occlusion_geometry_errors():
    model = build_model(TINY, 0)
    x = random_image(TINY.input_shape)
    with pytest.raises(InvalidArgumentError, match="patch"):
        viz.occlusion_map(model, x, patch=33)
    with pytest.raises(InvalidArgumentError, match="stride"):
        viz.occlusion_map(model, x, patch=8, stride=0)


def test_heatmap_text_round_trip(tmp_path):
    v = np.random.default_rng(0).normal(size=(5, 7))
    path = viz.write_heatmap_text(Heatmap(v, "occlusion"), tmp_path / "h.txt")
    lines = path.read_text().splitlines()
    assert len(lines) == 5 and all(len(line.split(" ")) == 7 for line in lines)
    assert np.array_equal(viz.read_heatmap_text(path), v)


def test_parameter_shapes_of_linear_fixture():
    assert parameter_shapes(LINEAR) == [(1, 3, 3, 3), (1,), (1, 1), (1,), (1, 1), (1,)]
