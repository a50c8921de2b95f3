import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glyphsmith import gradsuite
from glyphsmith.car import (
    SWITCHER,
    CarModel,
    apply_switcher,
    forward_compose,
    fuse_adain,
    fuse_attention,
    fuse_stack,
    iterative_compose,
    regress_affines,
)
from glyphsmith.decomp import parse_table, expand_nested
from glyphsmith.raster import iou, rasterize, render
from glyphsmith.trainer.synthetic import random_component
from glyphsmith.vector import RenderFrame, glyph_from_path, translate

IDENTITY = np.array([[1.0, 0, 0], [0, 1.0, 0]])


def blobs(n=2, size=64, seed=0):
    rng = np.random.default_rng(seed)
    return [render(random_component(rng, k % 2, 600, 800), size, center=True).image for k in range(n)]


# -- extractor ------------------------------------------------------------------------


def test_feature_map_shape():
    model = CarModel()
    f, _ = model.extract(np.zeros((3, 64, 64)))
    assert f.shape == (3, 128, 4, 4)
    with pytest.raises(ValueError):
        model.extract(np.zeros((1, 32, 32)))


def test_zero_image_gives_zero_features():
    f, _ = CarModel().extract(np.zeros((1, 64, 64)))
    assert not f.any()


def test_identical_images_share_features():
    img = blobs(1)[0]
    f, _ = CarModel().extract(np.stack([img, img]))
    assert np.array_equal(f[0], f[1])


# -- fusion ---------------------------------------------------------------------------


def test_stack_concatenates_self_first():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(128, 4, 4)), rng.normal(size=(128, 4, 4))
    ab = fuse_stack(a, b)
    assert ab.shape == (256, 4, 4)
    assert not np.array_equal(ab, fuse_stack(b, a))
    aa = fuse_stack(a, a)
    assert np.array_equal(aa[:128], aa[128:])


def test_adain_hand_example():
    y, _ = fuse_adain(np.array([[[1.0, 3.0]]]), np.array([[[0.0, 4.0]]]))
    assert np.allclose(y, [[[0.0, 4.0]]], atol=1e-4)


def test_adain_self_style_and_constant_input():
    f = np.random.default_rng(1).normal(size=(3, 2, 2))
    assert np.allclose(fuse_adain(f, f)[0], f, atol=1e-4)
    other = np.random.default_rng(2).normal(size=(3, 2, 2))
    y, _ = fuse_adain(np.full((3, 2, 2), 5.0), other)
    assert np.allclose(y, other.mean(axis=(1, 2), keepdims=True) * np.ones((3, 2, 2)))


def naive_attention(fs, fo, wq, bq, wk, bk, wv, bv):
    c, h, w = fs.shape
    ts, to = fs.reshape(c, -1).T, fo.reshape(c, -1).T
    out = []
    for q in ts:
        qv = q @ wq + bq
        logits = np.array([(qv @ (k @ wk + bk)) / np.sqrt(wq.shape[1]) for k in to])
        p = np.exp(logits - logits.max())
        p /= p.sum()
        out.append(sum(pi * (v @ wv + bv) for pi, v in zip(p, to)))
    return np.array(out).T.reshape(-1, h, w)


def test_attention_matches_naive_loop():
    rng = np.random.default_rng(3)
    c, d = 4, 6
    fs, fo = rng.normal(size=(1, c, 2, 3)), rng.normal(size=(1, c, 2, 3))
    w = [rng.normal(size=s) for s in [(c, d), (d,), (c, d), (d,), (c, d), (d,)]]
    y, _ = fuse_attention(fs, fo, *w)
    assert np.allclose(y[0], naive_attention(fs[0], fo[0], *w), atol=1e-9)


def test_attention_single_token_returns_other():
    c = 3
    eye, zero = np.eye(c), np.zeros(c)
    fs, fo = np.array([[[[1.0]], [[2.0]], [[3.0]]]]), np.array([[[[4.0]], [[-1.0]], [[0.5]]]])
    y, _ = fuse_attention(fs, fo, eye, zero, eye, zero, eye, zero)
    assert np.allclose(y, fo)


def test_attention_identical_values_pass_through():
    rng = np.random.default_rng(4)
    c = 3
    token = rng.normal(size=c)
    fo = np.tile(token[:, None, None], (1, 1, 2))[None]
    fs = rng.normal(size=(1, c, 1, 2))
    eye, zero = np.eye(c), np.zeros(c)
    y, _ = fuse_attention(fs, fo, rng.normal(size=(c, c)), zero, rng.normal(size=(c, c)), zero, eye, zero)
    assert np.allclose(y[0, :, 0, 0], token) and np.allclose(y[0, :, 0, 1], token)


# -- regressor --------------------------------------------------------------------------


@pytest.mark.parametrize("fusion", ["stack", "adain", "attention"])
def test_fresh_model_is_exact_identity(fusion):
    model = CarModel(fusion=fusion)
    thetas, s = forward_compose(model, blobs())
    for th in thetas:
        assert np.array_equal(th, IDENTITY)
    a, b = blobs()
    assert np.array_equal(s, a + b)


def test_three_component_model_identity():
    model = CarModel(n_components=3)
    imgs = blobs(3)
    thetas = regress_affines(model, imgs)
    assert len(thetas) == 3 and all(np.array_equal(t, IDENTITY) for t in thetas)
    with pytest.raises(ValueError):
        regress_affines(model, imgs[:2])


def test_switcher_matrix():
    assert np.count_nonzero(SWITCHER) == 4
    assert {tuple(ix) for ix in np.argwhere(SWITCHER)} == {(0, 4), (4, 0), (2, 5), (5, 2)}
    assert list(apply_switcher([2, 0.1, 3, 0.2, 5, 7])) == [5, 0, 7, 0, 2, 3]
    assert list(apply_switcher([1, 0, 0.3, 0, 1, 0])) == [1, 0, 0, 0, 1, 0.3]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6))
def test_switcher_twice_zeroes_skew(v):
    sx, kx, tx, ky, sy, ty = v
    assert list(apply_switcher(apply_switcher(v))) == [sx, 0, tx, 0, sy, ty]


def trained_looking(fusion="stack", switcher=False, seed=0):
    model = CarModel(fusion=fusion, switcher=switcher, seed=seed)
    rng = np.random.default_rng(seed + 100)
    model.params["fc3.weight"] = rng.normal(0, 0.05, model.params["fc3.weight"].shape)
    return model


def test_switcher_flag_switches_outputs():
    plain, switched = trained_looking(), trained_looking(switcher=True)
    imgs = np.stack(blobs())[None]
    a, b = plain.predict(imgs).reshape(2, 6), switched.predict(imgs).reshape(2, 6)
    assert np.allclose(b, a @ SWITCHER.T)


def test_stack_fusion_is_permutation_equivariant():
    model = trained_looking()
    a, b = blobs(seed=5)
    forward = model.predict(np.stack([a, b])[None])[0]
    backward = model.predict(np.stack([b, a])[None])[0]
    assert np.allclose(forward[0], backward[1]) and np.allclose(forward[1], backward[0])


def test_identical_components_can_swap():
    model = trained_looking()
    a, _ = blobs()
    _, s1 = forward_compose(model, [a, a.copy()])
    assert np.allclose(s1, forward_compose(model, [a.copy(), a])[1])


def test_empty_component_contributes_nothing():
    model = trained_looking()
    a, _ = blobs()
    thetas, s = forward_compose(model, [a, np.zeros_like(a)])
    from glyphsmith.diffops.warp import warp_forward

    assert np.allclose(s, warp_forward(a, thetas[0]))


def test_sum_is_bounded_by_component_count():
    _, s = forward_compose(trained_looking(), blobs())
    assert s.max() <= 2 + 1e-12


@pytest.mark.parametrize("fusion", ["stack", "adain", "attention"])
def test_end_to_end_gradient_miniature(fusion):
    assert gradsuite.check_model(fusion, samples=4).passed


# -- iterative composition ------------------------------------------------------------------


def glyph_set():
    rng = np.random.default_rng(9)
    return {ch: random_component(rng, k % 2, 500, 800) for k, ch in enumerate("ABC")}


def test_single_step_plan_matches_direct_composition():
    (entry,) = parse_table("1\tX\tU+0058\t\tNL01\tA\tB\t")
    glyphs = glyph_set()
    model = trained_looking()
    comp = iterative_compose(model, expand_nested(entry), glyphs)
    renders = [render(glyphs[c], 64, center=True) for c in "AB"]
    thetas, s = forward_compose(model, [r.image for r in renders])
    assert np.allclose(comp.raster, s)
    from glyphsmith.car import placement_affine

    for aff, th, r in zip(comp.affines, thetas, renders):
        assert np.allclose(aff, placement_affine(th, r.frame))


def test_identity_models_only_recenter():
    (entry,) = parse_table("1\tX\tU+0058\t\tNL04\tA\tB\tC\t")
    glyphs = glyph_set()
    comp = iterative_compose({"NL01": CarModel()}, expand_nested(entry), glyphs)
    assert comp.leaves == ["A", "B", "C"]
    for m in comp.affines:
        assert np.allclose(m[:2, :2], np.eye(2))


def test_missing_model_and_glyph():
    (entry,) = parse_table("1\tX\tU+0058\t\tNL02\tA\tB\t")
    with pytest.raises(KeyError):
        iterative_compose({"NL01": CarModel()}, expand_nested(entry), glyph_set())
    (entry,) = parse_table("1\tX\tU+0058\t\tNL01\tA\tZ\t")
    with pytest.raises(KeyError):
        iterative_compose(CarModel(), expand_nested(entry), glyph_set())


@pytest.mark.parametrize("seed", range(3))
def test_vector_result_matches_raster_result(seed):
    (entry,) = parse_table("1\tX\tU+0058\t\tNL04\tA\tB\tC\t")
    comp = iterative_compose({"NL01": trained_looking(seed=seed)}, expand_nested(entry), glyph_set())
    assert iou(rasterize(comp.glyph, 64), np.clip(comp.raster, 0, 1)) >= 0.9
