import math

import numpy as np
import pytest

from talker.metrics import (
    DirectionScore,
    FixtureSyncScorer,
    FlowField,
    MetricError,
    ToyEmbedder,
    UNAVAILABLE,
    clip_direction,
    estimate_flow,
    identity_distance,
    make_embedder,
    make_sync_scorer,
    sync_score,
    warp_image,
    warping_error,
)


def image(seed=0, h=32, w=32):
    return np.random.default_rng(seed).random((h, w, 3)).astype(np.float32)


class HandEmbedder:
    """3-dim embedder wired so image and text deltas are fully controllable."""

    def __init__(self, img_map, txt_map):
        self.img_map = img_map
        self.txt_map = txt_map

    def embed_image(self, image):
        return self.img_map[image.tobytes()]

    def embed_text(self, text):
        return self.txt_map[text]

    def embed_identity(self, image):
        return self.img_map[image.tobytes()]


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


# --- embedders ----------------------------------------------------------------


def test_toy_embedder_unit_norm_and_determinism():
    emb = ToyEmbedder(seed=3)
    v1 = emb.embed_image(image(1))
    v2 = emb.embed_image(image(1))
    assert np.array_equal(v1, v2)
    assert abs(np.linalg.norm(v1) - 1.0) < 1e-6
    t = emb.embed_text("a photograph of a man")
    assert abs(np.linalg.norm(t) - 1.0) < 1e-6


def test_make_embedder_uris():
    assert make_embedder("none") is None
    emb = make_embedder("toy:?seed=5&dim=16")
    assert emb.embed_image(image(0)).shape == (16,)
    with pytest.raises(ValueError):
        make_embedder("gopher://nope")


# --- clip direction -----------------------------------------------------------


def test_clip_direction_degenerate_on_identical_images():
    emb = ToyEmbedder(seed=0)
    img = image(2)
    out = clip_direction(img, img, "a man", "an old man", emb)
    assert out.degenerate and out.value == 0.0


def test_clip_direction_perfect_alignment_by_construction():
    a, b = image(0), image(1)
    img_map = {a.tobytes(): unit([1, 0, 0]), b.tobytes(): unit([0, 1, 0])}
    txt_map = {"pre": unit([1, 0, 0]), "post": unit([0, 1, 0])}
    emb = HandEmbedder(img_map, txt_map)
    out = clip_direction(a, b, "pre", "post", emb)
    assert out.value == pytest.approx(1.0)
    assert not out.degenerate


def test_clip_direction_matches_loop_oracle():
    a, b = image(3), image(4)
    va, vb = unit([0.3, -0.2, 0.9]), unit([0.1, 0.7, -0.2])
    ta, tb = unit([0.5, 0.5, 0.0]), unit([-0.3, 0.2, 0.4])
    emb = HandEmbedder({a.tobytes(): va, b.tobytes(): vb}, {"p": ta, "q": tb})
    di, dt = vb - va, tb - ta
    num = sum(float(di[k]) * float(dt[k]) for k in range(3))
    den = math.sqrt(sum(float(x) ** 2 for x in di)) * math.sqrt(sum(float(x) ** 2 for x in dt))
    out = clip_direction(a, b, "p", "q", emb)
    assert out.value == pytest.approx(num / den, abs=1e-12)


def test_clip_direction_invariant_to_common_shift():
    # depends only on deltas: shift both image embeddings by a common vector
    a, b = image(5), image(6)
    shift = np.array([0.2, -0.1, 0.4])
    va, vb = unit([1, 2, 3]), unit([3, 1, 0])
    emb1 = HandEmbedder({a.tobytes(): va, b.tobytes(): vb},
                        {"p": unit([1, 1, 0]), "q": unit([0, 1, 1])})
    emb2 = HandEmbedder({a.tobytes(): va + shift, b.tobytes(): vb + shift},
                        {"p": unit([1, 1, 0]), "q": unit([0, 1, 1])})
    s1 = clip_direction(a, b, "p", "q", emb1)
    s2 = clip_direction(a, b, "p", "q", emb2)
    assert s1.value == pytest.approx(s2.value, abs=1e-12)


# --- identity distance ---------------------------------------------------------


def test_identity_distance_self_is_zero():
    emb = ToyEmbedder(seed=1)
    img = image(7)
    assert identity_distance(img, img, emb) == 0.0


def test_identity_distance_orthogonal_is_half_pi():
    a, b = image(0), image(1)
    emb = HandEmbedder({a.tobytes(): unit([1, 0, 0]), b.tobytes(): unit([0, 1, 0])}, {})
    assert identity_distance(a, b, emb) == pytest.approx(math.pi / 2)


def test_identity_distance_matches_arccos_oracle():
    a, b = image(2), image(3)
    emb = ToyEmbedder(seed=4)
    va, vb = emb.embed_identity(a), emb.embed_identity(b)
    oracle = math.acos(max(-1.0, min(1.0, float(np.dot(va, vb)))))
    assert identity_distance(a, b, emb) == pytest.approx(oracle, abs=1e-9)


def test_identity_distance_symmetry():
    a, b = image(4), image(5)
    emb = ToyEmbedder(seed=6)
    assert identity_distance(a, b, emb) == pytest.approx(identity_distance(b, a, emb))


# --- flow / warping error -------------------------------------------------------


def test_static_frames_zero_flow_zero_error():
    img = image(8)
    frames = [img, img.copy(), img.copy()]
    zero = FlowField(np.zeros((32, 32, 2), dtype=np.float32),
                     np.ones((32, 32), dtype=np.uint8))
    err = warping_error(frames, [zero, zero], [zero, zero])
    assert err == 0.0


def test_known_translation_with_exact_flow_is_zero():
    rng = np.random.default_rng(9)
    base = rng.random((40, 40, 3)).astype(np.float32)
    shifted = np.roll(base, shift=3, axis=1)  # content moves 3 px right
    # backward flow: pixels of the shifted frame source from x-3 in the base
    flow = np.zeros((40, 40, 2), dtype=np.float32)
    flow[..., 0] = -3.0
    valid = np.ones((40, 40), dtype=np.uint8)
    valid[:, :3] = 0  # wrapped columns
    ff = FlowField(flow, valid)
    err = warping_error([base, shifted], [ff], [ff])
    assert err < 1e-7


def test_warping_error_matches_pixel_loop_oracle():
    rng = np.random.default_rng(10)
    a = rng.random((16, 16, 3)).astype(np.float32)
    b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1).astype(np.float32)
    zero = FlowField(np.zeros((16, 16, 2), dtype=np.float32),
                     np.ones((16, 16), dtype=np.uint8))
    got = warping_error([a, b], [zero], [zero])
    loop = np.abs(a.astype(np.float64) - b.astype(np.float64)).mean()
    assert got == pytest.approx(loop, abs=1e-9)


def test_block_matching_recovers_integer_translation():
    rng = np.random.default_rng(11)
    base = rng.random((48, 48, 3)).astype(np.float32)
    shifted = np.roll(base, shift=(2, 4), axis=(0, 1))
    ff = estimate_flow(base, shifted)
    interior = ff.flow[8:-8, 8:-8]
    assert np.median(interior[..., 0]) == pytest.approx(-4.0)
    assert np.median(interior[..., 1]) == pytest.approx(-2.0)
    err = warping_error([base, shifted])
    assert err < 0.02


def test_all_invalid_mask_is_metric_error():
    img = image(12, 16, 16)
    dead = FlowField(np.zeros((16, 16, 2), dtype=np.float32),
                     np.zeros((16, 16), dtype=np.uint8))
    with pytest.raises(MetricError):
        warping_error([img, img], [dead], [dead])


def test_flow_rejects_non_finite():
    bad = np.full((4, 4, 2), np.nan, dtype=np.float32)
    with pytest.raises(MetricError):
        FlowField(bad, np.ones((4, 4), dtype=np.uint8))


# --- sync score -----------------------------------------------------------------


def test_sync_score_unavailable_without_scorer():
    assert sync_score([image(0)], np.zeros((1, 4))) == UNAVAILABLE


def test_sync_score_fixture_passthrough():
    assert sync_score([image(0)], np.zeros((1, 4)), FixtureSyncScorer(5.0)) == 5.0


def test_make_sync_scorer_uris():
    assert make_sync_scorer("none") is None
    assert make_sync_scorer("fixture:4.25").score([], []) == 4.25
    with pytest.raises(ValueError):
        make_sync_scorer("ftp://x")
