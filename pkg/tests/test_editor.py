import numpy as np
import pytest
from starlette.testclient import TestClient

from talker.editor import (
    EditBatchError,
    EditRequest,
    EditorProtocolError,
    MockEditorClient,
    MockProfile,
    RemoteEditorClient,
    edit_batch,
    hue_shift_profile,
    identity_profile,
    mock_edit,
)
from talker.editor_fixtures import make_fixture_app, record_fixture


def image(seed=0, h=24, w=24):
    return np.random.default_rng(seed).random((h, w, 3)).astype(np.float32)


def req(img=None, s=7.5, t=20, seed=0, instr="make it warm"):
    return EditRequest(image=img if img is not None else image(),
                       instruction=instr, text_guidance=s, steps=t, seed=seed)


def test_request_validation():
    with pytest.raises(ValueError):
        EditRequest(image=image(), instruction="x", text_guidance=float("nan"))
    with pytest.raises(ValueError):
        EditRequest(image=image(), instruction="x", steps=0)
    with pytest.raises(ValueError):
        EditRequest(image=image(), instruction="x", image_guidance=-1.0)


def test_zero_guidance_is_identity():
    out = mock_edit(req(s=0.0), hue_shift_profile())
    assert np.array_equal(out.image, req().image)


def test_identity_profile_is_identity_at_any_strength():
    out = mock_edit(req(s=7.5, t=20), identity_profile())
    assert np.array_equal(out.image, req().image)


def test_full_strength_equals_target_transform():
    profile = hue_shift_profile()
    r = req(s=7.5, t=20)
    out = mock_edit(r, profile)
    assert np.allclose(out.image, profile.target_transform(r.image), atol=1e-6)


def test_mock_determinism():
    profile = hue_shift_profile(noise=0.02)
    a = mock_edit(req(seed=9), profile)
    b = mock_edit(req(seed=9), profile)
    assert np.array_equal(a.image, b.image)


def test_strength_monotonicity_towards_target():
    profile = hue_shift_profile()
    img = image(3)
    target = profile.target_transform(img)
    dists = []
    for s in [1.0, 2.5, 5.0, 7.5]:
        out = mock_edit(req(img=img, s=s), profile)
        dists.append(float(np.abs(out.image - target).mean()))
    assert all(b <= a + 1e-7 for a, b in zip(dists, dists[1:]))


def test_target_transform_is_idempotent():
    profile = hue_shift_profile()
    img = image(5) * 0.7  # keep luminance * tint below clamping
    once = profile.target_transform(img)
    twice = profile.target_transform(once)
    assert np.abs(once - twice).max() < 1e-6


def test_rho_monotone_in_s_and_t():
    p = MockProfile()
    assert p.rho(0.0, 20) == 0.0
    for s1, s2 in [(1.0, 2.0), (3.0, 7.5)]:
        assert p.rho(s1, 20) <= p.rho(s2, 20)
    for t1, t2 in [(5, 10), (10, 20)]:
        assert p.rho(5.0, t1) <= p.rho(5.0, t2)


def test_warp_windowing_leaves_far_region_untouched():
    inside = MockProfile(tint=(1, 1, 1), warp_amplitude=3.0,
                         warp_center=(0.5, 0.5), warp_radius=0.15)
    img = image(7, 48, 48)
    out = inside.target_transform(img)
    # corners beyond the disk keep their pixels
    assert np.allclose(out[:4, :4], img[:4, :4].mean(axis=2, keepdims=True)
                       * np.ones(3, dtype=np.float32), atol=1e-5)
    center_delta = np.abs(out[20:28, 20:28] - img[20:28, 20:28]).max()
    assert center_delta > 0.01


def test_mock_client_never_mutates_request_image():
    img = image(1)
    before = img.copy()
    mock_edit(req(img=img), hue_shift_profile(noise=0.05))
    assert np.array_equal(img, before)


def test_edit_batch_empty():
    assert edit_batch(MockEditorClient(), []) == []


def test_edit_batch_order_preserved():
    client = MockEditorClient(hue_shift_profile())
    reqs = [req(img=image(i), seed=i) for i in range(40)]
    results = edit_batch(client, reqs, parallelism=8)
    assert len(results) == 40
    for r, res in zip(reqs, results):
        assert np.array_equal(res.image, mock_edit(r, client.profile).image)


def test_edit_batch_idempotent_resubmission():
    client = MockEditorClient(hue_shift_profile(noise=0.03))
    reqs = [req(img=image(i), seed=100 + i) for i in range(10)]
    first = edit_batch(client, reqs, parallelism=4)
    second = edit_batch(client, reqs, parallelism=2)
    for a, b in zip(first, second):
        assert np.array_equal(a.image, b.image)


def fixture_client(tmp_path, reqs, fail_digests=None, retries=0):
    profile = hue_shift_profile()
    for r in reqs:
        record_fixture(tmp_path, r, mock_edit(r, profile).image)
    app = make_fixture_app(tmp_path, fail_digests=fail_digests)
    return RemoteEditorClient("http://fixtures", retries=retries,
                              client=TestClient(app, base_url="http://fixtures"))


def test_remote_client_replays_fixture(tmp_path):
    r = req(img=image(2), seed=4)
    client = fixture_client(tmp_path, [r])
    out = client.edit(r)
    assert out.editor_id == "fixture"
    expected = mock_edit(r, hue_shift_profile()).image
    # PNG round trip quantizes to 8 bits
    assert np.abs(out.image - expected).max() <= 1.0 / 255.0 + 1e-6
    assert out.image.shape == r.image.shape


def test_remote_client_unknown_fixture_is_protocol_error(tmp_path):
    client = fixture_client(tmp_path, [])
    with pytest.raises(EditorProtocolError):
        client.edit(req())


def test_batch_failure_reports_index(tmp_path):
    reqs = [req(img=image(i), seed=i) for i in range(10)]
    bad = reqs[7].digest()
    client = fixture_client(tmp_path, reqs, fail_digests={bad}, retries=1)
    with pytest.raises(EditBatchError) as err:
        edit_batch(client, reqs, parallelism=1)
    assert [i for i, _ in err.value.failures] == [7]
    ok = [r for i, r in enumerate(err.value.results) if i != 7]
    assert all(r is not None for r in ok)
