import numpy as np
import torch

from talker.field.toy import (
    BlobParams,
    TalkingBlob,
    ToySceneSpec,
    audio_feature_vector,
    make_toy_scene,
)


def test_closed_mouth_has_minimum_mask_area(toy_scene_small):
    _, ds = toy_scene_small
    areas = [int(f.lip_mask.sum()) for f in ds.frames]
    assert areas[0] == min(areas)  # frame 0 is audio level 0 by construction
    assert max(areas) > areas[0]


def test_masks_nonempty_everywhere(toy_scene_small):
    _, ds = toy_scene_small
    assert all(f.lip_mask.any() for f in ds.frames)


def test_scene_generation_is_bit_deterministic():
    spec = ToySceneSpec(n_frames=3, height=24, width=24)
    _, a = make_toy_scene(spec=spec)
    _, b = make_toy_scene(spec=spec)
    for fa, fb in zip(a.frames, b.frames):
        assert np.array_equal(fa.image, fb.image)
        assert np.array_equal(fa.lip_mask, fb.lip_mask)


def test_split_sizes(toy_scene_small):
    _, ds = toy_scene_small
    assert len(ds.train_frames) == 7 and len(ds.test_frames) == 1


def test_oracle_density_zero_outside_head():
    blob = TalkingBlob()
    x = torch.tensor([[0.9, 0.9, 0.9], [0.0, 0.0, 0.0]])
    a = audio_feature_vector(0.5, 8)
    _, sigma = blob.query_points(x, torch.from_numpy(a), 0.5, 0)
    assert float(sigma[0]) == 0.0
    assert float(sigma[1]) > 0.0


def test_mouth_cavity_empties_density():
    blob = TalkingBlob()
    center = torch.tensor([list(BlobParams().mouth_center)])
    open_a = torch.from_numpy(audio_feature_vector(1.0, 8))
    _, sigma = blob.query_points(center, open_a, 0.5, 0)
    assert float(sigma[0]) == 0.0


def test_audio_vector_encodes_level():
    a0 = audio_feature_vector(0.0, 8)
    a1 = audio_feature_vector(1.0, 8)
    assert a0[0] == 0.0 and a1[0] == 1.0
    assert a0.shape == (8,)
    assert not np.array_equal(a0, a1)


def test_images_match_declared_background(toy_scene_small):
    _, ds = toy_scene_small
    corner = ds.frames[0].image[0, 0]
    assert np.allclose(corner, ds.background, atol=1e-5)
