import json
import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from talker.data import save_dataset
from talker.field.model import FieldConfig, FieldModel
from talker.field.toy import ToySceneSpec, make_toy_scene


def tiny_field_config(**overrides) -> FieldConfig:
    base = dict(
        spatial_levels=2,
        base_resolution=4,
        max_resolution=8,
        table_size=2**7,
        features_per_level=2,
        audio_feature_dim=4,
        audio_proj_dim=2,
        audio_dim=2,
        audio_grid_resolution=4,
        audio_grid_features=2,
        head_width=16,
        geo_features=4,
        appearance_count=2,
        appearance_dim=2,
    )
    base.update(overrides)
    return FieldConfig(**base)


@pytest.fixture
def tiny_model():
    gen = torch.Generator().manual_seed(11)
    return FieldModel(tiny_field_config(), generator=gen, zero_init_heads=False)


@pytest.fixture(scope="session")
def toy_scene_small():
    """8 frames at 40x40; shared by read-only tests."""
    spec = ToySceneSpec(n_frames=8, height=40, width=40)
    return make_toy_scene(spec=spec)


@pytest.fixture
def rng():
    return np.random.default_rng(123)


MICRO_FIELD = dict(
    spatial_levels=3, base_resolution=8, max_resolution=32, table_size=2**10,
    features_per_level=2, audio_feature_dim=8, head_width=32, geo_features=8,
)


def write_toy_project(root: Path, n_frames=8, size=24, config_overrides=None,
                      field_overrides=None) -> Path:
    """Persist a micro toy dataset plus a run-config JSON; returns the config path."""
    root = Path(root)
    spec = ToySceneSpec(n_frames=n_frames, height=size, width=size)
    _, ds = make_toy_scene(spec=spec)
    save_dataset(ds, root / "dataset")
    field = dict(MICRO_FIELD)
    field.update(field_overrides or {})
    cfg = {
        "dataset": str(root / "dataset"),
        "output_dir": str(root / "out"),
        "seed": 7,
        "instruction": "make the blob warm",
        "field": field,
        "schedule": {"preset": "standard", "epochs_per_round": 1, "subset_size": 4},
        "editor": {"kind": "mock", "mock": {"name": "hue_shift"}},
        "train": {
            "init_epochs": 12, "patch_size": 24, "lip_patch_size": 10,
            "finetune_epochs": 1,
        },
        "metrics": {
            "caption_pre": "a plain blob",
            "caption_post": "a warm blob",
        },
    }
    cfg.update(config_overrides or {})
    path = root / "config.json"
    path.write_text(json.dumps(cfg, indent=2))
    return path
