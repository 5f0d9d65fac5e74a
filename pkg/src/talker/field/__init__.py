from .model import FieldConfig, FieldModel
from .render import MarchConfig, RenderOutput, render_patch, render_rays
from .toy import TalkingBlob, make_toy_scene
from .train import TrainReport, train_field
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "FieldConfig",
    "FieldModel",
    "MarchConfig",
    "RenderOutput",
    "render_patch",
    "render_rays",
    "TalkingBlob",
    "make_toy_scene",
    "TrainReport",
    "train_field",
    "load_checkpoint",
    "save_checkpoint",
]
