import numpy as np
import pytest

from talker.field.checkpoint import (
    CheckpointError,
    file_digest,
    load_checkpoint,
    save_checkpoint,
)


def test_round_trip(tmp_path):
    sections = {
        "field/tables": np.random.default_rng(0).random((16, 2)).astype(np.float32),
        "opt/step": np.array([42], dtype=np.int64),
        "rng/state": np.arange(8, dtype=np.uint8),
    }
    cfg = {"spatial_levels": 6, "bound": 1.0}
    path = tmp_path / "model.trf"
    save_checkpoint(path, sections, cfg, extra={"phase": "init"})
    loaded, cfg2, extra = load_checkpoint(path)
    assert cfg2 == cfg
    assert extra == {"phase": "init"}
    for k, v in sections.items():
        assert np.array_equal(loaded[k], v)
        assert loaded[k].dtype == v.dtype


def test_digest_is_stable(tmp_path):
    arr = {"a": np.ones((3, 3), dtype=np.float32)}
    p1 = save_checkpoint(tmp_path / "a.trf", arr, {"x": 1})
    p2 = save_checkpoint(tmp_path / "b.trf", arr, {"x": 1})
    assert file_digest(p1) == file_digest(p2)


def test_rejects_non_checkpoint(tmp_path):
    p = tmp_path / "junk.trf"
    p.write_bytes(b"not a checkpoint at all")
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.trf")


def test_unsupported_dtype_rejected(tmp_path):
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "x.trf", {"a": np.array(["s"])}, {})
