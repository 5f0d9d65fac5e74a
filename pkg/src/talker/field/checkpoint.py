"""Single-file checkpoint container.

Layout: magic "TRFC", u32 header length, JSON header, raw section bytes.
The header carries the format version, the field config, and per-section
dtype/shape/offset. Arrays are little-endian; parameters are float32.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TRFC"
FORMAT_VERSION = 1

_DTYPES = {"f4": "<f4", "f8": "<f8", "i8": "<i8", "u1": "|u1"}


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, sections: dict[str, np.ndarray], field_config: dict,
                    extra: dict | None = None) -> Path:
    """sections: name -> array. Names are namespaced ("field/...", "refine/...")."""
    path = Path(path)
    entries = {}
    blobs = []
    offset = 0
    for name in sorted(sections):
        arr = np.asarray(sections[name])
        code = {"float32": "f4", "float64": "f8", "int64": "i8", "uint8": "u1"}.get(arr.dtype.name)
        if code is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for section {name}")
        raw = np.ascontiguousarray(arr.astype(_DTYPES[code])).tobytes()
        entries[name] = {"dtype": code, "shape": list(arr.shape), "offset": offset}
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "field_config": field_config,
        "sections": entries,
        "extra": extra or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        for b in blobs:
            fh.write(b)
    return path


def load_checkpoint(path):
    """Returns (sections dict, field_config dict, extra dict)."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint container")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8:8 + hlen])
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format {header.get('format_version')}"
        )
    base = 8 + hlen
    sections = {}
    for name, ent in header["sections"].items():
        dt = np.dtype(_DTYPES[ent["dtype"]])
        count = int(np.prod(ent["shape"])) if ent["shape"] else 1
        start = base + ent["offset"]
        arr = np.frombuffer(raw, dtype=dt, count=count, offset=start)
        sections[name] = arr.reshape(ent["shape"]).copy()
    return sections, header["field_config"], header["extra"]


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def module_sections(module, prefix: str) -> dict[str, np.ndarray]:
    """Named parameter arrays of a torch module for the container."""
    return {
        f"{prefix}/{name}": p.detach().cpu().numpy().astype(np.float32)
        for name, p in module.named_parameters()
    }


def load_module_sections(module, sections: dict, prefix: str):
    import torch

    with torch.no_grad():
        for name, p in module.named_parameters():
            key = f"{prefix}/{name}"
            if key not in sections:
                raise CheckpointError(f"checkpoint missing section {key}")
            p.copy_(torch.from_numpy(sections[key].reshape(tuple(p.shape))))


def optimizer_sections(opt, prefix: str) -> dict[str, np.ndarray]:
    """Adam moments + step counters, keyed by flat parameter index."""
    out = {}
    idx = 0
    for group in opt.param_groups:
        for p in group["params"]:
            state = opt.state.get(p, {})
            if state:
                step = state["step"]
                out[f"{prefix}/{idx}/step"] = np.array(
                    [float(step) if not hasattr(step, "item") else float(step.item())],
                    dtype=np.float32,
                )
                out[f"{prefix}/{idx}/exp_avg"] = (
                    state["exp_avg"].detach().cpu().numpy().astype(np.float32)
                )
                out[f"{prefix}/{idx}/exp_avg_sq"] = (
                    state["exp_avg_sq"].detach().cpu().numpy().astype(np.float32)
                )
            idx += 1
    return out


def load_optimizer_sections(opt, sections: dict, prefix: str):
    import torch

    idx = 0
    for group in opt.param_groups:
        for p in group["params"]:
            key = f"{prefix}/{idx}/step"
            if key in sections:
                opt.state[p] = {
                    "step": torch.tensor(float(sections[key][0])),
                    "exp_avg": torch.from_numpy(
                        sections[f"{prefix}/{idx}/exp_avg"].reshape(tuple(p.shape))
                    ).clone(),
                    "exp_avg_sq": torch.from_numpy(
                        sections[f"{prefix}/{idx}/exp_avg_sq"].reshape(tuple(p.shape))
                    ).clone(),
                }
            idx += 1
