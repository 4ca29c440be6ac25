"""Versioned binary checkpoints with bit-exact round trips.

Layout: 4-byte magic, u32 version, u64 header length, UTF-8 JSON header,
then raw little-endian float64 array payloads at header-declared offsets.
The header carries the training position (stage, iteration, skip count),
the full RNG state, the optimizer step counts, and the originating config
text so export/preview can rebuild the body without the config file.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .avp import AvatarParams
from .errors import CheckpointError
from .pipeline import AdamMoments, TrainState

MAGIC = b"AVCK"
VERSION = 1
_HEAD = struct.Struct("<4sIQ")

_ARRAYS = ("psi_v", "psi_a", "m_v", "v_v", "m_a", "v_a")


def _state_arrays(state: TrainState) -> dict[str, np.ndarray]:
    return {
        "psi_v": state.avatar.psi_v,
        "psi_a": state.avatar.psi_a,
        "m_v": state.moments_v.m,
        "v_v": state.moments_v.v,
        "m_a": state.moments_a.m,
        "v_a": state.moments_a.v,
    }


def save_checkpoint(path, state: TrainState, config_hash: str = "", config_text: str = "") -> None:
    from . import __version__

    path = Path(path)
    arrays = _state_arrays(state)
    offset = 0
    layout = {}
    for name in _ARRAYS:
        arr = arrays[name]
        layout[name] = {"shape": list(arr.shape), "offset": offset}
        offset += arr.size * 8
    header = {
        "tool_version": __version__,
        "stage": state.stage,
        "iteration": state.iteration,
        "skipped": state.skipped,
        "rng_state": state.rng.bit_generator.state,
        "avatar_seed": state.avatar.rng_seed,
        "adam_v_step": state.moments_v.step,
        "adam_a_step": state.moments_a.step,
        "config_hash": config_hash,
        "config_text": config_text,
        "arrays": layout,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for name in _ARRAYS:
            fh.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[TrainState, dict]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}")
    if len(blob) < _HEAD.size:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, header_len = _HEAD.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header_end = _HEAD.size + header_len
    if len(blob) < header_end:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[_HEAD.size:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}")

    payload = blob[header_end:]
    arrays = {}
    for name in _ARRAYS:
        info = header.get("arrays", {}).get(name)
        if info is None:
            raise CheckpointError(f"{path}: header missing array {name!r}")
        shape = tuple(info["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = info["offset"]
        end = start + count * 8
        if end > len(payload):
            raise CheckpointError(f"{path}: array {name!r} extends past end of file")
        arrays[name] = np.frombuffer(payload, dtype="<f8", count=count, offset=start).reshape(shape).copy()

    rng = np.random.default_rng()
    try:
        rng.bit_generator.state = header["rng_state"]
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: cannot restore rng state: {exc}")

    state = TrainState(
        avatar=AvatarParams(psi_v=arrays["psi_v"], psi_a=arrays["psi_a"], rng_seed=header.get("avatar_seed", 0)),
        moments_v=AdamMoments(m=arrays["m_v"], v=arrays["v_v"], step=header.get("adam_v_step", 0)),
        moments_a=AdamMoments(m=arrays["m_a"], v=arrays["v_a"], step=header.get("adam_a_step", 0)),
        stage=header.get("stage", "geometry"),
        iteration=header.get("iteration", 0),
        skipped=header.get("skipped", 0),
        rng=rng,
    )
    return state, header
