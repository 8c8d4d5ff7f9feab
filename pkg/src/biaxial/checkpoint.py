"""Checkpoint file format.

Layout: magic "BAXL", u32 version, u32 header length (both little-endian),
a JSON header, then the payload of flat little-endian float32 data.  The
header carries the model and optimizer configuration, the iteration
counter, the RNG state, an explicit shape table for every parameter and
optimizer-state block (in blocks() order), and a CRC32 of the payload.
Serialization is canonical (sorted JSON keys), so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .model import ModelConfig, ModelParams
from .lstm_core import LstmLayerParams
from .trainer import Checkpoint, OptimizerConfig

MAGIC = b"BAXL"
VERSION = 1


class ChecksumMismatch(Exception):
    """Payload CRC32 does not match the header; the file is corrupt."""


def _flat32(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def save_checkpoint(ckpt: Checkpoint, path: str | Path):
    blocks = ckpt.params.blocks()
    payload = bytearray()
    param_table = []
    for name, arr in blocks:
        param_table.append({"name": name, "shape": list(arr.shape)})
        payload += _flat32(arr)
    state_table = []
    for name, _ in blocks:
        if name in ckpt.opt_state:
            eg2, edx2 = ckpt.opt_state[name]
            for suffix, arr in (("Eg2", eg2), ("Edx2", edx2)):
                state_table.append({"name": f"{name}.{suffix}", "shape": list(arr.shape)})
                payload += _flat32(arr)

    header = {
        "version": VERSION,
        "model_config": ckpt.model_config.to_dict(),
        "optimizer_config": ckpt.optimizer_config.to_dict(),
        "iteration": ckpt.iteration,
        "rng_state": ckpt.rng_state,
        "param_blocks": param_table,
        "state_blocks": state_table,
        "payload_crc32": zlib.crc32(bytes(payload)),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def _rebuild_params(cfg: ModelConfig, arrays: dict[str, np.ndarray]) -> ModelParams:
    def stack(prefix: str, n: int) -> list[LstmLayerParams]:
        return [
            LstmLayerParams(
                W=arrays[f"{prefix}.{i}.W"],
                U=arrays[f"{prefix}.{i}.U"],
                b=arrays[f"{prefix}.{i}.b"],
            )
            for i in range(n)
        ]

    return ModelParams(
        time_layers=stack("time", len(cfg.time_layer_sizes)),
        note_layers=stack("note", len(cfg.note_layer_sizes)),
        out_W=arrays["out.W"],
        out_b=arrays["out.b"],
    )


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, header_len = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[12 : 12 + header_len])
    payload = data[12 + header_len :]
    if zlib.crc32(payload) != header["payload_crc32"]:
        raise ChecksumMismatch(f"{path}: payload checksum mismatch")

    arrays = {}
    offset = 0
    for entry in header["param_blocks"] + header["state_blocks"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        arrays[entry["name"]] = arr.reshape(shape).copy()
        offset += count * 4

    cfg = ModelConfig.from_dict(header["model_config"])
    opt_cfg = OptimizerConfig.from_dict(header["optimizer_config"])
    params = _rebuild_params(cfg, {e["name"]: arrays[e["name"]] for e in header["param_blocks"]})
    opt_state = {}
    for entry in header["state_blocks"]:
        name = entry["name"]
        base, suffix = name.rsplit(".", 1)
        pair = opt_state.setdefault(base, [None, None])
        pair[0 if suffix == "Eg2" else 1] = arrays[name]
    opt_state = {k: tuple(v) for k, v in opt_state.items()}

    rng_state = header["rng_state"]
    return Checkpoint(
        model_config=cfg,
        optimizer_config=opt_cfg,
        params=params,
        opt_state=opt_state,
        iteration=header["iteration"],
        rng_state=rng_state,
    )
