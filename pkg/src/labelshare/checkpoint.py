"""Checkpoint binary format.

Layout: magic "LSCKPT01" | uint32 LE header length | JSON header |
float64 LE payload (weights, then Adam m, then Adam v, in the header's
parameter order) | uint32 LE CRC32 over everything before it.
"""

import json
import os
import struct
import zlib

import numpy as np

from . import net
from .errors import CorruptPayload, IoError, VersionMismatch
from .training import Checkpoint

MAGIC = b"LSCKPT01"


def save_checkpoint(ckpt, path):
    shapes = net.param_shapes(ckpt.config)
    header = {
        "model_config": ckpt.config.to_json(),
        "mode": ckpt.mode,
        "epoch": ckpt.epoch,
        "adam_t": ckpt.adam_t,
        "history": ckpt.history,
        "space_fingerprint": ckpt.space_fingerprint,
        "channel_blocks": {t: list(se) for t, se in sorted(ckpt.channel_blocks.items())},
        "param_order": list(shapes),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    payload = b"".join(
        np.ascontiguousarray(vec, dtype="<f8").tobytes()
        for vec in (
            net.flatten_params(ckpt.params),
            net.flatten_params(ckpt.adam_m),
            net.flatten_params(ckpt.adam_v),
        )
    )
    body = MAGIC + struct.pack("<I", len(header_bytes)) + header_bytes + payload
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(body)
            fh.write(struct.pack("<I", zlib.crc32(body)))
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(str(exc)) from exc


def load_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    if len(raw) < len(MAGIC) + 8:
        raise CorruptPayload(f"{path}: file too short")
    if raw[: len(MAGIC)] != MAGIC:
        raise VersionMismatch(
            f"{path}: bad magic {raw[:len(MAGIC)]!r}, expected {MAGIC!r}"
        )
    body, crc_bytes = raw[:-4], raw[-4:]
    if struct.unpack("<I", crc_bytes)[0] != zlib.crc32(body):
        raise CorruptPayload(f"{path}: CRC mismatch")
    (header_len,) = struct.unpack_from("<I", raw, len(MAGIC))
    header_start = len(MAGIC) + 4
    try:
        header = json.loads(raw[header_start : header_start + header_len])
    except json.JSONDecodeError as exc:
        raise CorruptPayload(f"{path}: unreadable header ({exc})") from exc

    config = net.ModelConfig.from_json(header["model_config"])
    shapes = net.param_shapes(config)
    if header.get("param_order") != list(shapes):
        raise CorruptPayload(f"{path}: parameter order does not match the config")
    n = net.parameter_count(config)
    payload = body[header_start + header_len :]
    if len(payload) != 3 * n * 8:
        raise CorruptPayload(
            f"{path}: payload is {len(payload)} bytes, expected {3 * n * 8}"
        )
    vecs = np.frombuffer(payload, dtype="<f8").astype(float)
    return Checkpoint(
        config=config,
        params=net.unflatten_params(vecs[:n], shapes),
        adam_m=net.unflatten_params(vecs[n : 2 * n], shapes),
        adam_v=net.unflatten_params(vecs[2 * n :], shapes),
        adam_t=int(header["adam_t"]),
        epoch=int(header["epoch"]),
        history=header.get("history", []),
        space_fingerprint=header.get("space_fingerprint", ""),
        mode=header.get("mode", "individual"),
        channel_blocks={
            t: tuple(se) for t, se in header.get("channel_blocks", {}).items()
        },
    )
