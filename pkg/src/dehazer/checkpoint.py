"""Binary checkpoint format for parameters, optimizer state, and counters.

Layout (all integers little-endian):

    magic           4 bytes  b"PFFN"
    version         u32      currently 1
    config block    u32 byte length, then UTF-8 "key=value" lines
    tensor count    u32
    per tensor:     u32 name length, UTF-8 name, u32 rank,
                    rank x u64 dims, raw float32 data (row-major)

The config block carries the architecture fields plus training counters
(epoch, iteration, seed) and, when optimizer state is included, the Adam
step counter. Optimizer moments are stored as ordinary tensors named
"adam.m.<param>" / "adam.v.<param>". Loading validates the magic, the
version, and every tensor's dims against the declared architecture.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .model import ModelConfig, param_shapes
from .optim import AdamState

MAGIC = b"PFFN"
VERSION = 1

_CONFIG_FIELDS = ("stem_kernel", "base_channels", "encoder_levels", "res_blocks",
                  "skip_connections", "image_channels")


class CheckpointError(ValueError):
    """Corrupt, truncated, or inconsistent checkpoint file."""


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    adam: AdamState | None = None
    epoch: int = 0
    iteration: int = 0
    seed: int = 0
    version: int = VERSION


def _config_lines(ckpt: Checkpoint) -> str:
    lines = [f"{k}={getattr(ckpt.config, k)}" for k in _CONFIG_FIELDS]
    lines.append(f"epoch={ckpt.epoch}")
    lines.append(f"iteration={ckpt.iteration}")
    lines.append(f"seed={ckpt.seed}")
    if ckpt.adam is not None:
        lines.append(f"adam.step={ckpt.adam.step}")
    return "\n".join(lines) + "\n"


def _write_tensor(fh, name: str, arr: np.ndarray):
    data = np.ascontiguousarray(arr, dtype=np.float32)
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", data.ndim))
    fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
    fh.write(data.tobytes())


def save_checkpoint(path, ckpt: Checkpoint):
    tensors: list[tuple[str, np.ndarray]] = sorted(ckpt.params.items())
    if ckpt.adam is not None:
        tensors += [(f"adam.m.{k}", v) for k, v in sorted(ckpt.adam.m.items())]
        tensors += [(f"adam.v.{k}", v) for k, v in sorted(ckpt.adam.v.items())]
    blob = _config_lines(ckpt).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            _write_tensor(fh, name, arr)


class _Reader:
    def __init__(self, path):
        self.path = path
        with open(path, "rb") as fh:
            self.blob = fh.read()
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated file")
        piece = self.blob[self.pos : self.pos + n]
        self.pos += n
        return piece

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def _parse_config(blob: bytes, path) -> dict[str, str]:
    try:
        text = blob.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"{path}: config block is not UTF-8") from exc
    values: dict[str, str] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise CheckpointError(f"{path}: malformed config line {line!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def load_checkpoint(path) -> Checkpoint:
    r = _Reader(path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic (not a checkpoint file)")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    kv = _parse_config(r.take(r.u32()), path)
    try:
        config = ModelConfig(
            stem_kernel=int(kv["stem_kernel"]),
            base_channels=int(kv["base_channels"]),
            encoder_levels=int(kv["encoder_levels"]),
            res_blocks=int(kv["res_blocks"]),
            skip_connections=kv["skip_connections"] == "True",
            image_channels=int(kv["image_channels"]),
        )
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: invalid config block: {exc}") from exc

    expected = param_shapes(config)
    tensors: dict[str, np.ndarray] = {}
    count = r.u32()
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = struct.unpack(f"<{rank}Q", r.take(8 * rank))
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(dims).copy()
        base = name
        for prefix in ("adam.m.", "adam.v."):
            if name.startswith(prefix):
                base = name[len(prefix):]
        if base not in expected:
            raise CheckpointError(f"{path}: unexpected tensor {name!r}")
        if tuple(dims) != expected[base]:
            raise CheckpointError(
                f"{path}: tensor {name!r} dims {tuple(dims)} do not match "
                f"config-declared {expected[base]}")
        tensors[name] = arr

    params = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
    missing = set(expected) - set(params)
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)[:3]}")
    adam = None
    if "adam.step" in kv:
        try:
            adam = AdamState(
                m={k: tensors[f"adam.m.{k}"] for k in params},
                v={k: tensors[f"adam.v.{k}"] for k in params},
                step=int(kv["adam.step"]),
            )
        except KeyError as exc:
            raise CheckpointError(f"{path}: missing optimizer tensor {exc}") from exc
    return Checkpoint(config=config, params=params, adam=adam,
                      epoch=int(kv.get("epoch", 0)),
                      iteration=int(kv.get("iteration", 0)),
                      seed=int(kv.get("seed", 0)), version=version)
