"""Binary checkpoint I/O: parameters, normalization means, labels, history.

Byte layout (all integers little-endian unsigned 32-bit):

    magic "FSQ1"
    format_version
    config_len, config JSON  (model config + channel_means + label_names)
    tensor_count
    per tensor: name_len, name UTF-8, ndim, dims..., float32 payload
    history_len, history JSON
    CRC-32 (IEEE, zlib.crc32) over every preceding byte

JSON blocks are canonical (sorted keys, no whitespace) so identical state
serializes to identical bytes.  Writes go to a temp file in the target
directory followed by an atomic rename, so a crashed save never leaves a
partial file at the final path.  Optimizer velocity is deliberately not
stored: a resumed run restarts momentum from zero.
"""

from __future__ import annotations

import json
import os
import struct
import zlib

import numpy as np

from .errors import CompatibilityError, ConfigError, CorruptionError, FormatError
from .model import Model, ModelConfig, expected_param_shapes
from .train import History

MAGIC = b"FSQ1"
FORMAT_VERSION = 1


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(model: Model, history: History, channel_means, label_names, path) -> None:
    """Serialize the model atomically to `path`."""
    means = [float(m) for m in channel_means]
    names = [str(n) for n in label_names]
    if len(means) != 3:
        raise ConfigError(f"channel_means must have 3 entries, got {len(means)}")
    if len(names) != model.config.num_classes:
        raise ConfigError(
            f"{len(names)} label names for {model.config.num_classes} classes"
        )

    config_block = _canonical_json(
        {"model": model.config.to_dict(), "channel_means": means, "label_names": names}
    )
    history_block = _canonical_json(history.to_jsonable())

    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", FORMAT_VERSION)
    out += struct.pack("<I", len(config_block))
    out += config_block
    out += struct.pack("<I", len(model.params))
    for name, tensor in model.params.items():
        encoded = name.encode("utf-8")
        out += struct.pack("<I", len(encoded))
        out += encoded
        out += struct.pack("<I", tensor.ndim)
        for dim in tensor.shape:
            out += struct.pack("<I", dim)
        out += np.ascontiguousarray(tensor, dtype="<f4").tobytes()
    out += struct.pack("<I", len(history_block))
    out += history_block
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)

    directory = os.path.dirname(os.path.abspath(path))
    temp_path = os.path.join(directory, f".{os.path.basename(path)}.tmp")
    try:
        with open(temp_path, "wb") as fh:
            fh.write(out)
        os.replace(temp_path, path)
    finally:
        if os.path.exists(temp_path):
            os.unlink(temp_path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.data):
            raise FormatError(
                f"truncated checkpoint: wanted {count} bytes at offset {self.offset}"
            )
        chunk = self.data[self.offset : self.offset + count]
        self.offset += count
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> tuple[Model, History, tuple[float, float, float], list[str]]:
    """Validate magic, version, CRC, and shapes; reconstruct a frozen model."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) + 12:
        raise FormatError(f"file too short to be a checkpoint ({len(data)} bytes)")
    if data[: len(MAGIC)] != MAGIC:
        raise FormatError(f"bad magic {data[:len(MAGIC)]!r}, expected {MAGIC!r}")
    version = struct.unpack_from("<I", data, len(MAGIC))[0]
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}, reader supports {FORMAT_VERSION}")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    actual_crc = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise CorruptionError(f"CRC mismatch: stored {stored_crc:#010x}, actual {actual_crc:#010x}")

    reader = _Reader(data[: -4])
    reader.take(len(MAGIC) + 4)  # magic + version, already checked
    try:
        config_obj = json.loads(reader.take(reader.u32()).decode("utf-8"))
        config = ModelConfig.from_dict(config_obj["model"])
        means = tuple(float(m) for m in config_obj["channel_means"])
        label_names = [str(n) for n in config_obj["label_names"]]
        tensors: dict[str, np.ndarray] = {}
        for _ in range(reader.u32()):
            name = reader.take(reader.u32()).decode("utf-8")
            dims = tuple(reader.u32() for _ in range(reader.u32()))
            count = int(np.prod(dims)) if dims else 1
            payload = reader.take(4 * count)
            tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(
                np.float32, copy=True
            )
        history = History.from_jsonable(json.loads(reader.take(reader.u32()).decode("utf-8")))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"malformed checkpoint structure: {exc}")
    if reader.offset != len(reader.data):
        raise FormatError(f"{len(reader.data) - reader.offset} unexpected trailing bytes")
    if len(means) != 3:
        raise FormatError(f"channel_means must have 3 entries, got {len(means)}")

    expected = expected_param_shapes(config)
    problems = []
    for name, shape in expected.items():
        if name not in tensors:
            problems.append(f"missing tensor {name!r}")
        elif tensors[name].shape != shape:
            problems.append(f"{name!r} has shape {tensors[name].shape}, config implies {shape}")
    for name in tensors:
        if name not in expected:
            problems.append(f"unexpected tensor {name!r}")
    if len(label_names) != config.num_classes:
        problems.append(f"{len(label_names)} label names for {config.num_classes} classes")
    if problems:
        raise CompatibilityError("; ".join(problems))
    return Model(config, tensors), history, means, label_names
