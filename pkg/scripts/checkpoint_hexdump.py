"""Annotated hex dump of a checkpoint file.

Walks the container field by field and prints one row per field with its
offset, size, raw bytes (truncated), and decoded value. Debugging aid and
the source of the worked example in docs/checkpoint_format.md.
"""

import argparse
import json
import struct
import zlib


def _hex(chunk: bytes, limit: int = 16) -> str:
    text = " ".join(f"{b:02x}" for b in chunk[:limit])
    return text + (" .." if len(chunk) > limit else "")


class Walker:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, count: int) -> tuple[int, bytes]:
        if self.pos + count > len(self.blob):
            raise SystemExit(f"truncated file: wanted {count} bytes at offset {self.pos}")
        offset, chunk = self.pos, self.blob[self.pos : self.pos + count]
        self.pos += count
        return offset, chunk


def _row(offset: int, size: int, field: str, detail: str) -> None:
    print(f"{offset:#010x} {size:>8}  {field:<22} {detail}")


def dump(path: str, detailed_tensors: int) -> int:
    with open(path, "rb") as fh:
        blob = fh.read()
    walker = Walker(blob)

    offset, magic = walker.take(4)
    _row(offset, 4, "magic", f"{_hex(magic)}  {magic!r}")
    offset, raw = walker.take(4)
    _row(offset, 4, "format_version", f"{_hex(raw)}  {struct.unpack('<I', raw)[0]}")

    offset, raw = walker.take(4)
    config_len = struct.unpack("<I", raw)[0]
    _row(offset, 4, "config_len", f"{_hex(raw)}  {config_len}")
    offset, config_raw = walker.take(config_len)
    config = json.loads(config_raw)
    preview = config_raw[:48].decode("utf-8", "replace")
    _row(offset, config_len, "config_json", f'{preview}{"..." if config_len > 48 else ""}')

    offset, raw = walker.take(4)
    tensor_count = struct.unpack("<I", raw)[0]
    _row(offset, 4, "tensor_count", f"{_hex(raw)}  {tensor_count}")

    for index in range(tensor_count):
        start = walker.pos
        offset, raw = walker.take(4)
        name_len = struct.unpack("<I", raw)[0]
        name_offset, name_raw = walker.take(name_len)
        name = name_raw.decode("utf-8")
        ndim_offset, ndim_raw = walker.take(4)
        ndim = struct.unpack("<I", ndim_raw)[0]
        dims = []
        dim_rows = []
        for _ in range(ndim):
            dim_offset, dim_raw = walker.take(4)
            dims.append(struct.unpack("<I", dim_raw)[0])
            dim_rows.append((dim_offset, dim_raw))
        payload_len = 4
        for dim in dims:
            payload_len *= dim
        payload_offset, payload = walker.take(payload_len)
        if index < detailed_tensors:
            _row(offset, 4, "  name_len", f"{_hex(raw)}  {name_len}")
            _row(name_offset, name_len, "  name", repr(name))
            _row(ndim_offset, 4, "  ndim", f"{_hex(ndim_raw)}  {ndim}")
            for (dim_offset, dim_raw), dim in zip(dim_rows, dims):
                _row(dim_offset, 4, "  dim", f"{_hex(dim_raw)}  {dim}")
            first = struct.unpack("<2f", payload[:8]) if payload_len >= 8 else ()
            _row(payload_offset, payload_len, "  payload",
                 f"{_hex(payload, 8)}  float32 {list(dims)}, starts {[round(v, 5) for v in first]}")
        else:
            total = walker.pos - start
            _row(start, total, f"tensor[{index}]", f"{name} float32 {list(dims)}")

    offset, raw = walker.take(4)
    history_len = struct.unpack("<I", raw)[0]
    _row(offset, 4, "history_len", f"{_hex(raw)}  {history_len}")
    offset, history_raw = walker.take(history_len)
    preview = history_raw[:48].decode("utf-8", "replace")
    _row(offset, history_len, "history_json", f'{preview}{"..." if history_len > 48 else ""}')

    offset, raw = walker.take(4)
    stored = struct.unpack("<I", raw)[0]
    actual = zlib.crc32(blob[:-4]) & 0xFFFFFFFF
    verdict = "ok" if stored == actual else f"MISMATCH (actual {actual:#010x})"
    _row(offset, 4, "crc32", f"{_hex(raw)}  {stored:#010x}  {verdict}")

    if walker.pos != len(blob):
        print(f"warning: {len(blob) - walker.pos} trailing bytes after the CRC")
        return 1
    return 0 if stored == actual else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("checkpoint", help="path to a .fsq checkpoint file")
    parser.add_argument(
        "--detail", type=int, default=1, metavar="N",
        help="show full field breakdown for the first N tensors (default 1)",
    )
    args = parser.parse_args(argv)
    return dump(args.checkpoint, args.detail)


if __name__ == "__main__":
    raise SystemExit(main())
