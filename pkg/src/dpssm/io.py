"""File formats: PPM/PGM images, the DPMW1 weight container, run configs, reports.

DPMW1 layout::

    b"DPMW1\\n" | u32 LE header length | JSON header | data region

The header maps tensor name -> {dtype: "f32", shape, offset, nbytes}; offsets
are relative to the start of the data region and 64-byte aligned. The reserved
key ``__config__`` holds the model hyper-parameters needed to rebuild a network.
"""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path
from typing import Any, Iterable, Mapping

import jsonschema
import numpy as np

from .numeric import as_image

MAGIC = b"DPMW1\n"
ALIGN = 64
CONFIG_KEY = "__config__"
IMAGE_SUFFIXES = (".ppm", ".pgm")


class FormatError(ValueError):
    """Malformed or foreign file content (bad magic, truncated data, bad header)."""


# --------------------------------------------------------------------------
# PPM / PGM

def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        if buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif buf[pos:pos + 1].isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError("truncated PNM header")
    return buf[start:pos], pos


def read_pnm(path) -> np.ndarray:
    """Read binary P6 (RGB) or P5 (gray) with maxval <= 255 into a (C, H, W) float image."""
    buf = Path(path).read_bytes()
    magic, pos = _read_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: not a binary PPM/PGM (magic {magic[:4]!r})")
    try:
        w, pos = _read_token(buf, pos)
        h, pos = _read_token(buf, pos)
        mx, pos = _read_token(buf, pos)
        w, h, mx = int(w), int(h), int(mx)
    except ValueError as exc:
        raise FormatError(f"{path}: bad PNM header") from exc
    if not 0 < mx <= 255:
        raise FormatError(f"{path}: only 8-bit images are supported (maxval {mx})")
    pos += 1  # single whitespace before raster
    c = 3 if magic == b"P6" else 1
    need = w * h * c
    raster = buf[pos:pos + need]
    if len(raster) != need:
        raise FormatError(f"{path}: expected {need} raster bytes, found {len(raster)}")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(h, w, c)
    return arr.transpose(2, 0, 1).astype(np.float64) / mx


def to_uint8(img) -> np.ndarray:
    return np.round(as_image(img) * 255.0).astype(np.uint8)


def write_pnm(path, img) -> Path:
    """Write a (C, H, W) image in [0, 1]: P6 for 3 channels, P5 for 1."""
    q = to_uint8(img)
    c, h, w = q.shape
    magic = b"P6" if c == 3 else b"P5"
    path = Path(path)
    path.write_bytes(magic + f"\n{w} {h}\n255\n".encode() + q.transpose(1, 2, 0).tobytes())
    return path


def list_images(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"input directory {d} does not exist")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


# --------------------------------------------------------------------------
# DPMW1 weights

def _pad(n: int) -> int:
    return -n % ALIGN


def encode_weights(tensors: Mapping[str, np.ndarray], config: Mapping[str, Any] | None = None) -> bytes:
    header: dict[str, Any] = {}
    blobs = []
    offset = 0
    for name in sorted(tensors):
        if name.startswith("__"):
            raise ValueError(f"tensor names may not start with '__': {name}")
        arr = np.asarray(tensors[name], dtype="<f4", order="C")  # keeps 0-d shapes
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"tensor {name} has non-finite values")
        raw = arr.tobytes()
        header[name] = {"dtype": "f32", "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        blobs.append(raw + b"\0" * _pad(len(raw)))
        offset += len(raw) + _pad(len(raw))
    if config is not None:
        header[CONFIG_KEY] = dict(config)
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<I", len(hdr)) + hdr + b"".join(blobs)


def decode_weights(buf: bytes) -> tuple[dict[str, np.ndarray], dict | None]:
    if buf[:len(MAGIC)] != MAGIC:
        raise FormatError(f"bad magic {buf[:len(MAGIC)]!r}, expected {MAGIC!r}")
    pos = len(MAGIC)
    if len(buf) < pos + 4:
        raise FormatError("truncated header length")
    (hlen,) = struct.unpack("<I", buf[pos:pos + 4])
    pos += 4
    try:
        header = json.loads(buf[pos:pos + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError("header is not valid JSON") from exc
    if not isinstance(header, dict):
        raise FormatError("header must be a JSON object")
    data = buf[pos + hlen:]
    config = header.pop(CONFIG_KEY, None)
    tensors = {}
    end = 0
    for name, entry in sorted(header.items(), key=lambda kv: kv[1].get("offset", -1)):
        try:
            shape, off, nbytes = tuple(entry["shape"]), int(entry["offset"]), int(entry["nbytes"])
            dtype = entry["dtype"]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad header entry for {name}") from exc
        if dtype != "f32":
            raise FormatError(f"{name}: unsupported dtype {dtype!r}")
        if nbytes != 4 * int(np.prod(shape, dtype=np.int64)):
            raise FormatError(f"{name}: nbytes {nbytes} does not match shape {list(shape)}")
        if off % ALIGN or off < end:
            raise FormatError(f"{name}: offset {off} misaligned or overlapping")
        if off + nbytes > len(data):
            raise FormatError(f"{name}: data truncated")
        tensors[name] = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=off).reshape(shape).astype(np.float64)
        end = off + nbytes
    return tensors, config


def save_weights(path, tensors: Mapping[str, np.ndarray], config: Mapping[str, Any] | None = None) -> Path:
    path = Path(path)
    path.write_bytes(encode_weights(tensors, config))
    return path


def load_weights(path) -> tuple[dict[str, np.ndarray], dict | None]:
    return decode_weights(Path(path).read_bytes())


# --------------------------------------------------------------------------
# run config

_POS_INT = {"type": "integer", "minimum": 1}
_RECIPE = {"type": "object", "required": ["label"], "properties": {"label": {"type": "string"}}}

RUN_CONFIG_SCHEMA: dict = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "widths": {"type": "array", "items": _POS_INT, "minItems": 3, "maxItems": 3},
        "blocks_per_stage": _POS_INT,
        "state_dim": _POS_INT,
        "d_emb": _POS_INT,
        "extractor_width": _POS_INT,
        "theta": {"type": "number", "minimum": 0, "maximum": 1},
        "lambdas": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 3, "maxItems": 3},
        "seed": {"type": "integer", "minimum": 0},
        "data_seed": {"type": "integer", "minimum": 0},
        "count": {"type": "integer", "minimum": 0},
        "recipes": {"type": "array", "items": _RECIPE, "minItems": 1},
        "paths": {"type": "object", "additionalProperties": {"type": "string"}},
    },
}

DEFAULT_RUN_CONFIG: dict = {
    "widths": [8, 16, 32],
    "blocks_per_stage": 1,
    "state_dim": 8,
    "d_emb": 512,
    "extractor_width": 8,
    "theta": 0.7,
    "lambdas": [1.0, 0.5, 0.001],
    "seed": 0,
    "data_seed": 0,
}


class ConfigError(ValueError):
    pass


def validate_config(cfg: Any) -> dict:
    try:
        jsonschema.validate(cfg, RUN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from exc
    return {**DEFAULT_RUN_CONFIG, **cfg}


def load_config(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return validate_config(cfg)


# --------------------------------------------------------------------------
# reports

def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def write_csv(path, rows: Iterable[Mapping[str, Any]], columns: Iterable[str]) -> Path:
    path = Path(path)
    columns = list(columns)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.9g}" if isinstance(v, float) else v) for k, v in row.items()})
    return path


def read_csv(path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
