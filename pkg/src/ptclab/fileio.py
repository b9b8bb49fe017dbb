"""Bit-specified file formats: DCR1 rasters, DCW1 checkpoints, PGM/PPM, CSV.

DCR1: magic "DCR1\\n", ASCII header "<H> <W> <C>\\n", little-endian float32,
planar (channel-major), row-major within a channel.

DCW1: magic "DCW1\\n"; per parameter, in fixed declaration order:
uint32 name length, name bytes (utf-8), uint32 rank, uint32 extents,
little-endian float32 payload. All integers little-endian.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import UsageError

DCR1_MAGIC = b"DCR1\n"
DCW1_MAGIC = b"DCW1\n"


def write_dcr1(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    elif arr.ndim == 3:
        pass
    else:
        raise UsageError(f"DCR1 stores (C,H,W) or (H,W) rasters, got {arr.shape}")
    c, h, w = arr.shape
    with open(path, "wb") as f:
        f.write(DCR1_MAGIC)
        f.write(f"{h} {w} {c}\n".encode("ascii"))
        f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_dcr1(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.read(5) != DCR1_MAGIC:
            raise UsageError(f"{path}: not a DCR1 file")
        header = b""
        while not header.endswith(b"\n"):
            ch = f.read(1)
            if not ch:
                raise UsageError(f"{path}: truncated DCR1 header")
            header += ch
        h, w, c = (int(v) for v in header.split())
        payload = f.read(h * w * c * 4)
        if len(payload) != h * w * c * 4:
            raise UsageError(f"{path}: truncated DCR1 payload")
    arr = np.frombuffer(payload, dtype="<f4").reshape(c, h, w).copy()
    return arr[0] if c == 1 else arr


def write_dcw1(path, named_params: dict) -> None:
    with open(path, "wb") as f:
        f.write(DCW1_MAGIC)
        for name, arr in named_params.items():
            arr = np.asarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            for extent in arr.shape:
                f.write(struct.pack("<I", extent))
            f.write(np.ascontiguousarray(arr).tobytes())


def read_dcw1(path) -> dict:
    out = {}
    with open(path, "rb") as f:
        if f.read(5) != DCW1_MAGIC:
            raise UsageError(f"{path}: not a DCW1 file")
        while True:
            raw = f.read(4)
            if not raw:
                break
            (name_len,) = struct.unpack("<I", raw)
            name = f.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{rank}I", f.read(4 * rank))
            count = int(np.prod(shape)) if rank else 1
            payload = f.read(count * 4)
            if len(payload) != count * 4:
                raise UsageError(f"{path}: truncated payload for {name!r}")
            out[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return out


# ---------------------------------------------------------------------------
# images


def depth_to_pgm_bytes(depth: np.ndarray, max_range: float = 80.0) -> bytes:
    """Grayscale depth: 0 m -> 0, max_range -> 255."""
    h, w = depth.shape
    level = np.floor(np.clip(depth / max_range, 0.0, 1.0) * 255.0 + 0.5)
    body = level.astype(np.uint8).tobytes()
    return f"P5\n{w} {h}\n255\n".encode("ascii") + body


def depth_to_ppm_bytes(depth: np.ndarray, max_range: float = 80.0) -> bytes:
    """Colormapped depth through fixed stops blue(0) -> green(0.5) -> red(1)."""
    h, w = depth.shape
    t = np.clip(depth / max_range, 0.0, 1.0)
    lower = t <= 0.5
    r = np.where(lower, 0.0, 510.0 * (t - 0.5))
    g = np.where(lower, 510.0 * t, 255.0 - 510.0 * (t - 0.5))
    b = np.where(lower, 255.0 - 510.0 * t, 0.0)
    rgb = np.stack([r, g, b], axis=-1)
    body = np.floor(np.clip(rgb, 0.0, 255.0) + 0.5).astype(np.uint8).tobytes()
    return f"P6\n{w} {h}\n255\n".encode("ascii") + body


def write_pgm(path, depth: np.ndarray, max_range: float = 80.0) -> None:
    with open(path, "wb") as f:
        f.write(depth_to_pgm_bytes(depth, max_range))


def write_ppm(path, depth: np.ndarray, max_range: float = 80.0) -> None:
    with open(path, "wb") as f:
        f.write(depth_to_ppm_bytes(depth, max_range))


# ---------------------------------------------------------------------------
# CSV (fixed column order, deterministic float formatting)


def format_cell(v) -> str:
    if isinstance(v, (np.floating, float)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns, rows) -> None:
    lines = [",".join(columns)]
    for row in rows:
        if isinstance(row, dict):
            row = [row[c] for c in columns]
        lines.append(",".join(format_cell(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def read_csv(path):
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    columns = lines[0].split(",")
    rows = [dict(zip(columns, ln.split(","))) for ln in lines[1:]]
    return columns, rows
