"""Netpbm export of frames (P6) and class maps (P5)."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def frame_to_bytes(frame: np.ndarray) -> np.ndarray:
    """(3, H, W) in [-1, 1] -> (H, W, 3) uint8, linear map onto 0..255."""
    v = np.clip((np.asarray(frame, dtype=np.float64) + 1.0) * 127.5, 0.0, 255.0)
    return np.rint(v).astype(np.uint8).transpose(1, 2, 0)


def write_ppm(path: str | Path, frame: np.ndarray) -> None:
    img = frame_to_bytes(frame)
    h, w, _ = img.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def write_pgm(path: str | Path, labels: np.ndarray) -> None:
    img = np.asarray(labels, dtype=np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def _read_netpbm(path: str | Path, magic: bytes) -> tuple[np.ndarray, int, int]:
    raw = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != magic:
        raise ValueError(f"{path}: expected {magic.decode()} header, found {fields[0]!r}")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported")
    return np.frombuffer(raw[pos + 1:], dtype=np.uint8), w, h


def read_ppm(path: str | Path) -> np.ndarray:
    data, w, h = _read_netpbm(path, b"P6")
    return data.reshape(h, w, 3)


def read_pgm(path: str | Path) -> np.ndarray:
    data, w, h = _read_netpbm(path, b"P5")
    return data.reshape(h, w)


def bytes_to_frame(img: np.ndarray) -> np.ndarray:
    """(H, W, 3) uint8 -> (3, H, W) float32 in [-1, 1]; inverse of :func:`frame_to_bytes`."""
    return (np.asarray(img, dtype=np.float32).transpose(2, 0, 1) / 127.5 - 1.0).astype(np.float32)


def read_ppm_frame(path: str | Path) -> np.ndarray:
    return bytes_to_frame(read_ppm(path))
