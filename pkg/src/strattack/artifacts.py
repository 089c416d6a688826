"""On-disk artifacts: raw perturbation dumps, PGM images and group heatmaps."""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import FormatError
from .grouping import Dims, GroupSpec, _flat


def write_delta(path, delta: np.ndarray) -> None:
    """Little-endian f64 dump at ``path`` plus a ``.json`` sidecar giving the dims."""
    delta = np.asarray(delta, dtype=np.float64)
    if delta.ndim != 3:
        raise FormatError(f"expected an (H, W, C) array, got shape {delta.shape}")
    h, w, c = delta.shape
    with open(path, "wb") as f:
        f.write(delta.astype("<f8").tobytes())
    with open(_sidecar(path), "w") as f:
        json.dump({"dtype": "<f8", "width": w, "height": h, "channels": c}, f)


def read_delta(path) -> np.ndarray:
    try:
        with open(_sidecar(path)) as f:
            meta = json.load(f)
        dims = Dims(int(meta["width"]), int(meta["height"]), int(meta["channels"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"{_sidecar(path)}: unreadable sidecar ({exc})") from exc
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) != 8 * dims.n:
        raise FormatError(f"{path}: {len(raw)} bytes, sidecar implies {8 * dims.n}")
    return np.frombuffer(raw, dtype="<f8").reshape(dims.shape).copy()


def _sidecar(path) -> str:
    root, _ = os.path.splitext(os.fspath(path))
    return root + ".json"


def write_pgm(path, image: np.ndarray) -> None:
    """Binary greyscale PGM (P5, maxval 255) from a 2-D uint8 array."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise FormatError("PGM images must be 2-D")
    rows, cols = image.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        f.write(image.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos)
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5" or tokens[3] != b"255":
        raise FormatError(f"{path}: only P5 images with maxval 255 are supported")
    cols, rows = int(tokens[1]), int(tokens[2])
    pixels = raw[pos + 1 :]
    if len(pixels) != rows * cols:
        raise FormatError(f"{path}: expected {rows * cols} pixels, found {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(rows, cols).copy()


def group_heatmap(delta, spec: GroupSpec) -> np.ndarray:
    """Mean ``|delta|`` per group as a ``Q x P`` uint8 image, brightest group at 255.

    Row ``q``, column ``p`` holds window ``(p, q)``; an all-zero perturbation
    gives an all-black image.
    """
    mean_abs = np.abs(_flat(delta, spec.dims))[spec.index].mean(axis=1)
    peak = mean_abs.max(initial=0.0)
    if peak == 0:
        return np.zeros((spec.Q, spec.P), dtype=np.uint8)
    scaled = np.rint(255.0 * mean_abs / peak)
    return scaled.astype(np.uint8).reshape(spec.Q, spec.P)
