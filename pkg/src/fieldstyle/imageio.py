"""PNG, raw float and optical-flow file helpers."""
from __future__ import annotations

import struct

import numpy as np
from PIL import Image

FLOW_MAGIC = b"FLW1"


def to_uint8(img):
    return np.round(np.clip(np.asarray(img, float), 0, 1) * 255).astype(np.uint8)


def write_png(path, img):
    """Write an (H, W), (H, W, 1) or (H, W, 3) array in [0, 1] (or uint8) as 8-bit PNG."""
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = to_uint8(arr)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    Image.fromarray(arr).save(path, format="PNG", optimize=False)


def read_png(path, size=None):
    """Float RGB image in [0, 1]; with ``size`` centre-crop to square then resize."""
    img = Image.open(path).convert("RGB")
    if size is not None:
        w, h = img.size
        s = min(w, h)
        left, top = (w - s) // 2, (h - s) // 2
        img = img.crop((left, top, left + s, top + s))
        if s != size:
            img = img.resize((size, size), Image.BILINEAR)
    return np.asarray(img, np.float64) / 255.0


def read_mask(path):
    arr = np.asarray(Image.open(path).convert("L"))
    return arr > 127


def write_flow(path, flow):
    """16-byte header (magic, width, height, reserved) then little-endian float32 (u, v) pairs."""
    flow = np.asarray(flow, "<f4")
    h, w, _ = flow.shape
    with open(path, "wb") as fh:
        fh.write(FLOW_MAGIC + struct.pack("<III", w, h, 0))
        fh.write(flow.tobytes())


def read_flow(path):
    with open(path, "rb") as fh:
        head = fh.read(16)
        if head[:4] != FLOW_MAGIC:
            raise ValueError(f"{path}: not a flow file")
        w, h, _ = struct.unpack("<III", head[4:])
        data = np.frombuffer(fh.read(), "<f4")
    return data.reshape(h, w, 2).astype(np.float64)


def write_f32(path, arr):
    np.ascontiguousarray(arr, "<f4").tofile(path)


def read_f32(path, shape):
    return np.fromfile(path, "<f4").reshape(shape)
