"""Image loading and deterministic PNG encoding.

A single encode path is shared by the batch writer and the streaming
service, so the same pixels always become the same bytes.
"""

import io
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import RasterError


def load_image(path) -> np.ndarray:
    """Load an image file as an RGB uint8 array of shape (H, W, 3)."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def to_working(image) -> np.ndarray:
    """Promote a storage-form image to the float64 working form."""
    return np.asarray(image, dtype=np.float64)


def encode_png(image) -> bytes:
    """Encode an (H, W, 3) uint8 array as PNG bytes."""
    arr = np.ascontiguousarray(image)
    if arr.dtype != np.uint8 or arr.ndim != 3 or arr.shape[2] != 3:
        raise RasterError(
            f"expected an (H, W, 3) uint8 image, got dtype {arr.dtype} shape {arr.shape}"
        )
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def write_png(image, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_png(image))


def clean_png_bytes(path) -> bytes:
    """PNG bytes for a clean source: verbatim for .png files, re-encoded otherwise."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        return path.read_bytes()
    return encode_png(load_image(path))
