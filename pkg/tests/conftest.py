"""Shared fixtures: tiny synthetic datasets and tree hashing."""

import hashlib
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest
from PIL import Image

from hazeforge import write_pfm, write_png, write_rawf32


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def make_image(rng, height=16, width=12):
    return rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)


def make_depth(rng, height=16, width=12, low=0.05, high=1.0):
    # float32 so file round trips are exact
    return rng.uniform(low, high, size=(height, width)).astype(np.float32)


def write_depth_file(path, depth, fmt):
    path = Path(path)
    if fmt == "pfm":
        write_pfm(path, depth)
    elif fmt == "rawf32":
        write_rawf32(path, depth)
    elif fmt == "png16":
        arr = np.clip(np.asarray(depth, dtype=np.float64), 0.0, 1.0)
        Image.fromarray((arr * 65535.0).astype(np.uint16)).save(path)
    else:
        raise ValueError(fmt)


DEPTH_SUFFIX = {"pfm": ".pfm", "rawf32": ".f32", "png16": ".png"}


@pytest.fixture
def build_dataset(tmp_path, rng):
    """Factory writing a small image/depth/label tree; returns its paths."""

    def _build(names=("a.png", "b.png", "c.png", "d.png"), size=(16, 12),
               depth_format="pfm", with_labels=True, root="data",
               missing_depth=(), constant_depth=None):
        base = tmp_path / root
        images = base / "images"
        depths = base / "depths"
        labels = base / "labels" if with_labels else None
        height, width = size
        for name in names:
            rel = Path(name)
            image_path = images / rel
            image_path.parent.mkdir(parents=True, exist_ok=True)
            write_png(make_image(rng, height, width), image_path)
            if name not in missing_depth:
                if constant_depth is not None:
                    depth = np.full((height, width), constant_depth, dtype=np.float32)
                else:
                    depth = make_depth(rng, height, width)
                depth_path = depths / rel.with_suffix(DEPTH_SUFFIX[depth_format])
                depth_path.parent.mkdir(parents=True, exist_ok=True)
                write_depth_file(depth_path, depth, depth_format)
            if with_labels:
                label_path = labels / rel.with_suffix(".txt")
                label_path.parent.mkdir(parents=True, exist_ok=True)
                label_path.write_text("0 0.5 0.5 0.25 0.25\n1 0.2 0.3 0.1 0.1\n")
        return SimpleNamespace(root=base, images=images, depths=depths, labels=labels)

    return _build


def tree_hash(root):
    """SHA-256 over (relative path, bytes) of every file under root, sorted."""
    root = Path(root)
    digest = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        digest.update(path.relative_to(root).as_posix().encode())
        digest.update(b"\x00")
        digest.update(path.read_bytes())
        digest.update(b"\x01")
    return digest.hexdigest()
