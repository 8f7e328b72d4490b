"""Depth raster file I/O and normalization into relative depth.

Three on-disk formats are supported:

* PFM    -- grayscale Portable FloatMap: a ``Pf`` header line, a
  ``width height`` line, a scale line whose sign gives the byte order
  (negative means little-endian), then float32 samples stored bottom row
  first. The scale magnitude is parsed but not applied.
* PNG16  -- single-channel 16-bit PNG, no alpha; integers map to [0, 1]
  as value / 65535.
* RAWF32 -- a 16-byte header (magic ``DPT1``, little-endian uint32 width
  and height, 4 reserved zero bytes) followed by row-major, top-to-bottom,
  little-endian float32 samples.

Depth networks usually emit disparity (inverse depth); ``disparity_to_depth``
turns that into relative depth via an epsilon-guarded reciprocal, and
``normalize_depth`` rescales any depth raster so a percentile-clipped maximum
lands at ``target_max``. That keeps one scattering-coefficient range
meaningful across scenes of different scale.
"""

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DegenerateDepthError, DepthFormatError, ParameterError, RasterError

RAWF32_MAGIC = b"DPT1"
RAWF32_HEADER_SIZE = 16

KIND_BY_EXTENSION = {".pfm": "pfm", ".png": "png16", ".f32": "rawf32"}

_PNG16_MODES = ("I;16", "I;16L", "I;16B", "I;16N", "I")


@dataclass(frozen=True)
class DepthSource:
    """A depth file plus how to read it.

    ``kind`` is one of {"pfm", "png16", "rawf32"}; when None it is inferred
    from the file extension. ``interpretation`` says whether samples are
    depth or disparity.
    """

    path: Path
    kind: str | None = None
    interpretation: str = "depth"

    def __post_init__(self) -> None:
        object.__setattr__(self, "path", Path(self.path))
        if self.kind is not None and self.kind not in ("pfm", "png16", "rawf32"):
            raise ParameterError(f"unknown depth kind {self.kind!r}")
        if self.interpretation not in ("depth", "disparity"):
            raise ParameterError(
                f"interpretation must be 'depth' or 'disparity', got {self.interpretation!r}"
            )

    def resolved_kind(self) -> str:
        if self.kind is not None:
            return self.kind
        ext = self.path.suffix.lower()
        try:
            return KIND_BY_EXTENSION[ext]
        except KeyError:
            raise DepthFormatError(
                f"cannot infer depth format from extension {ext!r} of {self.path}"
            ) from None


@dataclass(frozen=True)
class NormalizationPolicy:
    """How raw network output becomes relative depth in [0, target_max]."""

    clip_percentile: float = 99.9
    target_max: float = 1.0
    disparity_epsilon: float = 1e-6

    def __post_init__(self) -> None:
        if not 50.0 < self.clip_percentile <= 100.0:
            raise ParameterError(
                f"clip_percentile must lie in (50, 100], got {self.clip_percentile!r}"
            )
        if not self.target_max > 0.0:
            raise ParameterError(f"target_max must be > 0, got {self.target_max!r}")
        if not self.disparity_epsilon > 0.0:
            raise ParameterError(
                f"disparity_epsilon must be > 0, got {self.disparity_epsilon!r}"
            )


def _check_finite(arr: np.ndarray, path, data_offset: int, file_order_index) -> None:
    """Reject non-finite samples, reporting the byte offset in the file.

    ``file_order_index`` maps a flat raster index to the sample's position in
    file storage order (PFM stores rows bottom-up, so the two differ).
    """
    bad = np.flatnonzero(~np.isfinite(arr.ravel()))
    if bad.size:
        idx = int(bad[0])
        offset = data_offset + 4 * file_order_index(idx)
        raise DepthFormatError(
            f"{path}: non-finite sample at byte offset {offset}"
        )


def read_pfm(path) -> np.ndarray:
    """Read a grayscale PFM file into a float64 (H, W) raster, top row first."""
    path = Path(path)
    data = path.read_bytes()

    lines = []
    pos = 0
    for _ in range(3):
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise DepthFormatError(f"{path}: truncated PFM header at byte offset {len(data)}")
        lines.append(data[pos:nl])
        pos = nl + 1

    magic = lines[0].strip()
    if magic == b"PF":
        raise DepthFormatError(f"{path}: color PFM ('PF') is not supported, expected grayscale 'Pf'")
    if magic != b"Pf":
        raise DepthFormatError(f"{path}: bad PFM magic {magic!r} at byte offset 0")

    dims = lines[1].split()
    if len(dims) != 2:
        raise DepthFormatError(f"{path}: malformed PFM dimension line {lines[1]!r}")
    try:
        width, height = int(dims[0]), int(dims[1])
    except ValueError:
        raise DepthFormatError(f"{path}: malformed PFM dimension line {lines[1]!r}") from None
    if width < 1 or height < 1:
        raise DepthFormatError(f"{path}: invalid PFM dimensions {width}x{height}")
    if width * height > 2**31:
        raise DepthFormatError(f"{path}: PFM dimensions {width}x{height} overflow")

    try:
        scale = float(lines[2].strip())
    except ValueError:
        raise DepthFormatError(f"{path}: malformed PFM scale line {lines[2]!r}") from None
    if scale == 0.0:
        raise DepthFormatError(f"{path}: PFM scale must be non-zero")
    endian = "<" if scale < 0 else ">"

    expected = width * height * 4
    payload = data[pos:]
    if len(payload) != expected:
        raise DepthFormatError(
            f"{path}: expected {expected} sample bytes at byte offset {pos}, found {len(payload)}"
        )
    samples = np.frombuffer(payload, dtype=endian + "f4").reshape(height, width)
    raster = np.ascontiguousarray(samples[::-1], dtype=np.float64)
    # raster row r sits at file row (height-1-r)
    _check_finite(
        raster, path, pos,
        lambda i, w=width, h=height: (h - 1 - i // w) * w + i % w,
    )
    return raster


def write_pfm(path, depth, little_endian: bool = True) -> None:
    """Write an (H, W) raster as grayscale PFM (float32, bottom row first)."""
    arr = np.asarray(depth, dtype=np.float32)
    if arr.ndim != 2:
        raise RasterError(f"depth raster must have shape (H, W), got {arr.shape}")
    height, width = arr.shape
    header = f"Pf\n{width} {height}\n{'-1.0' if little_endian else '1.0'}\n".encode("ascii")
    body = np.ascontiguousarray(arr[::-1]).astype("<f4" if little_endian else ">f4").tobytes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + body)


def read_rawf32(path) -> np.ndarray:
    """Read a RAWF32 file into a float64 (H, W) raster."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < RAWF32_HEADER_SIZE:
        raise DepthFormatError(f"{path}: truncated RAWF32 header at byte offset {len(data)}")
    if data[:4] != RAWF32_MAGIC:
        raise DepthFormatError(f"{path}: bad magic {data[:4]!r} at byte offset 0")
    width, height = struct.unpack_from("<II", data, 4)
    if data[12:16] != b"\x00\x00\x00\x00":
        raise DepthFormatError(f"{path}: reserved bytes not zero at byte offset 12")
    if width < 1 or height < 1:
        raise DepthFormatError(f"{path}: invalid RAWF32 dimensions {width}x{height}")
    if width * height > 2**31:
        raise DepthFormatError(f"{path}: RAWF32 dimensions {width}x{height} overflow")
    expected = RAWF32_HEADER_SIZE + width * height * 4
    if len(data) != expected:
        raise DepthFormatError(
            f"{path}: expected {expected - RAWF32_HEADER_SIZE} sample bytes "
            f"at byte offset {RAWF32_HEADER_SIZE}, found {len(data) - RAWF32_HEADER_SIZE}"
        )
    samples = np.frombuffer(data, dtype="<f4", offset=RAWF32_HEADER_SIZE).reshape(height, width)
    raster = np.asarray(samples, dtype=np.float64)
    _check_finite(raster, path, RAWF32_HEADER_SIZE, lambda i: i)
    return raster


def write_rawf32(path, depth) -> None:
    """Write an (H, W) raster as RAWF32 (float32, row-major, top row first)."""
    arr = np.asarray(depth, dtype=np.float32)
    if arr.ndim != 2:
        raise RasterError(f"depth raster must have shape (H, W), got {arr.shape}")
    height, width = arr.shape
    header = RAWF32_MAGIC + struct.pack("<II", width, height) + b"\x00\x00\x00\x00"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_png16(path) -> np.ndarray:
    """Read a single-channel 16-bit PNG as fixed-point depth, value / 65535."""
    path = Path(path)
    with Image.open(path) as img:
        if img.format != "PNG":
            raise DepthFormatError(f"{path}: not a PNG file (format {img.format!r})")
        if img.mode not in _PNG16_MODES:
            raise DepthFormatError(
                f"{path}: expected a single-channel 16-bit PNG, got mode {img.mode!r}"
            )
        arr = np.asarray(img, dtype=np.int64)
    if arr.ndim != 2:
        raise DepthFormatError(f"{path}: expected a single channel, got shape {arr.shape}")
    if arr.min() < 0 or arr.max() > 65535:
        raise DepthFormatError(f"{path}: sample values fall outside the 16-bit range")
    return arr.astype(np.float64) / 65535.0


def read_depth(source) -> np.ndarray:
    """Read a depth/disparity raster per its format. Values are raw (unnormalized)."""
    src = source if isinstance(source, DepthSource) else DepthSource(Path(source))
    kind = src.resolved_kind()
    if kind == "pfm":
        return read_pfm(src.path)
    if kind == "png16":
        return read_png16(src.path)
    return read_rawf32(src.path)


def _check_depth_values(arr, name: str) -> np.ndarray:
    d = np.asarray(arr, dtype=np.float64)
    if d.ndim != 2:
        raise RasterError(f"{name} must have shape (H, W), got {d.shape}")
    bad = np.flatnonzero(~np.isfinite(d.ravel()))
    if bad.size:
        idx = int(bad[0])
        coord = (idx // d.shape[1], idx % d.shape[1])
        raise RasterError(f"non-finite {name} sample at (row, col) {coord}")
    bad = np.flatnonzero(d.ravel() < 0.0)
    if bad.size:
        idx = int(bad[0])
        coord = (idx // d.shape[1], idx % d.shape[1])
        raise RasterError(f"negative {name} sample at (row, col) {coord}")
    return d


def normalize_depth(depth, policy: NormalizationPolicy = NormalizationPolicy()) -> np.ndarray:
    """Clamp at the clip percentile and rescale so that value maps to target_max.

    The percentile uses the nearest-rank method (rank = ceil(p/100 * n) of the
    ascending sort), which is exactly specifiable with no interpolation
    ambiguity. The default 99.9 absorbs sky-pixel outliers that would
    otherwise compress real scene depth toward zero.
    """
    d = _check_depth_values(depth, "depth")
    n = d.size
    if n == 0:
        raise RasterError("depth raster is empty")
    rank = max(1, math.ceil(policy.clip_percentile / 100.0 * n))
    ceiling = float(np.partition(d.ravel(), rank - 1)[rank - 1])
    if ceiling <= 0.0:
        raise DegenerateDepthError(
            "degenerate depth raster: the "
            f"p{policy.clip_percentile:g} percentile is zero, haze density would be undefined"
        )
    return np.minimum(d, ceiling) / ceiling * policy.target_max


def invert_disparity(raw, epsilon: float) -> np.ndarray:
    """Reciprocal with an epsilon floor; disparity 0 maps to 1/epsilon."""
    if not epsilon > 0.0:
        raise ParameterError(f"disparity epsilon must be > 0, got {epsilon!r}")
    d = _check_depth_values(raw, "disparity")
    return 1.0 / np.maximum(d, epsilon)


def disparity_to_depth(raw, policy: NormalizationPolicy = NormalizationPolicy()) -> np.ndarray:
    """Turn network disparity into normalized relative depth."""
    return normalize_depth(invert_disparity(raw, policy.disparity_epsilon), policy)


def load_depth(source, policy: NormalizationPolicy = NormalizationPolicy()) -> np.ndarray:
    """Read a depth source and normalize it into [0, target_max]."""
    src = source if isinstance(source, DepthSource) else DepthSource(Path(source))
    raw = read_depth(src)
    if src.interpretation == "disparity":
        return disparity_to_depth(raw, policy)
    return normalize_depth(raw, policy)
