"""Per-pixel haze synthesis math.

A hazy observation is a pixelwise convex blend of the clean radiance and a
global airlight, weighted by the transmission of the atmospheric path:

    hazy = clean * t + airlight * (1 - t),      t = exp(-beta * depth)

Images move between a uint8 storage form and a float64 working form in
[0, 255]; all arithmetic runs in float64. Everything here is a pure function
of its inputs and safe to call concurrently.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, RasterError
from .seeding import unit_uniform

# Transmission guard for the analytic inverse; below this, inversion amplifies
# quantization noise past what the round-trip tolerance allows.
T_FLOOR = 0.05

# Draw range for the flat-transmission baseline; spans visibly light to heavy
# haze. Tunable, not physically derived.
BASELINE_T_RANGE = (0.3, 0.8)

# Smallest positive double; exp() underflows to 0.0 for huge beta*depth and
# this floor keeps transmission strictly positive.
_T_TINY = 5e-324


@dataclass(frozen=True)
class HazeParams:
    """Scattering coefficient (per depth unit) and global airlight intensity.

    The airlight is a single scalar applied identically to all three
    channels.
    """

    beta: float
    airlight: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.beta) and self.beta > 0.0):
            raise ParameterError(f"beta must be a finite value > 0, got {self.beta!r}")
        if not (np.isfinite(self.airlight) and 0.0 <= self.airlight <= 255.0):
            raise ParameterError(
                f"airlight must lie in [0, 255], got {self.airlight!r}"
            )


def _first_bad(mask: np.ndarray) -> tuple:
    return tuple(int(v) for v in np.argwhere(mask)[0])


def _as_image(arr, name: str) -> np.ndarray:
    out = np.asarray(arr, dtype=np.float64)
    if out.ndim != 3 or out.shape[2] != 3:
        raise RasterError(f"{name} must have shape (H, W, 3), got {out.shape}")
    bad = ~np.isfinite(out)
    if bad.any():
        raise RasterError(f"non-finite sample in {name} at (row, col, channel) {_first_bad(bad)}")
    return out


def _as_plane(arr, name: str) -> np.ndarray:
    out = np.asarray(arr, dtype=np.float64)
    if out.ndim != 2:
        raise RasterError(f"{name} must have shape (H, W), got {out.shape}")
    return out


def depth_to_transmission(depth, beta: float) -> np.ndarray:
    """Map a depth raster to transmission, t = exp(-beta * depth).

    Depth samples must be finite and >= 0; beta must be > 0. The result lies
    in (0, 1] (underflow is floored at the smallest positive double).
    """
    if not (np.isfinite(beta) and beta > 0.0):
        raise ParameterError(f"beta must be a finite value > 0, got {beta!r}")
    d = _as_plane(depth, "depth")
    bad = ~np.isfinite(d)
    if bad.any():
        raise RasterError(f"non-finite depth sample at (row, col) {_first_bad(bad)}")
    bad = d < 0.0
    if bad.any():
        raise RasterError(f"negative depth sample at (row, col) {_first_bad(bad)}")
    return np.maximum(np.exp(-beta * d), _T_TINY)


def _check_transmission(t: np.ndarray, shape: tuple) -> None:
    if t.shape != shape[:2]:
        raise RasterError(
            f"transmission shape {t.shape} does not match image shape {shape}"
        )
    bad = ~np.isfinite(t)
    if bad.any():
        raise RasterError(f"non-finite transmission at (row, col) {_first_bad(bad)}")
    bad = (t < 0.0) | (t > 1.0)
    if bad.any():
        raise RasterError(
            f"transmission outside [0, 1] at (row, col) {_first_bad(bad)}"
        )


def compose_haze(clean, transmission, params: HazeParams) -> np.ndarray:
    """Blend clean radiance toward the airlight: hazy = clean*t + A*(1-t).

    Works on a working-form image; no quantization happens here. Each output
    sample is a convex combination of the clean sample and the airlight, so
    it stays between the two.
    """
    image = _as_image(clean, "clean image")
    t = _as_plane(transmission, "transmission")
    _check_transmission(t, image.shape)
    t3 = t[:, :, np.newaxis]
    hazy = image * t3 + params.airlight * (1.0 - t3)
    # The convex bound can overshoot by an ulp in floating point; pin it.
    return np.clip(hazy, np.minimum(image, params.airlight), np.maximum(image, params.airlight))


def invert_haze(hazy, transmission, params: HazeParams) -> np.ndarray:
    """Analytic inverse of the blend: clean = (hazy - A)/t + A.

    Exists as a round-trip oracle, not a dehazing feature. Transmissions
    below T_FLOOR are rejected because the division amplifies noise.
    """
    image = _as_image(hazy, "hazy image")
    t = _as_plane(transmission, "transmission")
    _check_transmission(t, image.shape)
    bad = t < T_FLOOR
    if bad.any():
        raise RasterError(
            f"transmission below t_floor={T_FLOOR} at (row, col) {_first_bad(bad)}"
        )
    t3 = t[:, :, np.newaxis]
    # algebraically (hazy - A)/t + A; this form makes t == 1 an exact identity
    return (image - params.airlight * (1.0 - t3)) / t3


def quantize(image) -> np.ndarray:
    """Clamp a working-form image to [0, 255] and round to uint8.

    Rounding is half-away-from-zero, so the rule is platform-independent
    (numpy's own round() rounds half to even).
    """
    arr = np.asarray(image, dtype=np.float64)
    bad = ~np.isfinite(arr)
    if bad.any():
        raise RasterError(f"non-finite sample at {_first_bad(bad)}")
    clipped = np.clip(arr, 0.0, 255.0)
    floor = np.floor(clipped)
    rounded = np.where(clipped - floor >= 0.5, floor + 1.0, floor)
    return rounded.astype(np.uint8)


def constant_transmission_haze(clean, t: float, airlight: float) -> np.ndarray:
    """Apply the blend with one transmission value broadcast to all pixels."""
    image = _as_image(clean, "clean image")
    t_map = np.full(image.shape[:2], float(t), dtype=np.float64)
    return compose_haze(image, t_map, HazeParams(beta=1.0, airlight=airlight))


def random_transmission_baseline(clean, params: HazeParams, rng_seed: int):
    """Depth-free comparator: one transmission drawn from BASELINE_T_RANGE.

    The draw comes from the seeded generator, so the output is a pure
    function of (clean, params, rng_seed). Returns (hazy working-form image,
    drawn transmission); the transmission is reported so synthesis stays
    auditable.
    """
    lo, hi = BASELINE_T_RANGE
    t = lo + (hi - lo) * unit_uniform(rng_seed, "baseline-t")
    return constant_transmission_haze(clean, t, params.airlight), t
