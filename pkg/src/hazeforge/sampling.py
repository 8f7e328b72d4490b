"""Seed-derived sampling of per-image haze parameters.

Each image gets its own 64-bit seed hashed from (global seed, sample id),
and the scattering coefficient and airlight are drawn from that seed alone.
Parameters therefore never depend on processing order or worker count.
"""

from dataclasses import dataclass

from .core import HazeParams
from .errors import ParameterError
from .seeding import derive_image_seed, unit_uniform

__all__ = ["SamplerConfig", "sample_params", "derive_image_seed", "unit_uniform"]


@dataclass(frozen=True)
class SamplerConfig:
    """Closed draw ranges for the per-image parameters plus the run seed."""

    beta_range: tuple[float, float] = (1.0, 3.0)
    airlight_range: tuple[float, float] = (150.0, 255.0)
    global_seed: int = 0

    def __post_init__(self) -> None:
        b_lo, b_hi = self.beta_range
        a_lo, a_hi = self.airlight_range
        if not b_lo <= b_hi:
            raise ParameterError(f"beta range is inverted: {self.beta_range}")
        if not b_lo > 0.0:
            raise ParameterError(f"beta must be > 0, range starts at {b_lo}")
        if not a_lo <= a_hi:
            raise ParameterError(f"airlight range is inverted: {self.airlight_range}")
        if a_lo < 0.0 or a_hi > 255.0:
            raise ParameterError(
                f"airlight range must stay within [0, 255], got {self.airlight_range}"
            )


def _uniform_in(interval: tuple[float, float], seed: int, tag: str) -> float:
    lo, hi = interval
    return lo + (hi - lo) * unit_uniform(seed, tag)


def sample_params(config: SamplerConfig, image_seed: int) -> HazeParams:
    """Draw (beta, airlight) uniformly from the configured ranges.

    A pure function of (config, image_seed); repeated calls return identical
    values.
    """
    return HazeParams(
        beta=_uniform_in(config.beta_range, image_seed, "beta"),
        airlight=_uniform_in(config.airlight_range, image_seed, "airlight"),
    )
