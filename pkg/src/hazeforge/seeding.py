"""Deterministic seed derivation and unit-interval draws.

Every randomized behavior in the package bottoms out here: a SHA-256 digest
over a canonical byte encoding of the inputs, truncated to 64 bits. Identical
inputs therefore produce identical draws on every platform, in every run, and
under any thread schedule -- there is no shared generator state to race on.
"""

import hashlib
import struct

_MASK64 = (1 << 64) - 1


def _digest64(*parts: bytes) -> int:
    h = hashlib.sha256()
    for part in parts:
        h.update(part)
        h.update(b"\x00")
    return int.from_bytes(h.digest()[:8], "little")


def derive_image_seed(global_seed: int, sample_id: str, epoch: int = 0) -> int:
    """Stable 64-bit seed for one sample (and optionally one epoch).

    The digest input is the little-endian unsigned 64-bit global seed, the
    UTF-8 bytes of ``sample_id``, and the little-endian unsigned 64-bit
    epoch, each followed by a NUL separator; the first eight digest bytes,
    read little-endian, form the seed. Epoch 0 is the canonical per-image
    seed used by the offline pipeline.
    """
    if not sample_id:
        raise ValueError("sample_id must be non-empty")
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return _digest64(
        struct.pack("<Q", global_seed & _MASK64),
        sample_id.encode("utf-8"),
        struct.pack("<Q", epoch & _MASK64),
    )


def unit_uniform(seed: int, tag: str, index: int = 0) -> float:
    """Uniform draw in [0, 1) addressed by (seed, tag, index).

    Counter-style: each (tag, index) pair is an independent stream, so draws
    never depend on call order. The 64-bit digest is mapped to a double via
    the usual 53-bit mantissa scaling.
    """
    x = _digest64(
        struct.pack("<Q", seed & _MASK64),
        tag.encode("utf-8"),
        struct.pack("<Q", index & _MASK64),
    )
    return (x >> 11) * 2.0**-53
