"""Deterministic child-seed derivation.

Every randomized stage of the package (weight init, epoch shuffles,
replacement selection, attack noise, sweep cells, tuner repetitions)
draws its seed through :func:`derive_seed` so that results depend only
on the root seed and the stage's identity, never on execution order.

The mix is a splitmix64 fold: the root seed and each tag are absorbed
one at a time through the splitmix64 finalizer. Strings are absorbed
as their UTF-8 bytes in 8-byte little-endian chunks.
"""

from __future__ import annotations

_MASK = 0xFFFFFFFFFFFFFFFF


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def derive_seed(root: int, *tags: int | str) -> int:
    """Mix a root seed with identity tags into a 64-bit child seed."""
    h = _splitmix64(root & _MASK)
    for tag in tags:
        if isinstance(tag, str):
            data = tag.encode("utf-8")
            for i in range(0, len(data), 8):
                chunk = int.from_bytes(data[i : i + 8], "little")
                h = _splitmix64(h ^ chunk)
            h = _splitmix64(h ^ len(data))
        else:
            h = _splitmix64(h ^ (tag & _MASK))
    return h
