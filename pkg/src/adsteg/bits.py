"""Bit string helpers.

Bit strings are plain ``str`` objects over ``{"0", "1"}``. Byte conversion is
MSB-first within each byte.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigError


def check_bits(bits) -> str:
    """Coerce ``bits`` to a canonical ``'0'/'1'`` string.

    Accepts a bit string, or any 1-d sequence / array of 0 and 1 values.
    """
    if isinstance(bits, str):
        if bits.strip("01"):
            raise ConfigError(f"bit string may only contain '0' and '1', got {bits[:32]!r}")
        return bits
    if isinstance(bits, (bytes, bytearray)):
        raise ConfigError("raw bytes are not a bit string; use bytes_to_bits()")
    arr = np.asarray(bits)
    if arr.ndim != 1:
        raise ConfigError(f"expected a 1-d bit sequence, got shape {arr.shape}")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ConfigError("bit sequence may only contain 0 and 1")
    return "".join("1" if b else "0" for b in arr.tolist())


def bytes_to_bits(data: bytes) -> str:
    return "".join(f"{b:08b}" for b in data)


def bits_to_bytes(bits: str) -> bytes:
    """Pack a bit string MSB-first, zero-padding the last byte."""
    return pack_bits(to_int(bits), len(bits))


def to_int(bits: str) -> int:
    return int(bits, 2) if bits else 0


def from_int(value: int, length: int) -> str:
    return format(value, f"0{length}b") if length else ""


def pack_bits(value: int, length: int) -> bytes:
    """Pack an integer-valued bit string MSB-first, zero-padded to a byte boundary."""
    pad = -length % 8
    return (value << pad).to_bytes((length + pad) // 8, "big")
