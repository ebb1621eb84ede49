"""Keyed randomness: key generation, per-candidate seeds, masking and framing.

Every derivation is a stateless HMAC-SHA256 evaluation, so the sender and
the receiver agree on each value without sharing any generator state.

* seed for candidate ``e`` at step ``i``::

      HMAC(k, b"ads/seed/1" || i:u64be || len(e):u32be || pack(e))[:8]

* keystream block ``j``::

      HMAC(k, b"ads/mask/1" || j:u64be)

  consumed MSB-first, 256 bits per block.
"""

from __future__ import annotations

import binascii
import enum
import hashlib
import os
import secrets
from pathlib import Path

from .bits import check_bits, from_int, pack_bits, to_int
from .exceptions import ConfigError

KEY_BYTES = 32
SEED_TAG = b"ads/seed/1"
MASK_TAG = b"ads/mask/1"
MAX_CANDIDATE_BITS = 1 << 16
MAX_MASK_BITS = 1 << 32
BLOCK_BITS = 256
_IPAD = bytes(x ^ 0x36 for x in range(256))
_OPAD = bytes(x ^ 0x5C for x in range(256))

FRAME_LENGTH_BITS = 32
FRAME_CRC_BITS = 16
FRAME_OVERHEAD = FRAME_LENGTH_BITS + FRAME_CRC_BITS


def key_gen(entropy: bytes | None = None) -> bytes:
    """Return a 256-bit key.

    With ``entropy`` given, its first 32 bytes are used verbatim (keys are
    opaque); otherwise the OS CSPRNG is read.
    """
    if entropy is None:
        return secrets.token_bytes(KEY_BYTES)
    entropy = bytes(entropy)
    if len(entropy) < KEY_BYTES:
        raise ConfigError(f"need at least {KEY_BYTES} bytes of entropy, got {len(entropy)}")
    return entropy[:KEY_BYTES]


def check_key(key) -> bytes:
    if isinstance(key, KeyedPRF):
        return key.key
    if not isinstance(key, (bytes, bytearray)) or len(key) != KEY_BYTES:
        raise ConfigError(f"key must be {KEY_BYTES} bytes")
    return bytes(key)


class KeyedPRF:
    """HMAC-SHA256 under one key, with the pad states hashed once.

    ``hmac.new`` rehashes the padded key on every call; sampling a step of
    the codec evaluates up to ``2**N`` seeds that also share their first 22
    message bytes, so both are cached here. Outputs are plain HMAC values.
    """

    __slots__ = ("key", "_inner", "_outer", "_block_cache")

    def __init__(self, key: bytes):
        self.key = check_key(key)
        padded = self.key.ljust(64, b"\0")
        self._inner = hashlib.sha256(padded.translate(_IPAD))
        self._outer = hashlib.sha256(padded.translate(_OPAD))
        self._block_cache: dict[int, int] = {}

    @classmethod
    def coerce(cls, key) -> "KeyedPRF":
        return key if isinstance(key, cls) else cls(key)

    def digest(self, message: bytes) -> bytes:
        inner = self._inner.copy()
        inner.update(message)
        outer = self._outer.copy()
        outer.update(inner.digest())
        return outer.digest()

    def step_seeds(self, step: int, candidates, length: int) -> list[int]:
        """Seeds for integer-valued candidates of ``length`` bits at ``step``."""
        if length > MAX_CANDIDATE_BITS:
            raise ConfigError(f"candidate length {length} exceeds {MAX_CANDIDATE_BITS} bits")
        prefix = self._inner.copy()
        prefix.update(SEED_TAG + step.to_bytes(8, "big") + length.to_bytes(4, "big"))
        inner_copy, outer_copy, from_bytes = prefix.copy, self._outer.copy, int.from_bytes
        pad = -length % 8
        nbytes = (length + pad) // 8
        seeds = []
        append = seeds.append
        for value in candidates:
            inner = inner_copy()
            inner.update((value << pad).to_bytes(nbytes, "big"))
            out = outer_copy()
            out.update(inner.digest())
            append(from_bytes(out.digest()[:8], "big"))
        return seeds

    def _block(self, index: int) -> int:
        block = self._block_cache.get(index)
        if block is None:
            block = int.from_bytes(self.digest(MASK_TAG + index.to_bytes(8, "big")), "big")
            self._block_cache[index] = block
        return block

    def keystream(self, offset: int, nbits: int) -> int:
        """Keystream bits ``[offset, offset + nbits)`` as an integer."""
        if nbits <= 0:
            return 0
        if offset < 0 or offset + nbits > MAX_MASK_BITS:
            raise ConfigError("keystream window outside [0, 2**32)")
        first = offset // BLOCK_BITS
        last = (offset + nbits - 1) // BLOCK_BITS
        acc = 0
        for j in range(first, last + 1):
            acc = (acc << BLOCK_BITS) | self._block(j)
        total = (last - first + 1) * BLOCK_BITS
        skip = offset - first * BLOCK_BITS
        return (acc >> (total - skip - nbits)) & ((1 << nbits) - 1)


def derive_seed(key, step: int, candidate: str) -> int:
    """64-bit seed for ``candidate`` at codec step ``step``."""
    candidate = check_bits(candidate)
    if step < 0:
        raise ConfigError("step must be nonnegative")
    prf = KeyedPRF.coerce(key)
    return prf.step_seeds(step, [to_int(candidate)], len(candidate))[0]


def seed_message(step: int, candidate: str) -> bytes:
    """The exact HMAC input used by :func:`derive_seed`."""
    return (
        SEED_TAG
        + step.to_bytes(8, "big")
        + len(candidate).to_bytes(4, "big")
        + pack_bits(to_int(candidate), len(candidate))
    )


def mask(key, bits: str, offset: int = 0) -> str:
    """XOR ``bits`` with the keystream starting at bit ``offset``.

    Applying it twice at the same offset returns the input.
    """
    bits = check_bits(bits)
    if not bits:
        return ""
    stream = KeyedPRF.coerce(key).keystream(offset, len(bits))
    return from_int(to_int(bits) ^ stream, len(bits))


unmask = mask


class MaskedStream:
    """``(payload || 0...) XOR keystream``, materialised on demand.

    The codec may need prefixes longer than the payload; the zero extension
    keeps those padding bits pseudorandom.
    """

    def __init__(self, key, payload: str):
        self.prf = KeyedPRF.coerce(key)
        self.payload = check_bits(payload)
        self._value = 0
        self._length = 0

    def _extend(self, nbits: int) -> None:
        new_length = max(nbits, self._length + 4 * BLOCK_BITS)
        new_length = -(-new_length // BLOCK_BITS) * BLOCK_BITS
        chunk_len = new_length - self._length
        plain = self.payload[self._length:new_length].ljust(chunk_len, "0")
        chunk = to_int(plain) ^ self.prf.keystream(self._length, chunk_len)
        self._value = (self._value << chunk_len) | chunk
        self._length = new_length

    def prefix_value(self, nbits: int) -> int:
        if nbits > self._length:
            self._extend(nbits)
        return self._value >> (self._length - nbits)

    def prefix(self, nbits: int) -> str:
        return from_int(self.prefix_value(nbits), nbits)


class FrameStatus(enum.Enum):
    COMPLETE = "complete"
    INCOMPLETE = "incomplete"
    CHECKSUM_MISMATCH = "checksum-mismatch"


def crc16(data: bytes) -> int:
    """CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF, no reflection)."""
    return binascii.crc_hqx(data, 0xFFFF)


def _frame_crc(length: int, raw: str) -> int:
    return crc16(length.to_bytes(4, "big") + pack_bits(to_int(raw), len(raw)))


def frame(raw: str) -> str:
    """Prefix a 32-bit length and append a CRC-16 over length and payload."""
    raw = check_bits(raw)
    if len(raw) >= 1 << FRAME_LENGTH_BITS:
        raise ConfigError("payload too long to frame")
    crc = _frame_crc(len(raw), raw)
    return from_int(len(raw), FRAME_LENGTH_BITS) + raw + from_int(crc, FRAME_CRC_BITS)


def unframe(framed: str, max_bits: int | None = None) -> tuple[str | None, FrameStatus]:
    """Invert :func:`frame` on a (possibly over-long) decoded prefix.

    Bits past the frame are ignored. When ``max_bits`` is given, a declared
    length that could never fit in ``max_bits`` is treated as corruption
    rather than as a request for more tokens.
    """
    framed = check_bits(framed)
    if len(framed) < FRAME_LENGTH_BITS:
        return None, FrameStatus.INCOMPLETE
    length = to_int(framed[:FRAME_LENGTH_BITS])
    if max_bits is not None and length + FRAME_OVERHEAD > max_bits:
        return None, FrameStatus.CHECKSUM_MISMATCH
    end = FRAME_LENGTH_BITS + length
    if len(framed) < end + FRAME_CRC_BITS:
        return None, FrameStatus.INCOMPLETE
    raw = framed[FRAME_LENGTH_BITS:end]
    if to_int(framed[end:end + FRAME_CRC_BITS]) != _frame_crc(length, raw):
        return None, FrameStatus.CHECKSUM_MISMATCH
    return raw, FrameStatus.COMPLETE


def write_key_file(path, key: bytes) -> Path:
    """Write ``key`` as one line of hex with owner-only permissions.

    Refuses to overwrite an existing file.
    """
    path = Path(path)
    key = check_key(key)
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o600)
    with os.fdopen(fd, "w") as fh:
        fh.write(key.hex() + "\n")
    return path


def read_key_file(path) -> bytes:
    text = Path(path).read_text().strip()
    if len(text) != 2 * KEY_BYTES:
        raise ConfigError(f"{path}: key file must hold {2 * KEY_BYTES} hex characters")
    try:
        return bytes.fromhex(text)
    except ValueError as exc:
        raise ConfigError(f"{path}: key file is not valid hex") from exc


def load_seed_vectors(path=None) -> list[tuple[bytes, int, str, int]]:
    """Read golden ``(key, step, candidate, seed)`` vectors.

    Lines are ``key_hex step candidate_bits seed_hex``; ``-`` denotes the
    empty candidate.
    """
    if path is None:
        path = Path(__file__).with_name("data") / "seed_vectors.txt"
    vectors = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key_hex, step, candidate, seed_hex = line.split()
        vectors.append((bytes.fromhex(key_hex), int(step), "" if candidate == "-" else candidate, int(seed_hex, 16)))
    return vectors
