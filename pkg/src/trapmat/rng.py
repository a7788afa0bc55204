"""Seekable deterministic randomness from the ChaCha20 keystream.

The 32-byte seed is the ChaCha20 key and the stream position is the block
counter, so a draw sequence is reproducible bit-for-bit on any platform and
any position can be revisited with :meth:`SeededRng.seek`.
"""

from __future__ import annotations

import os

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms

_BLOCK = 64
_MAX_BLOCKS = 1 << 32


class SeededRng:
    def __init__(self, seed):
        if isinstance(seed, int):
            if seed < 0:
                raise ValueError("integer seeds must be non-negative")
            seed = seed.to_bytes(32, "little")
        seed = bytes(seed)
        if len(seed) != 32:
            raise ValueError(f"seed must be 32 bytes, got {len(seed)}")
        self.seed = seed
        self.position = 0

    @classmethod
    def from_os(cls):
        return cls(os.urandom(32))

    def seek(self, position):
        self.position = int(position)

    def bytes(self, n) -> bytes:
        if n == 0:
            return b""
        block, skip = divmod(self.position, _BLOCK)
        if block + (skip + n + _BLOCK - 1) // _BLOCK > _MAX_BLOCKS:
            raise OverflowError("keystream exhausted for this seed")
        nonce = block.to_bytes(4, "little") + bytes(12)
        enc = Cipher(algorithms.ChaCha20(self.seed, nonce), mode=None).encryptor()
        out = enc.update(bytes(skip + n))[skip:]
        self.position += n
        return out

    def words(self, count) -> np.ndarray:
        """``count`` uniform uint32 words (little-endian keystream order)."""
        return np.frombuffer(self.bytes(4 * count), dtype="<u4").astype(np.uint32)

    def words64(self, count) -> np.ndarray:
        return np.frombuffer(self.bytes(8 * count), dtype="<u8").astype(np.uint64)

    def below(self, n) -> int:
        """Uniform integer in ``[0, n)`` by rejection on 64-bit draws."""
        if n <= 0:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            w = int.from_bytes(self.bytes(8), "little")
            if w < limit:
                return w % n

    def fork(self):
        """Independent child stream keyed from this stream's next 32 bytes."""
        return SeededRng(self.bytes(32))

    def __repr__(self):
        return f"SeededRng(seed={self.seed[:4].hex()}..., position={self.position})"
