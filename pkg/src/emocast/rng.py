"""Seedable, splittable randomness built on the Philox counter-based generator.

Every source of randomness in the package (parameter init, diffusion noise,
data sampling) flows through a named `Rng` stream so that runs are exactly
reproducible and individual streams can be captured/restored for checkpoint
resume.
"""

from __future__ import annotations

import hashlib

import numpy as np

# Flattened Philox state layout: counter[4], key[2], buffer[4],
# buffer_pos, has_uint32, uinteger.
_STATE_WORDS = 13


def _key_from_bytes(raw: bytes) -> int:
    return int.from_bytes(raw[:16], "little")


class Rng:
    """A named stream of randomness.

    Streams are split by label: `rng.split("noise")` derives a child whose
    key depends only on the parent key and the label, never on how much
    randomness the parent has consumed.
    """

    def __init__(self, key_bytes: bytes):
        self._key = key_bytes[:16]
        self._gen = np.random.Generator(np.random.Philox(key=_key_from_bytes(self._key)))

    @classmethod
    def from_seed(cls, seed: int) -> "Rng":
        raw = hashlib.sha256(b"emocast-root:" + str(int(seed)).encode()).digest()
        return cls(raw)

    def split(self, label: str) -> "Rng":
        raw = hashlib.sha256(self._key + b"/" + label.encode()).digest()
        return Rng(raw)

    # -- draws ------------------------------------------------------------

    def normal(self, shape, dtype=np.float64) -> np.ndarray:
        return self._gen.standard_normal(size=shape, dtype=dtype)

    def uniform(self, low: float, high: float, shape=None, dtype=np.float64) -> np.ndarray:
        out = self._gen.random(size=shape, dtype=dtype)
        return (low + (high - low) * out).astype(dtype, copy=False)

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice_index(self, n: int) -> int:
        return int(self._gen.integers(0, n))

    # -- state capture ----------------------------------------------------

    def get_state(self) -> np.ndarray:
        st = self._gen.bit_generator.state
        words = np.empty(_STATE_WORDS, dtype=np.uint64)
        words[0:4] = st["state"]["counter"]
        words[4:6] = st["state"]["key"]
        words[6:10] = st["buffer"]
        words[10] = st["buffer_pos"]
        words[11] = st["has_uint32"]
        words[12] = st["uinteger"]
        return words

    def set_state(self, words: np.ndarray) -> None:
        words = np.asarray(words, dtype=np.uint64)
        if words.shape != (_STATE_WORDS,):
            raise ValueError(f"expected {_STATE_WORDS} state words, got shape {words.shape}")
        self._gen.bit_generator.state = {
            "bit_generator": "Philox",
            "state": {"counter": words[0:4].copy(), "key": words[4:6].copy()},
            "buffer": words[6:10].copy(),
            "buffer_pos": int(words[10]),
            "has_uint32": int(words[11]),
            "uinteger": int(words[12]),
        }
        # keep split() keyed to the restored stream
        self._key = words[4:6].tobytes()
