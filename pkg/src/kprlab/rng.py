"""Deterministic, seekable random-word streams.

Every stochastic component of the package draws 64-bit words from an
:class:`RngStream` addressed by ``(seed, label)``.  Labels partition the
randomness by purpose: streams with different labels are statistically
independent because their generator keys are derived by hashing, and a
stream's position is fully described by how many words it has handed out,
so any past state can be reconstructed in O(1) with :meth:`RngStream.at`.

Draw conventions observed everywhere (they are what make the vectorised
simulator, the scalar agent API, and the live session service produce
bit-identical results):

* initialising an agent consumes exactly one word, agents in index order;
* each agent's per-round decision consumes exactly one word;
* resolving a round consumes one word per occupied restaurant, in
  restaurant order.

The word-to-value mappings below are exact integer arithmetic (no modulo
bias, no float rounding ambiguity) and each has a scalar and an array form
that agree bit for bit.
"""

from __future__ import annotations

import hashlib

import numpy as np
from numpy.random import Philox

_WORDS_PER_COUNTER = 4  # the underlying generator emits 4 words per counter step
_LOW32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)
_SHIFT11 = np.uint64(11)
_UNIT = float(2.0**-53)


def derive_key(seed: int, label: str) -> tuple[int, int]:
    """Hash (seed, label) into a 128-bit generator key."""
    if not isinstance(label, str):
        raise TypeError(f"stream label must be a string, got {type(label).__name__}")
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return (
        int.from_bytes(digest[:8], "little"),
        int.from_bytes(digest[8:16], "little"),
    )


class RngStream:
    """A deterministic stream of raw 64-bit words.

    The same ``(seed, label)`` always yields the same word sequence.
    ``draws`` counts words already handed out; :meth:`at` rebuilds a stream
    positioned at an arbitrary draw count without generating the skipped
    words.
    """

    __slots__ = ("seed", "label", "_bits", "_buf", "_pos", "_draws", "_chunk")

    def __init__(self, seed: int, label: str = "main") -> None:
        if not (0 <= int(seed) < 2**64):
            raise ValueError("seed must fit in 64 bits")
        self.seed = int(seed)
        self.label = label
        self._bits = Philox(key=derive_key(self.seed, label))
        self._buf = np.empty(0, dtype=np.uint64)
        self._pos = 0
        self._draws = 0
        self._chunk = 128

    @classmethod
    def at(cls, seed: int, label: str, draws: int) -> "RngStream":
        """Reconstruct the stream positioned after `draws` words, in O(1)."""
        if draws < 0:
            raise ValueError("draw count must be non-negative")
        stream = cls(seed, label)
        block, offset = divmod(draws, _WORDS_PER_COUNTER)
        if block:
            stream._bits = Philox(
                key=derive_key(stream.seed, label), counter=[block, 0, 0, 0]
            )
        if offset:
            stream._bits.random_raw(offset)
        stream._draws = draws
        return stream

    @property
    def draws(self) -> int:
        """Number of words handed out so far."""
        return self._draws

    @property
    def state(self) -> tuple[int, str, int]:
        """(seed, label, draws): everything needed to rebuild this stream."""
        return (self.seed, self.label, self._draws)

    def words(self, count: int) -> np.ndarray:
        """Return the next `count` raw words as a uint64 array."""
        if count < 0:
            raise ValueError("count must be non-negative")
        out = np.empty(count, dtype=np.uint64)
        got = 0
        while got < count:
            avail = len(self._buf) - self._pos
            if avail == 0:
                self._refill(count - got)
                continue
            take = min(count - got, avail)
            out[got : got + take] = self._buf[self._pos : self._pos + take]
            self._pos += take
            got += take
        self._draws += count
        return out

    def word(self) -> int:
        """Return the next raw word as a Python int."""
        if self._pos == len(self._buf):
            self._refill(1)
        value = int(self._buf[self._pos])
        self._pos += 1
        self._draws += 1
        return value

    def randbelow(self, bound: int) -> int:
        """Uniform integer in [0, bound), consuming one word."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return (self.word() * bound) >> 64

    def uniform(self) -> float:
        """Uniform float in [0, 1), consuming one word."""
        return (self.word() >> 11) * _UNIT

    def _refill(self, need: int) -> None:
        size = max(need, self._chunk)
        self._buf = self._bits.random_raw(size)
        self._pos = 0
        if self._chunk < 65536:
            self._chunk = min(self._chunk * 2, 65536)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"RngStream(seed={self.seed}, label={self.label!r}, draws={self._draws})"


def randbelow_words(words: np.ndarray, bound) -> np.ndarray:
    """Map raw words to uniform integers in [0, bound), exactly.

    Equivalent to ``(word * bound) >> 64`` in unbounded arithmetic; the
    high/low split keeps every intermediate inside uint64.  `bound` may be
    a scalar or an array (element-wise bounds) but must stay below 2**31.
    """
    bound_arr = np.asarray(bound, dtype=np.uint64)
    if bound_arr.size and (int(bound_arr.min(initial=1)) <= 0 or int(bound_arr.max(initial=1)) >= 2**31):
        raise ValueError("bounds must be in [1, 2**31)")
    high = words >> _SHIFT32
    low = words & _LOW32
    return ((high * bound_arr + ((low * bound_arr) >> _SHIFT32)) >> _SHIFT32).astype(
        np.int64
    )


def uniform01_words(words: np.ndarray) -> np.ndarray:
    """Map raw words to uniform floats in [0, 1) using the top 53 bits."""
    return (words >> _SHIFT11).astype(np.float64) * _UNIT


def bernoulli_threshold(p: float) -> int:
    """Integer threshold so that (word >> 32) < threshold has probability p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("probability must be in [0, 1]")
    return int(round(p * 2**32))


def bernoulli_words(words: np.ndarray, threshold: int) -> np.ndarray:
    """True with probability threshold / 2**32, from the high 32 bits."""
    return (words >> _SHIFT32) < np.uint64(threshold)


def low32_below(words: np.ndarray, bound: int) -> np.ndarray:
    """Uniform integers in [0, bound) from the low 32 bits of each word.

    Companion draw to :func:`bernoulli_words`: both halves of one word can
    be used together without correlation concerns.
    """
    if not 0 < bound < 2**31:
        raise ValueError("bound must be in [1, 2**31)")
    return (((words & _LOW32) * np.uint64(bound)) >> _SHIFT32).astype(np.int64)


def categorical_words(words: np.ndarray, cumulative: np.ndarray) -> np.ndarray:
    """Sample indices proportional to weights given their cumulative sums."""
    r = uniform01_words(words) * cumulative[-1]
    idx = np.searchsorted(cumulative, r, side="right")
    return np.minimum(idx, len(cumulative) - 1).astype(np.int64)


def categorical_rows(words: np.ndarray, cumulative_rows: np.ndarray) -> np.ndarray:
    """Row-wise categorical sampling: one word and one weight row per agent.

    Matches `searchsorted(..., side="right")` on each row exactly.
    """
    r = uniform01_words(words) * cumulative_rows[:, -1]
    idx = (cumulative_rows <= r[:, None]).sum(axis=1)
    return np.minimum(idx, cumulative_rows.shape[1] - 1).astype(np.int64)
