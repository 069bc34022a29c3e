"""Counter-based random streams.

Every source of randomness in the package is an RngStream identified by
(seed, stream_id). Streams are backed by numpy's Philox bit generator,
which is counter-based, so identical (seed, stream_id) pairs yield
identical draw sequences in any process on any platform. Stream ids are
derived from purpose strings (e.g. "train", epoch) so that independent
parts of a run never share a stream.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stream_id(*parts) -> int:
    """Map a tuple of purpose parts to a 64-bit stream id."""
    text = "/".join(str(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class RngStream:
    """Seeded random stream with an explicit (seed, stream_id) identity."""

    def __init__(self, seed: int, sid: int = 0):
        if not 0 <= seed <= _MASK64:
            raise ValueError("seed must fit in 64 bits")
        self.seed = int(seed)
        self.sid = int(sid) & _MASK64
        self._bitgen = np.random.Philox(key=np.array([self.seed, self.sid], dtype=np.uint64))
        self.gen = np.random.Generator(self._bitgen)

    def random(self, size=None):
        return self.gen.random(size)

    def uniform(self, low, high, size=None):
        return self.gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def permutation(self, n):
        return self.gen.permutation(n)

    def state(self) -> dict:
        """JSON-serializable generator state (arrays become lists)."""
        raw = self._bitgen.state
        return {
            "seed": self.seed,
            "sid": self.sid,
            "counter": [int(v) for v in raw["state"]["counter"]],
            "key": [int(v) for v in raw["state"]["key"]],
            "buffer": [int(v) for v in raw["buffer"]],
            "buffer_pos": int(raw["buffer_pos"]),
            "has_uint32": int(raw["has_uint32"]),
            "uinteger": int(raw["uinteger"]),
        }

    def restore(self, state: dict) -> None:
        raw = self._bitgen.state
        raw["state"]["counter"] = np.array(state["counter"], dtype=np.uint64)
        raw["state"]["key"] = np.array(state["key"], dtype=np.uint64)
        raw["buffer"] = np.array(state["buffer"], dtype=np.uint64)
        raw["buffer_pos"] = state["buffer_pos"]
        raw["has_uint32"] = state["has_uint32"]
        raw["uinteger"] = state["uinteger"]
        self._bitgen.state = raw


def derive(seed: int, *parts) -> RngStream:
    """Stream for a named purpose, e.g. derive(seed, "train", epoch)."""
    return RngStream(seed, stream_id(*parts))
