"""Portable seeded random streams and matrix initializers.

Everything here is defined bit-for-bit: xoshiro256** seeded through
SplitMix64, 53-bit uniforms taken from the top of each 64-bit word, and
Box-Muller normals built from pairs of those uniforms.  The same
(master_seed, stream_key) therefore yields the same matrices on any
platform, which is what lets frozen projections be dropped from a
checkpoint and regenerated later.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

# 2**-53: spacing of the 53-bit uniform grid, also the remap target for u1 == 0.
_INV_2_53 = 1.0 / 9007199254740992.0
TINY_UNIFORM = _INV_2_53


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def splitmix64(seed: int) -> int:
    """Return the first SplitMix64 output for state ``seed``.

    >>> hex(splitmix64(0))
    '0xe220a8397b1dcdaf'
    """
    return _mix64((int(seed) + GOLDEN_GAMMA) & MASK64)


def splitmix64_sequence(seed: int, count: int) -> list[int]:
    """First ``count`` outputs of a SplitMix64 generator started at ``seed``."""
    out = []
    state = int(seed) & MASK64
    for _ in range(count):
        state = (state + GOLDEN_GAMMA) & MASK64
        out.append(_mix64(state))
    return out


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class RngStream:
    """xoshiro256** generator tagged with the (master_seed, stream_key) it came from.

    Not safe to advance from more than one thread.
    """

    __slots__ = ("s0", "s1", "s2", "s3", "master_seed", "stream_key", "draws", "_spare")

    def __init__(self, state: tuple[int, int, int, int], master_seed: int = 0, stream_key: int = 0):
        if not any(state):
            raise ValueError("xoshiro256** state must not be all zero")
        self.s0, self.s1, self.s2, self.s3 = (s & MASK64 for s in state)
        self.master_seed = master_seed
        self.stream_key = stream_key
        self.draws = 0
        self._spare: float | None = None

    @property
    def state(self) -> tuple[int, int, int, int]:
        return (self.s0, self.s1, self.s2, self.s3)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.s0, self.s1, self.s2, self.s3
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s0, self.s1, self.s2, self.s3 = s0, s1, s2, s3
        self.draws += 1
        return result

    def next_unit(self) -> float:
        """Uniform in [0, 1) from the top 53 bits of one 64-bit draw."""
        return (self.next_u64() >> 11) * _INV_2_53

    def next_below(self, bound: int) -> int:
        """Integer in [0, bound) by multiply-shift of one 64-bit draw."""
        if bound < 1:
            raise ValueError(f"bound must be positive, got {bound}")
        return (self.next_u64() * bound) >> 64

    def clear_spare(self) -> None:
        self._spare = None

    def __repr__(self) -> str:
        return (f"RngStream(master_seed={self.master_seed}, stream_key={self.stream_key}, "
                f"draws={self.draws})")


def make_stream(master_seed: int, stream_key: int) -> RngStream:
    """Seed xoshiro256** with four SplitMix64 outputs from ``master_seed ^ splitmix64(stream_key)``."""
    master_seed = int(master_seed) & MASK64
    stream_key = int(stream_key) & MASK64
    seed = master_seed ^ splitmix64(stream_key)
    state = splitmix64_sequence(seed, 4)
    return RngStream(tuple(state), master_seed=master_seed, stream_key=stream_key)


def draw_uniform(stream: RngStream, low: float, high: float) -> float:
    if not low < high:
        raise ValueError(f"invalid range: low={low} must be < high={high}")
    return low + (high - low) * stream.next_unit()


def box_muller(u1: float, u2: float) -> tuple[float, float]:
    """Map two uniforms in [0, 1) to two independent standard normals.

    ``u1 == 0`` is remapped to 2**-53 so the log stays finite without
    rejecting (and re-drawing) the sample.
    """
    if u1 <= 0.0:
        u1 = TINY_UNIFORM
    radius = math.sqrt(-2.0 * math.log(u1))
    theta = 2.0 * math.pi * u2
    return radius * math.cos(theta), radius * math.sin(theta)


def draw_normal(stream: RngStream, mean: float, std: float) -> float:
    """Normal draw; the second value of each Box-Muller pair is cached on the stream."""
    if not std > 0:
        raise ValueError(f"std must be positive, got {std}")
    if stream._spare is not None:
        z = stream._spare
        stream._spare = None
    else:
        u1 = stream.next_unit()
        u2 = stream.next_unit()
        z, stream._spare = box_muller(u1, u2)
    return mean + std * z


class InitKind(enum.IntEnum):
    KAIMING_UNIFORM = 0
    KAIMING_NORMAL = 1
    UNIFORM_RANGE = 2


class FillOrder(enum.Enum):
    ROW_MAJOR = "row"
    COL_MAJOR = "col"


KAIMING_GAIN = math.sqrt(2.0)


@dataclass(frozen=True)
class InitScheme:
    kind: InitKind = InitKind.KAIMING_UNIFORM
    range_low: float | None = None
    range_high: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", InitKind(self.kind))
        if self.kind is InitKind.UNIFORM_RANGE:
            if self.range_low is None or self.range_high is None:
                raise ValueError("uniform-range init needs range_low and range_high")
            # bounds are stored as f32 in checkpoints; round now so reloads regenerate bit-exactly
            object.__setattr__(self, "range_low", float(np.float32(self.range_low)))
            object.__setattr__(self, "range_high", float(np.float32(self.range_high)))
            if not self.range_low < self.range_high:
                raise ValueError(
                    f"invalid range: low={self.range_low} must be < high={self.range_high}")
        elif self.range_low is not None or self.range_high is not None:
            raise ValueError(f"{self.kind.name} takes no range parameters")

    @classmethod
    def kaiming_uniform(cls) -> InitScheme:
        return cls(InitKind.KAIMING_UNIFORM)

    @classmethod
    def kaiming_normal(cls) -> InitScheme:
        return cls(InitKind.KAIMING_NORMAL)

    @classmethod
    def uniform(cls, low: float = 0.0, high: float = 0.1) -> InitScheme:
        return cls(InitKind.UNIFORM_RANGE, low, high)

    @classmethod
    def parse(cls, text: str) -> InitScheme:
        """Parse ``kaiming-uniform``, ``kaiming-normal`` or ``uniform[:low,high]``."""
        name, _, args = text.strip().lower().partition(":")
        if name in ("kaiming-uniform", "kaiming_uniform", "ku"):
            return cls.kaiming_uniform()
        if name in ("kaiming-normal", "kaiming_normal", "kn"):
            return cls.kaiming_normal()
        if name == "uniform":
            if not args:
                return cls.uniform()
            low, high = (float(v) for v in args.split(","))
            return cls.uniform(low, high)
        raise ValueError(f"unknown init scheme {text!r}")

    def label(self) -> str:
        if self.kind is InitKind.KAIMING_UNIFORM:
            return "kaiming-uniform"
        if self.kind is InitKind.KAIMING_NORMAL:
            return "kaiming-normal"
        return f"uniform:{self.range_low!r},{self.range_high!r}"


# gain**2 == 2 folded into the radicands so the values are exactly sqrt(6/n), sqrt(2/n)
def kaiming_uniform_bound(fan_in: int) -> float:
    return math.sqrt(6.0 / fan_in)


def kaiming_normal_std(fan_in: int) -> float:
    return math.sqrt(2.0 / fan_in)


def init_matrix(stream: RngStream, rows: int, cols: int, scheme: InitScheme,
                fan_in: int, fill_order: FillOrder = FillOrder.ROW_MAJOR) -> np.ndarray:
    """Draw a ``rows x cols`` float64 matrix, one entry per draw in ``fill_order``.

    Uniform schemes consume exactly ``rows*cols`` 64-bit draws.  The normal
    scheme consumes ``2*ceil(rows*cols/2)``: it generates its own Box-Muller
    pairs, ignores any normal cached on the stream by :func:`draw_normal`,
    and discards the unused half of a final odd pair.
    """
    if rows < 1 or cols < 1 or fan_in < 1:
        raise ValueError(f"rows, cols and fan_in must be >= 1 (got {rows}, {cols}, {fan_in})")
    count = rows * cols
    flat = np.empty(count, dtype=np.float64)
    if scheme.kind is InitKind.KAIMING_NORMAL:
        std = kaiming_normal_std(fan_in)
        stream.clear_spare()
        for i in range(0, count, 2):
            z0, z1 = box_muller(stream.next_unit(), stream.next_unit())
            flat[i] = std * z0
            if i + 1 < count:
                flat[i + 1] = std * z1
    else:
        if scheme.kind is InitKind.KAIMING_UNIFORM:
            bound = kaiming_uniform_bound(fan_in)
            low, high = -bound, bound
        else:
            low, high = scheme.range_low, scheme.range_high
        span = high - low
        for i in range(count):
            flat[i] = low + span * stream.next_unit()
    if fill_order is FillOrder.ROW_MAJOR:
        return flat.reshape(rows, cols)
    return np.ascontiguousarray(flat.reshape(cols, rows).T)
