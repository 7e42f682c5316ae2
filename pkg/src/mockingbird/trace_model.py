"""Packet-direction and burst representations of a traffic trace.

A burst is a maximal run of packets in one direction. Burst vectors always
start with an outgoing burst and alternate directions per *nonzero* entry, so a
zero-magnitude slot transmits nothing and does not flip the direction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyTrace,
    NonIntegerBurst,
    ShrunkBurst,
    StartsIncoming,
    ZeroSizeOriginal,
)

OUT = 1
IN = -1

DEFAULT_BURST_LEN = 750
DEFAULT_PACKET_LEN = 5000


def _frozen(arr, dtype):
    arr = np.array(arr, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PacketTrace:
    """Direction sequence (+1 outgoing, -1 incoming) with a class label.

    Trailing zeros are allowed and mean padding; they never precede a packet.
    """

    label: int
    directions: np.ndarray

    def __post_init__(self):
        d = _frozen(self.directions, np.int8)
        if d.ndim != 1:
            raise ValueError("directions must be one-dimensional")
        nz = np.flatnonzero(d)
        if nz.size and not np.all(np.abs(d[nz]) == 1):
            raise ValueError("directions must be +1 or -1")
        if nz.size and nz[-1] != nz.size - 1:
            raise ValueError("zero padding may only trail the packets")
        if self.label < 0:
            raise ValueError("label must be non-negative")
        object.__setattr__(self, "directions", d)
        object.__setattr__(self, "label", int(self.label))

    @property
    def packets(self) -> np.ndarray:
        """Directions with trailing padding removed."""
        return self.directions[: np.count_nonzero(self.directions)]

    def __len__(self):
        return int(np.count_nonzero(self.directions))

    def __eq__(self, other):
        if not isinstance(other, PacketTrace):
            return NotImplemented
        return self.label == other.label and np.array_equal(self.packets, other.packets)

    def __hash__(self):
        return hash((self.label, self.packets.tobytes()))


@dataclass(frozen=True, eq=False)
class BurstTrace:
    """Fixed-length vector of non-negative burst magnitudes (packets).

    ``logical_len`` is the number of bursts the unperturbed trace had; a
    perturbed trace may carry nonzero entries past it (appended bursts).
    """

    label: int
    bursts: np.ndarray
    logical_len: int | None = None

    def __post_init__(self):
        b = _frozen(self.bursts, np.float64)
        if b.ndim != 1:
            raise ValueError("bursts must be one-dimensional")
        if np.any(b < 0) or not np.all(np.isfinite(b)):
            raise ValueError("burst magnitudes must be finite and non-negative")
        if self.label < 0:
            raise ValueError("label must be non-negative")
        n = self.logical_len
        if n is None:
            n = leading_nonzero(b)
        if not 0 <= n <= b.size:
            raise ValueError("logical_len out of range")
        object.__setattr__(self, "bursts", b)
        object.__setattr__(self, "logical_len", int(n))
        object.__setattr__(self, "label", int(self.label))

    first_direction = OUT

    def __len__(self):
        return self.bursts.size

    def __eq__(self, other):
        if not isinstance(other, BurstTrace):
            return NotImplemented
        # logical_len is bookkeeping and does not survive the text format
        return self.label == other.label and np.array_equal(self.bursts, other.bursts)

    def __hash__(self):
        return hash((self.label, self.bursts.tobytes()))

    def with_bursts(self, bursts) -> "BurstTrace":
        """Same label and logical length, new magnitudes."""
        return BurstTrace(self.label, bursts, self.logical_len)


def leading_nonzero(bursts) -> int:
    b = np.asarray(bursts)
    zero = np.flatnonzero(b == 0)
    return int(zero[0]) if zero.size else int(b.size)


def run_lengths(directions) -> tuple[list[int], int | None]:
    """Run-length encode a direction sequence; returns (runs, first direction)."""
    d = np.asarray(directions)
    d = d[d != 0]
    if d.size == 0:
        return [], None
    change = np.flatnonzero(np.diff(d)) + 1
    edges = np.concatenate(([0], change, [d.size]))
    return np.diff(edges).astype(int).tolist(), int(d[0])


def directions_to_bursts(trace: PacketTrace, fixed_len: int = DEFAULT_BURST_LEN) -> BurstTrace:
    runs, first = run_lengths(trace.directions)
    if not runs:
        raise EmptyTrace("trace has no packets")
    if first != OUT:
        raise StartsIncoming("trace begins with an incoming packet")
    n = min(len(runs), fixed_len)
    out = np.zeros(fixed_len)
    out[:n] = runs[:n]
    return BurstTrace(trace.label, out, n)


def bursts_to_directions(trace: BurstTrace, length: int = DEFAULT_PACKET_LEN) -> PacketTrace:
    """Expand bursts into a direction sequence truncated/zero-padded to ``length``."""
    b = trace.bursts
    if not np.array_equal(b, np.round(b)):
        raise NonIntegerBurst("burst magnitudes must be integers; call round_bursts first")
    mags = b[b > 0].astype(np.int64)
    signs = np.where(np.arange(mags.size) % 2 == 0, OUT, IN).astype(np.int8)
    seq = np.repeat(signs, mags)[:length]
    out = np.zeros(length, dtype=np.int8)
    out[: seq.size] = seq
    return PacketTrace(trace.label, out)


def size(trace) -> float:
    """Total packets: the sum of burst magnitudes. Accepts a BurstTrace or array."""
    b = trace.bursts if isinstance(trace, BurstTrace) else np.asarray(trace, dtype=float)
    return float(np.sum(b))


def bandwidth_overhead(original: BurstTrace, defended: BurstTrace) -> float:
    o = original.bursts if isinstance(original, BurstTrace) else np.asarray(original, float)
    d = defended.bursts if isinstance(defended, BurstTrace) else np.asarray(defended, float)
    if o.shape != d.shape:
        raise ValueError("original and defended must have the same length")
    so = size(o)
    if so <= 0:
        raise ZeroSizeOriginal("original trace has zero size")
    if np.any(d < o):
        raise ShrunkBurst(f"defended burst smaller than original at index {int(np.argmax(d < o))}")
    return (size(d) - so) / so


def round_bursts(trace: BurstTrace) -> BurstTrace:
    # ceil, never floor: rounding must not remove packets
    return trace.with_bursts(np.ceil(trace.bursts))
