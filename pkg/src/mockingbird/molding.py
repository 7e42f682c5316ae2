"""Discrete-event simulation of burst molding.

Real packets are forwarded as they arrive. Each burst is held open until
``timeout_ms`` passes without another packet in that direction; then the
queue is closed and dummies are dumped to bring the burst up to its target
size. Outgoing bursts also tell the bridge how large the next incoming burst
must be: the first dummy (or, if there is none, the last real packet) carries
that size.

The clock is simulated: a closed burst costs exactly one timeout, and every
later packet is shifted by the accumulated waits.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .errors import NonIntegerBurst, ParseError, StartsIncoming, TargetSmallerThanReal, UnorderedEvents
from .trace_model import IN, OUT, BurstTrace

KINDS = ("real", "dummy", "signal")


@dataclass(frozen=True)
class PacketEvent:
    time: float
    direction: int
    kind: str = "real"
    seq: int | None = None
    next_size: int | None = None

    def to_json(self) -> dict:
        d = {"t": self.time, "dir": self.direction, "kind": self.kind}
        if self.seq is not None:
            d["seq"] = self.seq
        if self.next_size is not None:
            d["next"] = self.next_size
        return d

    @classmethod
    def from_json(cls, d: dict) -> "PacketEvent":
        if d.get("kind", "real") not in KINDS or d.get("dir") not in (OUT, IN):
            raise ValueError(f"bad event {d!r}")
        return cls(float(d["t"]), int(d["dir"]), d.get("kind", "real"), d.get("seq"), d.get("next"))


@dataclass(frozen=True)
class MoldingConfig:
    timeout_ms: float = 50.0
    signal_overhead: int = 1

    def __post_init__(self):
        if not self.timeout_ms > 0:
            raise ValueError("timeout_ms must be positive")
        if self.signal_overhead < 0:
            raise ValueError("signal_overhead must be non-negative")


@dataclass(frozen=True)
class MoldResult:
    events: list
    added_latency_ms: float
    dummy_count: int
    closed_bursts: int


def _group_bursts(events):
    bursts = []
    for ev in events:
        if bursts and bursts[-1][0].direction == ev.direction:
            bursts[-1].append(ev)
        else:
            bursts.append([ev])
    return bursts


def target_runs(target) -> list[int]:
    """Nonzero target entries in order: the run-lengths the output must show."""
    b = target.bursts if isinstance(target, BurstTrace) else np.asarray(target, dtype=float)
    if not np.array_equal(b, np.round(b)):
        raise NonIntegerBurst("target bursts must be integers")
    return [int(x) for x in b if x > 0]


def events_from_directions(directions, gap_ms: float = 1.0, burst_gap_ms: float = 0.0):
    """Real-packet events at a fixed spacing; ``burst_gap_ms`` is added at direction changes."""
    out, t, prev = [], 0.0, None
    for i, d in enumerate(int(x) for x in directions if x != 0):
        if prev is not None:
            t += gap_ms + (burst_gap_ms if d != prev else 0.0)
        out.append(PacketEvent(t, d, "real", i))
        prev = d
    return out


def mold(real_events, target, cfg: MoldingConfig = MoldingConfig()) -> MoldResult:
    events = list(real_events)
    times = [e.time for e in events]
    if any(b < a for a, b in zip(times, times[1:])) or any(t < 0 for t in times):
        raise UnorderedEvents("event times must be non-negative and non-decreasing")
    if events and events[0].direction != OUT:
        raise StartsIncoming("real stream must begin with an outgoing packet")
    events = [e if e.seq is not None else replace(e, seq=i) for i, e in enumerate(events)]
    real = _group_bursts(events)
    runs = target_runs(target)
    if len(runs) < len(real):
        raise TargetSmallerThanReal(f"target has {len(runs)} bursts, real stream has {len(real)}")
    for i, burst in enumerate(real):
        if runs[i] < len(burst):
            raise TargetSmallerThanReal(f"burst {i}: target {runs[i]} < real {len(burst)}")

    out: list[PacketEvent] = []
    offset = latency = 0.0
    clock = 0.0
    dummies = closed = 0
    for i, want in enumerate(runs):
        direction = OUT if i % 2 == 0 else IN
        burst = real[i] if i < len(real) else []
        next_size = runs[i + 1] if direction == OUT and i + 1 < len(runs) else None
        n_dummy = want - len(burst)
        n_signal = min(cfg.signal_overhead, n_dummy) if next_size is not None else 0

        for j, ev in enumerate(burst):
            tagged = next_size if (n_signal == 0 and next_size is not None and j == len(burst) - 1) else None
            out.append(PacketEvent(ev.time + offset, direction, "real", ev.seq, tagged))
        if burst:
            clock = burst[-1].time + offset + cfg.timeout_ms
            offset += cfg.timeout_ms
            latency += cfg.timeout_ms
            closed += 1
        for j in range(n_dummy):
            if j < n_signal:
                out.append(PacketEvent(clock, direction, "signal", None, next_size))
            else:
                out.append(PacketEvent(clock, direction, "dummy"))
        dummies += n_dummy
    return MoldResult(out, latency, dummies, closed)


def verify_molding(events, target, real_events=None) -> bool:
    """Replay the molding postconditions on an output stream."""
    events = list(events)
    runs = [len(b) for b in _group_bursts(events)]
    if runs != target_runs(target):
        return False
    if events and events[0].direction != OUT:
        return False
    times = [e.time for e in events]
    if any(b < a for a, b in zip(times, times[1:])):
        return False
    real_out = [e for e in events if e.kind == "real"]
    seqs = [e.seq for e in real_out]
    if any(s is None for s in seqs) or any(b <= a for a, b in zip(seqs, seqs[1:])):
        return False
    if real_events is not None:
        real_in = list(real_events)
        if len(real_in) != len(real_out):
            return False
        for k, (a, b) in enumerate(zip(real_in, real_out)):
            seq = a.seq if a.seq is not None else k
            if b.seq != seq or b.direction != a.direction or b.time < a.time:
                return False
    return True


def dump_events(events, path) -> None:
    lines = [json.dumps(e.to_json(), sort_keys=True) for e in events]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_events(path) -> list[PacketEvent]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if line.strip():
            try:
                out.append(PacketEvent.from_json(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(str(exc), lineno) from None
    return out


def result_summary(result: MoldResult, cfg: MoldingConfig) -> dict:
    real = sum(e.kind == "real" for e in result.events)
    return {
        "config": asdict(cfg),
        "added_latency_ms": result.added_latency_ms,
        "dummy_count": result.dummy_count,
        "signal_count": sum(e.kind == "signal" for e in result.events),
        "real_count": real,
        "closed_bursts": result.closed_bursts,
        "output_packets": len(result.events),
    }
