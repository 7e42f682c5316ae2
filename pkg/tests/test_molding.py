import numpy as np
import pytest

from mockingbird.errors import StartsIncoming, TargetSmallerThanReal, UnorderedEvents
from mockingbird.molding import (
    MoldingConfig,
    PacketEvent,
    dump_events,
    events_from_directions,
    load_events,
    mold,
    verify_molding,
)
from mockingbird.trace_model import BurstTrace, bursts_to_directions, run_lengths, size


def _events(runs, **kw):
    return events_from_directions(bursts_to_directions(BurstTrace(0, runs), sum(runs)).packets, **kw)


def _out_runs(events):
    return run_lengths([e.direction for e in events])[0]


def test_spec_example():
    real = _events([3, 5])
    r = mold(real, BurstTrace(0, [4, 6]))
    assert _out_runs(r.events) == [4, 6]
    assert r.dummy_count == 2
    assert sum(e.kind == "signal" for e in r.events) == 1
    assert r.added_latency_ms == 100.0
    assert verify_molding(r.events, BurstTrace(0, [4, 6]), real)


def test_identity_target():
    real = _events([3, 5, 2])
    r = mold(real, BurstTrace(0, [3, 5, 2]), MoldingConfig(timeout_ms=20))
    assert r.dummy_count == 0
    assert r.added_latency_ms == 60.0
    # with no dummy to ride on, the next-burst size travels on the last real outgoing packet
    assert r.events[2].next_size == 5


def test_appended_bursts_are_all_dummy():
    real = _events([2, 1])
    r = mold(real, BurstTrace(0, [2, 3, 4, 1]))
    assert _out_runs(r.events) == [2, 3, 4, 1]
    assert r.closed_bursts == 2
    assert r.added_latency_ms == 100.0


def test_verify_detects_tampering():
    real = _events([3, 5])
    target = BurstTrace(0, [4, 6])
    r = mold(real, target)
    dropped = [e for i, e in enumerate(r.events) if not (e.kind == "dummy" and i == len(r.events) - 1)]
    assert not verify_molding(dropped, target)
    ev = list(r.events)
    ev[0], ev[1] = ev[1], ev[0]
    assert not verify_molding(ev, target)


def test_errors():
    with pytest.raises(TargetSmallerThanReal):
        mold(_events([3, 5]), BurstTrace(0, [2, 6]))
    with pytest.raises(TargetSmallerThanReal):
        mold(_events([3, 5, 1]), BurstTrace(0, [3, 5]))
    with pytest.raises(UnorderedEvents):
        mold([PacketEvent(2.0, 1), PacketEvent(1.0, 1)], BurstTrace(0, [2]))
    with pytest.raises(StartsIncoming):
        mold([PacketEvent(0.0, -1)], BurstTrace(0, [1, 1]))
    with pytest.raises(ValueError):
        MoldingConfig(timeout_ms=0)


def test_random_pairs():
    rng = np.random.default_rng(7)
    cfg = MoldingConfig(timeout_ms=25)
    for _ in range(100):
        real_runs = rng.integers(1, 8, size=int(rng.integers(1, 10))).tolist()
        extra = rng.integers(0, 5, size=len(real_runs) + int(rng.integers(0, 4)))
        target_runs = [r + int(e) for r, e in zip(real_runs + [0] * 10, extra)]
        target_runs = [t if t > 0 else 1 for t in target_runs]
        real = _events(real_runs, gap_ms=float(rng.uniform(0.1, 3)), burst_gap_ms=float(rng.uniform(0, 40)))
        target = BurstTrace(0, target_runs)
        r = mold(real, target, cfg)
        assert _out_runs(r.events) == target_runs
        reals = [e for e in r.events if e.kind == "real"]
        assert [e.seq for e in reals] == [e.seq for e in real]
        assert r.dummy_count == size(target) - len(real)
        assert r.added_latency_ms == cfg.timeout_ms * len(real_runs)
        assert verify_molding(r.events, target, real)


def test_events_round_trip(tmp_path):
    r = mold(_events([3, 5]), BurstTrace(0, [4, 6]))
    dump_events(r.events, tmp_path / "e.jsonl")
    assert load_events(tmp_path / "e.jsonl") == r.events
