"""Trace datasets: text formats, preprocessing, splitting and synthetic data."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ClassTooSmall, LabelOutOfRange, ParseError
from .trace_model import (
    DEFAULT_BURST_LEN,
    OUT,
    BurstTrace,
    PacketTrace,
)

FORMATS = ("directions", "bursts")


@dataclass(frozen=True)
class LabeledDataset:
    classes: int
    traces: tuple
    report: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "traces", tuple(self.traces))
        for t in self.traces:
            if not 0 <= t.label < self.classes:
                raise LabelOutOfRange(f"label {t.label} outside [0, {self.classes})")

    @property
    def per_class_counts(self) -> dict[int, int]:
        counts = Counter(t.label for t in self.traces)
        return {c: counts[c] for c in sorted(counts)}

    @property
    def labels(self) -> np.ndarray:
        return np.array([t.label for t in self.traces], dtype=np.int64)

    def matrix(self) -> np.ndarray:
        """Stack burst traces into an (n, fixed_len) float array."""
        if not self.traces:
            return np.zeros((0, 0))
        return np.stack([t.bursts for t in self.traces])

    def subset(self, indices: Iterable[int]) -> "LabeledDataset":
        return LabeledDataset(self.classes, [self.traces[i] for i in indices])

    def by_class(self) -> dict[int, list[int]]:
        groups: dict[int, list[int]] = {}
        for i, t in enumerate(self.traces):
            groups.setdefault(t.label, []).append(i)
        return groups

    def __len__(self):
        return len(self.traces)

    def __iter__(self):
        return iter(self.traces)


@dataclass(frozen=True)
class DatasetSplit:
    adv_set: LabeledDataset
    detector_set: LabeledDataset


def preprocess(raw: LabeledDataset, min_packets: int = 50) -> LabeledDataset:
    """Drop traces shorter than ``min_packets`` or starting with an incoming packet."""
    kept, too_short, incoming = [], 0, 0
    for t in raw.traces:
        if len(t) < min_packets:
            too_short += 1
        elif t.packets[0] != OUT:
            incoming += 1
        else:
            kept.append(t)
    report = {
        "input": len(raw),
        "kept": len(kept),
        "removed_short": too_short,
        "removed_incoming": incoming,
        "empty": not kept,
    }
    return LabeledDataset(raw.classes, kept, report)


def split_half(dataset: LabeledDataset, seed: int) -> DatasetSplit:
    """Per-class shuffle; first half of each class to the adv set, rest to detector set."""
    rng = np.random.default_rng(seed)
    adv, det = [], []
    for label, idx in sorted(dataset.by_class().items()):
        if len(idx) < 2:
            raise ClassTooSmall(f"class {label} has {len(idx)} instance(s); need at least 2")
        order = rng.permutation(len(idx))
        half = (len(idx) + 1) // 2
        adv.extend(idx[j] for j in order[:half])
        det.extend(idx[j] for j in order[half:])
    return DatasetSplit(dataset.subset(sorted(adv)), dataset.subset(sorted(det)))


def stratified_split(dataset: LabeledDataset, fraction: float, seed: int):
    """Split each class so roughly ``fraction`` of it lands in the first part."""
    rng = np.random.default_rng(seed)
    first, second = [], []
    for _, idx in sorted(dataset.by_class().items()):
        order = rng.permutation(len(idx))
        cut = min(len(idx) - 1, max(1, int(round(fraction * len(idx))))) if len(idx) > 1 else 1
        first.extend(idx[j] for j in order[:cut])
        second.extend(idx[j] for j in order[cut:])
    return dataset.subset(sorted(first)), dataset.subset(sorted(second))


# -- text formats -------------------------------------------------------------


def _fmt_number(x: float) -> str:
    if float(x).is_integer():
        return str(int(x))
    return repr(float(x))


def dumps_trace(trace, fmt: str) -> str:
    if fmt == "directions":
        body = " ".join(str(int(d)) for d in trace.packets)
    elif fmt == "bursts":
        b = trace.bursts
        last = np.flatnonzero(b)
        body = " ".join(_fmt_number(x) for x in b[: last[-1] + 1]) if last.size else ""
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return f"{trace.label} {body}".rstrip()


def save_traces(dataset: LabeledDataset, path, fmt: str) -> None:
    """Write one trace per line. Burst lines omit trailing zeros."""
    lines = [dumps_trace(t, fmt) for t in dataset.traces]
    text = "".join(line + "\n" for line in lines)
    Path(path).write_bytes(text.encode("utf-8"))


def load_traces(
    path,
    fmt: str,
    classes: int | None = None,
    fixed_len: int = DEFAULT_BURST_LEN,
) -> LabeledDataset:
    """Parse a directions- or bursts-format file.

    ``classes`` defaults to max label + 1. Burst lines longer than ``fixed_len``
    are rejected rather than silently truncated.
    """
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}")
    traces = []
    raw = Path(path).read_bytes().decode("utf-8")
    for lineno, line in enumerate(raw.split("\n"), start=1):
        if not line.strip():
            continue
        tokens = line.split(" ")
        try:
            label = int(tokens[0])
        except ValueError:
            raise ParseError(f"bad label {tokens[0]!r}", lineno) from None
        if label < 0:
            raise LabelOutOfRange(f"line {lineno}: negative label {label}")
        body = tokens[1:]
        if fmt == "directions":
            if any(tok not in ("1", "-1") for tok in body):
                bad = next(tok for tok in body if tok not in ("1", "-1"))
                raise ParseError(f"bad direction token {bad!r}", lineno)
            traces.append(PacketTrace(label, [int(tok) for tok in body]))
        else:
            try:
                values = [float(tok) for tok in body]
            except ValueError as exc:
                raise ParseError(f"bad burst token ({exc})", lineno) from None
            if any(not math.isfinite(v) or v < 0 for v in values):
                raise ParseError("burst magnitudes must be finite and non-negative", lineno)
            if len(values) > fixed_len:
                raise ParseError(f"{len(values)} bursts exceed fixed length {fixed_len}", lineno)
            vec = np.zeros(fixed_len)
            vec[: len(values)] = values
            traces.append(BurstTrace(label, vec))
    if classes is None:
        classes = max((t.label for t in traces), default=-1) + 1
    for t in traces:
        if t.label >= classes:
            raise LabelOutOfRange(f"label {t.label} outside [0, {classes})")
    return LabeledDataset(classes, traces)


# -- synthetic data -----------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Prototype-plus-noise generator settings.

    Each class gets a prototype: a burst count in ``burst_count_range`` and
    log-normal magnitudes (``mag_mu``, ``mag_sigma``) clipped to ``mag_range``.
    Instances multiply each burst by a factor in ``1 +/- noise`` and jitter the
    burst count by up to ``length_jitter`` bursts.
    """

    classes: int = 20
    instances_per_class: int = 40
    burst_count_range: tuple[int, int] = (30, 80)
    distribution: str = "lognormal"
    mag_mu: float = 1.6
    mag_sigma: float = 0.9
    mag_range: tuple[int, int] = (1, 60)
    noise: float = 0.5
    length_jitter: int = 10
    fixed_len: int = DEFAULT_BURST_LEN
    seed: int = 0
    label_offset: int = 0

    def __post_init__(self):
        lo, hi = self.burst_count_range
        if lo < 1 or hi < lo:
            raise ValueError("burst_count_range must satisfy 1 <= min <= max")
        if hi > self.fixed_len:
            raise ValueError("burst_count_range exceeds fixed_len")
        if self.instances_per_class < 1:
            raise ValueError("instances_per_class must be positive")
        if self.classes < 1:
            raise ValueError("classes must be positive")
        if self.mag_range[0] < 1 or self.mag_range[1] < self.mag_range[0]:
            raise ValueError("mag_range must satisfy 1 <= min <= max")
        if self.distribution not in ("lognormal", "uniform"):
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if not 0 <= self.noise < 1:
            raise ValueError("noise must lie in [0, 1)")


def _draw_magnitudes(rng, spec: SyntheticSpec, n: int) -> np.ndarray:
    lo, hi = spec.mag_range
    if spec.distribution == "uniform":
        return rng.uniform(lo, hi, size=n)
    return np.clip(rng.lognormal(spec.mag_mu, spec.mag_sigma, size=n), lo, hi)


def generate_synthetic(spec: SyntheticSpec) -> LabeledDataset:
    rng = np.random.default_rng(spec.seed)
    lo_len, hi_len = spec.burst_count_range
    lo_mag, hi_mag = spec.mag_range
    traces = []
    for c in range(spec.classes):
        n_proto = int(rng.integers(lo_len, hi_len + 1))
        # extra bursts so jittered instances can run past the prototype length
        proto = _draw_magnitudes(rng, spec, n_proto + spec.length_jitter)
        for _ in range(spec.instances_per_class):
            jitter = int(rng.integers(-spec.length_jitter, spec.length_jitter + 1))
            n = int(np.clip(n_proto + jitter, lo_len, hi_len))
            n = min(n, proto.size)
            factor = rng.uniform(1 - spec.noise, 1 + spec.noise, size=n)
            mags = np.clip(np.rint(proto[:n] * factor), lo_mag, hi_mag)
            vec = np.zeros(spec.fixed_len)
            vec[:n] = mags
            traces.append(BurstTrace(c + spec.label_offset, vec, n))
    return LabeledDataset(spec.classes + spec.label_offset, traces)


def generate_unmonitored(
    sites: int,
    seed: int,
    label_offset: int,
    base: SyntheticSpec | None = None,
) -> LabeledDataset:
    """Open-world stand-in: one instance per unmonitored site, labels from ``label_offset``."""
    base = base or SyntheticSpec()
    spec = SyntheticSpec(
        **{**base.__dict__, "classes": sites, "instances_per_class": 1,
           "seed": seed, "label_offset": label_offset}
    )
    return generate_synthetic(spec)


def to_bursts(dataset: LabeledDataset, fixed_len: int = DEFAULT_BURST_LEN) -> LabeledDataset:
    from .trace_model import directions_to_bursts

    return LabeledDataset(
        dataset.classes, [directions_to_bursts(t, fixed_len) for t in dataset.traces]
    )


def concat(datasets: Sequence[LabeledDataset]) -> LabeledDataset:
    classes = max(d.classes for d in datasets)
    return LabeledDataset(classes, [t for d in datasets for t in d.traces])
