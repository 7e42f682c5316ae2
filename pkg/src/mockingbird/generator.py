"""Mockingbird adversarial trace generation.

A source trace is pushed, insertion-only, toward the nearest member of a random
pool of traces from other classes. The detector is queried only for the
source-class confidence; once that drops below ``tau_c`` the trace is done.
When the per-step change stalls below ``tau_d`` for ``lam`` iterations, a fresh
pool is drawn and the walk continues from the already-perturbed trace.

All geometry (distances, step sizes, ``tau_d``) lives in the detector's
normalized space: raw bursts divided by ``normalization_scale``.
"""

from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .detector import DetectorModel, predict_proba
from .errors import AllTargetsDegenerate, InsufficientPool, ZeroDistance
from .trace_model import BurstTrace, bandwidth_overhead, round_bursts

log = logging.getLogger(__name__)

CASES = ("I", "II")


@dataclass(frozen=True)
class GenerationConfig:
    alpha: float = 5.0
    tau_c: float = 0.01
    tau_d: float = 1e-4
    lam: int = 10
    pool_size: int = 10
    max_iters: int = 500
    target_case: str = "I"
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if not 0 < self.tau_c <= 1:
            raise ValueError("tau_c must lie in (0, 1]")
        if self.tau_d <= 0:
            raise ValueError("tau_d must be positive")
        if self.lam < 1 or self.pool_size < 1 or self.max_iters < 1:
            raise ValueError("lam, pool_size and max_iters must be >= 1")
        if self.target_case not in CASES:
            raise ValueError(f"target_case must be one of {CASES}")


@dataclass(frozen=True, eq=False)
class TargetPool:
    members: tuple
    provenance: str = "I"
    source_label: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if self.source_label is not None and any(m.label == self.source_label for m in self.members):
            raise ValueError("target pool contains a member of the source class")

    def __len__(self):
        return len(self.members)


@dataclass(frozen=True, eq=False)
class DefendedTrace:
    original: BurstTrace
    defended: BurstTrace
    delta: np.ndarray
    overhead: float
    iterations_used: int
    restarts: int
    final_source_confidence: float
    escaped: bool
    log: dict = field(default_factory=dict)

    def report_row(self, index: int) -> dict:
        row = {
            "index": index,
            "label": self.original.label,
            "overhead": self.overhead,
            "iterations": self.iterations_used,
            "restarts": self.restarts,
            "escaped": self.escaped,
            "final_confidence": self.final_source_confidence,
        }
        row.update(self.log.get("report_extra", {}))
        return row


def sample_pool(source_label: int, pool_source, cfg: GenerationConfig, rng=None) -> TargetPool:
    """Draw ``cfg.pool_size`` traces of other classes uniformly without replacement."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    candidates = [t for t in pool_source.traces if t.label != source_label]
    if len(candidates) < cfg.pool_size:
        raise InsufficientPool(
            f"{len(candidates)} candidate targets for class {source_label}; need {cfg.pool_size}"
        )
    picks = rng.choice(len(candidates), size=cfg.pool_size, replace=False)
    return TargetPool([candidates[i] for i in picks], cfg.target_case, source_label)


def _vec(x) -> np.ndarray:
    return x.bursts if isinstance(x, BurstTrace) else np.asarray(x, dtype=np.float64)


def nearest_target(source, pool) -> tuple[int, float]:
    """Index and l2 distance of the closest pool member, skipping exact copies."""
    members = pool.members if isinstance(pool, TargetPool) else pool
    if len(members) == 0:
        raise ValueError("empty target pool")
    s = _vec(source)
    dists = np.array([np.linalg.norm(_vec(m) - s) for m in members])
    valid = np.flatnonzero(dists > 0)
    if valid.size == 0:
        raise AllTargetsDegenerate("every pool member coincides with the source")
    best = valid[np.argmin(dists[valid])]  # argmin returns the first, i.e. lowest index
    return int(best), float(dists[best])


def distance_gradient(current, target) -> np.ndarray:
    """Analytic gradient of D(b, t) = ||b - t||_2 with respect to b."""
    b, t = _vec(current), _vec(target)
    d = np.linalg.norm(b - t)
    if d == 0:
        raise ZeroDistance("gradient of the distance is undefined at zero distance")
    return (b - t) / d


def perturbation_step(current, target, alpha: float) -> np.ndarray:
    """alpha times the positive part of -dD/db: only bursts that must grow move."""
    g = -distance_gradient(current, target)
    return alpha * np.where(g > 0, g, 0.0)


def _confidence(model, x_norm, label):
    return float(predict_proba(model, x_norm, normalized=True)[label])


def generate(source: BurstTrace, detector: DetectorModel, pool_source, cfg: GenerationConfig,
             max_pool_redraws: int = 100) -> DefendedTrace:
    rng = np.random.default_rng(cfg.seed)
    s = source.label
    scale = detector.normalization_scale
    src = source.bursts / scale
    pool_norm = None
    x = src.copy()

    conf = _confidence(detector, x, s)
    iters = restarts = stall = 0
    target = None

    def pick_target():
        nonlocal restarts
        for _ in range(max_pool_redraws):
            pool = sample_pool(s, pool_source, cfg, rng)
            try:
                idx, _ = nearest_target(x, [m.bursts / scale for m in pool.members])
                return pool.members[idx].bursts / scale
            except AllTargetsDegenerate:
                restarts += 1
        return None

    if conf >= cfg.tau_c:
        target = pick_target()
        while target is not None and iters < cfg.max_iters:
            try:
                step = perturbation_step(x, target, cfg.alpha)
            except ZeroDistance:
                step = np.zeros_like(x)
            x = x + step
            iters += 1
            conf = _confidence(detector, x, s)
            if conf < cfg.tau_c:
                break
            stall = stall + 1 if np.linalg.norm(step) < cfg.tau_d else 0
            if stall >= cfg.lam:
                restarts += 1
                stall = 0
                target = pick_target()

    # de-normalize only the perturbation so untouched bursts stay exact integers
    raw = source.bursts + np.maximum(x - src, 0.0) * scale
    defended = round_bursts(source.with_bursts(raw))
    delta = defended.bursts - source.bursts
    return DefendedTrace(
        original=source,
        defended=defended,
        delta=delta,
        overhead=bandwidth_overhead(source, defended),
        iterations_used=iters,
        restarts=restarts,
        final_source_confidence=conf,
        escaped=conf < cfg.tau_c,
        log={"algo": "mockingbird"},
    )


def trace_seed(seed: int, index: int) -> int:
    return int(seed) ^ int(index)


def _run_one(args):
    fn, trace, model, pool_source, cfg = args
    return fn(trace, model, pool_source, cfg)


def run_batch(fn, traces, model, pool_source, cfg, workers: int = 1):
    """Map ``fn`` over traces with per-trace seeds; results keep input order."""
    from dataclasses import replace

    jobs = [(fn, t, model, pool_source, replace(cfg, seed=trace_seed(cfg.seed, i)))
            for i, t in enumerate(traces)]
    if workers <= 1 or len(jobs) <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def summarize(results: list[DefendedTrace]) -> dict:
    if not results:
        return {}
    overheads = np.array([r.overhead for r in results])
    hist = Counter(r.restarts for r in results)
    return {
        "n": len(results),
        "escape_rate": float(np.mean([r.escaped for r in results])),
        "mean_overhead": float(overheads.mean()),
        "overhead_percentiles": {
            str(q): float(np.percentile(overheads, q)) for q in (10, 50, 90)
        },
        "mean_iterations": float(np.mean([r.iterations_used for r in results])),
        "restart_histogram": {str(k): hist[k] for k in sorted(hist)},
    }


def generate_batch(dataset, detector, pool_source, cfg: GenerationConfig, workers: int = 1):
    results = run_batch(generate, list(dataset.traces), detector, pool_source, cfg, workers)
    return results, summarize(results)
