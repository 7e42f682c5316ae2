"""Carlini & Wagner style baselines for trace perturbation.

The perturbation is parameterized as ``delta**2`` (non-negative by
construction) and optimized by plain gradient descent against the detector's
probability-space margin objectives. ``hybrid_capped`` additionally rescales
the squared perturbation so the trace never grows past ``(1 + M)`` times its
original size, and rotates through up to ``T`` target classes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detector import DetectorModel, input_gradient, objective_value, predict_proba
from .generator import DefendedTrace, nearest_target, run_batch, sample_pool, summarize
from .generator import GenerationConfig
from .trace_model import BurstTrace, bandwidth_overhead, round_bursts, size

MODES = ("base_untargeted", "base_targeted", "hybrid_capped")


@dataclass(frozen=True)
class CwConfig:
    mode: str = "hybrid_capped"
    max_overhead_M: float = 0.5
    max_target_changes_T: int = 8
    iters_per_target_k: int = 50
    step_size: float = 1.0
    init: float = 0.02
    kappa: float = 0.0
    dust: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not 0 < self.max_overhead_M <= 1:
            raise ValueError("max_overhead_M must lie in (0, 1]")
        if self.max_target_changes_T < 1 or self.iters_per_target_k < 1:
            raise ValueError("T and k must be >= 1")
        if self.step_size <= 0 or self.init <= 0:
            raise ValueError("step_size and init must be positive")
        if not 0 <= self.kappa < 1:
            raise ValueError("kappa must lie in [0, 1)")


def cw_objective(model: DetectorModel, trace, mode: str, cls: int, normalized: bool = False) -> float:
    """Targeted: max_{i!=t} F_i - F_t. Untargeted: F_y - max_{i!=y} F_i."""
    probs = predict_proba(model, trace, normalized=normalized)
    return objective_value(probs, _objective_name(mode), cls)


def _objective_name(mode: str) -> str:
    if mode in ("base_targeted", "hybrid_capped", "targeted"):
        return "cw_targeted"
    if mode in ("base_untargeted", "untargeted"):
        return "cw_untargeted"
    raise ValueError(f"unknown mode {mode!r}")


def scale_cap(source, current, raw_delta, M: float) -> np.ndarray:
    """Scale a non-negative perturbation so size(current + result) <= (1 + M) * size(source)."""
    raw = np.asarray(raw_delta, dtype=np.float64)
    if np.any(raw < 0):
        raise ValueError("raw_delta must be non-negative")
    budget = (1.0 + M) * size(source) - size(current)
    total = size(raw)
    if total == 0 or budget <= 0:
        return np.zeros_like(raw) if budget <= 0 else raw.copy()
    return raw * min(1.0, budget / total)


def round_within_budget(pert, budget: float) -> np.ndarray:
    """Integer perturbation close to ``pert`` whose total never exceeds ``budget``.

    Entries are floored, then the leftover packets go to the largest fractional
    parts (ties to the lower index). Plain ceil could overshoot the cap by up to
    one packet per perturbed burst.
    """
    pert = np.asarray(pert, dtype=np.float64)
    base = np.floor(pert)
    frac = pert - base
    spare = int(min(np.ceil(pert).sum(), max(budget, base.sum())) - base.sum())
    if spare > 0:
        order = np.argsort(-frac, kind="stable")
        order = order[frac[order] > 0][:spare]
        base[order] += 1.0
    return base


def _misclassified(probs, mode, cls, kappa) -> bool:
    value = objective_value(probs, _objective_name(mode), cls)
    top = int(np.argmax(probs))
    if _objective_name(mode) == "cw_targeted":
        return top == cls and value <= -kappa
    return top != cls and value <= -kappa


class RandomClassProvider:
    """Target provider drawing a uniformly random class other than the source."""

    def __init__(self, classes: int):
        self.classes = classes

    def __call__(self, source_label, x_norm, rng):
        choices = [c for c in range(self.classes) if c != source_label]
        return int(rng.choice(choices))


class PoolProvider:
    """Target provider reusing the Mockingbird pool: the nearest pool member's class.

    Members whose class the detector does not know (e.g. unmonitored sites)
    are ignored.
    """

    def __init__(self, pool_source, gen_cfg: GenerationConfig, scale: float, classes: int):
        self.pool_source = pool_source
        self.gen_cfg = gen_cfg
        self.scale = scale
        self.classes = classes

    def __call__(self, source_label, x_norm, rng):
        pool = sample_pool(source_label, self.pool_source, self.gen_cfg, rng)
        members = [m for m in pool.members if m.label < self.classes]
        if not members:
            return RandomClassProvider(self.classes)(source_label, x_norm, rng)
        idx, _ = nearest_target(x_norm, [m.bursts / self.scale for m in members])
        return members[idx].label


def cw_generate(source: BurstTrace, detector: DetectorModel, cfg: CwConfig, target_provider=None) -> DefendedTrace:
    rng = np.random.default_rng(cfg.seed)
    y = source.label
    scale = detector.normalization_scale
    src = source.bursts / scale
    targeted = cfg.mode != "base_untargeted"
    if targeted and target_provider is None:
        target_provider = RandomClassProvider(detector.classes)
    objective = _objective_name(cfg.mode)

    delta = np.full_like(src, cfg.init)

    def applied(d):
        raw = d * d
        if cfg.mode == "hybrid_capped":
            return scale_cap(src, src, raw, cfg.max_overhead_M)
        return raw

    iters = restarts = 0
    escaped = False
    segment_values = []
    for segment in range(cfg.max_target_changes_T + 1):
        if segment > 0:
            restarts += 1
        cls = target_provider(y, src + applied(delta), rng) if targeted else y
        values = []
        for _ in range(cfg.iters_per_target_k):
            pert = applied(delta)
            x = src + pert
            probs = predict_proba(detector, x, normalized=True)
            if _misclassified(probs, cfg.mode, cls, cfg.kappa):
                escaped = True
                break
            value, grad = input_gradient(detector, x, objective, cls)
            values.append(value)
            factor = pert.sum() / (delta * delta).sum() if cfg.mode == "hybrid_capped" else 1.0
            # chain rule through x = src + factor * delta**2, factor held fixed
            delta = delta - cfg.step_size * grad * factor * 2.0 * delta
            iters += 1
        else:
            probs = predict_proba(detector, src + applied(delta), normalized=True)
            escaped = _misclassified(probs, cfg.mode, cls, cfg.kappa)
        segment_values.append(values)
        if escaped:
            break

    pert = applied(delta) * scale
    pert[pert < cfg.dust] = 0.0
    if cfg.mode == "hybrid_capped":
        budget = np.floor((1.0 + cfg.max_overhead_M) * size(source)) - size(source)
        defended = source.with_bursts(source.bursts + round_within_budget(pert, budget))
    else:
        defended = round_bursts(source.with_bursts(source.bursts + pert))
    final_probs = predict_proba(detector, (source.bursts + pert) / scale, normalized=True)
    return DefendedTrace(
        original=source,
        defended=defended,
        delta=defended.bursts - source.bursts,
        overhead=bandwidth_overhead(source, defended),
        iterations_used=iters,
        restarts=restarts,
        final_source_confidence=float(final_probs[y]),
        escaped=escaped,
        log={
            "algo": "cw",
            "report_extra": {"mode": cfg.mode},
            "objective_trace": segment_values,
            # bursts rounded up past their real-valued perturbation
            "slack_entries": int(np.count_nonzero(defended.bursts - source.bursts > pert)),
        },
    )


def cw_generate_batch(dataset, detector, cfg: CwConfig, target_provider=None, workers: int = 1):
    fn = _CwJob(target_provider)
    results = run_batch(fn, list(dataset.traces), detector, None, cfg, workers)
    return results, summarize(results)


class _CwJob:
    """Picklable adapter matching run_batch's (trace, model, pool, cfg) calling shape."""

    def __init__(self, target_provider):
        self.target_provider = target_provider

    def __call__(self, trace, model, _pool, cfg):
        return cw_generate(trace, model, cfg, self.target_provider)
