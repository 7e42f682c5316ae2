"""Attack-side evaluation of defended traces.

Top-k accuracy, the two adversarial-training scenarios (attacker trained on
undefended vs. on defended traces) and the multi-round intersection attack.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .dataset_io import LabeledDataset
from .detector import DetectorModel, TrainConfig, predict_proba, top_k_from_probs, train
from .errors import BadK, LabelMismatch, MixedLabels
from .generator import DefendedTrace

REPORT_SCHEMA_VERSION = 1

SCENARIOS = ("without_adv_training", "with_adv_training", "undefended")

DEFAULT_ATTACKER = TrainConfig(
    seed=1009, hidden_dims=(256,), epochs=150, scale_quantile=0.99, arch_id="attacker-mlp"
)


@dataclass
class EvalReport:
    scenario: str
    top_k_accuracy: dict[int, float]
    mean_overhead: float | None
    n_test: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["top_k_accuracy"] = {str(k): v for k, v in self.top_k_accuracy.items()}
        d["schema_version"] = REPORT_SCHEMA_VERSION
        return d

    @property
    def top1(self) -> float:
        return self.top_k_accuracy[1]


def as_dataset(defended, classes: int | None = None) -> tuple[LabeledDataset, float | None]:
    """Accept a LabeledDataset or a list of DefendedTrace; return traces and mean overhead."""
    if isinstance(defended, LabeledDataset):
        return defended, None
    defended = list(defended)
    if classes is None:
        classes = max((d.original.label for d in defended), default=-1) + 1
    ds = LabeledDataset(classes, [d.defended for d in defended])
    mean = float(np.mean([d.overhead for d in defended])) if defended else None
    return ds, mean


def top_k_accuracy(model: DetectorModel, test: LabeledDataset, k_max: int = 10) -> dict[int, float]:
    if not 1 <= k_max <= model.classes:
        raise BadK(f"k_max={k_max} outside [1, {model.classes}]")
    if len(test) == 0:
        raise ValueError("empty test set")
    probs = predict_proba(model, test.matrix())
    return top_k_from_probabilities(probs, test.labels, k_max)


def top_k_from_probabilities(probs, labels, k_max: int) -> dict[int, float]:
    ranked = np.asarray(top_k_from_probs(probs, k_max))
    hits = ranked == np.asarray(labels)[:, None]
    cumulative = np.cumsum(hits, axis=1) > 0
    return {k: float(np.mean(cumulative[:, k - 1])) for k in range(1, k_max + 1)}


def _check_labels(train_set: LabeledDataset, test_set: LabeledDataset):
    if train_set.classes != test_set.classes:
        raise LabelMismatch(f"train has {train_set.classes} classes, test has {test_set.classes}")
    if len(test_set) == 0:
        raise ValueError("empty test set")


def eval_without_adv_training(
    attacker_train: LabeledDataset,
    defended_test,
    attacker_cfg: TrainConfig = DEFAULT_ATTACKER,
    k_max: int = 10,
    attacker: DetectorModel | None = None,
) -> EvalReport:
    """Attacker trained on undefended traces, tested on defended ones."""
    test, overhead = as_dataset(defended_test, attacker_train.classes)
    _check_labels(attacker_train, test)
    model = attacker if attacker is not None else train(attacker_train, attacker_cfg)
    k_max = min(k_max, model.classes)
    return EvalReport("without_adv_training", top_k_accuracy(model, test, k_max), overhead, len(test))


def eval_with_adv_training(
    defended_train,
    defended_test,
    attacker_cfg: TrainConfig = DEFAULT_ATTACKER,
    k_max: int = 10,
    classes: int | None = None,
) -> EvalReport:
    """Attacker trained on defended traces (adversarial training)."""
    train_set, _ = as_dataset(defended_train, classes)
    test, overhead = as_dataset(defended_test, train_set.classes)
    _check_labels(train_set, test)
    model = train(train_set, attacker_cfg)
    k_max = min(k_max, model.classes)
    return EvalReport("with_adv_training", top_k_accuracy(model, test, k_max), overhead, len(test))


# -- intersection attack -----------------------------------------------------


@dataclass(frozen=True)
class IntersectionResult:
    outcome: str  # "absolute_success" | "absolute_failure" | "intersection"
    l_int: frozenset
    sizes: tuple  # |L_int| after each round
    true_label: int

    @property
    def size(self) -> int:
        return len(self.l_int)


def intersect_rounds(round_sets: Sequence, true_label: int) -> IntersectionResult:
    """Fold L_int over per-round top-k label sets and classify the outcome."""
    if not round_sets:
        raise ValueError("need at least one round")
    l_int = frozenset(round_sets[0])
    sizes = [len(l_int)]
    for labels in round_sets[1:]:
        l_int = l_int & frozenset(labels)
        sizes.append(len(l_int))
    if l_int == {true_label}:
        outcome = "absolute_success"
    elif true_label not in l_int:
        outcome = "absolute_failure"
    else:
        outcome = "intersection"
    return IntersectionResult(outcome, l_int, tuple(sizes), true_label)


def intersection_attack(model: DetectorModel, per_round_traces, k: int = 10) -> IntersectionResult:
    traces = list(per_round_traces)
    if not traces:
        raise ValueError("need at least one round")
    labels = {t.label for t in traces}
    if len(labels) != 1:
        raise MixedLabels(f"rounds carry labels {sorted(labels)}")
    probs = predict_proba(model, np.stack([t.bursts for t in traces]))
    rounds = top_k_from_probs(probs, k)
    return intersect_rounds(rounds, labels.pop())


def summarize_intersection(results: Sequence[IntersectionResult]) -> dict:
    if not results:
        raise ValueError("no intersection results")
    n = len(results)
    success = sum(r.outcome == "absolute_success" for r in results)
    failure = sum(r.outcome == "absolute_failure" for r in results)
    middle = [r.size for r in results if r.outcome == "intersection"]
    return {
        "n": n,
        "success_rate": success / n,
        "failure_rate": failure / n,
        "intersection_rate": len(middle) / n,
        "mean_intersection": float(np.mean(middle)) if middle else None,
    }


# -- report output -------------------------------------------------------------


def report_json(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def topk_csv(reports: dict[str, EvalReport]) -> str:
    """Top-k curves, one row per (run, k)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run", "scenario", "k", "accuracy"])
    for name, rep in reports.items():
        for k, acc in sorted(rep.top_k_accuracy.items()):
            w.writerow([name, rep.scenario, k, repr(acc)])
    return buf.getvalue()
