"""End-to-end desk-scale experiments wiring the modules together."""

from __future__ import annotations

import logging
from dataclasses import replace

import numpy as np

from .cw import CwConfig, cw_generate_batch
from .dataset_io import LabeledDataset, split_half, stratified_split
from .detector import TrainConfig, train
from .evaluation import (
    DEFAULT_ATTACKER,
    EvalReport,
    eval_with_adv_training,
    eval_without_adv_training,
    intersection_attack,
    summarize_intersection,
    top_k_accuracy,
)
from .generator import GenerationConfig, generate_batch

log = logging.getLogger(__name__)

DEFAULT_DETECTOR = TrainConfig(seed=0, hidden_dims=(128,), arch_id="detector-mlp")

# offsets so train/test generation runs never share per-trace seeds
TRAIN_SEED_OFFSET = 1_000_003
TEST_SEED_OFFSET = 2_000_029


def defend(algo: str, dataset, detector, pool_source, gen_cfg, cw_cfg, seed, workers=1):
    if algo == "mockingbird":
        return generate_batch(dataset, detector, pool_source, replace(gen_cfg, seed=seed), workers)
    if algo == "cw":
        return cw_generate_batch(dataset, detector, replace(cw_cfg, seed=seed), workers=workers)
    raise ValueError(f"unknown algorithm {algo!r}")


def adversarial_training_study(
    dataset: LabeledDataset,
    seed: int = 0,
    gen_cfg: GenerationConfig = GenerationConfig(),
    cw_cfg: CwConfig = CwConfig(mode="base_untargeted"),
    detector_cfg: TrainConfig = DEFAULT_DETECTOR,
    attacker_cfg: TrainConfig = DEFAULT_ATTACKER,
    algos=("cw", "mockingbird"),
    workers: int = 1,
    k_max: int = 10,
) -> dict:
    """Clean, without- and with-adversarial-training Top-k for each algorithm.

    The detector and the clean attacker are both trained on the detector half;
    sources come from the adv half, split 90/10 into adversarial-training and
    test sources that are defended in independent runs.
    """
    split = split_half(dataset, seed)
    detector = train(split.detector_set, replace(detector_cfg, seed=detector_cfg.seed + seed))
    attacker_cfg = replace(attacker_cfg, seed=attacker_cfg.seed + seed)
    clean_attacker = train(split.detector_set, attacker_cfg)
    k_max = min(k_max, dataset.classes)
    reports: dict[str, EvalReport] = {
        "clean": EvalReport("undefended", top_k_accuracy(clean_attacker, split.adv_set, k_max), 0.0,
                            len(split.adv_set))
    }
    adv_train, adv_test = stratified_split(split.adv_set, 0.9, seed)
    summaries = {}
    for algo in algos:
        train_def, train_sum = defend(algo, adv_train, detector, split.adv_set, gen_cfg, cw_cfg,
                                      seed + TRAIN_SEED_OFFSET, workers)
        test_def, test_sum = defend(algo, adv_test, detector, split.adv_set, gen_cfg, cw_cfg,
                                    seed + TEST_SEED_OFFSET, workers)
        reports[f"{algo}_without_adv_training"] = eval_without_adv_training(
            split.detector_set, train_def + test_def, attacker=clean_attacker, k_max=k_max
        )
        reports[f"{algo}_with_adv_training"] = eval_with_adv_training(
            train_def, test_def, attacker_cfg, k_max=k_max, classes=dataset.classes
        )
        summaries[algo] = {"train": train_sum, "test": test_sum}
        log.info("%s: %s", algo, {k: v.top1 for k, v in reports.items()})
    return {"reports": reports, "generation": summaries, "detector": detector}


def intersection_study(
    dataset: LabeledDataset,
    seed: int = 0,
    rounds: int = 5,
    users_per_class: int = 2,
    gen_cfg: GenerationConfig = GenerationConfig(),
    detector_cfg: TrainConfig = DEFAULT_DETECTOR,
    attacker_cfg: TrainConfig = DEFAULT_ATTACKER,
    k: int = 10,
    workers: int = 1,
) -> dict:
    """Multi-round intersection attack against an adversarially trained attacker.

    Each simulated user visits one class ``rounds`` times; every visit is a
    different adv-set instance of that class with its own fresh defense.
    """
    split = split_half(dataset, seed)
    detector = train(split.detector_set, replace(detector_cfg, seed=detector_cfg.seed + seed))
    adv_train, adv_test = stratified_split(split.adv_set, 0.5, seed)
    train_def, _ = generate_batch(adv_train, detector, split.adv_set,
                                  replace(gen_cfg, seed=seed + TRAIN_SEED_OFFSET), workers)
    attacker = train(LabeledDataset(dataset.classes, [d.defended for d in train_def]),
                     replace(attacker_cfg, seed=attacker_cfg.seed + seed))
    rng = np.random.default_rng(seed)
    by_class = adv_test.by_class()
    results = []
    user = 0
    for label in sorted(by_class):
        for _ in range(users_per_class):
            picks = rng.choice(by_class[label], size=rounds, replace=len(by_class[label]) < rounds)
            visits = LabeledDataset(dataset.classes, [adv_test.traces[i] for i in picks])
            cfg = replace(gen_cfg, seed=seed + TEST_SEED_OFFSET + 7919 * user)
            defended, _ = generate_batch(visits, detector, split.adv_set, cfg, workers)
            results.append(intersection_attack(attacker, [d.defended for d in defended], k))
            user += 1
    return {"results": results, "summary": summarize_intersection(results)}
