import numpy as np
import pytest

from mockingbird.dataset_io import (
    LabeledDataset,
    SyntheticSpec,
    generate_synthetic,
    generate_unmonitored,
    load_traces,
    preprocess,
    save_traces,
    split_half,
    stratified_split,
)
from mockingbird.detector import TrainConfig, accuracy, train
from mockingbird.errors import ClassTooSmall, LabelOutOfRange, ParseError
from mockingbird.trace_model import BurstTrace, PacketTrace


def _pt(label, n, first=1):
    d = [first] + [1 if i % 3 else -1 for i in range(n - 1)]
    return PacketTrace(label, d)


def test_preprocess_filters():
    raw = LabeledDataset(2, [_pt(0, 49), _pt(0, 100, first=-1), _pt(1, 50), _pt(1, 80)])
    out = preprocess(raw, 50)
    assert [len(t) for t in out] == [50, 80]
    assert out.report == {"input": 4, "kept": 2, "removed_short": 1, "removed_incoming": 1, "empty": False}


def test_preprocess_everything_removed_flags_empty():
    out = preprocess(LabeledDataset(1, [_pt(0, 3)]), 50)
    assert len(out) == 0 and out.report["empty"]


def _balanced(per_class, classes=3):
    return LabeledDataset(classes, [BurstTrace(c, [i + 1, c + 1]) for c in range(classes) for i in range(per_class)])


@pytest.mark.parametrize("per_class,half", [(10, 5), (2, 1), (7, 4)])
def test_split_half_sizes(per_class, half):
    s = split_half(_balanced(per_class), seed=1)
    assert all(v == half for v in s.adv_set.per_class_counts.values())
    assert all(v == per_class - half for v in s.detector_set.per_class_counts.values())


def test_split_half_deterministic_and_disjoint():
    ds = _balanced(10)
    a, b = split_half(ds, 4), split_half(ds, 4)
    assert a.adv_set.traces == b.adv_set.traces
    adv = {t.bursts.tobytes() + bytes([t.label]) for t in a.adv_set}
    det = {t.bursts.tobytes() + bytes([t.label]) for t in a.detector_set}
    assert not adv & det


def test_split_half_too_small():
    with pytest.raises(ClassTooSmall):
        split_half(LabeledDataset(2, [BurstTrace(0, [1]), BurstTrace(1, [1]), BurstTrace(1, [2])]), 0)


def test_stratified_split_keeps_every_class():
    a, b = stratified_split(_balanced(10), 0.9, 0)
    assert a.per_class_counts == {0: 9, 1: 9, 2: 9}
    assert b.per_class_counts == {0: 1, 1: 1, 2: 1}


def test_load_directions_line(tmp_path):
    p = tmp_path / "d.txt"
    p.write_text("3 1 1 -1 1\n")
    ds = load_traces(p, "directions")
    assert ds.traces[0] == PacketTrace(3, [1, 1, -1, 1])


def test_load_bursts_line(tmp_path):
    p = tmp_path / "b.txt"
    p.write_text("0 2 3 1\n")
    t = load_traces(p, "bursts").traces[0]
    assert t.label == 0 and t.bursts.size == 750
    assert t.bursts[:4].tolist() == [2, 3, 1, 0]


def test_parse_error_names_line(tmp_path):
    p = tmp_path / "b.txt"
    p.write_text("0 1 -1\n1 1 x\n")
    with pytest.raises(ParseError, match="line 2"):
        load_traces(p, "directions")


def test_label_out_of_range(tmp_path):
    p = tmp_path / "b.txt"
    p.write_text("0 1\n5 2\n")
    with pytest.raises(LabelOutOfRange):
        load_traces(p, "bursts", classes=3)


def test_too_many_bursts_rejected(tmp_path):
    p = tmp_path / "b.txt"
    p.write_text("0 1 2 3\n")
    with pytest.raises(ParseError):
        load_traces(p, "bursts", fixed_len=2)


@pytest.mark.parametrize("fmt", ["directions", "bursts"])
def test_save_load_round_trip(tmp_path, fmt):
    if fmt == "directions":
        ds = LabeledDataset(3, [_pt(0, 60), _pt(2, 51), _pt(1, 77)])
    else:
        ds = LabeledDataset(3, [BurstTrace(0, [1.5, 0, 2] + [0] * 747), BurstTrace(2, [4.0] * 750)])
    p = tmp_path / "x.txt"
    save_traces(ds, p, fmt)
    back = load_traces(p, fmt, classes=3)
    assert back.traces == ds.traces
    save_traces(back, tmp_path / "y.txt", fmt)
    assert (tmp_path / "y.txt").read_bytes() == p.read_bytes()


def test_synthetic_deterministic_and_clipped():
    spec = SyntheticSpec(classes=2, instances_per_class=4, seed=7)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    assert a.traces == b.traces
    m = a.matrix()
    nz = m[m > 0]
    assert nz.min() >= spec.mag_range[0] and nz.max() <= spec.mag_range[1]
    assert np.array_equal(nz, np.round(nz))
    lens = [t.logical_len for t in a]
    assert min(lens) >= spec.burst_count_range[0] and max(lens) <= spec.burst_count_range[1]


def test_synthetic_uniform_distribution():
    ds = generate_synthetic(SyntheticSpec(classes=3, instances_per_class=2, distribution="uniform"))
    assert len(ds) == 6


def test_unmonitored_labels_offset():
    ow = generate_unmonitored(5, seed=2, label_offset=20)
    assert sorted(t.label for t in ow) == list(range(20, 25))


def test_synthetic_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(burst_count_range=(10, 5))
    with pytest.raises(ValueError):
        SyntheticSpec(noise=1.5)


def test_default_synthetic_is_learnable():
    ds = generate_synthetic(SyntheticSpec())
    s = split_half(ds, 0)
    model = train(s.detector_set, TrainConfig(seed=0))
    assert accuracy(model, s.adv_set) > 0.9
