import json

import pytest

from mockingbird.cli import EXIT_DATA, EXIT_IO, EXIT_OK, EXIT_USAGE, build_parser, main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "synth"), "--classes", "4", "--instances", "6",
                 "--unmonitored", "12"]) == EXIT_OK
    assert main(["train", "--data", str(root / "synth/dataset.txt"), "--out", str(root / "model"),
                 "--epochs", "30", "--hidden", "16"]) == EXIT_OK
    return root


def _manifest(d):
    return json.loads((d / "manifest.json").read_text())


def test_synth_and_train_manifests(workspace):
    m = _manifest(workspace / "model")
    assert m["status"] == "ok" and m["command"] == "train"
    assert set(m) >= {"config_hash", "seed", "versions", "outputs"}
    assert "model.bin" in m["outputs"]


@pytest.mark.parametrize("algo_args", [
    ["--algo", "mockingbird", "--alpha", "5", "--tau-c", "0.01", "--tau-d", "0.0001", "--iters", "60", "--case", "I"],
    ["--algo", "mockingbird", "--iters", "40", "--case", "II", "--pool-size", "5"],
    ["--algo", "cw", "--mode", "hybrid", "--max-overhead", "0.5", "--target-changes", "2", "--k", "10"],
])
def test_generate_replay_is_byte_identical(workspace, tmp_path, algo_args):
    data = str(workspace / "synth/dataset.txt")
    model = str(workspace / "model/model.bin")
    pool = ["--pool", str(workspace / "synth/unmonitored.txt")] if "II" in algo_args else []
    out = tmp_path / "gen"
    assert main(["generate", "--data", data, "--model", model, "--out", str(out), *pool, *algo_args]) == EXIT_OK
    assert main(["replay", str(out / "manifest.json"), "--out", str(tmp_path / "again"), "--workers", "2"]) == EXIT_OK
    for name in ("defended.txt", "report.jsonl", "summary.json"):
        assert (out / name).read_bytes() == (tmp_path / "again" / name).read_bytes()
    rows = [json.loads(line) for line in (out / "report.jsonl").read_text().splitlines()]
    assert len(rows) == 24 and {"index", "overhead", "escaped"} <= set(rows[0])


def test_evaluate_without_and_with(workspace, tmp_path):
    data = str(workspace / "synth/dataset.txt")
    out = tmp_path / "ev"
    assert main(["evaluate", "--scenario", "without", "--train", data, "--test", data, "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["reports"]["without"]["top_k_accuracy"]["4"] == 1.0
    assert (out / "topk.csv").read_text().startswith("run,scenario,k,accuracy\n")


def test_mold_command(tmp_path):
    trace = tmp_path / "real.jsonl"
    trace.write_text("".join(json.dumps({"t": i, "dir": d, "kind": "real"}) + "\n"
                             for i, d in enumerate([1, 1, 1, -1, -1, -1, -1, -1])))
    target = tmp_path / "target.txt"
    target.write_text("0 4 6\n")
    out = tmp_path / "mold"
    assert main(["mold", "--trace", str(trace), "--target", str(target), "--timeout-ms", "50", "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["added_latency_ms"] == 100.0 and rep["dummy_count"] == 2 and rep["verified"]


def test_preprocess_command(tmp_path):
    raw = tmp_path / "raw.txt"
    lines = ["0 " + " ".join(["1", "-1"] * 30), "1 " + " ".join(["-1", "1"] * 30), "1 1 -1"]
    raw.write_text("\n".join(lines) + "\n")
    before = raw.read_bytes()
    out = tmp_path / "clean" / "clean.txt"
    assert main(["preprocess", "--in", str(raw), "--out", str(out), "--min-packets", "50"]) == EXIT_OK
    assert out.read_text().count("\n") == 1
    assert raw.read_bytes() == before
    m = json.loads((tmp_path / "clean" / "clean.txt.manifest.json").read_text())
    assert m["status"] == "ok"


def test_missing_input_leaves_nothing(tmp_path, capsys):
    out = tmp_path / "x"
    assert main(["train", "--data", str(tmp_path / "nope.txt"), "--out", str(out)]) == EXIT_IO
    assert not out.exists()
    assert "not found" in capsys.readouterr().err


def test_nonempty_output_rejected(workspace):
    assert main(["synth", "--out", str(workspace / "synth")]) == EXIT_USAGE


def test_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"synthetic": {"classes": 3, "instances_per_class": 2}}))
    out = tmp_path / "s"
    assert main(["synth", "--config", str(cfg), "--out", str(out), "--classes", "5"]) == EXIT_OK
    labels = {line.split()[0] for line in (out / "dataset.txt").read_text().splitlines()}
    assert labels == {"0", "1", "2", "3", "4"}
    assert _manifest(out)["config_doc"] == {"synthetic": {"classes": 3, "instances_per_class": 2}}


@pytest.mark.parametrize("doc", [{"bogus": {}}, {"train": {"epochz": 3}}, {"cw": {"mode": "nope"}}])
def test_config_schema_violations(tmp_path, doc):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps(doc))
    data = tmp_path / "d.txt"
    data.write_text("0 1 2\n1 3 4\n")
    rc = main(["generate", "--config", str(cfg), "--data", str(data), "--model", str(data),
               "--out", str(tmp_path / "o")]) if "cw" in doc else \
        main(["train", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path / "o")])
    assert rc == EXIT_USAGE


def test_bad_model_is_data_error_with_failed_manifest(workspace, tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"garbage")
    out = tmp_path / "o"
    rc = main(["generate", "--data", str(workspace / "synth/dataset.txt"), "--model", str(bad), "--out", str(out)])
    assert rc == EXIT_DATA
    m = _manifest(out)
    assert m["status"] == "failed" and "error" in m


def test_parse_error_exit_code(tmp_path):
    data = tmp_path / "d.txt"
    data.write_text("0 1 x\n")
    assert main(["train", "--data", str(data), "--out", str(tmp_path / "o")]) == EXIT_DATA


def test_help_documents_exit_codes():
    text = build_parser().format_help()
    assert "exit codes" in text and "3  I/O error" in text
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--algo", "nope"])
    assert exc.value.code == 2


@pytest.mark.parametrize("command", ["evaluate", "intersect"])
def test_study_replay_is_byte_identical(workspace, tmp_path, command):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"generation": {"pool_size": 5, "max_iters": 40},
                               "cw": {"iters_per_target_k": 10, "max_target_changes_T": 1}}))
    out = tmp_path / "first"
    args = [command, "--config", str(cfg), "--data", str(workspace / "synth/dataset.txt"), "--out", str(out)]
    if command == "intersect":
        args += ["--rounds", "3", "--k", "2"]
    assert main(args) == EXIT_OK
    cfg.write_text("{}")  # replay must not depend on the config file any more
    assert main(["replay", str(out / "manifest.json"), "--out", str(tmp_path / "second"), "--workers", "2"]) == EXIT_OK
    for name in _manifest(out)["outputs"]:
        assert (out / name).read_bytes() == (tmp_path / "second" / name).read_bytes()
