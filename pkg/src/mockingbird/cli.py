"""Command-line front end: synth, preprocess, train, generate, evaluate, intersect, mold.

Every subcommand writes its artifacts plus ``manifest.json`` into a fresh
run directory (``preprocess`` writes ``<out>.manifest.json`` next to its
output file). ``replay`` re-executes a manifest into a new directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .cw import CwConfig, PoolProvider, cw_generate_batch
from .dataset_io import (
    LabeledDataset,
    SyntheticSpec,
    generate_synthetic,
    generate_unmonitored,
    load_traces,
    preprocess,
    save_traces,
    split_half,
)
from .detector import TrainConfig, accuracy, load_model, save_model, train
from .errors import ConfigError, LabelOutOfRange, ModelFormatError, MockingbirdError, ParseError
from .evaluation import (
    DEFAULT_ATTACKER,
    eval_with_adv_training,
    eval_without_adv_training,
    report_json,
    topk_csv,
)
from .generator import GenerationConfig, generate_batch
from .molding import MoldingConfig, dump_events, load_events, mold, result_summary, verify_molding
from .pipeline import DEFAULT_DETECTOR, adversarial_training_study, intersection_study

log = logging.getLogger("mockingbird")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DATA = 4
EXIT_ALGORITHM = 5

EXIT_CODES_HELP = """\
exit codes:
  0  success
  1  unexpected internal error
  2  usage or config error (bad flags, unknown config keys, output dir not empty)
  3  I/O error (missing or unreadable input, unwritable output)
  4  data format error (parse error, label out of range, bad model file)
  5  algorithm error raised by a module (e.g. insufficient target pool)
"""

CONFIG_SECTIONS = {
    "train": TrainConfig,
    "generation": GenerationConfig,
    "cw": CwConfig,
    "molding": MoldingConfig,
    "synthetic": SyntheticSpec,
}


class UsageError(Exception):
    pass


# runs opened during the current invocation; a failure marks them status=failed
_OPEN_RUNS: list = []


# -- config -------------------------------------------------------------------


def load_run_config(path) -> dict:
    """Read a RunConfig JSON document; unknown sections or keys are rejected."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    allowed = set(CONFIG_SECTIONS) | {"paths", "output_dir"}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    for section, cls in CONFIG_SECTIONS.items():
        body = doc.get(section, {})
        if not isinstance(body, dict):
            raise ConfigError(f"section {section!r} must be an object")
        names = {f.name for f in fields(cls)}
        bad = set(body) - names
        if bad:
            raise ConfigError(f"unknown keys in {section!r}: {sorted(bad)}")
    if not isinstance(doc.get("paths", {}), dict):
        raise ConfigError("'paths' must be an object")
    return doc


def build(cls, base, section: dict, overrides: dict):
    """Dataclass from defaults <- config section <- explicit flags."""
    values = {k: v for k, v in section.items()}
    values.update({k: v for k, v in overrides.items() if v is not None})
    for k, v in list(values.items()):
        if isinstance(v, list):
            values[k] = tuple(v)
    try:
        return replace(base, **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from None


def _jsonable(obj):
    if hasattr(obj, "__dataclass_fields__"):
        return {k: _jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def canonical(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- run directory --------------------------------------------------------------


class Run:
    """Per-run output directory and its manifest."""

    def __init__(self, command: str, out: Path, args: dict, config: dict, inputs: list[str],
                 manifest_path: Path | None = None):
        self.command = command
        self.out = Path(out)
        self.args = args
        self.config = config
        self.inputs = inputs
        self.outputs: dict[str, str] = {}
        self.manifest_path = manifest_path or self.out / "manifest.json"
        self.config_doc: dict = {}
        _OPEN_RUNS.append(self)

    def path(self, name: str) -> Path:
        return self.out / name

    def write_text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_bytes(text.encode("utf-8"))
        self.outputs[name] = sha256_file(p)
        return p

    def record(self, name: str, path: Path):
        self.outputs[name] = sha256_file(path)

    def manifest(self, status: str, error: str | None = None) -> dict:
        doc = {
            "command": self.command,
            "args": self.args,
            "config": self.config,
            "config_doc": self.config_doc,
            "config_hash": hashlib.sha256(canonical(self.config).encode()).hexdigest(),
            "seed": self.config.get("seed"),
            "inputs": {p: sha256_file(p) for p in self.inputs if Path(p).is_file()},
            "outputs": dict(sorted(self.outputs.items())),
            "status": status,
            "versions": {
                "mockingbird": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
            },
        }
        if error:
            doc["error"] = error
        return doc

    def finish(self, status: str, error: str | None = None):
        self.manifest_path.write_text(report_json(self.manifest(status, error)), encoding="utf-8")


def _check_inputs(paths):
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise FileNotFoundError(f"input file not found: {p}")


def _prepare_dir(out) -> Path:
    out = Path(out)
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        raise UsageError(f"output directory {out} exists and is not empty")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _args_dict(ns: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(ns).items()) if k not in ("func", "verbose")}


def _paths_from_config(ns, doc):
    for key, value in doc.get("paths", {}).items():
        if getattr(ns, key, None) is None:
            setattr(ns, key, value)


# -- subcommands ----------------------------------------------------------------


def cmd_synth(ns, doc):
    spec = build(SyntheticSpec, SyntheticSpec(), doc.get("synthetic", {}), {
        "classes": ns.classes, "instances_per_class": ns.instances, "seed": ns.seed,
        "fixed_len": ns.fixed_len,
    })
    out = _prepare_dir(ns.out)
    run = Run("synth", out, _args_dict(ns), {"synthetic": _jsonable(spec), "seed": spec.seed}, [])
    ds = generate_synthetic(spec)
    save_traces(ds, run.path("dataset.txt"), "bursts")
    run.record("dataset.txt", run.path("dataset.txt"))
    if ns.unmonitored:
        ow = generate_unmonitored(ns.unmonitored, spec.seed + 1, spec.classes, spec)
        save_traces(ow, run.path("unmonitored.txt"), "bursts")
        run.record("unmonitored.txt", run.path("unmonitored.txt"))
    return run


def cmd_preprocess(ns, doc):
    _check_inputs([ns.input])
    out = Path(ns.out)
    if out.exists():
        raise UsageError(f"output file {out} already exists")
    raw = load_traces(ns.input, "directions", fixed_len=ns.fixed_len)
    cleaned = preprocess(raw, ns.min_packets)
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest = out.with_name(out.name + ".manifest.json")
    run = Run("preprocess", out.parent, _args_dict(ns), {"min_packets": ns.min_packets, "seed": None},
              [ns.input], manifest)
    fmt = ns.format
    data = cleaned if fmt == "directions" else _to_bursts(cleaned, ns.fixed_len)
    save_traces(data, out, fmt)
    run.record(out.name, out)
    report = out.with_name(out.name + ".report.json")
    report.write_text(report_json(cleaned.report), encoding="utf-8")
    run.record(report.name, report)
    return run


def _to_bursts(ds, fixed_len):
    from .dataset_io import to_bursts

    return to_bursts(ds, fixed_len)


def _load_bursts(path, fixed_len, classes=None):
    return load_traces(path, "bursts", classes=classes, fixed_len=fixed_len)


def cmd_train(ns, doc):
    _check_inputs([ns.data])
    base = DEFAULT_ATTACKER if ns.role == "attacker" else DEFAULT_DETECTOR
    cfg = build(TrainConfig, base, doc.get("train", {}), {
        "epochs": ns.epochs, "learning_rate": ns.lr, "seed": ns.seed,
        "hidden_dims": tuple(ns.hidden) if ns.hidden else None,
    })
    out = _prepare_dir(ns.out)
    run = Run("train", out, _args_dict(ns), {"train": _jsonable(cfg), "seed": cfg.seed}, [ns.data])
    ds = _load_bursts(ns.data, ns.fixed_len, ns.classes)
    if ns.split != "none":
        halves = split_half(ds, ns.split_seed)
        ds = halves.detector_set if ns.split == "detector" else halves.adv_set
    model = train(ds, cfg)
    save_model(model, run.path("model.bin"))
    run.record("model.bin", run.path("model.bin"))
    run.write_text("train_report.json", report_json({
        "n_train": len(ds), "classes": ds.classes, "train_accuracy": accuracy(model, ds),
        "input_width": model.input_dim, "normalization_scale": model.normalization_scale,
        "arch_id": model.arch_id,
    }))
    return run


def cmd_generate(ns, doc):
    _check_inputs([ns.data, ns.model, ns.pool])
    gen = build(GenerationConfig, GenerationConfig(), doc.get("generation", {}), {
        "alpha": ns.alpha, "tau_c": ns.tau_c, "tau_d": ns.tau_d, "lam": ns.lam,
        "pool_size": ns.pool_size, "max_iters": ns.iters, "target_case": ns.case, "seed": ns.seed,
    })
    mode = {"hybrid": "hybrid_capped", "untargeted": "base_untargeted", "targeted": "base_targeted"}.get(
        ns.mode, ns.mode)
    cwc = build(CwConfig, CwConfig(), doc.get("cw", {}), {
        "mode": mode, "max_overhead_M": ns.max_overhead, "max_target_changes_T": ns.target_changes,
        "iters_per_target_k": ns.k, "step_size": ns.step_size, "seed": ns.seed,
    })
    out = _prepare_dir(ns.out)
    config = {"algo": ns.algo, "seed": gen.seed if ns.algo == "mockingbird" else cwc.seed}
    config["generation" if ns.algo == "mockingbird" else "cw"] = _jsonable(
        gen if ns.algo == "mockingbird" else cwc)
    config["generation_pool"] = _jsonable(gen) if ns.algo == "cw" else None
    run = Run("generate", out, _args_dict(ns), config, [p for p in (ns.data, ns.model, ns.pool) if p])
    model = load_model(ns.model)
    sources = _load_bursts(ns.data, model.input_dim, model.classes)
    pool_path = ns.pool or ns.data
    pool = load_traces(pool_path, "bursts", fixed_len=model.input_dim)
    if ns.algo == "mockingbird":
        results, summary = generate_batch(sources, model, pool, gen, ns.workers)
    else:
        provider = PoolProvider(pool, gen, model.normalization_scale, model.classes)
        results, summary = cw_generate_batch(sources, model, cwc, provider, ns.workers)
    defended = LabeledDataset(sources.classes, [r.defended for r in results])
    save_traces(defended, run.path("defended.txt"), "bursts")
    run.record("defended.txt", run.path("defended.txt"))
    rows = [json.dumps(_jsonable(r.report_row(i)), sort_keys=True) for i, r in enumerate(results)]
    run.write_text("report.jsonl", "".join(r + "\n" for r in rows))
    run.write_text("summary.json", report_json(summary | {"algo": ns.algo}))
    return run


def cmd_evaluate(ns, doc):
    if ns.scenario == "study":
        _check_inputs([ns.data])
        gen = build(GenerationConfig, GenerationConfig(), doc.get("generation", {}), {"seed": ns.seed})
        cwc = build(CwConfig, CwConfig(mode="base_untargeted"), doc.get("cw", {}), {"seed": ns.seed})
        out = _prepare_dir(ns.out)
        run = Run("evaluate", out, _args_dict(ns),
                  {"generation": _jsonable(gen), "cw": _jsonable(cwc), "seed": ns.seed}, [ns.data])
        ds = _load_bursts(ns.data, ns.fixed_len, ns.classes)
        res = adversarial_training_study(ds, ns.seed, gen, cwc, workers=ns.workers)
        reports = res["reports"]
        payload = {
            "schema_version": 1,
            "reports": {k: v.to_dict() for k, v in reports.items()},
            "generation": res["generation"],
        }
    else:
        _check_inputs([ns.train, ns.test])
        out = _prepare_dir(ns.out)
        cfg = build(TrainConfig, DEFAULT_ATTACKER, doc.get("train", {}), {"seed": ns.seed})
        run = Run("evaluate", out, _args_dict(ns), {"train": _jsonable(cfg), "seed": cfg.seed},
                  [ns.train, ns.test])
        train_set = _load_bursts(ns.train, ns.fixed_len, ns.classes)
        test_set = _load_bursts(ns.test, ns.fixed_len, train_set.classes)
        if ns.scenario == "without":
            rep = eval_without_adv_training(train_set, test_set, cfg)
        else:
            rep = eval_with_adv_training(train_set, test_set, cfg)
        reports = {ns.scenario: rep}
        payload = {"schema_version": 1, "reports": {k: v.to_dict() for k, v in reports.items()}}
    run.write_text("report.json", report_json(payload))
    run.write_text("topk.csv", topk_csv(reports))
    return run


def cmd_intersect(ns, doc):
    _check_inputs([ns.data])
    gen = build(GenerationConfig, GenerationConfig(), doc.get("generation", {}), {"seed": ns.seed})
    out = _prepare_dir(ns.out)
    run = Run("intersect", out, _args_dict(ns), {"generation": _jsonable(gen), "seed": ns.seed}, [ns.data])
    ds = _load_bursts(ns.data, ns.fixed_len, ns.classes)
    res = intersection_study(ds, ns.seed, ns.rounds, ns.users_per_class, gen, k=ns.k, workers=ns.workers)
    rows = [{"true_label": r.true_label, "outcome": r.outcome, "l_int": sorted(r.l_int),
             "sizes": list(r.sizes)} for r in res["results"]]
    run.write_text("report.json", report_json({"schema_version": 1, "summary": res["summary"],
                                               "users": rows}))
    return run


def cmd_mold(ns, doc):
    _check_inputs([ns.trace, ns.target])
    cfg = build(MoldingConfig, MoldingConfig(), doc.get("molding", {}), {"timeout_ms": ns.timeout_ms})
    out = _prepare_dir(ns.out)
    run = Run("mold", out, _args_dict(ns), {"molding": _jsonable(cfg), "seed": None},
              [ns.trace, ns.target])
    events = load_events(ns.trace)
    targets = load_traces(ns.target, "bursts", fixed_len=ns.fixed_len)
    if not 0 <= ns.index < len(targets):
        raise UsageError(f"--index {ns.index} outside the {len(targets)} target traces")
    target = targets.traces[ns.index]
    result = mold(events, target, cfg)
    dump_events(result.events, run.path("events.jsonl"))
    run.record("events.jsonl", run.path("events.jsonl"))
    summary = result_summary(result, cfg) | {"verified": verify_molding(result.events, target, events)}
    run.write_text("report.json", report_json(summary))
    return run


def cmd_replay(ns, doc):
    """Re-run the command recorded in a manifest, into a new output location."""
    _check_inputs([ns.manifest])
    try:
        manifest = json.loads(Path(ns.manifest).read_text(encoding="utf-8"))
        command, args = manifest["command"], dict(manifest["args"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParseError(f"{ns.manifest}: not a run manifest ({exc})", 1) from None
    if command not in COMMANDS or command == "replay":
        raise ParseError(f"{ns.manifest}: cannot replay command {command!r}", 1)
    args["out"] = ns.out
    if ns.workers is not None and "workers" in args:
        args["workers"] = ns.workers
    sub = argparse.Namespace(**args)
    # the config file may have changed since; the manifest keeps the parsed copy
    return _execute(command, sub, manifest.get("config_doc") or {})


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "intersect": cmd_intersect,
    "mold": cmd_mold,
    "replay": cmd_replay,
}


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mockingbird",
        description="Adversarial-trace website fingerprinting defense toolkit (desk scale).",
        epilog=EXIT_CODES_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sp = p.add_subparsers(dest="command", required=True)

    def sub(name, help_):
        s = sp.add_parser(name, help=help_, epilog=EXIT_CODES_HELP,
                          formatter_class=argparse.RawDescriptionHelpFormatter)
        s.add_argument("--config", help="RunConfig JSON; explicit flags override it")
        s.add_argument("--fixed-len", type=int, default=750, help="burst vector length")
        return s

    s = sub("synth", "generate a synthetic burst dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--classes", type=int)
    s.add_argument("--instances", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--unmonitored", type=int, default=0, help="also write N open-world sites")

    s = sub("preprocess", "filter a directions-format dataset")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--min-packets", type=int, default=50)
    s.add_argument("--format", choices=("directions", "bursts"), default="directions")

    s = sub("train", "train a detector or attacker model")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--role", choices=("detector", "attacker"), default="detector")
    s.add_argument("--split", choices=("none", "detector", "adv"), default="none")
    s.add_argument("--split-seed", type=int, default=0)
    s.add_argument("--classes", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--hidden", type=int, nargs="+")
    s.add_argument("--seed", type=int)

    s = sub("generate", "generate defended traces")
    s.add_argument("--algo", choices=("mockingbird", "cw"), default="mockingbird")
    s.add_argument("--data", required=True, help="source traces (bursts format)")
    s.add_argument("--model", required=True, help="detector model file")
    s.add_argument("--pool", help="target pool traces (default: --data)")
    s.add_argument("--out", required=True)
    s.add_argument("--alpha", type=float)
    s.add_argument("--tau-c", type=float)
    s.add_argument("--tau-d", type=float)
    s.add_argument("--lambda", dest="lam", type=int)
    s.add_argument("--pool-size", type=int)
    s.add_argument("--iters", type=int)
    s.add_argument("--case", choices=("I", "II"))
    s.add_argument("--mode", choices=("hybrid", "untargeted", "targeted",
                                      "hybrid_capped", "base_untargeted", "base_targeted"))
    s.add_argument("--max-overhead", type=float)
    s.add_argument("--target-changes", type=int)
    s.add_argument("--k", type=int, help="C&W iterations per target")
    s.add_argument("--step-size", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int, default=1)

    s = sub("evaluate", "evaluate defended traces against an attacker")
    s.add_argument("--scenario", choices=("study", "without", "with"), default="study")
    s.add_argument("--data", help="full dataset for --scenario study")
    s.add_argument("--train", help="attacker training traces")
    s.add_argument("--test", help="defended test traces")
    s.add_argument("--classes", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=1)

    s = sub("intersect", "multi-round intersection attack study")
    s.add_argument("--data", required=True)
    s.add_argument("--classes", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--rounds", type=int, default=5)
    s.add_argument("--users-per-class", type=int, default=2)
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=1)

    s = sub("mold", "simulate burst molding of an event stream onto a target")
    s.add_argument("--trace", required=True, help="real events, JSON lines {t, dir, kind}")
    s.add_argument("--target", required=True, help="target bursts file")
    s.add_argument("--index", type=int, default=0, help="which target line to use")
    s.add_argument("--timeout-ms", type=float)
    s.add_argument("--out", required=True)

    s = sp.add_parser("replay", help="re-run a command from its manifest", epilog=EXIT_CODES_HELP,
                      formatter_class=argparse.RawDescriptionHelpFormatter)
    s.add_argument("manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int)
    return p


def _config_doc(ns) -> dict:
    path = getattr(ns, "config", None)
    if not path:
        return {}
    if not Path(path).is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    doc = load_run_config(path)
    _paths_from_config(ns, doc)
    return doc


def _execute(command: str, ns, doc: dict) -> Run:
    run = COMMANDS[command](ns, doc)
    run.config_doc = doc
    return run


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _OPEN_RUNS.clear()
    try:
        if ns.command == "replay":
            run = cmd_replay(ns, {})
        else:
            if ns.command == "evaluate":
                _require_evaluate_inputs(ns)
            run = _execute(ns.command, ns, _config_doc(ns))
        run.finish("ok")
        return EXIT_OK
    except (UsageError, ConfigError) as exc:
        code, msg = EXIT_USAGE, str(exc)
    except (ParseError, LabelOutOfRange, ModelFormatError) as exc:
        code, msg = EXIT_DATA, str(exc)
    except MockingbirdError as exc:
        code, msg = EXIT_ALGORITHM, f"{type(exc).__name__}: {exc}"
    except OSError as exc:
        code, msg = EXIT_IO, str(exc)
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to exit 1
        code, msg = EXIT_FAILURE, f"{type(exc).__name__}: {exc}"
    for run in _OPEN_RUNS:
        try:
            run.finish("failed", msg)
        except OSError:
            pass
    print(f"mockingbird {ns.command}: error: {msg}", file=sys.stderr)
    return code


def _require_evaluate_inputs(ns):
    if ns.scenario == "study" and not (ns.data or ns.config):
        raise UsageError("--scenario study needs --data")
    if ns.scenario != "study" and not ((ns.train and ns.test) or ns.config):
        raise UsageError(f"--scenario {ns.scenario} needs --train and --test")


if __name__ == "__main__":
    sys.exit(main())
