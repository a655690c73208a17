"""Command-line pipeline: inspect, split, baseline, tune, evaluate, explain.

Each invocation writes its outputs under ``--out`` with fixed file names and
finishes with ``manifest.json`` (config, derived seeds, format versions and
a sha256 per output).  ``recallboost replay manifest.json`` reruns the same
command from the recorded config and checks every hash.

Exit codes: 0 when every requested phase succeeded, 1 when a phase failed,
2 for usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .data import (REFERENCE_ROUNDING, WDBC_REFERENCE_RANGES, DataError, Dataset, load_csv,
                   spearman_matrix, summarize, validate_ranges)
from .ensemble import FAMILIES, FORMAT_VERSION, ModelFormatError, load_model, save_model, train
from .explain import global_importance, local_accuracy_gap, shap_tree_batch
from .metrics import TABLE_COLUMNS, EvalReport, evaluate
from .pipeline import PROTOCOLS, baseline_params, model_seed, split_data, tune_family
from .seeding import RNG_NAME, derive_seed
from .tree import MissingCoverError

log = logging.getLogger("recallboost")

MANIFEST_VERSION = 1
STUDY_LOG_VERSION = 1
COMMANDS = ("inspect", "split", "baseline", "tune", "evaluate", "explain", "run")
LOCAL_ACCURACY_TOL = 1e-6


class ConfigError(ValueError):
    pass


class PhaseError(RuntimeError):
    pass


@dataclass
class RunConfig:
    data: str = "data/wdbc.csv"
    target: str = "diagnosis"
    drop: list[str] = field(default_factory=list)
    train_frac: float = 0.65
    seed: int = 42
    families: list[str] = field(default_factory=lambda: list(FAMILIES))
    beta: float = 2.7
    trials: int = 100
    threshold: float = 0.5
    out: str = "out"
    protocol: str = "test"
    model: str | None = None
    epoch: int | None = None  # fixes every timestamp a run writes

    def validate(self):
        if not Path(self.data).is_file():
            raise ConfigError(f"data file not found: {self.data}")
        if not self.beta > 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if not 0.0 < self.train_frac < 1.0:
            raise ConfigError(f"train-frac must be in (0, 1), got {self.train_frac}")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"threshold must be in [0, 1], got {self.threshold}")
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {PROTOCOLS}")
        bad = [f for f in self.families if f not in FAMILIES]
        if bad or not self.families:
            raise ConfigError(f"unknown family {bad}; choose from {FAMILIES} or 'all'")
        if self.model is not None and not Path(self.model).is_file():
            raise ConfigError(f"model file not found: {self.model}")

    @property
    def timestamp(self) -> str:
        return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(self.epoch))


# ---------------------------------------------------------------- output helpers

class Outputs:
    """Writes files under the run directory and remembers their hashes."""

    def __init__(self, root: Path):
        self.root = root
        self.hashes: dict[str, str] = {}

    def write(self, rel: str, text: str) -> Path:
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)
        self.record(rel)
        return path

    def write_json(self, rel: str, obj) -> Path:
        return self.write(rel, json.dumps(obj, indent=2, allow_nan=False) + "\n")

    def save_model(self, rel: str, model) -> Path:
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        save_model(model, path)
        self.record(rel)
        return path

    def record(self, rel: str):
        self.hashes[rel] = _sha256(self.root / rel)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _report_dict(r: EvalReport) -> dict:
    d = r.to_dict(with_roc=False)
    d["table"] = {label: getattr(r, key) for label, key in TABLE_COLUMNS}
    return d


# ---------------------------------------------------------------- phases

def _load(cfg: RunConfig) -> Dataset:
    return load_csv(cfg.data, cfg.target, cfg.drop)


def cmd_inspect(cfg: RunConfig, out: Outputs) -> bool:
    ds = _load(cfg)
    counts = ds.class_counts()
    out.write_json("inspect/class_counts.json",
                   {"benign": counts.get(0, 0), "malignant": counts.get(1, 0), "n": ds.n_rows})
    summary = summarize(ds)
    out.write("inspect/feature_summary.csv", _csv_text(
        ["feature", "min", "max", "mean", "median"],
        [[s.name, repr(s.min), repr(s.max), repr(s.mean), repr(s.median)] for s in summary]))
    out.write_json("inspect/histograms.json", [
        {"feature": s.name, "bin_edges": s.bin_edges,
         "benign": s.counts_by_class[0], "malignant": s.counts_by_class[1]} for s in summary])
    rho = spearman_matrix(ds)
    out.write("inspect/spearman.csv", _csv_text(
        ["feature", *ds.feature_names],
        [[n, *("" if not np.isfinite(v) else repr(float(v)) for v in row)]
         for n, row in zip(ds.feature_names, rho)]))
    ok = True
    if set(n for n, _, _ in WDBC_REFERENCE_RANGES) <= set(ds.feature_names):
        checks = validate_ranges(ds, WDBC_REFERENCE_RANGES, eps=REFERENCE_ROUNDING)
        out.write("inspect/range_report.csv", _csv_text(
            ["feature", "expected_min", "expected_max", "observed_min", "observed_max", "passed",
             "offending_rows"],
            [[c.name, repr(c.expected_min), repr(c.expected_max), repr(c.observed_min),
              repr(c.observed_max), c.passed, " ".join(map(str, c.offending_rows))] for c in checks]))
        failed = [c.name for c in checks if not c.passed]
        if failed:
            log.error("range check failed for %s", ", ".join(failed))
            ok = False
        print(f"range check: {len(checks) - len(failed)}/{len(checks)} features within reference")
    else:
        log.info("feature names differ from the WDBC reference table; range check skipped")
    print(f"{ds.n_rows} rows, {ds.n_cols} features, benign {counts.get(0, 0)}, "
          f"malignant {counts.get(1, 0)}")
    return ok


def _split(cfg: RunConfig, ds: Dataset | None = None):
    return split_data(ds if ds is not None else _load(cfg), cfg.train_frac, cfg.seed)


def cmd_split(cfg: RunConfig, out: Outputs) -> bool:
    train_ds, test_ds = _split(cfg)
    for name, part in (("train", train_ds), ("test", test_ds)):
        out.write(f"split/{name}_rows.csv",
                  _csv_text(["row_id", "label"], zip(part.row_ids.tolist(), part.labels.tolist())))
    out.write_json("split/split.json", {
        "train_fraction": cfg.train_frac, "seed": derive_seed(cfg.seed, "split"),
        "train": {"n": train_ds.n_rows, "malignant": train_ds.class_counts().get(1, 0)},
        "test": {"n": test_ds.n_rows, "malignant": test_ds.class_counts().get(1, 0)}})
    print(f"train {train_ds.n_rows} rows, test {test_ds.n_rows} rows")
    return True


def _emit_eval(out: Outputs, stem: str, report: EvalReport):
    out.write_json(f"reports/{stem}.json", _report_dict(report))
    out.write(f"roc/{stem}.csv", report.roc_csv())


def _print_row(label: str, r: EvalReport):
    cells = "  ".join(f"{name} {_fmt(getattr(r, key))}" for name, key in TABLE_COLUMNS)
    print(f"{label:<24} {cells}  FN {r.confusion.fn}")


def _fmt(v):
    return "n/a" if v is None else f"{v:.4f}"


def _baseline(cfg: RunConfig, out: Outputs, train_ds, test_ds) -> tuple[dict, bool]:
    reports, ok = {}, True
    for fam in cfg.families:
        try:
            model = train(train_ds, fam, baseline_params(fam, cfg.seed))
        except Exception as exc:  # noqa: BLE001 - report per family, keep going
            log.error("%s baseline failed: %s", fam, exc)
            ok = False
            continue
        out.save_model(f"models/baseline_{fam}.json", model)
        report = evaluate(model, test_ds, cfg.threshold, cfg.beta)
        _emit_eval(out, f"baseline_{fam}", report)
        _print_row(f"baseline {fam}", report)
        reports[fam] = report
    return reports, ok


def cmd_baseline(cfg: RunConfig, out: Outputs) -> bool:
    train_ds, test_ds = _split(cfg)
    return _baseline(cfg, out, train_ds, test_ds)[1]


def _tune(cfg: RunConfig, out: Outputs, train_ds, test_ds, baselines: dict) -> tuple[dict, bool]:
    tuned, ok = {}, True
    for fam in cfg.families:
        log_rel = f"study/{fam}.jsonl"
        (out.root / "study").mkdir(parents=True, exist_ok=True)
        try:
            res = tune_family(fam, train_ds, test_ds, cfg.trials, cfg.seed, cfg.beta,
                              cfg.threshold, cfg.protocol, log_path=out.root / log_rel,
                              timestamp=cfg.timestamp)
        except Exception as exc:  # noqa: BLE001
            log.error("%s tuning failed: %s", fam, exc)
            if (out.root / log_rel).exists():
                out.record(log_rel)
            ok = False
            continue
        out.record(log_rel)
        out.save_model(f"models/tuned_{fam}.json", res.model)
        _emit_eval(out, f"tuned_{fam}", res.report)
        best = res.study.best
        out.write_json(f"study/{fam}_best.json", {
            "trial": best.id, "objective": best.objective, "params": best.params,
            "n_trials": len(res.study.trials), "n_complete": len(res.study.complete()),
            "protocol": cfg.protocol})
        _print_row(f"tuned {fam}", res.report)
        tuned[fam] = res.report
    rows = []
    for fam in cfg.families:
        b, t = baselines.get(fam), tuned.get(fam)
        if b is None or t is None:
            continue
        rows.append([fam, repr(b.f_beta), repr(t.f_beta), repr(b.recall), repr(t.recall),
                     repr(b.auc), repr(t.auc), b.confusion.fn, t.confusion.fn,
                     t.confusion.fn - b.confusion.fn])
    if rows:
        out.write("reports/delta.csv", _csv_text(
            ["family", "f_beta_baseline", "f_beta_tuned", "recall_baseline", "recall_tuned",
             "auc_baseline", "auc_tuned", "fn_baseline", "fn_tuned", "fn_change"], rows))
    return tuned, ok


def cmd_tune(cfg: RunConfig, out: Outputs) -> bool:
    train_ds, test_ds = _split(cfg)
    baselines, ok_b = _baseline(cfg, out, train_ds, test_ds)
    _, ok_t = _tune(cfg, out, train_ds, test_ds, baselines)
    return ok_b and ok_t


def _model_stem(path: str) -> str:
    return Path(path).stem


def cmd_evaluate(cfg: RunConfig, out: Outputs) -> bool:
    if cfg.model is None:
        raise ConfigError("evaluate needs --model")
    model = load_model(cfg.model)
    _, test_ds = _split(cfg)
    report = evaluate(model, test_ds, cfg.threshold, cfg.beta)
    stem = f"evaluate_{_model_stem(cfg.model)}"
    _emit_eval(out, stem, report)
    _print_row(stem, report)
    return True


def _explain(cfg: RunConfig, out: Outputs, model, stem: str, test_ds: Dataset) -> bool:
    phi, base = shap_tree_batch(model, test_ds.features)
    gap = local_accuracy_gap(model, test_ds.features, phi, base)
    out.write(f"shap/{stem}_attributions.csv", _csv_text(
        ["row_id", "base_value", *model.feature_names, "margin", "local_accuracy_gap"],
        [[rid, repr(base), *map(repr, row.tolist()), repr(m), repr(g)]
         for rid, row, m, g in zip(test_ds.row_ids.tolist(), phi,
                                   model.margin(test_ds.features).tolist(), gap.tolist())]))
    imp = global_importance(model, test_ds)
    out.write(f"shap/{stem}_importance.csv", imp.to_csv())
    worst = float(gap.max())
    ok = worst <= LOCAL_ACCURACY_TOL
    out.write_json(f"shap/{stem}_check.json", {
        "rows": test_ds.n_rows, "max_local_accuracy_gap": worst,
        "tolerance": LOCAL_ACCURACY_TOL, "passed": ok,
        "top_features": [model.feature_names[j] for j in imp.ranking[:5]]})
    print(f"{stem}: local accuracy max gap {worst:.2e} ({'ok' if ok else 'FAILED'}); top "
          + ", ".join(model.feature_names[j] for j in imp.ranking[:3]))
    return ok


def cmd_explain(cfg: RunConfig, out: Outputs) -> bool:
    if cfg.model is None:
        raise ConfigError("explain needs --model")
    model = load_model(cfg.model)
    _, test_ds = _split(cfg)
    if test_ds.n_cols != model.n_features:
        raise PhaseError(f"model expects {model.n_features} features, data has {test_ds.n_cols}")
    return _explain(cfg, out, model, _model_stem(cfg.model), test_ds)


def cmd_run(cfg: RunConfig, out: Outputs) -> bool:
    """Every phase in order, with SHAP for each tuned model."""
    ok = cmd_inspect(cfg, out)
    ds = _load(cfg)
    train_ds, test_ds = _split(cfg, ds)
    ok &= cmd_split(cfg, out)
    baselines, ok_b = _baseline(cfg, out, train_ds, test_ds)
    _, ok_t = _tune(cfg, out, train_ds, test_ds, baselines)
    ok = ok and ok_b and ok_t
    for fam in cfg.families:
        path = out.root / f"models/tuned_{fam}.json"
        if path.exists():
            ok &= _explain(cfg, out, load_model(path), f"tuned_{fam}", test_ds)
    return ok


HANDLERS = {"inspect": cmd_inspect, "split": cmd_split, "baseline": cmd_baseline,
            "tune": cmd_tune, "evaluate": cmd_evaluate, "explain": cmd_explain, "run": cmd_run}


# ---------------------------------------------------------------- manifest

def _seeds(cfg: RunConfig) -> dict:
    s = {"run": cfg.seed, "split": derive_seed(cfg.seed, "split")}
    for fam in cfg.families:
        s[f"model:{fam}"] = model_seed(cfg.seed, fam)
        s[f"tune:{fam}"] = derive_seed(cfg.seed, f"tune:{fam}")
    if cfg.protocol == "holdout":
        s["valid-split"] = derive_seed(cfg.seed, "valid-split")
    return s


def write_manifest(cfg: RunConfig, command: str, out: Outputs, ok: bool) -> Path:
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "package_version": __version__,
        "command": command,
        "config": asdict(cfg),
        "seeds": _seeds(cfg),
        "rng": RNG_NAME,
        "formats": {"model": FORMAT_VERSION, "study_log": STUDY_LOG_VERSION},
        "timestamp": cfg.timestamp,
        "data_sha256": _sha256(Path(cfg.data)),
        "succeeded": ok,
        "outputs": dict(sorted(out.hashes.items())),
    }
    path = out.root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------- argument parsing

def _common_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON config file or a previous manifest.json")
    p.add_argument("--data", help="CSV file (default data/wdbc.csv)")
    p.add_argument("--target", help="label column (default diagnosis)")
    p.add_argument("--drop", action="append", help="column to ignore; repeatable")
    p.add_argument("--train-frac", type=float, dest="train_frac", help="train share (default 0.65)")
    p.add_argument("--seed", type=int, help="run seed (default 42)")
    p.add_argument("--family", action="append", dest="families",
                   help=f"one of {', '.join(FAMILIES)} or 'all'; repeatable (default all)")
    p.add_argument("--beta", type=float, help="F-beta weight (default 2.7)")
    p.add_argument("--trials", type=int, help="TPE trials per family (default 100)")
    p.add_argument("--threshold", type=float, help="probability cut-off (default 0.5)")
    p.add_argument("--out", help="output directory (default out)")
    p.add_argument("--protocol", choices=PROTOCOLS,
                   help="test: score trials on the test split; holdout: on a validation split")
    p.add_argument("--model", help="model JSON for evaluate/explain")
    p.add_argument("--epoch", type=int, help="UNIX time stamped into outputs")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recallboost", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_flags()
    helps = {"inspect": "feature summary, class counts, histograms, Spearman matrix",
             "split": "stratified train/test split",
             "baseline": "train and evaluate every family with pinned defaults",
             "tune": "TPE search per family, refit the best, report against baseline",
             "evaluate": "score a saved model on the test split",
             "explain": "SHAP attributions of a saved model on the test split",
             "run": "all phases in order"}
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    rp = sub.add_parser("replay", help="rerun a manifest and verify every output hash")
    rp.add_argument("manifest")
    rp.add_argument("--out", help="write into this directory instead of the recorded one")
    rp.add_argument("-v", "--verbose", action="store_true")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    base: dict = {}
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        base = loaded.get("config", loaded) if isinstance(loaded, dict) else None
        if not isinstance(base, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
        known = {f.name for f in fields(RunConfig)}
        unknown = set(base) - known
        if unknown:
            raise ConfigError(f"{args.config}: unknown keys {sorted(unknown)}")
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            base[f.name] = v
    if base.get("families") in (["all"], "all"):
        base["families"] = list(FAMILIES)
    cfg = RunConfig(**base)
    if cfg.epoch is None:
        cfg.epoch = int(os.environ.get("SOURCE_DATE_EPOCH", time.time()))
    cfg.validate()
    return cfg


def execute(cfg: RunConfig, command: str) -> int:
    out = Outputs(Path(cfg.out))
    out.root.mkdir(parents=True, exist_ok=True)
    try:
        ok = HANDLERS[command](cfg, out)
    except ConfigError as exc:
        log.error("%s", exc)
        return 2
    except (DataError, ModelFormatError, MissingCoverError, PhaseError, ValueError,
            OSError) as exc:
        log.error("%s failed: %s", command, exc)
        ok = False
    write_manifest(cfg, command, out, ok)
    return 0 if ok else 1


def replay(manifest_path: str, out_dir: str | None) -> int:
    try:
        m = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
        cfg = RunConfig(**m["config"])
        command = m["command"]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        log.error("cannot read manifest %s: %s", manifest_path, exc)
        return 2
    if m.get("manifest_version") != MANIFEST_VERSION:
        log.error("unsupported manifest_version %r", m.get("manifest_version"))
        return 2
    if out_dir is not None:
        cfg.out = out_dir
    try:
        cfg.validate()
    except ConfigError as exc:
        log.error("%s", exc)
        return 2
    if _sha256(Path(cfg.data)) != m.get("data_sha256"):
        log.error("data file %s differs from the one recorded in the manifest", cfg.data)
        return 1
    code = execute(cfg, command)
    new = json.loads((Path(cfg.out) / "manifest.json").read_text(encoding="utf-8"))["outputs"]
    expected = m["outputs"]
    diff = sorted(k for k in set(expected) | set(new) if expected.get(k) != new.get(k))
    for k in diff:
        log.error("replay mismatch: %s", k)
    print(f"replay: {len(expected) - len(diff)}/{len(expected)} outputs identical")
    return code if not diff else 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "replay":
        return replay(args.manifest, args.out)
    try:
        cfg = config_from_args(args)
    except (ConfigError, TypeError) as exc:
        print(f"recallboost: error: {exc}", file=sys.stderr)
        return 2
    return execute(cfg, args.command)


if __name__ == "__main__":
    sys.exit(main())
