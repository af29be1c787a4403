"""Command-line entry point: ``scenewise {synth,train,evaluate,audit}``.

Settings come from built-in defaults, then an optional JSON ``--config``
file, then command-line flags (flags win). ``--show-config`` prints the
resolved settings and exits.

Exit codes: 0 success, 1 domain verdict failure (budget exceeded, metrics
requested without labels), 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

from . import complexity
from .data.devices import default_profiles, load_profiles
from .data.manifest import build_registry, load_manifest
from .data.synth import SplitSpec, synth_generate
from .errors import BudgetError, MetricError, ScenewiseError
from .evaluation import device_table, emit_submission, evaluate, route_and_predict
from .nn.graph import NAMED_GRAPHS, load_graph
from .training import (
    PRESETS, TrainConfig, TrainLog, build_bank, compute_features, finetune_device, load_bank, save_bank,
    train_general,
)

log = logging.getLogger("scenewise")

DEFAULT_SEED = 20250601
EXIT_OK, EXIT_VERDICT, EXIT_USAGE = 0, 1, 2

SYNTH_DEFAULTS = {
    "seed": DEFAULT_SEED,
    "scene_count": 10,
    "train_per_cell": 40,
    "test_per_cell": 20,
    "unknown_test_per_cell": None,
    "profiles": None,
    "out": "data/synth",
}
TRAIN_DEFAULTS = {
    "data": "data/synth",
    "train_manifest": None,
    "graph": "desk",
    "preset": "desk",
    "out": "runs/desk",
    "stage": None,
    "device": None,
    "workers": 1,
}
EVAL_DEFAULTS = {
    "bank": "runs/desk/bank",
    "manifest": "data/synth/test.tsv",
    "out": "runs/desk/eval",
    "compare_general": False,
    "predict_only": False,
    "workers": 1,
}
AUDIT_DEFAULTS = {"graph": "reference", "precision": "fp16", "include_bn_stats": False, "out": None}


def _resolve(defaults, args, extra=()):
    settings = dict(defaults)
    for key in extra:
        settings[key] = None
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ScenewiseError(f"{path}: cannot read config ({exc})") from None
        if not isinstance(doc, dict):
            raise ScenewiseError(f"{path}: config must be a JSON object")
        section = doc.get(args.command, doc)
        unknown = set(section) - set(settings) - {"synth", "train", "evaluate", "audit"}
        if unknown:
            raise ScenewiseError(f"{path}: unknown setting(s) {sorted(unknown)}")
        settings.update({k: v for k, v in section.items() if k in settings})
    for key in settings:
        value = getattr(args, key, None)
        if value is not None and value is not False:
            settings[key] = value
    return settings


def _show(settings) -> int:
    print(json.dumps(settings, indent=2, sort_keys=True, default=str))
    return EXIT_OK


def _graph(spec, classes=10):
    """A named graph (sized for ``classes``) or a graph file."""
    if spec in NAMED_GRAPHS:
        return NAMED_GRAPHS[spec](classes)
    return load_graph(spec)


# ----------------------------------------------------------------------------


def cmd_synth(args) -> int:
    s = _resolve(SYNTH_DEFAULTS, args)
    if args.show_config:
        return _show(s)
    profiles = load_profiles(s["profiles"]) if s["profiles"] else default_profiles(s["seed"])
    split = SplitSpec(s["train_per_cell"], s["test_per_cell"], s["unknown_test_per_cell"])
    ds = synth_generate(s["seed"], s["scene_count"], profiles, split_spec=split, out_dir=s["out"])
    print(ds.summary())
    return EXIT_OK


def _train_config(s, args) -> TrainConfig:
    base = PRESETS[s["preset"]]
    overrides = {}
    for f in fields(TrainConfig):
        if f.name in s and s[f.name] is not None:
            overrides[f.name] = s[f.name]
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if s.get("epochs") is not None:
        overrides["epochs_general"] = overrides["epochs_device"] = s["epochs"]
    return TrainConfig(**{**asdict(base), **overrides})


def cmd_train(args) -> int:
    extra = [f.name for f in fields(TrainConfig)] + ["epochs"]
    s = _resolve(TRAIN_DEFAULTS, args, extra)
    if s["preset"] not in PRESETS:
        raise ScenewiseError(f"unknown preset {s['preset']!r} (choose from {sorted(PRESETS)})")
    cfg = _train_config(s, args)
    if args.show_config:
        return _show({**s, "resolved": asdict(cfg)})
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = s["train_manifest"] or Path(s["data"]) / "train.tsv"
    train = load_manifest(manifest_path, "train")
    registry = build_registry(train)
    classes = train.labels
    graph = _graph(s["graph"], len(classes))
    report = complexity.audit(graph, cfg.precision, label="graph")
    if not report.passed:
        print(report.render(), end="")
        return EXIT_VERDICT
    train_log = TrainLog(out / "train_log.jsonl")
    x = compute_features(train, workers=s["workers"])
    bank_dir = out / "bank"
    provenance = {"config": asdict(cfg), "config_hash": cfg.fingerprint(), "seed": cfg.seed,
                  "graph": s["graph"]}
    stage = s["stage"]
    if stage in (None, 1):
        general = train_general(train, graph, cfg, classes, features=x, train_log=train_log).params
        devices = {}
    else:
        bank = load_bank(bank_dir)
        general, devices = bank.general, dict(bank.devices)
    if stage in (None, 2):
        targets = [s["device"]] if s["device"] else list(registry.known_devices)
        for dev in targets:
            devices[dev] = finetune_device(general, dev, train, cfg, graph, registry, classes,
                                           features=x, train_log=train_log).params
    elif s["device"]:
        raise ScenewiseError("--device is only meaningful with --stage 2")
    bank = build_bank(general, devices, registry, graph, classes, cfg.precision, provenance=provenance)
    save_bank(bank, bank_dir)
    lines = []
    for name, rep in bank.audits().items():
        lines.append(f"[{name}]\n{rep.render()}")
    (out / "audit.txt").write_text("\n".join(lines), encoding="utf-8")
    print(lines[0], end="")
    print(f"bank: {bank_dir} ({1 + len(bank.devices)} checkpoints, all within budget)")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    s = _resolve(EVAL_DEFAULTS, args)
    if args.show_config:
        return _show(s)
    bank = load_bank(s["bank"])
    kind = "test"
    manifest = load_manifest(s["manifest"], kind)
    if not s["predict_only"] and not manifest.is_labeled:
        print(
            f"error: {s['manifest']} has no scene labels; metrics need labels "
            "(use --predict-only to write predictions only)",
            file=sys.stderr,
        )
        return EXIT_VERDICT
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    preds = route_and_predict(bank, manifest, workers=s["workers"])
    for name, msg in preds.failures:
        print(f"warning: {name}: {msg}", file=sys.stderr)
    emit_submission(preds.records, out / "submission.tsv")
    if s["predict_only"]:
        print(f"wrote {out / 'submission.tsv'} ({len(preds)} predictions, {len(preds.failures)} failures)")
        return EXIT_OK
    registry = bank.registry or build_registry(manifest)
    rows = {}
    if s["compare_general"]:
        rows["General Model"] = route_and_predict(bank.general_only(), manifest, workers=s["workers"]).records
    rows["Device-specific Models" if bank.devices else "General Model"] = preds.records
    table = device_table(rows, manifest, registry)
    text = table.render()
    (out / "device_table.txt").write_text(text, encoding="utf-8")
    table.save(out / "device_table.json")
    metrics = evaluate(preds.records, manifest, table.devices).to_dict()
    metrics["failures"] = [{"file": f, "error": m} for f, m in preds.failures]
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n", encoding="utf-8")
    print(text, end="")
    print(f"macro accuracy {100 * metrics['macro_over_classes']:.2f}%  cross-entropy {metrics['cross_entropy']:.4f}")
    return EXIT_OK


def cmd_audit(args) -> int:
    s = _resolve(AUDIT_DEFAULTS, args)
    if args.show_config:
        return _show(s)
    graph = _graph(s["graph"])
    report = complexity.audit(graph, s["precision"], include_bn_running_stats=s["include_bn_stats"],
                              label=str(s["graph"]))
    print(report.render(), end="")
    if s["out"]:
        complexity.write_report(report, s["out"])
    return EXIT_OK if report.passed else EXIT_VERDICT


# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scenewise", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", help="JSON settings file (flags override it)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help=out_help)
        p.add_argument("--workers", type=int, help="parallel feature extraction threads")
        p.add_argument("--show-config", action="store_true", help="print resolved settings and exit")

    p = sub.add_parser("synth", help="generate the synthetic multi-device dataset")
    common(p, "dataset directory")
    p.add_argument("--profiles", help="device profile JSON file")
    p.add_argument("--scene-count", type=int)
    p.add_argument("--train-per-cell", type=int)
    p.add_argument("--test-per-cell", type=int)
    p.add_argument("--unknown-test-per-cell", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="stage 1 + stage 2 training, writes a model bank")
    common(p, "run directory (bank/, train_log.jsonl, audit.txt)")
    p.add_argument("--data", help="dataset directory containing train.tsv")
    p.add_argument("--train-manifest")
    p.add_argument("--graph", help="graph file or one of: " + ", ".join(NAMED_GRAPHS))
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--stage", type=int, choices=(1, 2))
    p.add_argument("--device", help="with --stage 2: fine-tune only this device")
    p.add_argument("--epochs", type=int, help="epochs for both stages")
    p.add_argument("--epochs-general", type=int)
    p.add_argument("--epochs-device", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr-general", type=float)
    p.add_argument("--lr-device", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--mixstyle-alpha", type=float)
    p.add_argument("--mixstyle-probability", type=float)
    p.add_argument("--mixstyle-in-finetune", action="store_true", default=None)
    p.add_argument("--validation-fraction", type=float)
    p.add_argument("--precision", choices=("fp16", "fp32"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="device-routed inference and metrics")
    common(p, "output directory for metrics and submission")
    p.add_argument("--bank")
    p.add_argument("--manifest", help="test manifest (TSV)")
    p.add_argument("--compare-general", action="store_true", help="add the general-only row")
    p.add_argument("--predict-only", action="store_true", help="write the submission file only")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("audit", help="complexity report and budget verdict for a graph")
    p.add_argument("graph", nargs="?", help="graph file or one of: " + ", ".join(NAMED_GRAPHS))
    p.add_argument("--config")
    p.add_argument("--precision", choices=("fp16", "fp32", "int8"))
    p.add_argument("--include-bn-stats", action="store_true", help="count BN running statistics")
    p.add_argument("--out", help="write the report as JSON")
    p.add_argument("--show-config", action="store_true")
    p.set_defaults(func=cmd_audit)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("SCENEWISE_LOG", "info").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.report is not None:
            print(exc.report.render(), file=sys.stderr, end="")
        return EXIT_VERDICT
    except MetricError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERDICT
    except ScenewiseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
