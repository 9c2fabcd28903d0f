"""Command-line entry point: ``kneeattn <command> [options]``.

Every command writes its merged configuration to ``<out>/run_config.json``.
Failures print a JSON object ``{"error": ..., "message": ...}`` on stderr
and exit with a nonzero status.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("kneeattn")

GLOBAL_DEFAULTS = {"out": "out", "seed": 0, "jobs": 1, "log_level": "INFO"}

MODEL_DEFAULTS = {
    "architecture": "rnn_ta_ca_1dcnn", "variant": "combined", "n_cy": 100, "h_size": 3, "heads": 1,
    "he_size": None, "filters": 5, "kernel": 3, "n_pool": 1, "n_nonpool": 1, "dense_hidden": 0,
    "lr": 1e-2, "epochs": 500, "patience": 30, "warmup": 0, "seeds": [0, 1, 2, 3, 4], "grid": None,
}

COMMAND_DEFAULTS = {
    "convert": {},
    "synth": {"cells": 40, "traced": 100, "format": "cells-csv", "batch_mix": [0.4, 0.3, 0.3]},
    "label": {"corpus": None, "gamma": 10.0},
    "train": {"corpus": None, "labels": None, **MODEL_DEFAULTS},
    "evaluate": {"checkpoint": None, "corpus": None, "labels": None, "cells": None, "split_seed": None},
    "attention": {"checkpoint": None, "corpus": None, "type": "both", "cells": None, "split_seed": None},
    "reduce": {"corpus": None, "labels": None, **MODEL_DEFAULTS, "n_cy": 100, "heads": 3,
               "allowed": [30, 50, 80, 100], "coverage": 0.9},
    "benchmark": {"corpus": None, "labels": None, "sizes": [100, 80, 50, 30], "split_seed": None},
}


class CliError(Exception):
    def __init__(self, message: str, kind: str = "usage"):
        super().__init__(message)
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message, "usage")


def _int_list(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _float_list(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _add_model_flags(p):
    p.add_argument("--arch", dest="architecture", choices=["rnn_1dcnn", "rnn_ta_1dcnn", "rnn_ca_1dcnn",
                                                           "rnn_ta_ca_1dcnn"])
    p.add_argument("--variant", choices=["combined", "charging_only", "discharging_only"])
    p.add_argument("--n-cy", dest="n_cy", type=int)
    p.add_argument("--h-size", dest="h_size", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--he-size", dest="he_size", type=int)
    p.add_argument("--filters", type=int)
    p.add_argument("--kernel", type=int)
    p.add_argument("--n-pool", dest="n_pool", type=int)
    p.add_argument("--n-nonpool", dest="n_nonpool", type=int)
    p.add_argument("--dense-hidden", dest="dense_hidden", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--warmup", type=int, help="epochs before early-stopping patience starts counting")
    p.add_argument("--seeds", type=_int_list, help="comma-separated seeds")
    p.add_argument("--grid", help="'standard' or a JSON file holding a list of grid points")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file of option values; flags override it")
    common.add_argument("--out", help="output directory (default: out)")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, help="worker processes")
    common.add_argument("--log-level", dest="log_level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = _Parser(prog="kneeattn", description="Knee-onset prediction with attention models.",
                     parents=[common])
    parser.add_argument("--version", action="version", version=f"kneeattn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("convert", parents=[common], help="public-dataset CSV dump -> cells-csv")
    p.add_argument("input")
    p.add_argument("output")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--cells", type=int)
    p.add_argument("--traced", type=int, help="cycles with full traces per cell")
    p.add_argument("--format", choices=["cells-csv", "cells-json"])
    p.add_argument("--batch-mix", dest="batch_mix", type=_float_list)

    p = sub.add_parser("label", parents=[common], help="fit knee-onset labels")
    p.add_argument("--corpus")
    p.add_argument("--gamma", type=float)

    p = sub.add_parser("train", parents=[common], help="train one configuration or a grid")
    p.add_argument("--corpus")
    p.add_argument("--labels")
    _add_model_flags(p)

    p = sub.add_parser("evaluate", parents=[common], help="score a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus")
    p.add_argument("--labels")
    p.add_argument("--cells", help="comma-separated cell ids (default: all usable cells)")
    p.add_argument("--split-seed", dest="split_seed", type=int, help="score the test cells of this split")

    p = sub.add_parser("attention", parents=[common], help="export attention matrices")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus")
    p.add_argument("--type", choices=["ta", "ca", "both"])
    p.add_argument("--cells")
    p.add_argument("--split-seed", dest="split_seed", type=int,
                   help="use validation plus test cells of this split")

    p = sub.add_parser("reduce", parents=[common], help="input-size reduction experiment")
    p.add_argument("--corpus")
    p.add_argument("--labels")
    _add_model_flags(p)
    p.add_argument("--allowed", type=_int_list)
    p.add_argument("--coverage", type=float)

    p = sub.add_parser("benchmark", parents=[common], help="elastic-net baseline table")
    p.add_argument("--corpus")
    p.add_argument("--labels")
    p.add_argument("--sizes", type=_int_list)
    p.add_argument("--split-seed", dest="split_seed", type=int)
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then the ``--config`` file, then explicit flags."""
    cfg = {**GLOBAL_DEFAULTS, **COMMAND_DEFAULTS[args.command]}
    flags = {k: v for k, v in vars(args).items() if v is not None and k not in ("config", "command")}
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}", "config") from None
        if not isinstance(loaded, dict):
            raise CliError("config file must hold a JSON object", "config")
        unknown = set(loaded) - set(cfg) - {"command", "input", "output"}
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}", "config")
        cfg.update({k: v for k, v in loaded.items() if k != "command"})
    cfg.update(flags)
    cfg["command"] = args.command
    return cfg


def _require(cfg, *keys):
    for k in keys:
        if not cfg.get(k):
            raise CliError(f"{cfg['command']} needs --{k.replace('_', '-')}", "usage")
        if k in ("corpus", "labels", "checkpoint") and not Path(cfg[k]).exists():
            raise CliError(f"cannot read {k} path {cfg[k]}", "io")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _model_config(cfg, n_cy=None):
    from .models import CnnConfig, ModelConfig
    heads = cfg["heads"] if "_ca" in cfg["architecture"] else 1
    return ModelConfig(cfg["architecture"], h_size=cfg["h_size"], n_he=heads, he_size=cfg.get("he_size"),
                       cnn=CnnConfig(cfg["filters"], cfg["kernel"], cfg["n_pool"], cfg["n_nonpool"],
                                     cfg["dense_hidden"]),
                       n_cy=n_cy or cfg["n_cy"], variant=cfg["variant"], seed=cfg["seed"])


def _train_spec(cfg):
    from .train import TrainSpec
    return TrainSpec(lr=cfg["lr"], max_epochs=cfg["epochs"], patience=cfg["patience"],
                     warmup=cfg["warmup"], seeds=tuple(cfg["seeds"]))


def _load(cfg, labels=True):
    from .knee import read_labels
    from .preprocess import load_corpus
    records = load_corpus(cfg["corpus"])
    return records, (read_labels(cfg["labels"]) if labels else None)


def cmd_convert(cfg, out: Path) -> dict:
    from .preprocess import convert_dump
    if not Path(cfg["input"]).exists():
        raise CliError(f"cannot read input path {cfg['input']}", "io")
    n = convert_dump(cfg["input"], cfg["output"])
    return {"rows": n, "output": str(cfg["output"])}


def cmd_synth(cfg, out: Path) -> dict:
    from .preprocess import SyntheticSpec, generate_synthetic, save_corpus
    spec = SyntheticSpec(n_cells=cfg["cells"], n_traced=cfg["traced"], batch_mix=tuple(cfg["batch_mix"]))
    records = generate_synthetic(spec, seed=cfg["seed"])
    suffix = ".json" if cfg["format"] == "cells-json" else ".csv"
    path = save_corpus(records, out / f"corpus{suffix}", cfg["format"])
    with (out / "truth.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_id", "batch", "c_ko", "c_2nd", "rest_min"])
        for r in records:
            w.writerow([r.cell_id, r.batch, repr(r.meta["c_ko"]), repr(r.meta["c_2nd"]), repr(r.meta["rest_min"])])
    return {"corpus": str(path), "cells": len(records)}


def cmd_label(cfg, out: Path) -> dict:
    from .knee import label_corpus, write_labels
    _require(cfg, "corpus")
    records, _ = _load(cfg, labels=False)
    labels, failures = label_corpus(records, gamma=cfg["gamma"])
    write_labels(labels, out / "labels.csv")
    (out / "label_failures.json").write_text(json.dumps(failures, indent=1))
    flagged = [c for c, lab in labels.items() if lab.flag]
    return {"labels": str(out / "labels.csv"), "n": len(labels), "failures": len(failures), "flagged": flagged}


def _grid_points(cfg):
    from .train import standard_grid
    if cfg["grid"] == "standard":
        return standard_grid(cfg["architecture"])
    try:
        points = json.loads(Path(cfg["grid"]).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read grid {cfg['grid']}: {exc}", "config") from None
    if not isinstance(points, list) or not points:
        raise CliError("grid file must hold a non-empty list of objects", "config")
    return points


def cmd_train(cfg, out: Path) -> dict:
    from .train import grid_search, run_seeds, write_grid_csv, write_report
    _require(cfg, "corpus", "labels")
    records, labels = _load(cfg)
    base = _model_config(cfg)
    spec = _train_spec(cfg)
    summary = {}
    if cfg.get("grid"):
        result = grid_search(base, _grid_points(cfg), records, labels, spec, jobs=cfg["jobs"])
        write_grid_csv(result, out / "grid.csv")
        (out / "grid_best.json").write_text(json.dumps(result.best, indent=1))
        from .train import config_from_point
        base, lr = config_from_point(base, result.best["point"])
        spec = _train_spec({**cfg, "lr": lr})
        summary["grid_best"] = result.best
    report, checkpoints = run_seeds(base, records, labels, spec, jobs=cfg["jobs"])
    write_report(report, out / "report.json")
    ck_dir = out / "checkpoints"
    ck_dir.mkdir(exist_ok=True)
    for run, doc in zip(report.runs, checkpoints):
        (ck_dir / f"seed{run.seed}.json").write_text(json.dumps(doc))
    summary.update(report.summary())
    summary["checkpoints"] = [str(ck_dir / f"seed{r.seed}.json") for r in report.runs]
    return summary


def _cells_for(cfg, records, labels, n_cy, part=("test",)):
    from .train import SplitSpec, make_split, usable_cells
    if cfg.get("cells"):
        return [c.strip() for c in cfg["cells"].split(",") if c.strip()]
    pool = usable_cells(records, labels, n_cy) if labels is not None else \
        [r.cell_id for r in records if r.n_cycles >= n_cy]
    if cfg.get("split_seed") is None:
        return pool
    split = make_split(pool, SplitSpec(cfg["split_seed"]))
    return [c for name in part for c in getattr(split, name)]


def cmd_evaluate(cfg, out: Path) -> dict:
    from .models import KneeModel
    from .preprocess.inputs import Normalizer
    from .train import prepare_inputs, rmse, target_of
    _require(cfg, "checkpoint", "corpus", "labels")
    model = KneeModel.load(cfg["checkpoint"])
    records, labels = _load(cfg)
    ids = _cells_for(cfg, records, labels, model.config.n_cy)
    missing = [c for c in ids if c not in labels]
    if missing:
        raise CliError(f"cells without labels: {missing}", "data")
    norm = Normalizer.from_dict(model.normalizer) if model.normalizer else None
    x, _ = prepare_inputs(records, ids, model.config.variant, model.config.n_cy, norm)
    pred = model.predict(x)
    y = np.array([target_of(labels[c]) for c in ids])
    result = {"checkpoint": cfg["checkpoint"], "rmse": rmse(pred, y), "n": len(ids),
              "predictions": {c: {"pred": float(p), "target": float(t)} for c, p, t in zip(ids, pred, y)}}
    (out / "evaluation.json").write_text(json.dumps(result, indent=1))
    return {"rmse": result["rmse"], "n": len(ids)}


def cmd_attention(cfg, out: Path) -> dict:
    from .analysis import export_attention
    from .models import KneeModel
    _require(cfg, "checkpoint", "corpus")
    model = KneeModel.load(cfg["checkpoint"])
    kinds = ("ta", "ca") if cfg["type"] == "both" else (cfg["type"],)
    from .preprocess import load_corpus
    records = load_corpus(cfg["corpus"])
    ids = _cells_for(cfg, records, None, model.config.n_cy, part=("val", "test"))
    report = export_attention(model, records, ids, kinds, out_dir=out / "attention")
    return {"batches": sorted(report.counts), "cells": sum(report.counts.values())}


def cmd_reduce(cfg, out: Path) -> dict:
    from .analysis import export_attention, key_importance, recommend_input_size, write_table
    from .models import KneeModel
    from .train import SplitSpec, make_split, run_seeds, usable_cells, write_report
    _require(cfg, "corpus", "labels")
    records, labels = _load(cfg)
    if "_ca" not in cfg["architecture"]:
        raise CliError(f"reduce needs a cyclic-attention architecture, got {cfg['architecture']}", "config")
    spec = _train_spec(cfg)
    full = cfg["n_cy"]
    report_full, cks = run_seeds(_model_config(cfg, full), records, labels, spec, jobs=cfg["jobs"])
    write_report(report_full, out / f"report_ncy{full}.json")
    ca_maps = []
    for run, doc in zip(report_full.runs, cks):
        model = KneeModel.from_dict(doc)
        split = make_split(usable_cells(records, labels, full), SplitSpec(run.seed))
        rep = export_attention(model, records, list(split.val) + list(split.test), ("ca",))
        ca_maps.append(rep.ca)
    plan = recommend_input_size(key_importance(ca_maps), tuple(cfg["allowed"]), cfg["coverage"])
    plan.write(out / "reduction_plan.json")
    rows = {"dataset": "All batches", "method": f"{cfg['architecture']} ({cfg['heads']} heads)",
            full: report_full.summary()["test_rmse_mean"]}
    if plan.recommended != full:
        report_red, _ = run_seeds(_model_config(cfg, plan.recommended), records, labels, spec, jobs=cfg["jobs"])
        write_report(report_red, out / f"report_ncy{plan.recommended}.json")
        rows[plan.recommended] = report_red.summary()["test_rmse_mean"]
    sizes = sorted({full, plan.recommended, *cfg["allowed"]}, reverse=True)
    write_table([rows], out / "reduction.csv", sizes=tuple(sizes))
    return {"recommended": plan.recommended, "test_rmse": {str(k): v for k, v in rows.items()
                                                           if isinstance(k, int)}}


def cmd_benchmark(cfg, out: Path) -> dict:
    from .analysis import elastic_net_benchmark, write_table
    from .train import SplitSpec, make_split, usable_cells
    _require(cfg, "corpus", "labels")
    records, labels = _load(cfg)
    seed = cfg["seed"] if cfg.get("split_seed") is None else cfg["split_seed"]
    sizes = sorted(cfg["sizes"], reverse=True)
    groups = [("All batches", None)] + [(f"Batch {b}", b) for b in sorted({r.batch for r in records})]
    rows, details = [], []
    for name, batch in groups:
        subset = [r for r in records if batch is None or r.batch == batch]
        row = {"dataset": name, "method": "Benchmark 1 (elastic net, VIT)"}
        for n in sizes:
            ids = usable_cells(subset, labels, n)
            if len(ids) < 6:
                log.warning("%s: %d usable cells at n_cy=%d; skipped", name, len(ids), n)
                continue
            res = elastic_net_benchmark(subset, labels, make_split(ids, SplitSpec(seed)), n)
            row[n] = res.test_rmse
            details.append({"dataset": name, **asdict(res)})
        rows.append(row)
    write_table(rows, out / "benchmark.csv", sizes=tuple(sizes))
    (out / "benchmark.json").write_text(json.dumps(details, indent=1))
    return {"rows": len(rows)}


COMMANDS = {"convert": cmd_convert, "synth": cmd_synth, "label": cmd_label, "train": cmd_train,
            "evaluate": cmd_evaluate, "attention": cmd_attention, "reduce": cmd_reduce, "benchmark": cmd_benchmark}


def _fail(kind: str, message: str, command=None, out: Path | None = None) -> int:
    doc = {"error": kind, "message": message, "command": command}
    print(json.dumps(doc), file=sys.stderr)
    if out is not None and out.is_dir():
        (out / "error.json").write_text(json.dumps(doc, indent=1))
    return 2 if kind == "usage" else 1


def main(argv=None) -> int:
    from .analysis import AttentionNotAvailable
    from .knee import KneeLabelError
    from .models import ConfigError
    from .preprocess import IngestError

    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
    except CliError as exc:
        return _fail(exc.kind, str(exc))
    logging.basicConfig(level=getattr(logging, cfg["log_level"]), format="%(levelname)s %(name)s: %(message)s")
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "run_config.json").write_text(json.dumps(cfg, indent=1, sort_keys=True))
        summary = COMMANDS[cfg["command"]](cfg, out)
    except CliError as exc:
        return _fail(exc.kind, str(exc), cfg["command"], out)
    except AttentionNotAvailable as exc:
        return _fail("not available", str(exc), cfg["command"], out)
    except (IngestError, KneeLabelError) as exc:
        return _fail("data", str(exc), cfg["command"], out)
    except ConfigError as exc:
        return _fail("config", str(exc), cfg["command"], out)
    except OSError as exc:
        return _fail("io", str(exc), cfg["command"], out)
    except ValueError as exc:
        return _fail("value", str(exc), cfg["command"], out)
    print(json.dumps({"command": cfg["command"], "out": str(out), **summary}, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
