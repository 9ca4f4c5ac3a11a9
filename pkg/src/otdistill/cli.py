"""Command-line entry point: gen-synth, distill, sweep, report.

Exit codes: 0 success, 2 invalid configuration, 3 data error, 4 numerical
failure. Failures print one ``Category: message`` line on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
import warnings
from datetime import datetime, timezone
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .barycenter import BarycenterParams
from .bench_io import (
    SynthSpec,
    aggregate,
    emit_report,
    gen_synth,
    load_csv,
    load_labels,
    read_records,
    save_csv,
    save_labels,
    write_aggregate,
    write_records,
    write_rows,
)
from .dadil import DadilParams, Dictionary
from .distill import METHODS, DMParams
from .distributions import standardize
from .errors import ConfigError, DataError, NotConvergedWarning, NumericalError, OTDistillError
from .evaluation import ClassifierParams, SweepConfig, distill, fit_dictionary, sweep
from .ot_core import SinkhornParams

logger = logging.getLogger("otdistill")

EXIT_CODES = {ConfigError: 2, DataError: 3, NumericalError: 4}

_POS = {"type": "number", "exclusiveMinimum": 0}
_INT = {"type": "integer", "minimum": 1}


def _block(**props):
    return {"type": "object", "properties": props, "additionalProperties": False}


SYNTH_SCHEMA = _block(
    n_domains={"type": "integer", "minimum": 2},
    n_classes=_INT,
    d=_INT,
    samples_per_domain=_INT,
    rotation_max_deg={"type": "number", "minimum": 0},
    translation_scale={"type": "number", "minimum": 0},
    scale_jitter={"type": "number", "minimum": 0, "exclusiveMaximum": 1},
    class_sep=_POS,
    noise={"type": "number", "minimum": 0},
    seed={"type": "integer"},
)

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "benchmark": {"type": "string", "minLength": 1},
        "dataset": {
            "oneOf": [
                {
                    "type": "object",
                    "properties": {"csv": {"type": "string"}, "labels": {"type": "string"}},
                    "required": ["csv"],
                    "additionalProperties": False,
                },
                {
                    "type": "object",
                    "properties": {"synth": SYNTH_SCHEMA},
                    "required": ["synth"],
                    "additionalProperties": False,
                },
            ]
        },
        "standardize": {"enum": ["error", "keep", "drop", "off"]},
        "methods": {"type": "array", "items": {"enum": list(METHODS)}, "minItems": 1, "uniqueItems": True},
        "spc_values": {"type": "array", "items": _INT, "minItems": 1},
        "seeds": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
        "out": {"type": "string"},
        "jobs": _INT,
        "ot": _block(epsilon=_POS, max_iters=_INT, tol=_POS, relative={"type": "boolean"}),
        "barycenter": _block(
            max_outer_iters=_INT,
            support_tol=_POS,
            init={"enum": ["random_subset", "gaussian_around_pooled_mean"]},
            beta_kappa=_POS,
        ),
        "dm": _block(
            learning_rate=_POS,
            iters=_INT,
            target_weight={"type": "number", "minimum": 0},
            squared_target={"type": "boolean"},
            target_prox={"type": "boolean"},
            max_halvings={"type": "integer", "minimum": 0},
        ),
        "dadil": _block(
            k=_INT,
            n_atom=_INT,
            iters=_INT,
            lr_atoms=_POS,
            lr_coords=_POS,
            batch_size=_INT,
            inner_steps=_INT,
            beta_kappa=_POS,
            jitter={"type": "number", "minimum": 0},
            optimizer={"enum": ["adam", "sgd"]},
        ),
        "classifier": _block(l2={"type": "number", "minimum": 0}, iters=_INT, lr=_POS),
    },
}


# -- config ------------------------------------------------------------------------


def validate_config(cfg) -> dict:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {e.message}") from None
    return cfg


def load_config(path) -> dict:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {str(path)!r} not found") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON (line {e.lineno}: {e.msg})") from None
    cfg = validate_config(cfg)
    # dataset paths are relative to the config file
    ds = cfg.get("dataset", {})
    for key in ("csv", "labels"):
        if key in ds and not os.path.isabs(ds[key]):
            ds[key] = str(path.parent / ds[key])
    return cfg


def sweep_config(cfg: dict, jobs: int) -> SweepConfig:
    try:
        ot = SinkhornParams(**cfg.get("ot", {}))
        bary = BarycenterParams(support_size=1, sinkhorn=ot, **cfg.get("barycenter", {}))
        dadil_block = dict(cfg.get("dadil", {}))
        k = dadil_block.pop("k", None)
        n_atom = dadil_block.pop("n_atom", None)
        if "beta_kappa" not in dadil_block and "beta_kappa" in cfg.get("barycenter", {}):
            dadil_block["beta_kappa"] = bary.beta_kappa
        return SweepConfig(
            benchmark=cfg.get("benchmark", "synthetic"),
            ot=ot,
            bary=bary,
            dm=DMParams(**cfg.get("dm", {})),
            dadil=DadilParams(ot=ot, **dadil_block),
            dadil_atoms=k,
            dadil_atom_size=n_atom,
            classifier=ClassifierParams(**cfg.get("classifier", {})),
            jobs=jobs,
        )
    except (TypeError, ValueError) as e:
        if isinstance(e, OTDistillError):
            raise
        raise ConfigError(str(e)) from None


def load_dataset(cfg: dict):
    """Dataset, held-out target labels (or None) and the fitted scaler (or None)."""
    if "dataset" not in cfg:
        raise ConfigError("no dataset given (config 'dataset' block or --data)")
    block = cfg["dataset"]
    if "synth" in block:
        try:
            dataset, labels = gen_synth(SynthSpec(**block["synth"]))
        except ValueError as e:
            raise ConfigError(str(e)) from None
    else:
        dataset = _read(load_csv, block["csv"])
        labels = _read(load_labels, block["labels"], dataset.class_names) if "labels" in block else None
    policy = cfg.get("standardize", "error")
    scaler = None
    if policy != "off":
        dataset, scaler = standardize(dataset, policy)
    return dataset, labels, scaler


def _read(fn, path, *args):
    try:
        return fn(path, *args)
    except FileNotFoundError:
        raise DataError(f"file {str(path)!r} not found") from None
    except IsADirectoryError:
        raise DataError(f"{str(path)!r} is a directory") from None


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, np.generic):
        return v.item()
    return v


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _write_meta(out: Path, command: str, started: float, extra: dict | None = None) -> None:
    """Timestamps and wall times live here so that every other output is reproducible."""
    meta = {
        "command": command,
        "version": __version__,
        "started": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "finished": datetime.now(timezone.utc).isoformat(),
        "elapsed_seconds": time.time() - started,
    }
    meta.update(extra or {})
    _write_json(out / f"{command}_meta.json", meta)


# -- commands ----------------------------------------------------------------------


def cmd_gen_synth(args, cfg, out: Path) -> None:
    base = dict(cfg.get("dataset", {}).get("synth", {}))
    flags = {
        "n_domains": args.domains,
        "n_classes": args.classes,
        "d": args.dim,
        "samples_per_domain": args.samples,
        "rotation_max_deg": args.rotation,
        "translation_scale": args.translation,
        "scale_jitter": args.scale_jitter,
        "class_sep": args.class_sep,
        "noise": args.noise,
        "seed": args.seed,
    }
    base.update({k: v for k, v in flags.items() if v is not None})
    validate_config({"dataset": {"synth": base}})
    try:
        spec = SynthSpec(**base)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    dataset, labels = gen_synth(spec)
    out.mkdir(parents=True, exist_ok=True)
    data_path = out / f"{args.name}.csv"
    save_csv(data_path, dataset)
    save_labels(out / f"{args.name}_target_labels.csv", labels, dataset.class_names)
    _write_json(out / f"{args.name}_spec.json", dataclasses.asdict(spec))
    logger.info("wrote %s (%d samples, target %s)", data_path, dataset.n_samples, dataset.target_name)


def cmd_distill(args, cfg, out: Path) -> None:
    if args.data:
        cfg["dataset"] = {"csv": args.data}
        if args.labels:
            cfg["dataset"]["labels"] = args.labels
    elif args.labels:
        cfg.setdefault("dataset", {})["labels"] = args.labels
    validate_config(cfg)
    dataset, labels, scaler = load_dataset(cfg)
    scfg = sweep_config(cfg, 1)
    seed = args.seed if args.seed is not None else 0
    out.mkdir(parents=True, exist_ok=True)
    dictionary = None
    if args.method == "dadil":
        if args.dictionary:
            dictionary = _read(lambda p: Dictionary.load(p), args.dictionary)
            if dictionary.domain_names != dataset.source_names + [dataset.target_name]:
                raise DataError("dictionary was fit on different domains")
        else:
            dictionary = fit_dictionary(dataset, seed, scfg)
            dictionary.save(out / f"dictionary_seed{seed}.json")
    summary = distill(args.method, dataset, args.spc, seed, scfg, labels, dictionary)
    X = summary.measure.support
    space = "standardized"
    if scaler is not None and scaler.keep.all():
        X = scaler.inverse_transform(X)
        space = "original"
    elif scaler is None:
        space = "original"
    stem = f"summary_{args.method}_spc{args.spc}_seed{seed}"
    names = dataset.class_names
    rows = ((f"summary:{args.method}", names[y], x) for x, y in zip(X, summary.measure.labels))
    write_rows(out / f"{stem}.csv", rows, X.shape[1])
    diag = {
        "method": args.method,
        "spc": args.spc,
        "seed": seed,
        "n_points": int(summary.measure.n),
        "feature_space": space,
        "diagnostics": summary.diagnostics,
    }
    _write_json(out / f"{stem}_diagnostics.json", diag)
    logger.info("wrote %s", out / f"{stem}.csv")


def cmd_sweep(args, cfg, out: Path) -> list:
    if args.seed is not None:
        raise ConfigError("--seed cannot override the config's seeds list; edit 'seeds' instead")
    for key in ("dataset", "methods", "spc_values"):
        if key not in cfg:
            raise ConfigError(f"sweep config needs '{key}'")
    dataset, labels, _ = load_dataset(cfg)
    if labels is None:
        raise ConfigError("sweep needs held-out target labels (dataset.labels)")
    jobs = args.jobs or cfg.get("jobs") or os.cpu_count() or 1
    scfg = sweep_config(cfg, jobs)
    seeds = cfg.get("seeds", [0, 1, 2, 3, 4])
    records = sweep(dataset, cfg["methods"], cfg["spc_values"], seeds, scfg, labels)
    out.mkdir(parents=True, exist_ok=True)
    write_records(out / "records.jsonl", records)
    write_aggregate(out / "aggregate.csv", aggregate(records))
    failed = sum(r.error is not None for r in records)
    if failed:
        logger.warning("%d of %d cells failed; see the error field in records.jsonl", failed, len(records))
    timings = [
        {"method": r.method, "spc": r.spc, "seed": r.seed, "train_time": r.train_time, "eval_time": r.eval_time}
        for r in records
    ]
    return [("timings", timings), ("jobs", jobs), ("failed_cells", failed)]


def cmd_report(args, cfg, out: Path) -> None:
    records = _read(read_records, args.records)
    try:
        paths = emit_report(records, out)
    except ValueError as e:
        raise DataError(str(e)) from None
    for p in paths:
        logger.info("wrote %s", p)


# -- argument parsing --------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _global_flags(p, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=default, help="JSON experiment config")
    p.add_argument("--out", default=default, help="output directory (default: out)")
    p.add_argument("--seed", type=int, default=default)
    p.add_argument("--jobs", type=int, default=default, help="worker processes for sweep (default: all CPUs)")
    p.add_argument("--log-level", default=default, choices=["debug", "info", "warning", "error"])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="otdistill", description="Distill multi-source domain adaptation data into small labeled summaries.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-synth", help="write a synthetic multi-domain CSV")
    _global_flags(g, suppress=True)
    g.add_argument("--domains", type=int)
    g.add_argument("--classes", type=int)
    g.add_argument("--dim", type=int)
    g.add_argument("--samples", type=int, help="samples per domain")
    g.add_argument("--rotation", type=float, help="max rotation angle in degrees")
    g.add_argument("--translation", type=float, help="translation norm per domain")
    g.add_argument("--scale-jitter", type=float)
    g.add_argument("--class-sep", type=float)
    g.add_argument("--noise", type=float)
    g.add_argument("--name", default="synth", help="output file stem")

    d = sub.add_parser("distill", help="distill one summary")
    _global_flags(d, suppress=True)
    d.add_argument("--method", required=True, choices=METHODS)
    d.add_argument("--spc", type=int, default=1)
    d.add_argument("--data", help="dataset CSV (overrides the config dataset)")
    d.add_argument("--labels", help="held-out target labels (random_target_oracle only)")
    d.add_argument("--dictionary", help="reuse a fitted DaDiL dictionary JSON")

    s = sub.add_parser("sweep", help="run method x spc x seed and score on the target")
    _global_flags(s, suppress=True)

    r = sub.add_parser("report", help="aggregate CSV and SVG charts from a records file")
    _global_flags(r, suppress=True)
    r.add_argument("records")
    return parser


def configure_logging(level: str | None):
    """``OTDISTILL_LOG`` holds comma-separated ``level`` or ``logger=level`` items.

    Returns a callable that puts the touched loggers back as they were.
    """
    root_level = "warning"
    per_logger = {}
    for item in filter(None, (s.strip() for s in os.environ.get("OTDISTILL_LOG", "").split(","))):
        name, _, lvl = item.rpartition("=")
        if logging.getLevelName(lvl.upper()) not in (logging.DEBUG, logging.INFO, logging.WARNING, logging.ERROR, logging.CRITICAL):
            raise ConfigError(f"OTDISTILL_LOG: unknown level {lvl!r}")
        if name:
            per_logger[name] = lvl.upper()
        else:
            root_level = lvl
    if level:
        root_level = level
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    top = logging.getLogger("otdistill")
    touched = [top] + [logging.getLogger(n) for n in per_logger]
    saved = [(lg, lg.handlers[:], lg.level, lg.propagate) for lg in touched]
    top.handlers[:] = [handler]
    top.propagate = False
    top.setLevel(root_level.upper())
    for name, lvl in per_logger.items():
        logging.getLogger(name).setLevel(lvl)

    def restore():
        for lg, handlers, lvl, prop in saved:
            lg.handlers[:] = handlers
            lg.setLevel(lvl)
            lg.propagate = prop

    return restore


COMMANDS = {"gen-synth": cmd_gen_synth, "distill": cmd_distill, "sweep": cmd_sweep, "report": cmd_report}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    restore = configure_logging(args.log_level)
    try:
        return _dispatch(args)
    finally:
        restore()


def _dispatch(args) -> int:
    cfg = load_config(args.config) if args.config else {}
    if args.jobs is not None and args.jobs < 1:
        raise ConfigError("--jobs must be positive")
    out = Path(args.out or cfg.get("out") or "out")
    if out.exists() and not out.is_dir():
        raise ConfigError(f"--out {str(out)!r} is not a directory")
    started = time.time()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NotConvergedWarning)
        extra = COMMANDS[args.command](args, cfg, out)
    stalled = [w for w in caught if issubclass(w.category, NotConvergedWarning)]
    if stalled:
        logger.info("%d Sinkhorn solves stopped at max_iters before reaching tol", len(stalled))
    for w in caught:
        if not issubclass(w.category, NotConvergedWarning):
            logger.warning("%s", w.message)
    _write_meta(out, args.command.replace("-", "_"), started, dict(extra or []))
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except OTDistillError as e:
        code = next((c for cls, c in EXIT_CODES.items() if isinstance(e, cls)), 1)
        message = " ".join(str(e).split()) or type(e).__name__
        print(f"{e.category}: {message}", file=sys.stderr)
        return code
    except OSError as e:
        print(f"DataError: {' '.join(str(e).split())}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
