"""Command-line entry point: ``thegcn {generate,measure,train,eval,ablate,sweep}``.

A config file is JSON with optional sections ``data``, ``run``,
``generate``, ``ablate`` and ``sweep``.  ``-o section.key=value`` overrides
any entry (the value is parsed as JSON when possible, else kept as text).

Exit codes: 0 success, 1 usage, 2 config, 3 data, 4 runtime.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ContractError, DataError, TrainingDivergence
from .graph import GraphSchema, load_event_graph
from .metrics import heterophily_report
from .model import ThegcnModel, merge_diagnostics
from .sampler import default_t0, sample_context
from .synthgen import SynthSpec, generate_synthetic, save_synthetic
from .training import (EVAL_SALT, RunConfig, diagnostics_to_json, evaluate, run_ablation_suite,
                       run_directory, run_param_study, split_queries, train, write_predictions)

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3, 4
SECTIONS = ("data", "run", "generate", "ablate", "sweep")


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


class _UsageError(Exception):
    pass


# ------------------------------------------------------------ config

def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path=None, overrides=()):
    """Config dictionary from an optional JSON file plus dotted overrides."""
    cfg = {s: {} for s in SECTIONS}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        for key, val in raw.items():
            if key not in SECTIONS or not isinstance(val, dict):
                raise ConfigError(f"{path}: unknown or malformed section {key!r}")
            cfg[key].update(val)
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or section not in SECTIONS or not name:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        cfg[section][name] = _parse_value(value)
    return cfg


def run_config(cfg, seed=None):
    try:
        rc = RunConfig.from_dict(dict(cfg["run"]))
        if seed is not None:
            rc = rc.replace(seed=seed)
        return rc.validate()
    except (TypeError, ContractError) as exc:
        raise ConfigError(f"run config: {exc}") from None


def resolved_data(args, cfg):
    """The ``data`` section with command-line paths merged in and made absolute."""
    data = dict(cfg["data"])
    for key in ("events", "node_feats", "labels"):
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    if getattr(args, "data", None):
        d = Path(args.data)
        for key in ("events", "node_feats", "labels"):
            data.setdefault(key, str(d / f"{key}.csv"))
    if "events" not in data:
        raise ConfigError("no events file given (use --events, --data or data.events)")
    for key in ("events", "node_feats", "labels"):
        if data.get(key) is not None:
            data[key] = str(Path(data[key]).resolve())
    return data


def load_graph(args, cfg):
    data = resolved_data(args, cfg)
    unknown = set(data) - {"events", "node_feats", "labels", "num_nodes", "num_classes",
                           "directed", "static_labels"}
    if unknown:
        raise ConfigError(f"unknown data keys: {sorted(unknown)}")
    schema = GraphSchema(num_nodes=data.get("num_nodes"), num_classes=data.get("num_classes"),
                         directed=bool(data.get("directed", False)),
                         static_labels=data.get("static_labels"))
    return load_event_graph(data["events"], data.get("node_feats"), data.get("labels"), schema)


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _dump_contexts(path, g, queries, rc):
    out = []
    for q in queries:
        ctx = sample_context(g, q.node, q.time, default_t0(g, q.time, rc.window), rc.h_max,
                             rc.n_max, rng_seed=rc.seed, direction=rc.direction,
                             strategy=rc.sampling, salt=EVAL_SALT)
        out.append(ctx.to_json())
    _write_json(path, out)


def _eval_artifacts(args, run_dir, model, g, queries, rc):
    diag_parts = [] if args.dump_attention else None
    acc, rows = evaluate(model, g, queries, rc, diagnostics=diag_parts, return_predictions=True)
    write_predictions(run_dir / "predictions.csv", rows)
    if args.dump_attention:
        _write_json(args.dump_attention, diagnostics_to_json(merge_diagnostics(diag_parts)))
    if args.dump_contexts:
        _dump_contexts(args.dump_contexts, g, queries, rc)
    return acc


# ------------------------------------------------------------ subcommands

def cmd_generate(args, cfg):
    spec_d = dict(cfg["generate"])
    if args.seed is not None:
        spec_d["seed"] = args.seed
    try:
        spec = SynthSpec(**spec_d)
    except TypeError as exc:
        raise ConfigError(f"generate config: {exc}") from None
    ds = generate_synthetic(spec)
    out = Path(args.out)
    save_synthetic(ds, out)
    print(json.dumps({"out": str(out), "num_events": ds.graph.num_events,
                      "realized_cross_fraction": ds.meta["realized_cross_fraction"]}))
    return EXIT_OK


def cmd_measure(args, cfg):
    g = load_graph(args, cfg)
    window = tuple(args.window) if args.window else None
    report = heterophily_report(g, args.static_at, window)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "measure.json").write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_train(args, cfg):
    g = load_graph(args, cfg)
    rc = run_config(cfg, args.seed)
    log = (lambda s: print(s, file=sys.stderr)) if args.verbose else None
    model, report = train(g, rc, log=log)
    run_dir = run_directory(args.out, rc)
    _write_json(run_dir / "config.json", {**cfg, "data": resolved_data(args, cfg), "run": rc.to_dict()})
    (run_dir / "report.json").write_text(report.to_json() + "\n")
    model.save(run_dir / "model.json")
    splits = split_queries(g.queries(), rc.split, rc.seed, by_node=g.static_labels)
    _eval_artifacts(args, run_dir, model, g, splits[2], rc)
    print(json.dumps({"run_dir": str(run_dir), "test_acc": report.test_acc,
                      "best_epoch": report.best_epoch, "report_hash": report.content_hash()}))
    return EXIT_OK


def cmd_eval(args, cfg):
    run = Path(args.run)
    saved = load_config(run / "config.json")
    for s in SECTIONS:
        saved[s].update(cfg[s])
    g = load_graph(args, saved)
    rc = run_config(saved, args.seed)
    model = ThegcnModel(g.feature_dim, g.edge_feat_dim, g.num_classes, hidden=rc.hidden,
                        time_dim=rc.time_dim, num_layers=rc.num_layers,
                        signed_mode=rc.signed_mode, use_time_encoding=rc.use_time_encoding,
                        project_features=rc.project_features, seed=rc.seed)
    model.load(run / "model.json")
    splits = split_queries(g.queries(), rc.split, rc.seed, by_node=g.static_labels)
    part = {"train": 0, "val": 1, "test": 2}
    queries = g.queries() if args.split == "all" else splits[part[args.split]]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    acc = _eval_artifacts(args, out, model, g, queries, rc)
    _write_json(out / "eval.json", {"split": args.split, "accuracy": acc,
                                    "num_queries": len(queries), "run": str(run)})
    print(json.dumps({"accuracy": acc, "split": args.split}))
    return EXIT_OK


def cmd_ablate(args, cfg):
    g = load_graph(args, cfg)
    rc = run_config(cfg, args.seed)
    opts = dict(cfg["ablate"])
    seeds = opts.pop("seeds", [0, 1, 2, 3, 4])
    max_delta = opts.pop("max_delta", None)
    if opts:
        raise ConfigError(f"unknown ablate keys: {sorted(opts)}")
    log = (lambda s: print(s, file=sys.stderr)) if args.verbose else None
    result = run_ablation_suite(g, rc, seeds=seeds, max_delta=max_delta, log=log)
    _write_json(Path(args.out) / "ablation.json", result)
    print(json.dumps({k: v for k, v in result["comparisons"].items()}))
    return EXIT_OK


def cmd_sweep(args, cfg):
    g = load_graph(args, cfg)
    rc = run_config(cfg, args.seed)
    opts = dict(cfg["sweep"])
    grid = {"n_max_grid": opts.pop("n_max_grid", [2, 5, 10]),
            "layer_grid": opts.pop("layer_grid", [1, 2, 3]),
            "seeds": opts.pop("seeds", [0, 1, 2, 3, 4])}
    if opts:
        raise ConfigError(f"unknown sweep keys: {sorted(opts)}")
    log = (lambda s: print(s, file=sys.stderr)) if args.verbose else None
    result = run_param_study(g, rc, log=log, **grid)
    _write_json(Path(args.out) / "sweep.json", result)
    print(json.dumps([{k: c[k] for k in ("n_max", "num_layers", "mean", "std")}
                      for c in result["cells"]]))
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "measure": cmd_measure, "train": cmd_train,
            "eval": cmd_eval, "ablate": cmd_ablate, "sweep": cmd_sweep}


def build_parser():
    p = _Parser(prog="thegcn", description="Temporal heterophilic graph learning on event graphs.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=True):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("-o", "--override", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted override, e.g. run.epochs=20")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", default="runs", help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true")
        if data:
            sp.add_argument("--data", help="directory holding events.csv, node_feats.csv, labels.csv")
            sp.add_argument("--events")
            sp.add_argument("--node-feats", dest="node_feats")
            sp.add_argument("--labels")
        return sp

    common(sub.add_parser("generate", help="write a synthetic dataset"), data=False)
    m = common(sub.add_parser("measure", help="heterophily statistics as JSON"))
    m.add_argument("--static-at", type=float, required=True, dest="static_at")
    m.add_argument("--window", type=float, nargs=2, metavar=("T_A", "T_B"))
    m.set_defaults(out=None)
    helps = {"train": "fit a model and write a run directory",
             "eval": "score a saved run on a split"}
    for name in ("train", "eval"):
        sp = common(sub.add_parser(name, help=helps[name]))
        sp.add_argument("--dump-attention", dest="dump_attention", metavar="PATH")
        sp.add_argument("--dump-contexts", dest="dump_contexts", metavar="PATH")
        if name == "eval":
            sp.add_argument("--run", required=True, help="run directory written by train")
            sp.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    common(sub.add_parser("ablate", help="full model against its two ablations"))
    common(sub.add_parser("sweep", help="n_max x layers parameter study"))
    return p


def dispatch(argv=None):
    """Run one command; return the process exit status."""
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config, args.override)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ContractError as exc:
        code = EXIT_CONFIG if args.command == "generate" else EXIT_RUNTIME
        print(f"error: {exc}", file=sys.stderr)
        return code
    except (TrainingDivergence, OSError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main(argv=None):
    sys.exit(dispatch(argv))
