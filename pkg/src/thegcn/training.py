"""Training, evaluation and the two experiment drivers (ablation, sweep)."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import time as _time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ContractError, TrainingDivergence
from .graph import LabeledQuery
from .model import SIGNED_MODES, ThegcnModel, forward_view, merge_diagnostics
from .sampler import check_causality, collate, default_t0, sample_context

EVAL_SALT = 0x7FFF_FFFF
HISTOGRAM_EDGES = np.round(np.linspace(-1.0, 1.0, 11), 10)


@dataclass
class RunConfig:
    h_max: int = 2
    n_max: int = 10
    num_layers: int = 2
    epochs: int = 100
    learning_rate: float = 0.01
    hidden: int = 64
    time_dim: int = 8
    window: Optional[float] = None
    seed: int = 0
    signed_mode: str = "signed_tanh"
    use_time_encoding: bool = True
    project_features: bool = True
    split: tuple = (0.6, 0.2, 0.2)
    batch_size: int = 64
    resample_per_epoch: bool = True
    direction: Optional[str] = None
    sampling: str = "uniform"

    def __post_init__(self):
        self.split = tuple(float(f) for f in self.split)

    def validate(self):
        for name in ("h_max", "n_max", "epochs", "hidden", "time_dim", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ContractError(f"{name} must be positive, got {getattr(self, name)}")
        if self.num_layers < 0:
            raise ContractError(f"num_layers must be >= 0, got {self.num_layers}")
        if not self.learning_rate > 0:
            raise ContractError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.window is not None and not self.window > 0:
            raise ContractError(f"window must be positive or null, got {self.window}")
        if len(self.split) != 3 or min(self.split) < 0 or abs(sum(self.split) - 1.0) > 1e-9:
            raise ContractError(f"split fractions must be three non-negatives summing to 1, got {self.split}")
        if self.signed_mode not in SIGNED_MODES:
            raise ContractError(f"signed_mode must be one of {SIGNED_MODES}")
        if self.direction not in (None, "both", "in"):
            raise ContractError(f"direction must be 'both', 'in' or null, got {self.direction!r}")
        if self.sampling not in ("uniform", "recent"):
            raise ContractError(f"sampling must be 'uniform' or 'recent', got {self.sampling!r}")
        return self

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown run config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class RunReport:
    config: dict
    train_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_acc: float = float("nan")
    test_acc: float = float("nan")
    split_hash: str = ""
    split_sizes: tuple = (0, 0, 0)
    epoch_seconds: list = field(default_factory=list)
    wall_clock_seconds: float = 0.0

    TIMING_KEYS = ("epoch_seconds", "wall_clock_seconds")

    def to_dict(self, timing=True):
        d = dataclasses.asdict(self)
        d["split_sizes"] = list(self.split_sizes)
        if not timing:
            for k in self.TIMING_KEYS:
                d.pop(k)
        return d

    def to_json(self, timing=True):
        return json.dumps(self.to_dict(timing=timing), sort_keys=True, indent=2)

    def content_hash(self):
        return hashlib.sha256(self.to_json(timing=False).encode()).hexdigest()


def summarize(values):
    a = np.asarray(values, dtype=np.float64)
    return {"mean": float(a.mean()), "std": float(a.std()), "n": int(len(a))}


# ------------------------------------------------------------ splits

def split_sizes(n, fractions):
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return n_train, n_val, n - n_train - n_val


def split_queries(queries, fractions=(0.6, 0.2, 0.2), seed=0, by_node=False):
    """Shuffle and cut labeled queries into train / validation / test.

    With ``by_node`` the unit of the split is the node, so all queries of a
    node land in the same part; otherwise every ``(node, time)`` query is
    its own unit.
    """
    queries = list(queries)
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ContractError(f"invalid split fractions {fractions}")
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 0x5EED])
    if by_node:
        nodes = np.unique([q.node for q in queries])
        perm = nodes[rng.permutation(len(nodes))]
        sizes = split_sizes(len(nodes), fractions)
        cut = np.cumsum(sizes)[:-1]
        part_of = {}
        for k, part in enumerate(np.split(perm, cut)):
            for v in part:
                part_of[int(v)] = k
        parts = ([], [], [])
        for q in queries:
            parts[part_of[q.node]].append(q)
    else:
        perm = rng.permutation(len(queries))
        sizes = split_sizes(len(queries), fractions)
        cut = np.cumsum(sizes)[:-1]
        parts = tuple([queries[i] for i in chunk] for chunk in np.split(perm, cut))
    if any(len(p) == 0 for p in parts):
        raise ContractError(f"split of {len(queries)} queries leaves an empty part "
                            f"(sizes {[len(p) for p in parts]})")
    return parts


def split_hash(parts):
    h = hashlib.sha256()
    for name, part in zip(("train", "val", "test"), parts):
        h.update(name.encode())
        for q in part:
            h.update(f"{q.node},{q.time!r},{q.label};".encode())
    return h.hexdigest()[:16]


# ------------------------------------------------------------ batches

def sample_batch(g, queries, cfg, salt):
    contexts = []
    for q in queries:
        t0 = default_t0(g, q.time, cfg.window)
        ctx = sample_context(g, q.node, q.time, t0, cfg.h_max, cfg.n_max, rng_seed=cfg.seed,
                             direction=cfg.direction, strategy=cfg.sampling, salt=salt)
        check_causality(ctx)
        contexts.append(ctx)
    return contexts


def _chunks(items, size):
    return [items[i:i + size] for i in range(0, len(items), size)]


def _eval_batches(g, queries, cfg):
    out = []
    for chunk in _chunks(list(queries), cfg.batch_size):
        view = collate(sample_batch(g, chunk, cfg, EVAL_SALT))
        out.append((view, np.array([q.label for q in chunk])))
    return out


def _predict(model, g, batches, diagnostics=None):
    preds = []
    for view, _ in batches:
        logits = forward_view(model, g, view, diagnostics=diagnostics)
        preds.append(np.argmax(logits.data, axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def _accuracy(model, g, batches):
    pred = _predict(model, g, batches)
    labels = np.concatenate([y for _, y in batches])
    return float(np.mean(pred == labels))


def build_model(g, cfg):
    return ThegcnModel(g.feature_dim, g.edge_feat_dim, g.num_classes, hidden=cfg.hidden,
                       time_dim=cfg.time_dim, num_layers=cfg.num_layers,
                       signed_mode=cfg.signed_mode, use_time_encoding=cfg.use_time_encoding,
                       project_features=cfg.project_features, seed=cfg.seed)


def evaluate(model, g, queries, cfg, diagnostics=None, return_predictions=False):
    """Accuracy of ``model`` on ``queries`` with evaluation-seeded contexts.

    No gradient is accumulated.  With ``return_predictions`` the result is
    ``(accuracy, [(node, time, label, pred), ...])``.
    """
    queries = list(queries)
    if not queries:
        raise ContractError("evaluate: no queries")
    batches = _eval_batches(g, queries, cfg)
    pred = _predict(model, g, batches, diagnostics=diagnostics)
    labels = np.array([q.label for q in queries])
    acc = float(np.mean(pred == labels))
    if return_predictions:
        rows = [(q.node, q.time, q.label, int(p)) for q, p in zip(queries, pred)]
        return acc, rows
    return acc


# ------------------------------------------------------------ training

def train(g, cfg, splits=None, log=None):
    """Fit a model on the training queries; return the best-validation model.

    Each epoch shuffles the training queries, samples their contexts (fresh
    per epoch unless ``resample_per_epoch`` is off), and takes one Adam step
    per mini-batch on the mean cross-entropy.  Validation accuracy is
    measured after every epoch and the best epoch's parameters are restored
    (ties keep the earlier epoch).
    """
    cfg.validate()
    started = _time.perf_counter()
    if g.num_classes < 2:
        raise ContractError("train: need at least two classes")
    if splits is None:
        splits = split_queries(g.queries(), cfg.split, cfg.seed, by_node=g.static_labels)
    train_q, val_q, test_q = (list(p) for p in splits)
    report = RunReport(config=cfg.to_dict(), split_hash=split_hash((train_q, val_q, test_q)),
                       split_sizes=(len(train_q), len(val_q), len(test_q)))
    model = build_model(g, cfg)
    params = model.parameters()
    opt = T.Adam(params, cfg.learning_rate)
    opt.zero_grad()
    val_batches = _eval_batches(g, val_q, cfg)
    labels_all = np.array([q.label for q in train_q])

    best_state = model.state_dict()
    for epoch in range(cfg.epochs):
        t_epoch = _time.perf_counter()
        rng = np.random.default_rng([int(cfg.seed) & 0xFFFFFFFF, epoch])
        order = rng.permutation(len(train_q))
        salt = epoch + 1 if cfg.resample_per_epoch else 1
        total = 0.0
        for idx in _chunks(order, cfg.batch_size):
            batch = [train_q[i] for i in idx]
            view = collate(sample_batch(g, batch, cfg, salt))
            loss = T.cross_entropy(forward_view(model, g, view), labels_all[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDivergence(f"non-finite loss {value} at epoch {epoch}")
            T.backward(loss)
            opt.step()
            total += value * len(idx)
        report.train_loss.append(total / len(train_q))
        acc = _accuracy(model, g, val_batches)
        report.val_acc.append(acc)
        if report.best_epoch < 0 or acc > report.best_val_acc:
            report.best_epoch, report.best_val_acc = epoch, acc
            best_state = model.state_dict()
        report.epoch_seconds.append(_time.perf_counter() - t_epoch)
        if log is not None:
            log(f"epoch {epoch:3d}  loss {report.train_loss[-1]:.4f}  val {acc:.4f}")

    model.load_state_dict(best_state)
    report.test_acc = evaluate(model, g, test_q, cfg)
    report.wall_clock_seconds = _time.perf_counter() - started
    return model, report


def train_epoch_seconds(g, cfg, queries):
    """Wall-clock of one training epoch over ``queries`` (throughput probe)."""
    cfg.validate()
    model = build_model(g, cfg)
    opt = T.Adam(model.parameters(), cfg.learning_rate)
    opt.zero_grad()
    labels = np.array([q.label for q in queries])
    order = np.random.default_rng(cfg.seed).permutation(len(queries))
    start = _time.perf_counter()
    for idx in _chunks(order, cfg.batch_size):
        view = collate(sample_batch(g, [queries[i] for i in idx], cfg, 1))
        loss = T.cross_entropy(forward_view(model, g, view), labels[idx])
        T.backward(loss)
        opt.step()
    return _time.perf_counter() - start


def run_seeds(g, cfg, seeds):
    reports = []
    for s in seeds:
        _, rep = train(g, cfg.replace(seed=s))
        reports.append(rep)
    return reports, summarize([r.test_acc for r in reports])


# ------------------------------------------------------------ experiments

ABLATIONS = {
    "full": {},
    "nonneg_sigmoid": {"signed_mode": "nonneg_sigmoid"},
    "no_time_encoding": {"use_time_encoding": False},
}


def attention_histogram(diag, max_delta=None, layer=0):
    """Counts of signed weights in bins of width 0.2 over [-1, 1]."""
    keep = diag["layer"] == layer
    if max_delta is not None:
        keep &= diag["delta"] <= max_delta
    s = diag["signed"][keep]
    counts, _ = np.histogram(s, bins=HISTOGRAM_EDGES)
    total = int(counts.sum())
    return {
        "bin_edges": HISTOGRAM_EDGES.tolist(),
        "counts": counts.tolist(),
        "total": total,
        "fraction_negative": float(np.mean(s < 0)) if total else None,
        "max_delta": max_delta,
        "layer": layer,
    }


def run_ablation_suite(g, base_cfg, seeds=range(5), max_delta=None, log=None):
    """Train the full model and its two ablations on shared seeds and splits."""
    base_cfg.validate()
    seeds = list(seeds)
    variants = {}
    diag_parts = []
    for name, change in ABLATIONS.items():
        cfg = base_cfg.replace(**change)
        runs = []
        for s in seeds:
            scfg = cfg.replace(seed=s)
            splits = split_queries(g.queries(), scfg.split, s, by_node=g.static_labels)
            model, rep = train(g, scfg, splits=splits)
            runs.append(rep)
            if name == "full":
                evaluate(model, g, splits[2], scfg, diagnostics=diag_parts)
            if log is not None:
                log(f"{name} seed {s}: test {rep.test_acc:.4f}")
        accs = [r.test_acc for r in runs]
        variants[name] = {
            "config": cfg.to_dict(),
            "test_acc": accs,
            "split_hashes": [r.split_hash for r in runs],
            "wall_clock_seconds": [r.wall_clock_seconds for r in runs],
            **summarize(accs),
        }
    full = variants["full"]
    comparisons = {}
    for name in ABLATIONS:
        if name == "full":
            continue
        v = variants[name]
        pooled = math.sqrt((full["std"] ** 2 + v["std"] ** 2) / 2.0)
        comparisons[name] = {"delta_mean": full["mean"] - v["mean"], "pooled_std": pooled}
    diag = merge_diagnostics(diag_parts)
    return {
        "seeds": seeds,
        "variants": variants,
        "comparisons": comparisons,
        "attention_histogram": attention_histogram(diag, max_delta),
    }


def run_param_study(g, base_cfg, n_max_grid=(2, 5, 10), layer_grid=(1, 2, 3), seeds=range(5),
                    log=None):
    """Cross product of ``n_max`` and ``num_layers`` with shared seeds."""
    n_max_grid, layer_grid, seeds = list(n_max_grid), list(layer_grid), list(seeds)
    if not n_max_grid or not layer_grid or not seeds:
        raise ContractError("run_param_study: empty grid")
    cells = []
    for n_max in n_max_grid:
        for layers in layer_grid:
            cfg = base_cfg.replace(n_max=n_max, num_layers=layers)
            reports, stats = run_seeds(g, cfg, seeds)
            cells.append({"n_max": n_max, "num_layers": layers, "config": cfg.to_dict(),
                          "test_acc": [r.test_acc for r in reports],
                          "reports": [r.to_dict(timing=False) for r in reports], **stats})
            if log is not None:
                log(f"n_max={n_max} L={layers}: {stats['mean']:.4f} +- {stats['std']:.4f}")
    return {"n_max_grid": n_max_grid, "layer_grid": layer_grid, "seeds": seeds,
            "num_runs": len(cells) * len(seeds), "cells": cells}


# ------------------------------------------------------------ artifacts

def run_directory(out, cfg):
    path = Path(out) / f"run-{cfg.config_hash()}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_predictions(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "time", "label", "pred"])
        for v, t, y, p in rows:
            w.writerow([v, repr(float(t)), y, p])


def read_predictions(path):
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        return [(int(x["node"]), float(x["time"]), int(x["label"]), int(x["pred"])) for x in r]


def diagnostics_to_json(diag):
    keys = ("layer", "hop", "delta", "p", "signed")
    n = len(diag["signed"])
    return [{k: (int(diag[k][i]) if k in ("layer", "hop") else float(diag[k][i])) for k in keys}
            for i in range(n)]


def queries_from_rows(rows):
    return [LabeledQuery(int(v), float(t), int(y)) for v, t, y in rows]
