"""Event-based continuous graphs: storage, validation and CSV round-trips.

An :class:`EventGraph` keeps events as parallel numpy arrays sorted by
``(time, src, dst, input order)``.  Per-node incidence lists (CSR layout,
time-sorted) are built once so the sampler and the metrics can answer
"events touching v in [a, b)" with two binary searches.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .errors import ContractError, IntegrityError, ParseError, SchemaError


class TemporalEvent(NamedTuple):
    src: int
    dst: int
    time: float
    edge_feat: Optional[tuple] = None


class LabeledQuery(NamedTuple):
    node: int
    time: float
    label: int


def _readonly(a):
    a.setflags(write=False)
    return a


class Timeline:
    """Records keyed by ``(node, time)`` with exact latest-at-or-before lookup.

    Times are replaced by their rank among the distinct record times, which
    turns the per-node search into one ``searchsorted`` over integer keys.
    """

    def __init__(self, nodes, times, num_nodes=None):
        nodes = np.asarray(nodes, dtype=np.int64)
        times = np.asarray(times, dtype=np.float64)
        self.order = np.lexsort((np.arange(len(nodes)), times, nodes))
        self.nodes = _readonly(nodes[self.order])
        self.times = _readonly(times[self.order])
        if num_nodes is None:
            num_nodes = int(self.nodes.max()) + 1 if len(self.nodes) else 0
        self.num_nodes = num_nodes
        self.offsets = _readonly(np.searchsorted(self.nodes, np.arange(num_nodes + 1)))
        self._uniq = np.unique(self.times)
        self._stride = len(self._uniq) + 1
        self._keys = self.nodes * self._stride + np.searchsorted(self._uniq, self.times, side="right")

    def lookup(self, nodes, times):
        """Row index of the latest record at or before each query, else -1."""
        nodes = np.asarray(nodes, dtype=np.int64)
        times = np.broadcast_to(np.asarray(times, dtype=np.float64), nodes.shape)
        out = np.full(nodes.shape, -1, dtype=np.int64)
        known = (nodes >= 0) & (nodes < self.num_nodes)
        qn = nodes[known]
        keys = qn * self._stride + np.searchsorted(self._uniq, times[known], side="right")
        pos = np.searchsorted(self._keys, keys, side="right") - 1
        ok = pos >= self.offsets[qn]
        res = np.full(len(qn), -1, dtype=np.int64)
        res[ok] = pos[ok]
        out[known] = res
        return out


class NodeFeatures:
    """Node attributes resolved at ``(node, time)``.

    Static mode stores one row per node.  Snapshot mode stores rows keyed by
    ``(node, time)`` and resolves a query to the latest snapshot at or before
    the query time; a query before a node's first snapshot yields zeros.
    """

    def __init__(self, table, nodes=None, times=None):
        table = np.asarray(table, dtype=np.float64)
        if table.ndim != 2:
            raise SchemaError(f"feature table must be 2-D, got shape {table.shape}")
        self.dim = table.shape[1]
        if times is None:
            self.snapshot = False
            self.table = _readonly(table.copy())
            self.num_rows = table.shape[0]
            return
        self.snapshot = True
        self.timeline = Timeline(nodes, times)
        self.nodes = self.timeline.nodes
        self.times = self.timeline.times
        self.table = _readonly(table[self.timeline.order])
        self.num_rows = self.timeline.num_nodes

    @classmethod
    def static(cls, table):
        return cls(table)

    @classmethod
    def snapshots(cls, nodes, times, table):
        return cls(table, nodes=nodes, times=times)

    def __call__(self, nodes, times):
        nodes = np.asarray(nodes, dtype=np.int64)
        if not self.snapshot:
            return self.table[nodes]
        pos = self.timeline.lookup(nodes, times)
        out = np.zeros((len(nodes), self.dim))
        ok = pos >= 0
        out[ok] = self.table[pos[ok]]
        return out

    def rows(self):
        """Iterate ``(node, time_or_None, vector)`` in storage order."""
        if not self.snapshot:
            for v in range(self.table.shape[0]):
                yield v, None, self.table[v]
        else:
            for v, t, x in zip(self.nodes, self.times, self.table):
                yield int(v), float(t), x


class EventGraph:
    """Immutable, time-sorted event store with features and label timelines.

    Parameters
    ----------
    num_nodes : int
    src, dst, time : array-like
        One entry per event, in any order; stored sorted.
    edge_feat : array-like, optional
        ``(num_events, d_e)``; a zero-width matrix when absent.
    features : NodeFeatures, optional
        Defaults to a zero-width static table.
    labels : iterable of ``(node, time, class)``
    num_classes : int, optional
        Inferred as ``max label + 1`` when omitted.
    directed : bool
        Only changes incidence queries when the ``"in"`` direction is asked for.
    static_labels : bool, optional
        Declares labels time-invariant; inferred when omitted.
    """

    def __init__(self, num_nodes, src, dst, time, edge_feat=None, features=None,
                 labels=(), num_classes=None, directed=False, static_labels=None):
        self.num_nodes = int(num_nodes)
        src = np.asarray(src, dtype=np.int64).ravel()
        dst = np.asarray(dst, dtype=np.int64).ravel()
        time = np.asarray(time, dtype=np.float64).ravel()
        if not (len(src) == len(dst) == len(time)):
            raise SchemaError("src, dst and time must have equal length")
        if not np.all(np.isfinite(time)):
            raise IntegrityError("event times must be finite")
        for name, ids in (("src", src), ("dst", dst)):
            bad = np.flatnonzero((ids < 0) | (ids >= self.num_nodes))
            if len(bad):
                raise IntegrityError(
                    f"event {int(bad[0])}: {name} id {int(ids[bad[0]])} outside [0, {self.num_nodes})")
        if edge_feat is None:
            edge_feat = np.zeros((len(src), 0))
        edge_feat = np.asarray(edge_feat, dtype=np.float64)
        if edge_feat.ndim != 2 or edge_feat.shape[0] != len(src):
            raise SchemaError(f"edge features {edge_feat.shape} do not match {len(src)} events")
        order = np.lexsort((np.arange(len(src)), dst, src, time))
        self.src = _readonly(src[order])
        self.dst = _readonly(dst[order])
        self.time = _readonly(time[order])
        self.edge_feat = _readonly(edge_feat[order])
        self.directed = bool(directed)

        self.features = features if features is not None else NodeFeatures.static(
            np.zeros((self.num_nodes, 0)))
        if not self.features.snapshot and self.features.num_rows != self.num_nodes:
            raise SchemaError(
                f"static feature table has {self.features.num_rows} rows for {self.num_nodes} nodes")
        if self.features.snapshot and self.features.num_rows > self.num_nodes:
            raise IntegrityError(
                f"feature snapshot for node {self.features.num_rows - 1} outside [0, {self.num_nodes})")

        lab = np.asarray(list(labels), dtype=np.float64).reshape(-1, 3)
        lnode = lab[:, 0].astype(np.int64)
        ltime = lab[:, 1]
        lcls = lab[:, 2].astype(np.int64)
        bad = np.flatnonzero((lnode < 0) | (lnode >= self.num_nodes))
        if len(bad):
            raise IntegrityError(
                f"label row {int(bad[0])}: node {int(lnode[bad[0]])} outside [0, {self.num_nodes})")
        if num_classes is None:
            num_classes = int(lcls.max()) + 1 if len(lcls) else 0
        self.num_classes = int(num_classes)
        bad = np.flatnonzero((lcls < 0) | (lcls >= max(self.num_classes, 1)))
        if len(bad):
            raise IntegrityError(
                f"label row {int(bad[0])}: class {int(lcls[bad[0]])} outside [0, {self.num_classes})")
        self._labels = Timeline(lnode, ltime, self.num_nodes)
        self.label_node = self._labels.nodes
        self.label_time = self._labels.times
        self.label_class = _readonly(lcls[self._labels.order])
        if static_labels is None:
            static_labels = self._labels_constant()
        self.static_labels = bool(static_labels)

    # ------------------------------------------------------------ basics

    @property
    def num_events(self):
        return len(self.time)

    @property
    def feature_dim(self):
        return self.features.dim

    @property
    def edge_feat_dim(self):
        return self.edge_feat.shape[1]

    def __len__(self):
        return self.num_events

    def __repr__(self):
        return (f"EventGraph(nodes={self.num_nodes}, events={self.num_events}, "
                f"d={self.feature_dim}, d_e={self.edge_feat_dim}, classes={self.num_classes}, "
                f"labels={len(self.label_node)})")

    def event(self, i):
        ef = tuple(self.edge_feat[i]) if self.edge_feat_dim else None
        return TemporalEvent(int(self.src[i]), int(self.dst[i]), float(self.time[i]), ef)

    def events(self):
        return [self.event(i) for i in range(self.num_events)]

    def node_features(self, nodes, times):
        return self.features(nodes, times)

    # ------------------------------------------------------------ labels

    def _labels_constant(self):
        if not len(self.label_node):
            return True
        same_node = self.label_node[1:] == self.label_node[:-1]
        return bool(np.all(self.label_class[1:][same_node] == self.label_class[:-1][same_node]))

    def label_records(self):
        return [LabeledQuery(int(v), float(t), int(c))
                for v, t, c in zip(self.label_node, self.label_time, self.label_class)]

    def queries(self):
        """Every label record as a :class:`LabeledQuery`, in (node, time) order."""
        return self.label_records()

    def resolve_label(self, node, time):
        """Class of the latest label record at or before ``time``; ``None`` if none."""
        k = int(self._labels.lookup(np.array([int(node)]), np.array([float(time)]))[0])
        return int(self.label_class[k]) if k >= 0 else None

    def resolve_labels(self, nodes, times):
        """Vectorized :meth:`resolve_label`; unresolved entries are ``-1``."""
        k = self._labels.lookup(nodes, times)
        return np.where(k >= 0, self.label_class[np.maximum(k, 0)], -1)

    # ------------------------------------------------------------ incidence

    @cached_property
    def _incidence_both(self):
        e = np.arange(self.num_events)
        loops = self.src == self.dst
        node = np.concatenate([self.src, self.dst[~loops]])
        other = np.concatenate([self.dst, self.src[~loops]])
        eid = np.concatenate([e, e[~loops]])
        return self._csr(node, other, eid)

    @cached_property
    def _incidence_in(self):
        return self._csr(self.dst, self.src, np.arange(self.num_events))

    def _csr(self, node, other, eid):
        order = np.lexsort((eid, node))  # eid order == time order
        offsets = np.searchsorted(node[order], np.arange(self.num_nodes + 1))
        eids = eid[order]
        return (_readonly(offsets), _readonly(eids), _readonly(other[order]),
                _readonly(self.time[eids]))

    def incidence(self, direction="both"):
        """CSR incidence ``(offsets, event_ids, counterparts, times)``.

        ``"both"`` lists every event touching a node once (self-loops once);
        ``"in"`` lists only events whose ``dst`` is the node.
        """
        if direction == "both":
            return self._incidence_both
        if direction == "in":
            return self._incidence_in
        raise ContractError(f"unknown incidence direction {direction!r}")

    def incident_events(self, node, t_start, t_end, direction="both"):
        """Event ids and counterparts touching ``node`` with time in ``[t_start, t_end)``."""
        offsets, eids, other, times = self.incidence(direction)
        a, b = offsets[node], offsets[node + 1]
        lo = a + np.searchsorted(times[a:b], t_start, side="left")
        hi = a + np.searchsorted(times[a:b], t_end, side="left")
        return eids[lo:hi], other[lo:hi]

    def default_direction(self):
        return "in" if self.directed else "both"


# ------------------------------------------------------------ file formats

@dataclass
class GraphSchema:
    """Options that the CSV files themselves do not carry."""
    num_nodes: Optional[int] = None
    num_classes: Optional[int] = None
    directed: bool = False
    static_labels: Optional[bool] = None


def _read_rows(path):
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise FileNotFoundError(f"cannot open {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(path, 1, "empty file, expected a header row") from None
        rows = []
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            rows.append((reader.line_num, row))
    return header, rows


def _number(path, line, text, kind):
    try:
        if kind is int:
            v = int(text)
        else:
            v = float(text)
            if not math.isfinite(v):
                raise ValueError
        return v
    except ValueError:
        raise ParseError(path, line, f"expected {'integer' if kind is int else 'finite number'}, "
                                     f"got {text!r}") from None


def _parse(path, header, rows, kinds, fixed=None):
    """Parse rows; ``fixed`` leading columns are keys, the rest a feature vector."""
    fixed = len(header) if fixed is None else fixed
    out = []
    for line, row in rows:
        if len(row) != len(header):
            if len(row) >= fixed and len(header) > fixed:
                raise SchemaError(f"{path}:{line}: feature dimension {len(row) - fixed} "
                                  f"differs from header dimension {len(header) - fixed}")
            raise ParseError(path, line, f"expected {len(header)} fields, got {len(row)}")
        out.append([_number(path, line, c.strip(), k) for c, k in zip(row, kinds)])
    return out


def read_events(path):
    header, rows = _read_rows(path)
    if header[:3] != ["src", "dst", "time"]:
        raise ParseError(path, 1, f"header must start with src,dst,time, got {','.join(header)}")
    parsed = _parse(path, header, rows, [int, int, float] + [float] * (len(header) - 3),
                    fixed=3)
    arr = np.asarray(parsed, dtype=np.float64).reshape(-1, len(header))
    return (arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64), arr[:, 2],
            arr[:, 3:], [r[0] for r in rows])


def read_node_features(path):
    header, rows = _read_rows(path)
    if not header or header[0] != "node":
        raise ParseError(path, 1, "header must start with node")
    has_time = len(header) > 1 and header[1] == "time"
    k = 2 if has_time else 1
    parsed = _parse(path, header, rows, [int] + [float] * (len(header) - 1), fixed=k)
    arr = np.asarray(parsed, dtype=np.float64).reshape(-1, len(header))
    nodes = arr[:, 0].astype(np.int64)
    if has_time:
        return NodeFeatures.snapshots(nodes, arr[:, 1], arr[:, k:]), nodes
    if len(np.unique(nodes)) != len(nodes):
        raise SchemaError(f"{path}: duplicate node rows in a static feature table")
    if len(nodes) and (nodes.min() < 0 or not np.array_equal(np.sort(nodes), np.arange(len(nodes)))):
        raise IntegrityError(f"{path}: static feature table must cover nodes 0..{len(nodes) - 1} exactly")
    table = np.zeros((len(nodes), len(header) - 1))
    table[nodes] = arr[:, 1:]
    return NodeFeatures.static(table), nodes


def read_labels(path):
    header, rows = _read_rows(path)
    if header != ["node", "time", "label"]:
        raise ParseError(path, 1, f"header must be node,time,label, got {','.join(header)}")
    parsed = _parse(path, header, rows, [int, float, int])
    return parsed, [r[0] for r in rows]


def load_event_graph(event_path, node_feat_path=None, label_path=None, schema=None):
    """Read and validate the CSV triplet into an :class:`EventGraph`.

    ``num_nodes`` comes from the schema when given, else from the largest id
    seen in the events and the feature table.  Label rows are checked against
    it and reported by file line.
    """
    schema = schema or GraphSchema()
    src, dst, time, ef, _ = read_events(event_path)
    features, feat_nodes = (None, np.zeros(0, dtype=np.int64))
    if node_feat_path is not None:
        features, feat_nodes = read_node_features(node_feat_path)
    if schema.num_nodes is not None:
        num_nodes = schema.num_nodes
    else:
        ids = np.concatenate([src, dst, feat_nodes])
        num_nodes = int(ids.max()) + 1 if len(ids) else 0
    labels = []
    if label_path is not None:
        labels, lines = read_labels(label_path)
        for (v, t, c), line in zip(labels, lines):
            if v < 0 or v >= num_nodes:
                raise IntegrityError(f"{label_path}:{line}: label row references node {v} "
                                     f"outside [0, {num_nodes})")
            if c < 0 or (schema.num_classes is not None and c >= schema.num_classes):
                raise IntegrityError(f"{label_path}:{line}: class {c} out of range")
    if features is not None and not features.snapshot and features.num_rows < num_nodes:
        raise IntegrityError(f"{node_feat_path}: no feature row for nodes "
                             f">= {features.num_rows} (graph has {num_nodes})")
    return EventGraph(num_nodes, src, dst, time, edge_feat=ef, features=features,
                      labels=labels, num_classes=schema.num_classes,
                      directed=schema.directed, static_labels=schema.static_labels)


def _fmt(x):
    return repr(float(x))


def save_event_graph(g, directory):
    """Write ``events.csv``, ``node_feats.csv`` and ``labels.csv`` under ``directory``.

    Reals are written with ``repr`` so a reload is bit-identical.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {k: directory / f"{k}.csv" for k in ("events", "node_feats", "labels")}
    with open(paths["events"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst", "time"] + [f"ef{k}" for k in range(g.edge_feat_dim)])
        for s, d, t, ef in zip(g.src, g.dst, g.time, g.edge_feat):
            w.writerow([int(s), int(d), _fmt(t)] + [_fmt(x) for x in ef])
    with open(paths["node_feats"], "w", newline="") as fh:
        w = csv.writer(fh)
        cols = [f"f{k}" for k in range(g.feature_dim)]
        w.writerow(["node", "time"] + cols if g.features.snapshot else ["node"] + cols)
        for v, t, x in g.features.rows():
            head = [v, _fmt(t)] if t is not None else [v]
            w.writerow(head + [_fmt(a) for a in x])
    with open(paths["labels"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "time", "label"])
        for v, t, c in zip(g.label_node, g.label_time, g.label_class):
            w.writerow([int(v), _fmt(t), int(c)])
    return paths
