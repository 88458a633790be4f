"""Desk-scale datasets.

``build_pems_style`` turns per-sensor traffic series into an event graph:
each sensor interacts with the sensors whose flow is most similar in the
same interval, provided they are close enough; speed bins become one-hot
features and occupancy bins become labels.

``generate_synthetic`` plants a chosen cross-class event fraction and a
label schedule (periodic, linear drift or transient spikes) so that the
model and the metrics can be checked against known structure.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ContractError
from .graph import EventGraph, NodeFeatures, save_event_graph

PATTERNS = ("periodic", "linear", "spike")


def equal_width_bins(values, n_bins, name="value"):
    """Bin index of each value over ``n_bins`` equal-width bins of the global range.

    The top edge is inclusive, so the maximum lands in the last bin.
    """
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if not hi > lo:
        raise ContractError(f"cannot bin {name}: degenerate range [{lo}, {hi}]")
    idx = np.floor((values - lo) / (hi - lo) * n_bins).astype(np.int64)
    return np.clip(idx, 0, n_bins - 1)


@dataclass
class SensorSeries:
    """Per-sensor, per-interval traffic statistics and sensor locations."""
    flow: np.ndarray
    speed: np.ndarray
    occupancy: np.ndarray
    positions: np.ndarray
    interval_length: float = 1.0

    def __post_init__(self):
        self.flow = np.asarray(self.flow, dtype=np.float64)
        self.speed = np.asarray(self.speed, dtype=np.float64)
        self.occupancy = np.asarray(self.occupancy, dtype=np.float64)
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.flow.ndim != 2 or self.flow.size == 0:
            raise ContractError("flow must be a non-empty (nodes, intervals) array")
        for name in ("speed", "occupancy"):
            if getattr(self, name).shape != self.flow.shape:
                raise ContractError(f"{name} shape {getattr(self, name).shape} != flow {self.flow.shape}")
        if self.positions.shape != (self.flow.shape[0], 2):
            raise ContractError(f"positions must be (nodes, 2), got {self.positions.shape}")

    @property
    def num_nodes(self):
        return self.flow.shape[0]

    @property
    def num_intervals(self):
        return self.flow.shape[1]


def pems_interactions(series, k_nearest=5, dist_threshold=1e-6):
    """Undirected ``(i, j, interval)`` triples, ``i < j``, one per pair and interval."""
    if not dist_threshold > 0:
        raise ContractError(f"dist_threshold must be positive, got {dist_threshold}")
    n = series.num_nodes
    k = min(int(k_nearest), n - 1)
    if k < 1:
        return np.zeros((0, 3), dtype=np.int64)
    pos = series.positions
    dist = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(axis=2))
    close = dist <= dist_threshold
    rows = np.repeat(np.arange(n), k)
    out = []
    for t in range(series.num_intervals):
        f = series.flow[:, t]
        diff = np.abs(f[:, None] - f[None, :])
        np.fill_diagonal(diff, np.inf)
        # stable sort: equal flow gaps keep node-id order
        nearest = np.argsort(diff, axis=1, kind="stable")[:, :k].ravel()
        keep = close[rows, nearest]
        a, b = rows[keep], nearest[keep]
        pairs = np.unique(np.stack([np.minimum(a, b), np.maximum(a, b)], axis=1), axis=0)
        if len(pairs):
            out.append(np.column_stack([pairs, np.full(len(pairs), t)]))
    return np.concatenate(out) if out else np.zeros((0, 3), dtype=np.int64)


def build_pems_style(series, k_nearest=5, dist_threshold=1e-6, n_speed_bins=10, n_occ_bins=5,
                     label_intervals=None):
    """Event graph from sensor series.

    Parameters
    ----------
    series : SensorSeries
    k_nearest : int
        Candidates per sensor and interval: the sensors with the closest flow
        value in that interval (ties by node id).
    dist_threshold : float
        Candidates farther than this Euclidean distance on raw positions are
        dropped.
    n_speed_bins, n_occ_bins : int
        Equal-width bins over the global range; speed bins give one-hot node
        features, occupancy bins give the class.
    label_intervals : int, optional
        Only label the last ``label_intervals`` intervals (all by default).
    """
    triples = pems_interactions(series, k_nearest, dist_threshold)
    n, t_count = series.num_nodes, series.num_intervals
    dt = float(series.interval_length)
    speed_bin = equal_width_bins(series.speed, n_speed_bins, "speed")
    occ_bin = equal_width_bins(series.occupancy, n_occ_bins, "occupancy")

    nodes = np.repeat(np.arange(n), t_count)
    times = np.tile(np.arange(t_count) * dt, n)
    onehot = np.zeros((n * t_count, n_speed_bins))
    onehot[np.arange(n * t_count), speed_bin.ravel()] = 1.0
    features = NodeFeatures.snapshots(nodes, times, onehot)

    first = 0 if label_intervals is None else max(0, t_count - int(label_intervals))
    lab_iv = np.arange(first, t_count)
    labels = [(v, float(t * dt), int(occ_bin[v, t])) for v in range(n) for t in lab_iv]
    return EventGraph(n, triples[:, 0], triples[:, 1], triples[:, 2] * dt, features=features,
                      labels=labels, num_classes=n_occ_bins, directed=False)


def random_sensor_series(num_nodes, num_intervals, seed=0, cluster_size=4, interval_length=1.0):
    """Random series with sensors placed in tight co-located clusters."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-120.0, -117.0, size=(-(-num_nodes // cluster_size), 2))
    positions = centers[np.arange(num_nodes) // cluster_size] + rng.uniform(
        0, 4e-7, size=(num_nodes, 2))
    return SensorSeries(
        flow=rng.gamma(4.0, 50.0, size=(num_nodes, num_intervals)),
        speed=rng.uniform(20.0, 70.0, size=(num_nodes, num_intervals)),
        occupancy=rng.uniform(0.0, 0.3, size=(num_nodes, num_intervals)),
        positions=positions, interval_length=interval_length)


# ------------------------------------------------------------ planted graphs

@dataclass
class SynthSpec:
    """Planted-structure generator settings.

    ``period`` is the full label cycle for ``"periodic"`` (each class lasts
    ``period / num_classes``) and the time per class step for ``"linear"``.
    Labels are recorded once per step at ``label_phase`` of the step; those
    records are also the labeled queries.  ``spike`` keeps each node's base
    class except for transient flips arriving at ``spike_rate`` per node and
    unit time, each lasting ``spike_length``.
    """
    num_nodes: int = 200
    num_classes: int = 2
    feature_dim: int = 2
    event_rate: float = 400.0
    duration: float = 96.0
    spatial_heterophily: float = 0.7
    pattern: str = "periodic"
    period: float = 16.0
    label_phase: float = 0.5
    spike_rate: float = 0.02
    spike_length: float = 2.0
    feature_noise: float = 1.0
    separation: float = 1.0
    edge_feat_dim: int = 0
    seed: int = 0

    def validate(self):
        if self.num_nodes < 2 or self.num_classes < 1:
            raise ContractError("need at least two nodes and one class")
        if not 0.0 <= self.spatial_heterophily <= 1.0:
            raise ContractError(f"spatial_heterophily must lie in [0, 1], got {self.spatial_heterophily}")
        if self.num_classes == 1 and self.spatial_heterophily > 0:
            raise ContractError("spatial_heterophily > 0 is infeasible with a single class")
        if self.num_nodes < self.num_classes:
            raise ContractError("fewer nodes than classes")
        if min(self.event_rate, self.duration, self.period) <= 0:
            raise ContractError("event_rate, duration and period must be positive")
        if self.pattern not in PATTERNS:
            raise ContractError(f"pattern must be one of {PATTERNS}, got {self.pattern!r}")
        if not 0.0 <= self.label_phase < 1.0:
            raise ContractError("label_phase must lie in [0, 1)")
        if self.spike_rate < 0 or self.spike_length <= 0:
            raise ContractError("spike_rate must be >= 0 and spike_length > 0")
        if self.feature_dim < self.num_classes:
            raise ContractError("feature_dim must be at least num_classes")
        if self.spatial_heterophily < 1.0 and self.num_nodes < 2 * self.num_classes:
            raise ContractError("need two nodes per class to plant same-class events")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class SyntheticDataset:
    graph: EventGraph
    meta: dict


def _step(spec):
    return spec.period / spec.num_classes if spec.pattern == "periodic" else spec.period


def _labels_at(spec, base, t, spikes=None):
    """True class of every node at time ``t``."""
    c = spec.num_classes
    if spec.pattern == "periodic":
        return (base + int(np.floor(t / _step(spec)))) % c
    if spec.pattern == "linear":
        return np.minimum(base + int(np.floor(t / _step(spec))), c - 1)
    out = base.copy()
    for v, (starts, shift) in enumerate(spikes):
        live = (starts <= t) & (t < starts + spec.spike_length)
        if live.any():
            out[v] = (base[v] + shift[np.flatnonzero(live)[-1]]) % c
    return out


def generate_synthetic(spec):
    """Event graph with planted cross-class rate and label dynamics.

    Cross-class events are planted on the nodes' base classes.  Periodic
    schedules shift every node's class together, so an event's cross-class
    flag is the same at every time and the static heterophily measured at
    any reference time equals the planted rate up to sampling noise.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, c = spec.num_nodes, spec.num_classes
    base = rng.permutation(np.arange(n) % c)
    step = _step(spec)

    spikes = None
    if spec.pattern == "spike":
        spikes = []
        for _ in range(n):
            k = rng.poisson(spec.spike_rate * spec.duration)
            starts = np.sort(rng.uniform(0, spec.duration, size=k))
            shift = rng.integers(1, c, size=k) if c > 1 else np.zeros(k, dtype=np.int64)
            spikes.append((starts, shift))

    # label records (also the queries)
    if spec.pattern == "spike":
        record_sets = [np.unique(np.concatenate([[0.0], s, s + spec.spike_length]))
                       for s, _ in spikes]
        record_sets = [r[r < spec.duration] for r in record_sets]
        t_start = 0.0
    else:
        rec = (np.arange(int(np.ceil(spec.duration / step)) + 1) + spec.label_phase) * step
        rec = rec[rec < spec.duration]
        record_sets = [rec] * n
        t_start = float(rec[0]) if len(rec) else 0.0
    labels = []
    for v in range(n):
        for t in record_sets[v]:
            labels.append((v, float(t), int(_labels_at(spec, base, t, spikes)[v])))

    # events
    m = int(round(spec.event_rate * (spec.duration - t_start)))
    times = np.sort(rng.uniform(t_start, spec.duration, size=m))
    src = rng.integers(0, n, size=m)
    cross = rng.random(m) < spec.spatial_heterophily
    members = [np.flatnonzero(base == k) for k in range(c)]
    sizes = np.array([len(mm) for mm in members])
    if c > 1:
        target_cls = np.where(cross, (base[src] + rng.integers(1, c, size=m)) % c, base[src])
    else:
        target_cls = base[src]
    dst = np.empty(m, dtype=np.int64)
    pick = rng.random(m)
    for k in range(c):
        sel = target_cls == k
        if not sel.any():
            continue
        mm = members[k]
        same = sel & ~cross
        other = sel & cross
        idx = np.floor(pick[other] * sizes[k]).astype(np.int64)
        dst[other] = mm[idx]
        # same class: draw among the class minus the source itself
        idx = np.floor(pick[same] * (sizes[k] - 1)).astype(np.int64)
        pos_src = np.searchsorted(mm, src[same])
        dst[same] = mm[idx + (idx >= pos_src)]

    edge_feat = rng.normal(size=(m, spec.edge_feat_dim)) if spec.edge_feat_dim else None

    # class-conditioned snapshot features, refreshed whenever a class may change
    if spec.pattern == "spike":
        snap_sets = [np.unique(np.concatenate([[0.0], s, s + spec.spike_length])) for s, _ in spikes]
        snap_sets = [s[s < spec.duration] for s in snap_sets]
    else:
        grid = np.arange(int(np.ceil(spec.duration / step)) + 1) * step
        snap_sets = [grid[grid < spec.duration]] * n
    f_nodes, f_times, f_rows = [], [], []
    means = np.zeros((c, spec.feature_dim))
    means[np.arange(c), np.arange(c)] = spec.separation
    for v in range(n):
        for t in snap_sets[v]:
            f_nodes.append(v)
            f_times.append(float(t))
            f_rows.append(means[_labels_at(spec, base, t, spikes)[v]])
    f_rows = np.asarray(f_rows) + spec.feature_noise * rng.normal(size=(len(f_rows), spec.feature_dim))
    features = NodeFeatures.snapshots(f_nodes, f_times, f_rows)

    g = EventGraph(n, src, dst, times, edge_feat=edge_feat, features=features, labels=labels,
                   num_classes=c, directed=False, static_labels=(spec.pattern == "spike"
                                                                 and spec.spike_rate == 0))
    flags = base[g.src] != base[g.dst]
    meta = {
        "spec": spec.to_dict(),
        "pattern": spec.pattern,
        "class_step": step,
        "label_record_phase": spec.label_phase,
        "first_label_time": t_start,
        "base_class": base.tolist(),
        "realized_cross_fraction": float(flags.mean()) if m else None,
        "event_cross_class": flags.astype(int).tolist(),
    }
    if spikes is not None:
        meta["spikes"] = [[[float(a), int(b)] for a, b in zip(st, sh)] for st, sh in spikes]
    return SyntheticDataset(g, meta)


def save_synthetic(ds, directory):
    paths = save_event_graph(ds.graph, directory)
    meta_path = Path(directory) / "meta.json"
    meta_path.write_text(json.dumps(ds.meta))
    paths["meta"] = meta_path
    return paths


def load_meta(directory) -> Optional[dict]:
    p = Path(directory) / "meta.json"
    return json.loads(p.read_text()) if p.exists() else None
