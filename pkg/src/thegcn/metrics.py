"""Heterophily and label-dynamics statistics of an :class:`EventGraph`."""
from __future__ import annotations

import math

import numpy as np

from .errors import ContractError, CoverageError


def resolve_label(g, node, time):
    """Latest label of ``node`` at or before ``time``, or ``None``."""
    return g.resolve_label(node, time)


def static_edge_heterophily(g, label_at):
    """Fraction of events whose endpoints carry different labels.

    Each endpoint's label is the latest record at or before ``label_at``.
    Every stored event counts once, repeated interactions included.
    """
    if g.num_events == 0:
        raise ContractError("static_edge_heterophily: graph has no events")
    ys = g.resolve_labels(g.src, label_at)
    yd = g.resolve_labels(g.dst, label_at)
    missing = np.concatenate([g.src[ys < 0], g.dst[yd < 0]])
    if len(missing):
        raise CoverageError(f"no label at or before t={label_at} for event endpoints", missing)
    return int(np.count_nonzero(ys != yd)) / g.num_events


def node_edge_heterophily(g, node, label_at, direction=None):
    """Per-node differing-endpoint fraction over all incident events (``None`` if isolated)."""
    direction = direction or g.default_direction()
    eids, other = g.incident_events(node, -math.inf, math.inf, direction)
    if not len(eids):
        return None
    y = g.resolve_label(node, label_at)
    yo = g.resolve_labels(other, label_at)
    if y is None or np.any(yo < 0):
        bad = ([node] if y is None else []) + list(other[yo < 0])
        raise CoverageError(f"no label at or before t={label_at}", bad)
    return int(np.count_nonzero(yo != y)) / len(eids)


def temporal_edge_heterophily(g, t1, t2, vj, direction=None):
    """Temporal edge heterophily of ``vj`` over the window ``[t1, t2)``.

    Among events incident to ``vj`` in the window, the fraction whose
    counterpart's label at the event time differs from ``vj``'s label at
    ``t2``.  Returns ``None`` when no event falls in the window.

    ``direction`` is ``"both"`` (default for undirected graphs) or ``"in"``,
    which only counts events whose ``dst`` is ``vj``.
    """
    if not t1 < t2:
        raise ContractError(f"temporal_edge_heterophily needs t1 < t2, got [{t1}, {t2})")
    direction = direction or g.default_direction()
    eids, other = g.incident_events(vj, t1, t2, direction)
    if not len(eids):
        return None
    y = g.resolve_label(vj, t2)
    if y is None:
        raise CoverageError(f"target has no label at t2={t2}", [vj])
    yo = g.resolve_labels(other, g.time[eids])
    if np.any(yo < 0):
        raise CoverageError("counterpart unlabeled at event time", other[yo < 0])
    return int(np.count_nonzero(yo != y)) / len(eids)


def temporal_changing_ratio(g, window=None):
    """Share of nodes whose label changes inside ``window = (t_a, t_b)``.

    Only nodes with at least two label records in the closed window are
    considered; ``window=None`` uses every record.
    """
    t, v, c = g.label_time, g.label_node, g.label_class
    if window is not None:
        ta, tb = window
        keep = (t >= ta) & (t <= tb)
        t, v, c = t[keep], v[keep], c[keep]
    if not len(v):
        raise ContractError("temporal_changing_ratio: no label records in window")
    # records are sorted by node, so per-node runs are contiguous
    starts = np.flatnonzero(np.r_[True, v[1:] != v[:-1]])
    counts = np.diff(np.r_[starts, len(v)])
    cmin = np.minimum.reduceat(c, starts)
    cmax = np.maximum.reduceat(c, starts)
    eligible = counts >= 2
    if not eligible.any():
        raise ContractError("temporal_changing_ratio: no node has two labels in the window")
    changed = (cmin != cmax) & eligible
    return int(changed.sum()) / int(eligible.sum())


def heterophily_report(g, static_at, window=None):
    """Dictionary of the graph-level statistics used by the ``measure`` command."""
    report = {
        "num_nodes": g.num_nodes,
        "num_events": g.num_events,
        "num_classes": g.num_classes,
        "num_label_records": int(len(g.label_node)),
        "static_at": static_at,
        "static_edge_heterophily": static_edge_heterophily(g, static_at),
    }
    try:
        report["temporal_changing_ratio"] = temporal_changing_ratio(g, window)
    except ContractError:
        report["temporal_changing_ratio"] = None
    return report
