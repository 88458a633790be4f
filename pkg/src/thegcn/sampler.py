"""Time-respecting multi-hop event sampling and the static view built from it.

For a target ``(v, t')`` the sampler takes up to ``n_max`` events incident
to ``v`` in ``[t0, t')``.  Each taken event ``(v, u, t)`` makes ``(u, t)`` an
anchor for the next hop, whose candidates are ``u``'s events in ``[t0, t)``.
Ties with the anchor time are excluded, so nothing at or after a reference
time leaks into its neighbourhood.  A node instance reached several times
is expanded only once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ContractError
from .graph import TemporalEvent


class SampledEvent(NamedTuple):
    event: TemporalEvent
    event_id: int
    hop: int
    anchor: tuple
    delta: float


def context_rng(seed, node, time, salt=0):
    """Generator private to one ``(seed, salt, node, time)`` combination."""
    bits = int(np.float64(time).view(np.uint64))
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, int(salt), int(node), bits])


@dataclass(eq=False)
class SampledContext:
    """Events sampled for one target, as parallel arrays in sampling order."""
    target: tuple
    window: tuple
    h_max: int
    n_max: int
    event_id: np.ndarray
    hop: np.ndarray
    anchor_node: np.ndarray
    anchor_time: np.ndarray
    counterpart: np.ndarray
    event_time: np.ndarray
    graph: object = None

    def __len__(self):
        return len(self.event_id)

    @property
    def delta(self):
        return self.anchor_time - self.event_time

    @property
    def entries(self):
        g = self.graph
        return [SampledEvent(g.event(int(e)), int(e), int(h), (int(an), float(at)), float(at - et))
                for e, h, an, at, et in zip(self.event_id, self.hop, self.anchor_node,
                                           self.anchor_time, self.event_time)]

    def same_as(self, other):
        return (self.target == other.target and self.window == other.window
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("event_id", "hop", "anchor_node", "anchor_time",
                                  "counterpart", "event_time")))

    def to_json(self):
        g = self.graph
        return {
            "target": {"node": int(self.target[0]), "time": float(self.target[1])},
            "window": [float(self.window[0]), float(self.window[1])],
            "events": [
                {"src": int(g.src[e]), "dst": int(g.dst[e]), "time": float(et), "hop": int(h),
                 "anchor_node": int(an), "anchor_time": float(at), "delta": float(at - et)}
                for e, h, an, at, et in zip(self.event_id, self.hop, self.anchor_node,
                                           self.anchor_time, self.event_time)
            ],
        }


def default_t0(g, t_query, window_width=None):
    """``t_query - W`` for a finite width, else the start of the event stream."""
    if window_width is not None and math.isfinite(window_width):
        return t_query - window_width
    start = float(g.time[0]) if g.num_events else t_query
    return start if start < t_query else t_query - 1.0


def sample_context(g, vj, t_query, t0, h_max, n_max, rng_seed=0, direction=None,
                   strategy="uniform", salt=0):
    """Sample the multi-hop event context of ``vj`` at ``t_query``.

    ``rng_seed`` is either a seed (combined with ``vj``, ``t_query`` and
    ``salt`` into a private generator) or a ready ``numpy`` Generator.
    ``strategy="recent"`` takes the latest ``n_max`` candidates instead of a
    uniform subset.
    """
    if not t0 < t_query:
        raise ContractError(f"sample_context needs t0 < t_query, got t0={t0}, t'={t_query}")
    if h_max < 1 or n_max < 1:
        raise ContractError(f"sample_context needs h_max >= 1 and n_max >= 1, got {h_max}, {n_max}")
    if strategy not in ("uniform", "recent"):
        raise ContractError(f"unknown sampling strategy {strategy!r}")
    direction = direction or g.default_direction()
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else context_rng(
        rng_seed, vj, t_query, salt)
    offsets, eids, other, times = g.incidence(direction)

    parts = []
    expanded = set()  # an instance (node, time) is expanded at most once
    front_node = [int(vj)]
    front_time = [float(t_query)]
    for hop in range(1, h_max + 1):
        next_node, next_time = [], []
        for u, tr in zip(front_node, front_time):
            if (u, tr) in expanded:
                continue
            expanded.add((u, tr))
            a, b = offsets[u], offsets[u + 1]
            if a == b:
                continue
            tt = times[a:b]
            lo = a + int(tt.searchsorted(t0, side="left"))
            hi = a + int(tt.searchsorted(tr, side="left"))
            n = hi - lo
            if n <= 0:
                continue
            if n <= n_max:
                pick = np.arange(lo, hi)
            elif strategy == "recent":
                pick = np.arange(hi - n_max, hi)
            else:
                pick = lo + np.sort(rng.choice(n, size=n_max, replace=False))
            k = len(pick)
            parts.append((eids[pick], np.full(k, hop), np.full(k, u), np.full(k, tr),
                          other[pick], times[pick]))
            if hop < h_max:
                next_node.extend(other[pick].tolist())
                next_time.extend(times[pick].tolist())
        front_node, front_time = next_node, next_time
        if not front_node:
            break

    if parts:
        cols = [np.concatenate(c) for c in zip(*parts)]
    else:
        cols = [np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
                np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros(0)]
    return SampledContext(
        target=(int(vj), float(t_query)), window=(float(t0), float(t_query)),
        h_max=int(h_max), n_max=int(n_max),
        event_id=cols[0].astype(np.int64), hop=cols[1].astype(np.int64),
        anchor_node=cols[2].astype(np.int64), anchor_time=cols[3].astype(np.float64),
        counterpart=cols[4].astype(np.int64), event_time=cols[5].astype(np.float64),
        graph=g)


def check_causality(ctx):
    """Raise if any sampled event violates the window, hop or anchor-time rules."""
    t0, tq = ctx.window
    et = ctx.event_time
    if len(et) == 0:
        return
    if np.any(et < t0) or np.any(et >= tq):
        raise ContractError(f"context of {ctx.target}: event outside window [{t0}, {tq})")
    if np.any(et >= ctx.anchor_time):
        raise ContractError(f"context of {ctx.target}: event not strictly before its anchor")
    if np.any(ctx.hop < 1) or np.any(ctx.hop > ctx.h_max):
        raise ContractError(f"context of {ctx.target}: hop outside [1, {ctx.h_max}]")
    first = ctx.hop == 1
    if np.any(ctx.anchor_node[first] != ctx.target[0]) or np.any(ctx.anchor_time[first] != tq):
        raise ContractError(f"context of {ctx.target}: hop-1 event not anchored at the target")


# ------------------------------------------------------------ static view

@dataclass(eq=False)
class StaticView:
    """Sampled contexts laid out as one graph over ``(node, time)`` instances.

    The first ``num_targets`` instances are the targets, one per context.
    Each sampled event contributes one edge ``recv -> nbr`` where ``recv`` is
    the instance it was sampled for and ``nbr`` its counterpart at the event
    time; ``self_inst`` is the anchor node's own instance at the event time.
    """
    num_targets: int
    inst_node: np.ndarray
    inst_time: np.ndarray
    inst_ctx: np.ndarray
    recv: np.ndarray
    nbr: np.ndarray
    self_inst: np.ndarray
    event_id: np.ndarray
    delta: np.ndarray
    hop: np.ndarray
    edge_ctx: np.ndarray

    @property
    def num_instances(self):
        return len(self.inst_node)

    @property
    def num_edges(self):
        return len(self.recv)

    @property
    def instances(self):
        return list(zip(self.inst_node.tolist(), self.inst_time.tolist()))

    @property
    def edges(self):
        return list(zip(self.recv.tolist(), self.nbr.tolist()))

    def index_of(self, node, time, ctx=0):
        hit = np.flatnonzero((self.inst_node == node) & (self.inst_time == time)
                             & (self.inst_ctx == ctx))
        if not len(hit):
            raise ContractError(f"instance ({node}, {time}) is not part of context {ctx}")
        return int(hit[0])


def _unique_keys(ctx, node, time):
    order = np.lexsort((time, node, ctx))
    c, n, t = ctx[order], node[order], time[order]
    if not len(order):
        return c, n, t, np.zeros(0, dtype=np.int64)
    new = np.r_[True, (c[1:] != c[:-1]) | (n[1:] != n[:-1]) | (t[1:] != t[:-1])]
    group = np.cumsum(new) - 1
    inverse = np.empty(len(order), dtype=np.int64)
    inverse[order] = group
    return c[new], n[new], t[new], inverse


def collate(contexts):
    """Merge several contexts into one :class:`StaticView` (instances never shared)."""
    b = len(contexts)
    tn = np.array([c.target[0] for c in contexts], dtype=np.int64)
    tt = np.array([c.target[1] for c in contexts], dtype=np.float64)
    sizes = np.array([len(c) for c in contexts], dtype=np.int64)
    m = int(sizes.sum())
    ectx = np.repeat(np.arange(b), sizes)
    cat = (lambda k, dt: np.concatenate([getattr(c, k) for c in contexts]).astype(dt)
           if m else np.zeros(0, dtype=dt))
    event_id = cat("event_id", np.int64)
    hop = cat("hop", np.int64)
    anode = cat("anchor_node", np.int64)
    atime = cat("anchor_time", np.float64)
    cnode = cat("counterpart", np.int64)
    etime = cat("event_time", np.float64)

    deep = hop > 1
    keys_ctx = np.concatenate([ectx, ectx, ectx[deep]])
    keys_node = np.concatenate([cnode, anode, anode[deep]])
    keys_time = np.concatenate([etime, etime, atime[deep]])
    uc, un, ut, inv = _unique_keys(keys_ctx, keys_node, keys_time)
    inv = inv + b
    nbr = inv[:m]
    self_inst = inv[m:2 * m]
    recv = ectx.copy()
    recv[deep] = inv[2 * m:]
    return StaticView(
        num_targets=b,
        inst_node=np.concatenate([tn, un]), inst_time=np.concatenate([tt, ut]),
        inst_ctx=np.concatenate([np.arange(b), uc]),
        recv=recv, nbr=nbr, self_inst=self_inst, event_id=event_id,
        delta=atime - etime, hop=hop, edge_ctx=ectx)


def context_to_static_view(ctx):
    """Static multigraph of one context; instance 0 is the target."""
    return collate([ctx])
