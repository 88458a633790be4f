"""Signed low/high-pass temporal message passing over sampled contexts.

Every edge gets a logit ``z`` from a small MLP.  The low-pass weight is
``p = sigmoid(z)``, the high-pass weight ``q = 1 - p`` and the message is
scaled by ``p - q = tanh(z / 2)``, which may be negative.  The temporal
block mixes raw node features, edge features and a cosine time encoding of
the edge's age; the static blocks then treat the sampled context as a plain
graph over time-stamped node instances.

All computations run on a :class:`~thegcn.sampler.StaticView` so a batch of
contexts is one set of matrix products.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .sampler import collate
from .tensor import Mlp, Tensor

SIGNED_MODES = ("signed_tanh", "nonneg_sigmoid")


class AttentionPair(NamedTuple):
    p: float
    q: float
    signed: float


class TimeEncoder:
    """``delta -> cos(w * delta)`` with a trainable frequency vector ``w``."""

    def __init__(self, dim, rng):
        if dim < 1:
            raise ContractError(f"time encoding dimension must be >= 1, got {dim}")
        self.w = Tensor(T.glorot(1, dim, rng), requires_grad=True, name="time_encoder.w")

    @property
    def dim(self):
        return self.w.shape[1]

    def __call__(self, delta):
        delta = np.asarray(delta, dtype=np.float64).reshape(-1, 1)
        return T.cos(T.matmul(Tensor(delta), self.w))


def encode_time(enc, delta):
    """Encoding of a single non-negative time difference as a numpy vector."""
    return enc(np.array([float(delta)])).data[0]


class ThegcnModel:
    """All trainable state: time encoder, temporal MLP, static MLPs, head.

    Parameters
    ----------
    feature_dim, edge_dim, num_classes : int
        Data dimensions ``d``, ``d_e`` and ``C``.
    hidden : int
        Embedding width ``f`` and the hidden width of every edge MLP.
    time_dim : int
    num_layers : int
        Number of static message-passing layers ``L`` (0 = temporal block only).
    signed_mode : {"signed_tanh", "nonneg_sigmoid"}
    use_time_encoding : bool
        When false the time block is replaced by zeros of the same width.
    project_features : bool
        Apply an affine ``d -> f`` map to node features before aggregation;
        when false the embedding width is ``d``.
    """

    def __init__(self, feature_dim, edge_dim, num_classes, hidden=64, time_dim=8, num_layers=2,
                 signed_mode="signed_tanh", use_time_encoding=True, project_features=True, seed=0):
        if signed_mode not in SIGNED_MODES:
            raise ContractError(f"signed_mode must be one of {SIGNED_MODES}, got {signed_mode!r}")
        if num_layers < 0:
            raise ContractError(f"num_layers must be >= 0, got {num_layers}")
        rng = np.random.default_rng(seed)
        self.feature_dim = int(feature_dim)
        self.edge_dim = int(edge_dim)
        self.num_classes = int(num_classes)
        self.hidden = int(hidden)
        self.num_layers = int(num_layers)
        self.signed_mode = signed_mode
        self.use_time_encoding = bool(use_time_encoding)
        self.project_features = bool(project_features)
        self.width = self.hidden if self.project_features else self.feature_dim

        self.encoder = TimeEncoder(time_dim, rng)
        tmp_in = 2 * self.feature_dim + self.edge_dim + self.encoder.dim
        self.tmp_mlp = Mlp([tmp_in, self.hidden, 1], rng, name="tmp_mlp")
        self.smp_mlps = [Mlp([2 * self.width, self.hidden, 1], rng, name=f"smp_mlp.{l}")
                         for l in range(self.num_layers)]
        self.proj_w = self.proj_b = None
        if self.project_features:
            self.proj_w = Tensor(T.glorot(self.feature_dim, self.hidden, rng), requires_grad=True,
                                 name="feature_proj.weight")
            self.proj_b = Tensor(np.zeros(self.hidden), requires_grad=True, name="feature_proj.bias")
        self.cls_w = Tensor(T.glorot(self.width, self.num_classes, rng), requires_grad=True,
                            name="classifier.weight")
        self.cls_b = Tensor(np.zeros(self.num_classes), requires_grad=True, name="classifier.bias")

    # ------------------------------------------------------------ state

    def parameters(self):
        params = {self.encoder.w.name: self.encoder.w}
        params.update(self.tmp_mlp.parameters())
        for m in self.smp_mlps:
            params.update(m.parameters())
        if self.project_features:
            params[self.proj_w.name] = self.proj_w
            params[self.proj_b.name] = self.proj_b
        params[self.cls_w.name] = self.cls_w
        params[self.cls_b.name] = self.cls_b
        return params

    def parameter_groups(self):
        """Parameter names grouped as time encoder / temporal MLP / each static MLP / head."""
        groups = {"time_encoder": [self.encoder.w.name],
                  "tmp_mlp": list(self.tmp_mlp.parameters())}
        for l, m in enumerate(self.smp_mlps):
            groups[f"smp_mlp.{l}"] = list(m.parameters())
        if self.project_features:
            groups["feature_proj"] = [self.proj_w.name, self.proj_b.name]
        groups["classifier"] = [self.cls_w.name, self.cls_b.name]
        return groups

    def state_dict(self):
        return {k: p.data.copy() for k, p in self.parameters().items()}

    def load_state_dict(self, state):
        params = self.parameters()
        if set(state) != set(params):
            raise ContractError(f"state keys {sorted(set(state) ^ set(params))} do not match model")
        for k, p in params.items():
            a = np.asarray(state[k], dtype=np.float64)
            if a.shape != p.shape:
                raise ShapeError(f"{k}: checkpoint shape {a.shape} != {p.shape}")
            p.data[...] = a

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    def save(self, path):
        T.save_params(self.parameters(), path)

    def load(self, path):
        self.load_state_dict(T.load_params(path))

    def hyperparameters(self):
        return {"feature_dim": self.feature_dim, "edge_dim": self.edge_dim,
                "num_classes": self.num_classes, "hidden": self.hidden,
                "time_dim": self.encoder.dim, "num_layers": self.num_layers,
                "signed_mode": self.signed_mode, "use_time_encoding": self.use_time_encoding,
                "project_features": self.project_features}

    # ------------------------------------------------------------ pieces

    def signed(self, z):
        if self.signed_mode == "signed_tanh":
            return T.tanh(T.scale(z, 0.5))
        return T.sigmoid(z)

    def time_block(self, delta):
        if self.use_time_encoding:
            return self.encoder(delta)
        return Tensor(np.zeros((len(delta), self.encoder.dim)))

    def project(self, x):
        if not self.project_features:
            return Tensor(x)
        return T.add_row(T.matmul(Tensor(x), self.proj_w), self.proj_b)

    def classify(self, h):
        return T.add_row(T.matmul(h, self.cls_w), self.cls_b)


def tmp_edge_weight(model, x_i, x_j, m_e, delta):
    """Attention pair of one temporal edge."""
    x_i = np.atleast_2d(np.asarray(x_i, dtype=np.float64))
    x_j = np.atleast_2d(np.asarray(x_j, dtype=np.float64))
    m_e = np.asarray(m_e if m_e is not None else np.zeros(model.edge_dim), dtype=np.float64)
    m_e = m_e.reshape(1, -1)
    if x_i.shape[1] != model.feature_dim or x_j.shape[1] != model.feature_dim:
        raise ShapeError(f"node features {x_i.shape}, {x_j.shape} vs d={model.feature_dim}")
    if m_e.shape[1] != model.edge_dim:
        raise ShapeError(f"edge feature {m_e.shape} vs d_e={model.edge_dim}")
    inp = T.concat([Tensor(x_i), Tensor(x_j), Tensor(m_e), model.time_block(np.array([delta]))])
    z = model.tmp_mlp(inp)
    p = float(T.sigmoid(z).data[0, 0])
    return AttentionPair(p, 1.0 - p, float(model.signed(z).data[0, 0]))


# ------------------------------------------------------------ batched blocks

class _Segments:
    """Sparse aggregation matrices of a view, built once per forward pass."""

    def __init__(self, view):
        n = view.num_instances
        self.n = n
        self.recv = T.segment_matrix(view.recv, n)
        self.nbr = T.segment_matrix(view.nbr, n)
        self.tmp_inv = 1.0 / np.maximum(np.bincount(view.recv, minlength=n), 1)
        self.src = np.concatenate([view.nbr, view.recv])
        self.dst = np.concatenate([view.recv, view.nbr])
        self.seg_src = T.segment_matrix(self.src, n)
        self.seg_dst = T.segment_matrix(self.dst, n)
        self.smp_inv = 1.0 / np.maximum(np.bincount(self.dst, minlength=n), 1)


def _mean_into(values, index, seg, inv, n):
    total = T.segment_sum(values, index, n, seg=seg)
    return T.row_scale(total, Tensor(inv.reshape(-1, 1)))


def tmp_layer(model, g, view, x=None, segs=None, diagnostics=None):
    """First-layer embeddings ``h1`` of every instance of ``view``.

    ``h1 = proj(x_self) + mean over the instance's sampled events of
    signed_weight * proj(x_counterpart)``; an instance with no sampled events
    keeps its own projected feature.
    """
    segs = segs or _Segments(view)
    if x is None:
        x = g.node_features(view.inst_node, view.inst_time)
    h0 = model.project(x)
    if view.num_edges == 0:
        return h0
    edge_feat = g.edge_feat[view.event_id]
    inp = T.concat([Tensor(x[view.nbr]), Tensor(x[view.self_inst]), Tensor(edge_feat),
                    model.time_block(view.delta)])
    z = model.tmp_mlp(inp)
    s = model.signed(z)
    if diagnostics is not None:
        _record(diagnostics, 0, view, view.hop, view.delta, z, s)
    msg = T.row_scale(T.gather(h0, view.nbr, seg=segs.nbr), s)
    return T.add(h0, _mean_into(msg, view.recv, segs.recv, segs.tmp_inv, segs.n))


def smp_layer(model, l, view, h, segs=None, diagnostics=None):
    """One static layer: residual plus signed mean over incident view edges."""
    if l < 0 or l >= model.num_layers:
        raise ContractError(f"layer index {l} outside [0, {model.num_layers})")
    h = T.as_tensor(h)
    if h.shape[0] != view.num_instances:
        raise ContractError(f"embeddings for {h.shape[0]} instances, view has {view.num_instances}")
    if view.num_edges == 0:
        return h
    segs = segs or _Segments(view)
    hs = T.gather(h, segs.src, seg=segs.seg_src)
    hd = T.gather(h, segs.dst, seg=segs.seg_dst)
    z = model.smp_mlps[l](T.concat([hs, hd]))
    s = model.signed(z)
    if diagnostics is not None:
        both = lambda a: np.concatenate([a, a])
        _record(diagnostics, l + 1, view, both(view.hop), both(view.delta), z, s,
                edge_ctx=both(view.edge_ctx))
    return T.add(h, _mean_into(T.row_scale(hs, s), segs.dst, segs.seg_dst, segs.smp_inv, segs.n))


def _record(diag, layer, view, hop, delta, z, s, edge_ctx=None):
    p = T._sigmoid(z.data[:, 0])
    diag.append({
        "layer": np.full(len(hop), layer),
        "ctx": view.edge_ctx if edge_ctx is None else edge_ctx,
        "hop": np.asarray(hop),
        "delta": np.asarray(delta),
        "p": p,
        "signed": s.data[:, 0].copy(),
    })


def forward_view(model, g, view, diagnostics=None):
    """Logits ``[num_targets, C]`` for every context of a collated view."""
    segs = _Segments(view)
    h = tmp_layer(model, g, view, segs=segs, diagnostics=diagnostics)
    for l in range(model.num_layers):
        h = smp_layer(model, l, view, h, segs=segs, diagnostics=diagnostics)
    return model.classify(T.gather(h, np.arange(view.num_targets)))


def merge_diagnostics(parts):
    if not parts:
        keys = ("layer", "ctx", "hop", "delta", "p", "signed")
        return {k: np.zeros(0) for k in keys}
    return {k: np.concatenate([d[k] for d in parts]) for k in parts[0]}


def tmp_block(model, g, ctx, instance=None):
    """``h1`` of one instance of a single context (the target by default)."""
    view = collate([ctx])
    idx = 0 if instance is None else view.index_of(*instance)
    return tmp_layer(model, g, view).data[idx]


def forward(model, g, ctx):
    """Logits of one context plus per-edge attention diagnostics."""
    parts = []
    logits = forward_view(model, g, collate([ctx]), diagnostics=parts)
    return logits.data[0], merge_diagnostics(parts)
