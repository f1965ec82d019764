"""Soft-target contrastive loss and the pretraining loop.

Only the graph encoder and the two projection heads are trained; chemical
modality embeddings arrive precomputed and stay fixed.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .encoders import GinConfig, ProjectionConfig, batch_graphs, encode_batch, init_gin, init_projection, project
from .errors import CorruptCheckpoint, EmptyDataset, NonFiniteLoss, ShapeMismatch
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class AcmlConfig:
    tau: float = 1.0
    batch_size: int = 128
    epochs: int = 100
    lr: float = 1e-3
    weight_decay: float = 0.001
    seed: int = 0
    chem_dim: int = 128
    normalize: bool = False
    gin: GinConfig = field(default_factory=GinConfig)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)

    def __post_init__(self):
        if isinstance(self.gin, dict):
            self.gin = GinConfig(**self.gin)
        if isinstance(self.projection, dict):
            self.projection = ProjectionConfig(**self.projection)
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AcmlConfig":
        return cls(**d)


# -------------------------------------------------------------------- loss


def similarity_matrices(Hg, Hc, tau: float):
    """Return (S, D, T_g, T_c) for one minibatch, as numpy arrays.

    S is the mean of the two intra-modal Gram matrices, D the cross-modal
    one (graph rows, chem columns). T_g is the row softmax of S / tau and
    T_c row i is the softmax over j of S[j, i] / tau.
    """
    Hg = np.asarray(Hg)
    Hc = np.asarray(Hc)
    if Hg.shape != Hc.shape or Hg.ndim != 2:
        raise ShapeMismatch(f"embedding shapes differ: {Hg.shape} vs {Hc.shape}")
    if tau <= 0:
        raise ValueError("tau must be positive")
    S = (Hg @ Hg.T + Hc @ Hc.T) / 2
    D = Hg @ Hc.T
    return S, D, _softmax(S / tau), _softmax(S.T / tau)


def _softmax(x):
    z = np.exp(x - x.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def acml_loss(Hg: Tensor, Hc: Tensor, tau: float) -> Tensor:
    """Mean of the per-row graph-side and chem-side soft cross-entropies.

    Targets are not detached: the intra-modal similarities that build them
    depend on the trainable heads too.
    """
    Hg, Hc = T.as_tensor(Hg), T.as_tensor(Hc)
    if Hg.shape != Hc.shape or Hg.ndim != 2:
        raise ShapeMismatch(f"embedding shapes differ: {Hg.shape} vs {Hc.shape}")
    n = Hg.shape[0]
    inv_tau = 1.0 / tau
    S = T.scale(Hg @ Hg.T + Hc @ Hc.T, 0.5 * inv_tau)
    D = T.scale(Hg @ Hc.T, inv_tau)
    St = S.T
    # graph side: row i of S and D; chem side: column i of each
    loss_g = T.tsum(T.row_softmax(S) * T.row_log_softmax(D))
    loss_c = T.tsum(T.row_softmax(St) * T.row_log_softmax(D.T))
    loss = T.scale(loss_g + loss_c, -1.0 / (2 * n))
    if not np.isfinite(loss.data).all():
        raise NonFiniteLoss(f"loss is {loss.item()}; logits exploded (tau={tau})")
    return loss


# ----------------------------------------------------------------- training


def init_params(cfg: AcmlConfig) -> dict[str, Tensor]:
    params = init_gin(cfg.gin, cfg.seed)
    params.update(init_projection("proj_graph", cfg.gin.hidden_dim, cfg.projection, cfg.seed))
    params.update(init_projection("proj_chem", cfg.chem_dim, cfg.projection, cfg.seed))
    return params


def forward_batch(graphs, chem, params, cfg: AcmlConfig, cache=None):
    hg = encode_batch(batch_graphs(graphs, cache), params, cfg.gin)
    pg = project(hg, "graph", params, cfg.projection)
    pc = project(Tensor(chem), "chem", params, cfg.projection)
    if cfg.normalize:
        pg, pc = T.l2_normalize_rows(pg), T.l2_normalize_rows(pc)
    return pg, pc


def train_epoch(graphs, chem, params, opt: T.AdamW, cfg: AcmlConfig, epoch: int, cache=None) -> float:
    """One pass over shuffled full minibatches; returns the mean batch loss.

    ``chem`` is the frozen (n, chem_dim) modality matrix aligned with
    ``graphs``. The trailing partial batch is dropped.
    """
    n = len(graphs)
    if n == 0:
        raise EmptyDataset("no training pairs")
    chem = np.asarray(chem, dtype=np.float32)
    if chem.shape[0] != n:
        raise ShapeMismatch(f"{n} graphs but {chem.shape[0]} modality rows")
    n_batches = n // cfg.batch_size
    if n_batches == 0:
        raise EmptyDataset(f"{n} pairs is fewer than one batch of {cfg.batch_size}")
    order = T.rng(cfg.seed, stream=1_000_000 + epoch).permutation(n)
    losses = []
    for b in range(n_batches):
        idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
        opt.zero_grad()
        pg, pc = forward_batch([graphs[i] for i in idx], chem[idx], params, cfg, cache)
        loss = acml_loss(pg, pc, cfg.tau)
        T.backward(loss)
        opt.step()
        losses.append(loss.item())
    return float(np.mean(losses))


def pretrain(graphs, chem, cfg: AcmlConfig, params=None, callback=None):
    """Full pretraining run. Returns (params, per-epoch mean losses)."""
    chem = np.asarray(chem, dtype=np.float32)
    if cfg.chem_dim != chem.shape[1]:
        raise ShapeMismatch(f"config chem_dim {cfg.chem_dim} but embeddings have {chem.shape[1]}")
    if params is None:
        params = init_params(cfg)
    opt = T.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    cache: dict = {}
    history = []
    for epoch in range(cfg.epochs):
        loss = train_epoch(graphs, chem, params, opt, cfg, epoch, cache)
        history.append(loss)
        log.info("epoch %d loss %.6f", epoch, loss)
        if callback is not None and callback(epoch, loss, params) is False:
            break
    return params, history


def embed(graphs, params, cfg: AcmlConfig, batch_size: int = 256):
    """Readout and projected graph embeddings, both as numpy arrays."""
    hs, ps = [], []
    with T.no_grad():
        for i in range(0, len(graphs), batch_size):
            h = encode_batch(batch_graphs(graphs[i : i + batch_size]), params, cfg.gin)
            hs.append(h.data)
            p = project(h, "graph", params, cfg.projection)
            ps.append((T.l2_normalize_rows(p) if cfg.normalize else p).data)
    if not hs:
        d = cfg.gin.hidden_dim
        return np.zeros((0, d), np.float32), np.zeros((0, cfg.projection.out_dim), np.float32)
    return np.concatenate(hs), np.concatenate(ps)


def embed_chem(chem, params, cfg: AcmlConfig) -> np.ndarray:
    with T.no_grad():
        p = project(Tensor(np.asarray(chem, dtype=np.float32)), "chem", params, cfg.projection)
        return (T.l2_normalize_rows(p) if cfg.normalize else p).data


# -------------------------------------------------------------- checkpoint

MAGIC = b"ACKP"
VERSION = 1


def save_checkpoint(params: dict, cfg: AcmlConfig, path) -> None:
    """Write params and config; identical inputs give identical bytes."""
    cfg_bytes = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(cfg_bytes)), cfg_bytes]
    for name, p in params.items():
        data = np.ascontiguousarray(p.data if isinstance(p, Tensor) else p, dtype="<f4")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<I", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(data.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path):
    """Return (params, cfg); raises CorruptCheckpoint on any format problem."""
    buf = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CorruptCheckpoint(f"{path}: truncated at byte {pos}")
        out = buf[pos : pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise CorruptCheckpoint(f"{path}: bad magic")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CorruptCheckpoint(f"{path}: unsupported version {version}")
    (clen,) = struct.unpack("<I", take(4))
    try:
        cfg = AcmlConfig.from_dict(json.loads(take(clen).decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise CorruptCheckpoint(f"{path}: bad config block ({exc})") from None
    params = {}
    while pos < len(buf):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8", errors="strict")
        (rank,) = struct.unpack("<I", take(4))
        if rank > 8:
            raise CorruptCheckpoint(f"{path}: implausible rank {rank} for {name}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(take(4 * count), dtype="<f4").reshape(dims).astype(np.float32)
        params[name] = Tensor(data, requires_grad=True, name=name)
    expected = set(init_param_names(cfg))
    if set(params) != expected:
        missing = sorted(expected - set(params))
        raise CorruptCheckpoint(f"{path}: parameter set mismatch (missing {missing[:3]})")
    return params, cfg


def init_param_names(cfg: AcmlConfig) -> list[str]:
    names = ["gin.atom_z", "gin.atom_chirality"]
    for k in range(cfg.gin.n_layers):
        names += [f"gin.{k}.{s}" for s in ("bond_order", "bond_stereo", "w1", "b1", "w2", "b2")]
    for prefix in ("proj_graph", "proj_chem"):
        for k in range(cfg.projection.depth):
            names.append(f"{prefix}.w{k}")
            if cfg.projection.bias:
                names.append(f"{prefix}.b{k}")
    return names
