"""Trainable graph encoder, projection heads and frozen modality encoders."""

from __future__ import annotations

import math
import warnings
import zlib
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import DimMismatch, EmptyGraph, KindMismatch, NegativeIntensity
from .molgraph import MolGraph, heavy_degrees, ring_count
from .store import EmbeddingStore
from .tensor import Tensor

N_ATOMIC = 119  # row 0 unused
N_CHIRALITY = 3
N_BOND_ORDER = 4
N_BOND_STEREO = 3


@dataclass
class GinConfig:
    n_layers: int = 5
    hidden_dim: int = 64
    epsilon: float = 0.0

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be positive")


@dataclass
class ProjectionConfig:
    depth: int = 2
    out_dim: int = 128
    activation: str = "gelu"
    bias: bool = True

    def __post_init__(self):
        if self.depth not in (2, 3):
            raise ValueError("projection depth must be 2 or 3")
        if self.out_dim < 1:
            raise ValueError("out_dim must be positive")
        if self.activation not in ("relu", "gelu"):
            raise ValueError(f"unknown activation {self.activation!r}")


# presets of the best settings reported per modality pair
PRESETS = {
    "G-Image": (GinConfig(5, 64), ProjectionConfig(2, 512)),
    "G-SMILES": (GinConfig(5, 64), ProjectionConfig(2, 512)),
    "G-1H-NMR": (GinConfig(5, 512), ProjectionConfig(2, 256)),
    "G-13C-NMR": (GinConfig(3, 512), ProjectionConfig(2, 256)),
    "G-GCMS": (GinConfig(5, 128), ProjectionConfig(3, 128)),
    "G-LCMS": (GinConfig(5, 128), ProjectionConfig(3, 128)),
}


# ------------------------------------------------------------------ params


def init_gin(cfg: GinConfig, seed: int) -> dict[str, Tensor]:
    h = cfg.hidden_dim
    shapes = {
        "gin.atom_z": (N_ATOMIC, h),
        "gin.atom_chirality": (N_CHIRALITY, h),
    }
    for k in range(cfg.n_layers):
        shapes[f"gin.{k}.bond_order"] = (N_BOND_ORDER, h)
        shapes[f"gin.{k}.bond_stereo"] = (N_BOND_STEREO, h)
        shapes[f"gin.{k}.w1"] = (h, h)
        shapes[f"gin.{k}.b1"] = (h,)
        shapes[f"gin.{k}.w2"] = (h, h)
        shapes[f"gin.{k}.b2"] = (h,)
    return _init(shapes, seed)


def init_projection(prefix: str, in_dim: int, cfg: ProjectionConfig, seed: int) -> dict[str, Tensor]:
    shapes = {}
    d_in = in_dim
    for k in range(cfg.depth):
        shapes[f"{prefix}.w{k}"] = (d_in, cfg.out_dim)
        if cfg.bias:
            shapes[f"{prefix}.b{k}"] = (cfg.out_dim,)
        d_in = cfg.out_dim
    return _init(shapes, seed)


def _init(shapes, seed):
    out = {}
    for name, shape in shapes.items():
        scheme = "zeros" if len(shape) == 1 else "glorot"
        out[name] = T.seeded_init(shape, scheme, seed=seed, stream=T.stream_id(name), name=name)
    return out


# ------------------------------------------------------------ graph batch


@dataclass
class GraphBatch:
    """Several graphs as one disjoint union, edges sorted by destination."""

    atom_z: np.ndarray
    atom_chirality: np.ndarray
    graph_index: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    bond_order: np.ndarray
    bond_stereo: np.ndarray
    n_graphs: int

    @property
    def n_nodes(self) -> int:
        return self.atom_z.shape[0]


def graph_arrays(g: MolGraph):
    if not g.atoms:
        raise EmptyGraph(f"graph {g.id!r} has no atoms")
    z = np.array([a.atomic_number for a in g.atoms], dtype=np.int64)
    chir = np.array([int(a.chirality) for a in g.atoms], dtype=np.int64)
    if g.bonds:
        u = np.array([b[0] for b in g.bonds], dtype=np.int64)
        v = np.array([b[1] for b in g.bonds], dtype=np.int64)
        order = np.array([int(b[2].order) for b in g.bonds], dtype=np.int64)
        stereo = np.array([int(b[2].stereo) for b in g.bonds], dtype=np.int64)
    else:
        u = v = order = stereo = np.zeros(0, dtype=np.int64)
    return z, chir, u, v, order, stereo


def batch_graphs(graphs, cache: dict | None = None) -> GraphBatch:
    zs, chs, gis, srcs, dsts, ords, sts = [], [], [], [], [], [], []
    offset = 0
    for gi, g in enumerate(graphs):
        arrs = None
        if cache is not None:
            arrs = cache.get(id(g))
        if arrs is None:
            arrs = graph_arrays(g)
            if cache is not None:
                cache[id(g)] = arrs
        z, chir, u, v, order, stereo = arrs
        n = z.shape[0]
        zs.append(z)
        chs.append(chir)
        gis.append(np.full(n, gi, dtype=np.int64))
        # each bond carries messages both ways
        srcs.append(np.concatenate([u, v]) + offset)
        dsts.append(np.concatenate([v, u]) + offset)
        ords.append(np.concatenate([order, order]))
        sts.append(np.concatenate([stereo, stereo]))
        offset += n
    if not zs:
        raise EmptyGraph("empty batch")
    src = np.concatenate(srcs)
    dst = np.concatenate(dsts)
    perm = np.argsort(dst, kind="stable")
    return GraphBatch(
        np.concatenate(zs),
        np.concatenate(chs),
        np.concatenate(gis),
        src[perm],
        dst[perm],
        np.concatenate(ords)[perm],
        np.concatenate(sts)[perm],
        len(zs),
    )


def encode_batch(batch: GraphBatch, params: dict, cfg: GinConfig) -> Tensor:
    """Graph-level readout embeddings, one row per graph (n_graphs, hidden_dim)."""
    x = T.gather_rows(params["gin.atom_z"], batch.atom_z) + T.gather_rows(
        params["gin.atom_chirality"], batch.atom_chirality
    )
    n = batch.n_nodes
    for k in range(cfg.n_layers):
        e = T.gather_rows(params[f"gin.{k}.bond_order"], batch.bond_order) + T.gather_rows(
            params[f"gin.{k}.bond_stereo"], batch.bond_stereo
        )
        msg = T.relu(T.gather_rows(x, batch.src) + e)
        agg = T.segment_sum(msg, batch.dst, n)
        h = x + agg if cfg.epsilon == 0 else T.scale(x, 1.0 + cfg.epsilon) + agg
        h = T.relu(h @ params[f"gin.{k}.w1"] + params[f"gin.{k}.b1"])
        h = h @ params[f"gin.{k}.w2"] + params[f"gin.{k}.b2"]
        x = T.relu(h) if k < cfg.n_layers - 1 else h
    return T.segment_sum(x, batch.graph_index, batch.n_graphs)


def encode_graph(g: MolGraph, params: dict, cfg: GinConfig) -> np.ndarray:
    with T.no_grad():
        return encode_batch(batch_graphs([g]), params, cfg).data[0]


def project(h, which: str, params: dict, cfg: ProjectionConfig) -> Tensor:
    """Apply the ``graph`` or ``chem`` projection head to rows of ``h``."""
    prefix = {"graph": "proj_graph", "chem": "proj_chem"}[which]
    h = T.as_tensor(h)
    if h.ndim == 1:
        with T.no_grad():
            return Tensor(project(h.data[None, :], which, params, cfg).data[0])
    w0 = params[f"{prefix}.w0"]
    if h.shape[1] != w0.shape[0]:
        raise DimMismatch(f"{prefix}: input dim {h.shape[1]}, expected {w0.shape[0]}")
    act = T.gelu if cfg.activation == "gelu" else T.relu
    for k in range(cfg.depth):
        h = h @ params[f"{prefix}.w{k}"]
        if cfg.bias:
            h = h + params[f"{prefix}.b{k}"]
        if k < cfg.depth - 1:
            h = act(h)
    return h


# ---------------------------------------------------------------- spectra


SPECTRUM_PRESETS = {
    "H1": (0.0, 10.0, 0.01),
    "C13": (0.0, 220.0, 0.1),
}


@dataclass
class Spectrum:
    grid_start: float
    grid_end: float
    step: float
    intensities: np.ndarray
    dropped: int = 0

    @property
    def n_bins(self) -> int:
        return self.intensities.shape[0]


def n_bins(preset: str) -> int:
    start, end, step = SPECTRUM_PRESETS[preset]
    return int(round((end - start) / step))


def grid_spectrum(peaks, preset: str = "H1") -> Spectrum:
    """Place (shift, intensity) peaks on the preset ppm grid.

    A peak lands in bin floor((shift - start) / step); peaks sharing a bin
    add up; peaks off the grid are dropped and counted.
    """
    start, end, step = SPECTRUM_PRESETS[preset]
    nb = n_bins(preset)
    out = np.zeros(nb, dtype=np.float32)
    dropped = 0
    for shift, inten in peaks:
        if inten < 0:
            raise NegativeIntensity(f"peak at {shift} ppm has intensity {inten}")
        # round away float noise such as 0.29 / 0.01 = 28.999999999999996
        b = math.floor(round((shift - start) / step, 9))
        if 0 <= b < nb:
            out[b] += inten
        else:
            dropped += 1
    if dropped:
        warnings.warn(f"{dropped} peak(s) outside {start}-{end} ppm dropped", stacklevel=2)
    return Spectrum(start, end, step, out, dropped)


# ------------------------------------------------------- modality encoders


@dataclass
class ModalityRecord:
    """Payload of one chemical modality for one molecule.

    ``kind`` is one of ``embedding`` (payload ignored, looked up by id),
    ``spectrum`` (a :class:`Spectrum` or intensity array), ``string`` or
    ``graph`` (a :class:`MolGraph`).
    """

    id: str
    kind: str
    payload: object = None


def _random_matrix(rows: int, cols: int, seed: int, tag: str) -> np.ndarray:
    g = T.rng(seed, zlib.crc32(tag.encode()))
    return (g.standard_normal((rows, cols)) / np.sqrt(cols)).astype(np.float32)


class ModalityEncoder:
    """Frozen encoder: numpy in, numpy out, never part of the autodiff tape."""

    kind = ""
    payload_kind = ""

    def __init__(self, out_dim: int):
        self.out_dim = out_dim

    def encode(self, rec: ModalityRecord) -> np.ndarray:
        if rec.kind != self.payload_kind:
            raise KindMismatch(f"{type(self).__name__} cannot encode {rec.kind!r} payloads")
        return self._encode(rec)

    def encode_many(self, recs) -> np.ndarray:
        if not recs:
            return np.zeros((0, self.out_dim), dtype=np.float32)
        return np.stack([self.encode(r) for r in recs])

    def _encode(self, rec):
        raise NotImplementedError


class PrecomputedStore(ModalityEncoder):
    kind = "PrecomputedStore"
    payload_kind = "embedding"

    def __init__(self, store: EmbeddingStore):
        super().__init__(store.dim)
        self.store = store

    def _encode(self, rec):
        return self.store.row(rec.id).astype(np.float32, copy=True)

    def encode_many(self, recs):
        for r in recs:
            if r.kind != self.payload_kind:
                raise KindMismatch(f"PrecomputedStore cannot encode {r.kind!r} payloads")
        return self.store.rows([r.id for r in recs]).astype(np.float32)


class SpectrumSurrogate(ModalityEncoder):
    kind = "SpectrumSurrogate"
    payload_kind = "spectrum"

    def __init__(self, out_dim: int, preset: str = "H1", seed: int = 0):
        super().__init__(out_dim)
        self.preset = preset
        self.n_bins = n_bins(preset)
        self.weight = _random_matrix(self.n_bins, out_dim, seed, f"spectrum:{preset}")

    def _encode(self, rec):
        x = rec.payload.intensities if isinstance(rec.payload, Spectrum) else np.asarray(rec.payload)
        x = np.asarray(x, dtype=np.float32)
        if x.shape != (self.n_bins,):
            raise DimMismatch(f"spectrum has {x.shape} bins, expected {self.n_bins}")
        total = np.abs(x).sum()
        if total == 0:
            return np.zeros(self.out_dim, dtype=np.float32)
        return (x / total) @ self.weight


TRIGRAM_BUCKETS = 2048


def trigram_counts(text: str, buckets: int = TRIGRAM_BUCKETS) -> np.ndarray:
    out = np.zeros(buckets, dtype=np.float32)
    for i in range(len(text) - 2):
        out[zlib.crc32(text[i : i + 3].encode()) % buckets] += 1
    return out


class StringSurrogate(ModalityEncoder):
    kind = "StringSurrogate"
    payload_kind = "string"

    def __init__(self, out_dim: int, seed: int = 0, buckets: int = TRIGRAM_BUCKETS):
        super().__init__(out_dim)
        self.buckets = buckets
        self.weight = _random_matrix(buckets, out_dim, seed, "string")

    def _encode(self, rec):
        return trigram_counts(str(rec.payload), self.buckets) @ self.weight


DEFAULT_PALETTE = (6, 7, 8, 9, 16, 17)
MAX_DEGREE_BIN = 4


def oracle_feature_dim(palette=DEFAULT_PALETTE) -> int:
    p = len(palette) + 1
    return 1 + p + N_BOND_ORDER + 1 + p * (MAX_DEGREE_BIN + 1) + (p * (p + 1) // 2) * N_BOND_ORDER


def oracle_features(g: MolGraph, palette=DEFAULT_PALETTE) -> np.ndarray:
    """Count vector that colour refinement can compute.

    atom count | per-element counts | per-bond-order counts | ring count |
    per-(element, heavy degree) counts | per-(element pair, bond order) counts.
    Elements outside the palette share one "other" slot.
    """
    p = len(palette) + 1
    slot = {z: i for i, z in enumerate(palette)}
    elem = [slot.get(a.atomic_number, p - 1) for a in g.atoms]
    f = np.zeros(oracle_feature_dim(palette), dtype=np.float32)
    f[0] = g.n_atoms
    base = 1
    for e in elem:
        f[base + e] += 1
    base += p
    for _, _, b in g.bonds:
        f[base + int(b.order)] += 1
    base += N_BOND_ORDER
    f[base] = ring_count(g)
    base += 1
    for e, d in zip(elem, heavy_degrees(g)):
        f[base + e * (MAX_DEGREE_BIN + 1) + min(d, MAX_DEGREE_BIN)] += 1
    base += p * (MAX_DEGREE_BIN + 1)
    for u, v, b in g.bonds:
        a, c = sorted((elem[u], elem[v]))
        pair = a * p - a * (a - 1) // 2 + (c - a)
        f[base + pair * N_BOND_ORDER + int(b.order)] += 1
    return f


class OracleSurrogate(ModalityEncoder):
    kind = "OracleSurrogate"
    payload_kind = "graph"

    def __init__(self, out_dim: int, seed: int = 0, palette=DEFAULT_PALETTE):
        super().__init__(out_dim)
        self.palette = tuple(palette)
        self.weight = _random_matrix(oracle_feature_dim(self.palette), out_dim, seed, "oracle")

    def _encode(self, rec):
        return oracle_features(rec.payload, self.palette) @ self.weight


ENCODER_KINDS = {
    cls.kind: cls for cls in (PrecomputedStore, SpectrumSurrogate, StringSurrogate, OracleSurrogate)
}


def encode_modality(rec: ModalityRecord, enc: ModalityEncoder) -> np.ndarray:
    return enc.encode(rec)


def config_dict(obj) -> dict:
    return asdict(obj)
