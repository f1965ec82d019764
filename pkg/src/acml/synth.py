"""Deterministic synthetic molecules and aligned frozen embeddings."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .encoders import DEFAULT_PALETTE, OracleSurrogate, oracle_features
from .molgraph import (
    AtomAttr,
    BondAttr,
    BondOrder,
    MolGraph,
    MoleculeRecord,
    default_hydrogens,
    formula,
    parse_smiles,
    to_smiles,
    wl_hash,
)
from .store import write_store
from .tensor import rng

MAX_VALENCE = {6: 4, 7: 3, 8: 2, 9: 1, 16: 2, 17: 1, 35: 1, 5: 3, 15: 3, 53: 1}
ELEMENT_WEIGHTS = {6: 0.68, 7: 0.1, 8: 0.12, 9: 0.03, 16: 0.04, 17: 0.03}
_ORDER_VAL = {BondOrder.SINGLE: 1, BondOrder.DOUBLE: 2, BondOrder.TRIPLE: 3}


@dataclass
class SynthSpec:
    n_molecules: int = 512
    max_atoms: int = 30
    min_atoms: int = 4
    palette: tuple = DEFAULT_PALETTE
    seed: int = 0
    noise_sigma: float = 0.01
    held_out_fraction: float = 0.25
    isomer_pair_fraction: float = 0.125
    ring_probability: float = 0.5
    embed_dim: int = 128

    def __post_init__(self):
        if not 1 <= self.max_atoms <= 30:
            raise ValueError("max_atoms must be in 1..30")
        if not 1 <= self.min_atoms <= self.max_atoms:
            raise ValueError("min_atoms must be in 1..max_atoms")
        self.palette = tuple(self.palette)


@dataclass
class SynthCorpus:
    records: list[MoleculeRecord]
    graphs: list[MolGraph]
    isomer_pairs: list[tuple[str, str]]
    held_out: list[str]
    spec: SynthSpec = field(repr=False, default=None)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def split(self):
        """(train indices, held-out indices) into ``graphs``."""
        ho = set(self.held_out)
        train = [i for i, r in enumerate(self.records) if r.id not in ho]
        test = [i for i, r in enumerate(self.records) if r.id in ho]
        return train, test


# ------------------------------------------------------------- generation


class _Skeleton:
    """Heavy-atom skeleton under construction: elements and weighted edges."""

    def __init__(self):
        self.elems: list[int] = []
        self.edges: dict[tuple[int, int], BondOrder] = {}

    def used(self, i):
        return sum(_ORDER_VAL[o] for (a, b), o in self.edges.items() if i in (a, b))

    def free(self, i):
        return MAX_VALENCE[self.elems[i]] - self.used(i)

    def degree(self, i):
        return sum(1 for a, b in self.edges if i in (a, b))

    def to_graph(self, mol_id) -> MolGraph:
        atoms = []
        for i, z in enumerate(self.elems):
            atoms.append(AtomAttr(z, implicit_h=default_hydrogens(z, False, self.used(i))))
        bonds = [(a, b, BondAttr(o)) for (a, b), o in sorted(self.edges.items())]
        return MolGraph(atoms, bonds, mol_id)


def _pick_element(g: np.random.Generator, palette):
    zs = [z for z in palette if z in ELEMENT_WEIGHTS]
    w = np.array([ELEMENT_WEIGHTS[z] for z in zs])
    return int(zs[g.choice(len(zs), p=w / w.sum())])


def _tree_distance(sk: _Skeleton, s: int, t: int) -> int:
    adj: dict[int, list[int]] = {}
    for a, b in sk.edges:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    frontier, seen, d = [s], {s}, 0
    while frontier:
        if t in frontier:
            return d
        nxt = []
        for u in frontier:
            for v in adj.get(u, []):
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
        frontier, d = nxt, d + 1
    return -1


def _random_skeleton(g: np.random.Generator, spec: SynthSpec) -> _Skeleton:
    n = int(g.integers(spec.min_atoms, spec.max_atoms + 1))
    sk = _Skeleton()
    sk.elems.append(6)
    for i in range(1, n):
        z = _pick_element(g, spec.palette)
        hosts = [j for j in range(i) if sk.free(j) >= 1]
        if not hosts:
            break
        # prefer carbon hosts so halogens and heteroatoms stay peripheral
        w = np.array([3.0 if sk.elems[j] == 6 else 1.0 for j in hosts])
        j = hosts[g.choice(len(hosts), p=w / w.sum())]
        sk.elems.append(z)
        sk.edges[(j, i)] = BondOrder.SINGLE
    # ring closures between atoms 4..7 bonds apart (rings of 5-8)
    n_rings = 0
    if g.random() < spec.ring_probability:
        n_rings = 1 + int(g.random() < 0.3)
    for _ in range(n_rings):
        cands = [
            (a, b)
            for a in range(len(sk.elems))
            for b in range(a + 1, len(sk.elems))
            if (a, b) not in sk.edges
            and sk.free(a) >= 1
            and sk.free(b) >= 1
            and 4 <= _tree_distance(sk, a, b) <= 7
        ]
        if cands:
            a, b = cands[int(g.integers(len(cands)))]
            sk.edges[(a, b)] = BondOrder.SINGLE
    # a few unsaturations
    for key in list(sk.edges):
        a, b = key
        r = g.random()
        if r < 0.08 and sk.free(a) >= 1 and sk.free(b) >= 1:
            sk.edges[key] = BondOrder.DOUBLE
        elif r < 0.095 and sk.free(a) >= 2 and sk.free(b) >= 2 and sk.degree(a) <= 2 and sk.degree(b) <= 2:
            sk.edges[key] = BondOrder.TRIPLE
    return sk


def _rewire(g: np.random.Generator, sk: _Skeleton, moves: int) -> _Skeleton | None:
    """Move leaf atoms to new hosts: same atoms and bond orders, new wiring."""
    out = _Skeleton()
    out.elems = list(sk.elems)
    out.edges = dict(sk.edges)
    for _ in range(moves):
        leaves = [
            (key, i)
            for key, o in out.edges.items()
            if o == BondOrder.SINGLE
            for i in key
            if out.degree(i) == 1 and out.degree(key[0] if key[1] == i else key[1]) >= 2
        ]
        if not leaves:
            return None
        key, leaf = leaves[int(g.integers(len(leaves)))]
        old = key[0] if key[1] == leaf else key[1]
        hosts = [
            j
            for j in range(len(out.elems))
            if j not in (leaf, old) and out.free(j) >= 1 and (min(j, leaf), max(j, leaf)) not in out.edges
        ]
        if not hosts:
            return None
        j = hosts[int(g.integers(len(hosts)))]
        del out.edges[key]
        out.edges[(min(j, leaf), max(j, leaf))] = BondOrder.SINGLE
    return out


def _finalize(sk: _Skeleton, mol_id: str) -> tuple[MolGraph, str]:
    smiles = to_smiles(sk.to_graph(mol_id))
    return parse_smiles(smiles, id=mol_id), smiles


def gen_molecules(spec: SynthSpec) -> SynthCorpus:
    """Random distinct molecules; a fraction of them come as isomer pairs.

    Each pair shares its heavy atoms and bond orders but differs in wiring,
    and the two members differ in :func:`oracle_features` so a spectrum-like
    signal can tell them apart.
    """
    g = rng(spec.seed, stream=0x5EED)
    n_pairs = int(spec.n_molecules * spec.isomer_pair_fraction) // 2
    graphs: list[MolGraph] = []
    records: list[MoleculeRecord] = []
    pairs: list[tuple[str, str]] = []
    seen: set[str] = set()

    def add(graph, smiles):
        graphs.append(graph)
        records.append(MoleculeRecord(graph.id, smiles))
        seen.add(wl_hash(graph))

    attempts = 0
    while len(pairs) < n_pairs and len(graphs) + 2 <= spec.n_molecules:
        attempts += 1
        if attempts > 200 * spec.n_molecules:
            raise RuntimeError("isomer construction keeps failing; relax the spec")
        sk = _random_skeleton(g, spec)
        if len(sk.elems) < max(spec.min_atoms, 4):
            continue
        alt = _rewire(g, sk, moves=1 + int(g.integers(2)))
        if alt is None:
            continue
        ia, ib = f"syn{len(graphs):05d}", f"syn{len(graphs) + 1:05d}"
        ga, sa = _finalize(sk, ia)
        gb, sb = _finalize(alt, ib)
        ha, hb = wl_hash(ga), wl_hash(gb)
        if ha == hb or ha in seen or hb in seen or formula(ga) != formula(gb):
            continue
        if np.array_equal(oracle_features(ga, spec.palette), oracle_features(gb, spec.palette)):
            continue
        add(ga, sa)
        add(gb, sb)
        pairs.append((ia, ib))
    while len(graphs) < spec.n_molecules:
        attempts += 1
        if attempts > 400 * spec.n_molecules:
            raise RuntimeError("cannot generate enough distinct molecules")
        mol_id = f"syn{len(graphs):05d}"
        ga, sa = _finalize(_random_skeleton(g, spec), mol_id)
        if wl_hash(ga) in seen:
            continue
        add(ga, sa)

    # held-out set: whole isomer pairs and singletons, chosen by a seeded draw
    n_hold = int(round(spec.held_out_fraction * spec.n_molecules))
    in_pair = {i for p in pairs for i in p}
    units: list[tuple[str, ...]] = list(pairs) + [(r.id,) for r in records if r.id not in in_pair]
    order = rng(spec.seed, stream=0xB01D).permutation(len(units))
    held: list[str] = []
    for u in order:
        unit = units[u]
        if len(held) + len(unit) <= n_hold:
            held.extend(unit)
        if len(held) == n_hold:
            break
    held.sort()
    return SynthCorpus(records, graphs, pairs, held, spec)


def gen_aligned_embeddings(graphs, spec: SynthSpec, noise_sigma: float | None = None) -> np.ndarray:
    """Frozen chem-side embeddings: seeded linear map of count features + noise.

    Noise for each molecule comes from its own stream keyed by its id, so a
    molecule's row does not depend on which others are in the batch.
    """
    sigma = spec.noise_sigma if noise_sigma is None else noise_sigma
    enc = OracleSurrogate(spec.embed_dim, seed=spec.seed, palette=spec.palette)
    out = np.zeros((len(graphs), spec.embed_dim), dtype=np.float32)
    for k, gr in enumerate(graphs):
        out[k] = oracle_features(gr, spec.palette) @ enc.weight
        if sigma > 0:
            noise = rng(spec.seed, stream=_id_stream(gr.id)).normal(0.0, sigma, spec.embed_dim)
            out[k] += noise.astype(np.float32)
    return out


def _id_stream(mol_id: str) -> int:
    return 0xA11CE000 + zlib.crc32(("noise:" + mol_id).encode())


def write_embeddings(path, graphs, spec: SynthSpec, noise_sigma: float | None = None) -> np.ndarray:
    mat = gen_aligned_embeddings(graphs, spec, noise_sigma)
    write_store(path, [gr.id for gr in graphs], mat)
    return mat
