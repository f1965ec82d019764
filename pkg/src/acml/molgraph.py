"""Molecular graphs from a SMILES subset, plus graph-level descriptors.

The parser covers the organic subset (B C N O P S F Cl Br I and aromatic
b c n o p s), bracket atoms with isotope/charge/H-count/@/@@/class, ring
closures (digits and %nn), branches and the bond symbols ``- = # : / \\``.
Aromaticity is syntactic: lowercase atoms are aromatic and the bond between
two of them defaults to aromatic when it lies on a ring.
"""

from __future__ import annotations

import enum
import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from .errors import (
    InvalidPermutation,
    MultiFragmentInput,
    OversizeGraph,
    SmilesSyntaxError,
    UnbalancedParenthesis,
    UnclosedRing,
    UnknownAtomSymbol,
    ValenceOverflow,
)

MAX_HEAVY_ATOMS = 100

# fmt: off
SYMBOLS = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S",
    "Cl", "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga",
    "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd",
    "Ag", "Cd", "In", "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm",
    "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os",
    "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa",
    "U", "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg",
    "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
]

# standard atomic weights, 3 decimals; mass number of the longest-lived
# isotope for elements without a standard weight
MASSES = [
    1.008, 4.003, 6.94, 9.012, 10.81, 12.011, 14.007, 15.999, 18.998, 20.180, 22.990,
    24.305, 26.982, 28.085, 30.974, 32.06, 35.45, 39.95, 39.098, 40.078, 44.956, 47.867,
    50.942, 51.996, 54.938, 55.845, 58.933, 58.693, 63.546, 65.38, 69.723, 72.630, 74.922,
    78.971, 79.904, 83.798, 85.468, 87.62, 88.906, 91.224, 92.906, 95.95, 97.0, 101.07,
    102.906, 106.42, 107.868, 112.414, 114.818, 118.710, 121.760, 127.60, 126.904, 131.293,
    132.905, 137.327, 138.905, 140.116, 140.908, 144.242, 145.0, 150.36, 151.964, 157.25,
    158.925, 162.500, 164.930, 167.259, 168.934, 173.045, 174.967, 178.486, 180.948, 183.84,
    186.207, 190.23, 192.217, 195.084, 196.967, 200.592, 204.38, 207.2, 208.980, 209.0,
    210.0, 222.0, 223.0, 226.0, 227.0, 232.038, 231.036, 238.029, 237.0, 244.0, 243.0,
    247.0, 247.0, 251.0, 252.0, 257.0, 258.0, 259.0, 262.0, 267.0, 268.0, 269.0, 270.0,
    269.0, 278.0, 281.0, 282.0, 285.0, 286.0, 289.0, 290.0, 293.0, 294.0, 294.0,
]
# fmt: on

ATOMIC_NUMBER = {s: i + 1 for i, s in enumerate(SYMBOLS)}
H_MASS = MASSES[0]

# default valences of the organic subset
VALENCES = {5: (3,), 6: (4,), 7: (3, 5), 8: (2,), 9: (1,), 15: (3, 5), 16: (2, 4, 6),
            17: (1,), 35: (1,), 53: (1,)}
# aromatic atoms use their lowest valence only
AROMATIC_VALENCES = {5: (3,), 6: (4,), 7: (3,), 8: (2,), 15: (3,), 16: (2,), 34: (2,), 33: (3,)}

ORGANIC = {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"}
AROMATIC_ORGANIC = {"b", "c", "n", "o", "p", "s"}
AROMATIC_BRACKET = {"b", "c", "n", "o", "p", "s", "se", "as"}


class Chirality(enum.IntEnum):
    UNSPECIFIED = 0
    CW = 1  # @@
    CCW = 2  # @


class BondOrder(enum.IntEnum):
    SINGLE = 0
    DOUBLE = 1
    TRIPLE = 2
    AROMATIC = 3


class BondStereo(enum.IntEnum):
    NONE = 0
    CIS = 1
    TRANS = 2


_INT_ORDER = {BondOrder.SINGLE: 1, BondOrder.DOUBLE: 2, BondOrder.TRIPLE: 3}


@dataclass(frozen=True)
class AtomAttr:
    atomic_number: int
    chirality: Chirality = Chirality.UNSPECIFIED
    implicit_h: int = 0
    aromatic: bool = False
    charge: int = 0

    @property
    def symbol(self) -> str:
        return SYMBOLS[self.atomic_number - 1]


@dataclass(frozen=True)
class BondAttr:
    order: BondOrder = BondOrder.SINGLE
    stereo: BondStereo = BondStereo.NONE


@dataclass
class MolGraph:
    atoms: list[AtomAttr]
    bonds: list[tuple[int, int, BondAttr]]
    id: str = ""

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def n_bonds(self) -> int:
        return len(self.bonds)

    @property
    def n_heavy(self) -> int:
        return sum(1 for a in self.atoms if a.atomic_number > 1)

    def is_empty(self) -> bool:
        return not self.atoms

    def neighbors(self) -> list[list[tuple[int, BondAttr]]]:
        adj: list[list[tuple[int, BondAttr]]] = [[] for _ in self.atoms]
        for u, v, b in self.bonds:
            adj[u].append((v, b))
            adj[v].append((u, b))
        return adj

    def edge_set(self) -> set[tuple[int, int, BondAttr]]:
        return {(min(u, v), max(u, v), b) for u, v, b in self.bonds}

    def check(self) -> None:
        """Raise if the structural invariants do not hold."""
        n = len(self.atoms)
        seen = set()
        for u, v, _ in self.bonds:
            if not (0 <= u < n and 0 <= v < n):
                raise SmilesSyntaxError(f"bond ({u}, {v}) out of range")
            if u == v:
                raise SmilesSyntaxError("self-loop")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise SmilesSyntaxError(f"duplicate bond {key}")
            seen.add(key)
        if self.n_heavy >= MAX_HEAVY_ATOMS:
            raise OversizeGraph(f"{self.n_heavy} heavy atoms")
        if n and len(connected_components(self)) > 1:
            raise MultiFragmentInput("graph is disconnected")


@dataclass(frozen=True)
class Descriptors:
    mw: float
    hba: int
    hbd: int
    rotatable_bonds: int
    chiral_centers: int

    def as_dict(self) -> dict[str, float]:
        return {
            "MW": self.mw,
            "#HBA": self.hba,
            "#HBD": self.hbd,
            "#R-Bonds": self.rotatable_bonds,
            "#C-Centers": self.chiral_centers,
        }


# ------------------------------------------------------------------ parser


class _Parser:
    def __init__(self, text: str):
        self.s = text
        self.i = 0
        self.atoms: list[dict] = []
        self.bonds: list[list] = []  # [u, v, symbol or None]
        self.pairs: set[tuple[int, int]] = set()
        self.rings: dict[int, tuple[int, str | None]] = {}

    def error(self, cls, msg):
        return cls(f"{msg} at position {self.i} in {self.s!r}")

    def add_bond(self, u, v, sym):
        if u == v:
            raise self.error(SmilesSyntaxError, "ring closure onto the same atom")
        key = (min(u, v), max(u, v))
        if key in self.pairs:
            raise self.error(SmilesSyntaxError, "duplicate bond")
        self.pairs.add(key)
        self.bonds.append([u, v, sym])

    def parse(self):
        s = self.s
        prev = None
        pending = None
        stack: list[int] = []
        while self.i < len(s):
            ch = s[self.i]
            if ch == "(":
                if prev is None:
                    raise self.error(SmilesSyntaxError, "branch before any atom")
                stack.append(prev)
                self.i += 1
            elif ch == ")":
                if not stack:
                    raise self.error(UnbalancedParenthesis, "unmatched ')'")
                if pending is not None:
                    raise self.error(SmilesSyntaxError, "dangling bond")
                prev = stack.pop()
                self.i += 1
            elif ch in "-=#:/\\":
                if pending is not None:
                    raise self.error(SmilesSyntaxError, "two bond symbols in a row")
                pending = ch
                self.i += 1
            elif ch.isdigit() or ch == "%":
                if prev is None:
                    raise self.error(SmilesSyntaxError, "ring bond before any atom")
                num = self._ring_number()
                if num in self.rings:
                    other, sym = self.rings.pop(num)
                    if pending is not None and sym is not None and pending != sym and not (
                        pending in "/\\" and sym in "/\\"
                    ):
                        raise self.error(SmilesSyntaxError, "conflicting ring-bond symbols")
                    self.add_bond(other, prev, pending if pending is not None else sym)
                else:
                    self.rings[num] = (prev, pending)
                pending = None
            elif ch == ".":
                raise self.error(MultiFragmentInput, "multi-fragment SMILES")
            elif ch == "[":
                idx = self._bracket_atom()
                if prev is not None:
                    self.add_bond(prev, idx, pending)
                elif pending is not None:
                    raise self.error(SmilesSyntaxError, "bond before first atom")
                pending = None
                prev = idx
            elif ch.isalpha():
                idx = self._organic_atom()
                if prev is not None:
                    self.add_bond(prev, idx, pending)
                elif pending is not None:
                    raise self.error(SmilesSyntaxError, "bond before first atom")
                pending = None
                prev = idx
            else:
                raise self.error(SmilesSyntaxError, f"unexpected character {ch!r}")
        if self.rings:
            raise UnclosedRing(f"ring bond(s) {sorted(self.rings)} never closed in {s!r}")
        if stack:
            raise UnbalancedParenthesis(f"unclosed '(' in {s!r}")
        if pending is not None:
            raise SmilesSyntaxError(f"dangling bond at end of {s!r}")
        if not self.atoms:
            raise SmilesSyntaxError("no atoms")

    def _ring_number(self):
        s = self.s
        if s[self.i] == "%":
            digits = s[self.i + 1 : self.i + 3]
            if len(digits) != 2 or not digits.isdigit():
                raise self.error(SmilesSyntaxError, "'%' must be followed by two digits")
            self.i += 3
            return int(digits)
        self.i += 1
        return int(s[self.i - 1])

    def _organic_atom(self):
        s = self.s
        two = s[self.i : self.i + 2]
        if two in ("Cl", "Br"):
            sym = two
        else:
            sym = s[self.i]
        if sym in ORGANIC:
            aromatic = False
            z = ATOMIC_NUMBER[sym]
        elif sym in AROMATIC_ORGANIC:
            aromatic = True
            z = ATOMIC_NUMBER[sym.upper()]
        else:
            raise self.error(UnknownAtomSymbol, f"unknown atom symbol {sym!r}")
        self.i += len(sym)
        self.atoms.append(dict(z=z, aromatic=aromatic, chir=Chirality.UNSPECIFIED, h=None, charge=0))
        return len(self.atoms) - 1

    def _bracket_atom(self):
        s = self.s
        end = s.find("]", self.i)
        if end < 0:
            raise self.error(SmilesSyntaxError, "unterminated bracket atom")
        body = s[self.i + 1 : end]
        j = 0
        while j < len(body) and body[j].isdigit():
            j += 1  # isotope, ignored
        sym = None
        for cand in (body[j : j + 2], body[j : j + 1]):
            if len(cand) == 2 and cand in AROMATIC_BRACKET:
                sym = cand
                break
            if cand and cand[0].isupper() and cand in ATOMIC_NUMBER:
                sym = cand
                break
            if len(cand) == 1 and cand in AROMATIC_BRACKET:
                sym = cand
                break
        if sym is None:
            raise self.error(UnknownAtomSymbol, f"unknown bracket atom [{body}]")
        j += len(sym)
        aromatic = sym[0].islower()
        z = ATOMIC_NUMBER[sym.capitalize()]
        chir = Chirality.UNSPECIFIED
        if body.startswith("@@", j):
            chir = Chirality.CW
            j += 2
        elif body.startswith("@", j):
            chir = Chirality.CCW
            j += 1
        h = 0
        if j < len(body) and body[j] == "H":
            j += 1
            h = 1
            if j < len(body) and body[j].isdigit():
                h = int(body[j])
                j += 1
        charge = 0
        if j < len(body) and body[j] in "+-":
            sign = 1 if body[j] == "+" else -1
            c = body[j]
            j += 1
            if j < len(body) and body[j].isdigit():
                k = j
                while j < len(body) and body[j].isdigit():
                    j += 1
                charge = sign * int(body[k:j])
            else:
                charge = sign
                while j < len(body) and body[j] == c:
                    charge += sign
                    j += 1
        if j < len(body) and body[j] == ":":
            j += 1
            while j < len(body) and body[j].isdigit():
                j += 1
        if j != len(body):
            raise self.error(SmilesSyntaxError, f"cannot parse bracket atom [{body}]")
        self.i = end + 1
        self.atoms.append(dict(z=z, aromatic=aromatic, chir=chir, h=h, charge=charge))
        return len(self.atoms) - 1


def _bond_order(sym, a, b) -> BondOrder:
    if sym == "=":
        return BondOrder.DOUBLE
    if sym == "#":
        return BondOrder.TRIPLE
    if sym == ":":
        return BondOrder.AROMATIC
    if sym is None and a["aromatic"] and b["aromatic"]:
        return BondOrder.AROMATIC
    return BondOrder.SINGLE


def _bridges(n: int, edges: Sequence[tuple[int, int]]) -> set[int]:
    """Indices of edges that lie on no cycle (iterative Tarjan)."""
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for k, (u, v) in enumerate(edges):
        adj[u].append((v, k))
        adj[v].append((u, k))
    disc = [-1] * n
    low = [0] * n
    out: set[int] = set()
    t = 0
    for root in range(n):
        if disc[root] >= 0:
            continue
        disc[root] = low[root] = t
        t += 1
        stack = [(root, -1, iter(adj[root]))]
        while stack:
            u, pe, it = stack[-1]
            advanced = False
            for v, k in it:
                if k == pe:
                    continue
                if disc[v] < 0:
                    disc[v] = low[v] = t
                    t += 1
                    stack.append((v, k, iter(adj[v])))
                    advanced = True
                    break
                low[u] = min(low[u], disc[v])
            if not advanced:
                stack.pop()
                if stack:
                    p = stack[-1][0]
                    low[p] = min(low[p], low[u])
                    if low[u] > disc[p]:
                        out.add(pe)
    return out


def ring_bond_mask(g: MolGraph) -> list[bool]:
    br = _bridges(g.n_atoms, [(u, v) for u, v, _ in g.bonds])
    return [k not in br for k in range(g.n_bonds)]


def ring_count(g: MolGraph) -> int:
    """Cyclomatic number (independent rings)."""
    return g.n_bonds - g.n_atoms + len(connected_components(g)) if g.atoms else 0


def connected_components(g: MolGraph) -> list[list[int]]:
    adj = [[] for _ in g.atoms]
    for u, v, _ in g.bonds:
        adj[u].append(v)
        adj[v].append(u)
    seen = [False] * g.n_atoms
    comps = []
    for s in range(g.n_atoms):
        if seen[s]:
            continue
        seen[s] = True
        comp, stack = [], [s]
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(v)
        comps.append(sorted(comp))
    return comps


def bond_valence_sum(bonds: Iterable[BondAttr]) -> int:
    """Integer valence used by the H-filling rule.

    Aromatic bonds count 1 each; an aromatic atom that can still take a
    pi bond gets one more (see :func:`default_hydrogens`).
    """
    total = 0
    for b in bonds:
        total += 1 if b.order == BondOrder.AROMATIC else _INT_ORDER[b.order]
    return total


def default_hydrogens(z: int, aromatic: bool, valence: int) -> int:
    """Implicit H count for an organic-subset atom with the given bond valence."""
    if aromatic:
        table = AROMATIC_VALENCES.get(z)
        if table is None:
            raise ValenceOverflow(f"no aromatic valence for Z={z}")
        v = table[0]
        if valence + 1 <= v:
            return v - valence - 1
        if valence <= v:
            return 0
        raise ValenceOverflow(f"aromatic {SYMBOLS[z - 1]} with valence {valence}")
    for v in VALENCES[z]:
        if v >= valence:
            return v - valence
    raise ValenceOverflow(f"{SYMBOLS[z - 1]} with valence {valence} exceeds {max(VALENCES[z])}")


def _bracket_limit(z: int, charge: int) -> int | None:
    if z not in VALENCES:
        return None
    top = max(VALENCES[z])
    if z == 6:
        return 4 - abs(charge)
    if z == 5:
        return 3 - charge
    return top + charge


def _stereo(parser: _Parser, orders: list[BondOrder]) -> list[BondStereo]:
    # direction of each /,\ bond as seen from neighbour toward the atom
    stereo = [BondStereo.NONE] * len(orders)
    dirs: dict[int, list[tuple[int, str]]] = {}
    for u, v, sym in parser.bonds:
        if sym in ("/", "\\"):
            flip = "\\" if sym == "/" else "/"
            dirs.setdefault(v, []).append((u, sym))
            dirs.setdefault(u, []).append((v, flip))
    for k, (u, v, _) in enumerate(parser.bonds):
        if orders[k] != BondOrder.DOUBLE:
            continue
        du = [d for nb, d in dirs.get(u, []) if nb != v]
        dv = [d for nb, d in dirs.get(v, []) if nb != u]
        if du and dv:
            stereo[k] = BondStereo.TRANS if du[0] != dv[0] else BondStereo.CIS
    return stereo


def parse_smiles(text: str, id: str = "") -> MolGraph:
    """Parse a single-fragment SMILES string into a :class:`MolGraph`."""
    if not text or not text.isascii():
        raise SmilesSyntaxError("SMILES must be non-empty ASCII")
    text = text.strip()
    p = _Parser(text)
    p.parse()
    atoms = p.atoms
    orders = [_bond_order(sym, atoms[u], atoms[v]) for u, v, sym in p.bonds]
    for k, (u, v, _) in enumerate(p.bonds):
        if orders[k] == BondOrder.AROMATIC and not (atoms[u]["aromatic"] and atoms[v]["aromatic"]):
            raise SmilesSyntaxError(f"aromatic bond between non-aromatic atoms in {text!r}")
    # an aromatic bond on no ring (e.g. biaryl link) is a single bond
    bridges = _bridges(len(atoms), [(u, v) for u, v, _ in p.bonds])
    for k in bridges:
        if orders[k] == BondOrder.AROMATIC:
            orders[k] = BondOrder.SINGLE
    stereo = _stereo(p, orders)
    bonds = [(u, v, BondAttr(orders[k], stereo[k])) for k, (u, v, _) in enumerate(p.bonds)]

    incident: list[list[BondAttr]] = [[] for _ in atoms]
    for u, v, b in bonds:
        incident[u].append(b)
        incident[v].append(b)

    out_atoms = []
    for i, a in enumerate(atoms):
        val = bond_valence_sum(incident[i])
        if a["h"] is None:
            h = default_hydrogens(a["z"], a["aromatic"], val)
        else:
            h = a["h"]
            limit = _bracket_limit(a["z"], a["charge"])
            if limit is not None and not a["aromatic"] and val + h > limit:
                raise ValenceOverflow(
                    f"atom {i} ({SYMBOLS[a['z'] - 1]}{a['charge']:+d}) valence {val + h} > {limit}"
                )
        out_atoms.append(AtomAttr(a["z"], a["chir"], h, a["aromatic"], a["charge"]))

    g = MolGraph(out_atoms, bonds, id)
    if g.n_heavy >= MAX_HEAVY_ATOMS:
        raise OversizeGraph(f"{g.n_heavy} heavy atoms (limit {MAX_HEAVY_ATOMS - 1})")
    return g


def valence_consistent(g: MolGraph, i: int) -> bool:
    """True if atom ``i`` satisfies the H-filling rule for its element.

    Only meaningful for organic-subset elements without charge.
    """
    a = g.atoms[i]
    bonds = [b for u, v, b in g.bonds if i in (u, v)]
    val = bond_valence_sum(bonds)
    if a.aromatic:
        v = AROMATIC_VALENCES[a.atomic_number][0]
        return val + a.implicit_h in (v, v - 1) and val + a.implicit_h <= v
    return val + a.implicit_h in VALENCES[a.atomic_number]


# ---------------------------------------------------------------- writing


def _atom_token(a: AtomAttr, valence: int) -> str:
    sym = a.symbol.lower() if a.aromatic else a.symbol
    organic_ok = (
        a.charge == 0
        and a.chirality == Chirality.UNSPECIFIED
        and (sym in ORGANIC or sym in AROMATIC_ORGANIC)
    )
    if organic_ok:
        try:
            if default_hydrogens(a.atomic_number, a.aromatic, valence) == a.implicit_h:
                return sym
        except ValenceOverflow:
            pass
    tok = "[" + sym
    if a.chirality == Chirality.CCW:
        tok += "@"
    elif a.chirality == Chirality.CW:
        tok += "@@"
    if a.implicit_h:
        tok += "H" + (str(a.implicit_h) if a.implicit_h > 1 else "")
    if a.charge:
        tok += ("+" if a.charge > 0 else "-") + (str(abs(a.charge)) if abs(a.charge) > 1 else "")
    return tok + "]"


def _bond_token(b: BondAttr, a: AtomAttr, c: AtomAttr) -> str:
    if b.order == BondOrder.DOUBLE:
        return "="
    if b.order == BondOrder.TRIPLE:
        return "#"
    if b.order == BondOrder.AROMATIC:
        return ""
    return "-" if (a.aromatic and c.aromatic) else ""


def to_smiles(g: MolGraph) -> str:
    """Write a SMILES string that :func:`parse_smiles` reads back to ``g``.

    Atom order of the round trip is DFS order from atom 0; bond stereo is not
    written.
    """
    if not g.atoms:
        return ""
    adj = g.neighbors()
    n = g.n_atoms
    valence = [bond_valence_sum(b for _, b in adj[i]) for i in range(n)]
    visited = [False] * n
    parent = [-1] * n
    order: list[int] = []
    # first pass: DFS tree, to find ring-closure edges
    tree_children: list[list[tuple[int, BondAttr]]] = [[] for _ in range(n)]
    closures: list[list[tuple[int, BondAttr]]] = [[] for _ in range(n)]
    stack = [(0, -1, None)]
    while stack:
        u, p, b = stack.pop()
        if visited[u]:
            continue
        visited[u] = True
        parent[u] = p
        order.append(u)
        if p >= 0:
            tree_children[p].append((u, b))
        for v, bb in reversed(adj[u]):
            if not visited[v]:
                stack.append((v, u, bb))
    tree = {(min(u, parent[u]), max(u, parent[u])) for u in range(n) if parent[u] >= 0}
    pos = {u: k for k, u in enumerate(order)}
    for u, v, b in g.bonds:
        if (min(u, v), max(u, v)) in tree:
            continue
        a, c = (u, v) if pos[u] < pos[v] else (v, u)
        closures[a].append((c, b))
    free = list(range(1, 100))
    pending_close: dict[int, list[tuple[int, BondAttr, int]]] = {}

    def ring_label(k):
        return str(k) if k < 10 else f"%{k:02d}"

    out: list[str] = []

    def emit(u):
        atom = g.atoms[u]
        out.append(_atom_token(atom, valence[u]))
        for c, b, k in pending_close.pop(u, []):
            out.append(_bond_token(b, atom, g.atoms[c]) + ring_label(k))
            free.append(k)
            free.sort()
        for c, b in closures[u]:
            k = free.pop(0)
            out.append(ring_label(k))
            pending_close.setdefault(c, []).append((u, b, k))
        kids = tree_children[u]
        for idx, (v, b) in enumerate(kids):
            tok = _bond_token(b, atom, g.atoms[v])
            if idx < len(kids) - 1:
                out.append("(" + tok)
                emit(v)
                out.append(")")
            else:
                out.append(tok)
                emit(v)

    emit(0)
    return "".join(out)


# ------------------------------------------------------------- descriptors


def heavy_degrees(g: MolGraph) -> list[int]:
    deg = [0] * g.n_atoms
    for u, v, _ in g.bonds:
        if g.atoms[v].atomic_number > 1:
            deg[u] += 1
        if g.atoms[u].atomic_number > 1:
            deg[v] += 1
    return deg


def descriptors(g: MolGraph) -> Descriptors:
    mw = 0.0
    hba = hbd = chiral = 0
    for a in g.atoms:
        mw += MASSES[a.atomic_number - 1] + a.implicit_h * H_MASS
        if a.atomic_number in (7, 8):
            hba += 1
            if a.implicit_h >= 1:
                hbd += 1
        if a.chirality != Chirality.UNSPECIFIED:
            chiral += 1
    ring = ring_bond_mask(g)
    deg = heavy_degrees(g)
    rot = 0
    for k, (u, v, b) in enumerate(g.bonds):
        if b.order == BondOrder.SINGLE and not ring[k] and deg[u] >= 2 and deg[v] >= 2:
            rot += 1
    return Descriptors(round(mw, 6), hba, hbd, rot, chiral)


def formula(g: MolGraph) -> str:
    """Hill-order molecular formula, implicit hydrogens included."""
    counts: Counter[str] = Counter()
    for a in g.atoms:
        counts[a.symbol] += 1
        if a.implicit_h:
            counts["H"] += a.implicit_h
    keys = sorted(counts)
    if "C" in counts:
        keys = ["C"] + (["H"] if "H" in counts else []) + [k for k in keys if k not in ("C", "H")]
    return "".join(k + (str(counts[k]) if counts[k] > 1 else "") for k in keys)


# ---------------------------------------------------------------- scaffolds


def murcko_scaffold(g: MolGraph) -> MolGraph:
    """Ring systems plus linkers; the empty graph if ``g`` has no ring.

    Atoms that lose a side chain get the lost bond order back as hydrogens,
    so the scaffold of ethylbenzene is exactly benzene.
    """
    n = g.n_atoms
    alive = [True] * n
    deg = [0] * n
    for u, v, _ in g.bonds:
        deg[u] += 1
        deg[v] += 1
    extra_h = [0] * n
    adj = g.neighbors()
    queue = [u for u in range(n) if deg[u] <= 1]
    while queue:
        u = queue.pop()
        if not alive[u] or deg[u] > 1:
            continue
        alive[u] = False
        for v, b in adj[u]:
            if alive[v]:
                deg[v] -= 1
                extra_h[v] += _INT_ORDER.get(b.order, 1)
                if deg[v] <= 1:
                    queue.append(v)
    keep = [u for u in range(n) if alive[u]]
    if not keep:
        return MolGraph([], [], g.id)
    new_index = {u: k for k, u in enumerate(keep)}
    atoms = []
    for u in keep:
        a = g.atoms[u]
        atoms.append(AtomAttr(a.atomic_number, Chirality.UNSPECIFIED, a.implicit_h + extra_h[u], a.aromatic, a.charge))
    bonds = [
        (new_index[u], new_index[v], BondAttr(b.order))
        for u, v, b in g.bonds
        if alive[u] and alive[v]
    ]
    return MolGraph(atoms, bonds, g.id)


def wl_hash(g: MolGraph, iterations: int = 3) -> str:
    """Isomorphism-invariant hash via colour refinement (1-WL)."""
    if not g.atoms:
        return ""
    adj = g.neighbors()
    labels = [
        f"{a.atomic_number}:{int(a.aromatic)}:{a.implicit_h}:{a.charge}" for a in g.atoms
    ]
    history = [sorted(labels)]
    for _ in range(iterations):
        new = []
        for u in range(g.n_atoms):
            nb = sorted(f"{int(b.order)}-{labels[v]}" for v, b in adj[u])
            h = hashlib.blake2b((labels[u] + "|" + ",".join(nb)).encode(), digest_size=8)
            new.append(h.hexdigest())
        labels = new
        history.append(sorted(labels))
    payload = json.dumps([g.n_atoms, g.n_bonds, history])
    return hashlib.blake2b(payload.encode(), digest_size=16).hexdigest()


def scaffold_key(g: MolGraph) -> str:
    return wl_hash(murcko_scaffold(g))


# -------------------------------------------------------------- relabeling


def permute(g: MolGraph, perm: Sequence[int]) -> MolGraph:
    """Relabel atom ``i`` as ``perm[i]``."""
    n = g.n_atoms
    perm = [int(p) for p in perm]
    if sorted(perm) != list(range(n)):
        raise InvalidPermutation(f"not a permutation of 0..{n - 1}: {perm}")
    atoms: list[AtomAttr] = [None] * n  # type: ignore[list-item]
    for i, p in enumerate(perm):
        atoms[p] = g.atoms[i]
    bonds = [(perm[u], perm[v], b) for u, v, b in g.bonds]
    return MolGraph(atoms, bonds, g.id)


# ---------------------------------------------------------------- datasets


@dataclass
class MoleculeRecord:
    id: str
    smiles: str
    labels: list[float | None] | None = None
    props: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        d: dict = {"id": self.id, "smiles": self.smiles}
        if self.labels is not None:
            d["labels"] = self.labels
        if self.props:
            d["props"] = self.props
        return d


def read_jsonl(path) -> Iterator[MoleculeRecord]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            if "id" not in d or "smiles" not in d:
                raise ValueError(f"{path}:{lineno}: record needs 'id' and 'smiles'")
            yield MoleculeRecord(str(d["id"]), d["smiles"], d.get("labels"), d.get("props") or {})


def write_jsonl(path, records: Iterable[MoleculeRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")
