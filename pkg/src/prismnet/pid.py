"""Partial information decomposition on small discrete systems.

Redundancy is the Williams-Beer ``I_min`` measure; atoms of the redundancy
lattice follow by Moebius inversion.  Two sources give the classic
(R, U1, U2, S) split.  Three sources give the 18-atom lattice, optionally
reduced by dropping every atom that involves a text-image interaction.
"""
from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .tensor import ContractError

MAX_CARD = 8

Atom = frozenset  # frozenset of frozensets of source indices


class JointParseError(ValueError):
    pass


@dataclass
class DiscreteJoint:
    """``table[m1, ..., mn, y]`` with the target on the last axis."""
    table: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float64)
        n = self.table.ndim - 1
        if n < 1 or n > 3:
            raise ContractError(f"need 1 to 3 sources plus a target, got {self.table.ndim} axes")
        if any(c > MAX_CARD for c in self.table.shape):
            raise ContractError(f"cardinalities are capped at {MAX_CARD}, got {self.table.shape}")
        if (self.table < 0).any():
            raise ContractError("probabilities must be non-negative")
        if abs(self.table.sum() - 1.0) > 1e-12:
            raise ContractError(f"probabilities sum to {self.table.sum():.15g}, not 1")
        if not self.names:
            self.names = ("X", "T", "I")[:n] if n == 3 else tuple(f"M{i + 1}" for i in range(n))
        if len(self.names) != n:
            raise ContractError("one name per source is required")

    @property
    def n_sources(self) -> int:
        return self.table.ndim - 1

    def marginal(self, sources: Iterable[int]) -> np.ndarray:
        """p(m_sources, y) as a 2-D array (joint source state, y)."""
        keep = sorted(set(sources))
        drop = tuple(i for i in range(self.n_sources) if i not in keep)
        m = self.table.sum(axis=drop)
        return m.reshape(-1, m.shape[-1])


def _plogp_ratio(p_ay: np.ndarray) -> np.ndarray:
    """Per-(a, y) terms p(a,y) log2 p(a,y)/(p(a)p(y)), 0 where p(a,y)=0."""
    pa = p_ay.sum(axis=1, keepdims=True)
    py = p_ay.sum(axis=0, keepdims=True)
    out = np.zeros_like(p_ay)
    nz = p_ay > 0
    out[nz] = p_ay[nz] * np.log2(p_ay[nz] / (pa * py)[nz])
    return out


def mutual_info(joint: DiscreteJoint, sources: Iterable[int]) -> float:
    """I(Y; M_sources) in bits."""
    sources = list(sources)
    if not sources:
        raise ContractError("mutual information needs a non-empty source subset")
    return float(_plogp_ratio(joint.marginal(sources)).sum())


def specific_info(joint: DiscreteJoint, sources: Iterable[int]) -> np.ndarray:
    """I_spec(y; A) = sum_a p(a|y) log2 p(y|a)/p(y), one value per y."""
    p_ay = joint.marginal(sources)
    py = p_ay.sum(axis=0)
    terms = _plogp_ratio(p_ay).sum(axis=0)
    out = np.zeros_like(py)
    nz = py > 0
    out[nz] = terms[nz] / py[nz]
    return out


def i_min(joint: DiscreteJoint, collection: Iterable[Iterable[int]]) -> float:
    """Redundancy sum_y p(y) min_A I_spec(y; A) over the source sets in ``collection``."""
    spec = np.array([specific_info(joint, a) for a in collection])
    py = joint.table.reshape(-1, joint.table.shape[-1]).sum(axis=0)
    return float((py * spec.min(axis=0)).sum())


# --------------------------------------------------------------------------
# lattice


def antichains(n: int) -> list[Atom]:
    """All antichains of non-empty subsets of ``range(n)``."""
    subsets = [frozenset(c) for k in range(1, n + 1) for c in itertools.combinations(range(n), k)]
    out = []
    for k in range(1, len(subsets) + 1):
        for combo in itertools.combinations(subsets, k):
            if all(not (a < b or b < a) for a, b in itertools.combinations(combo, 2)):
                out.append(frozenset(combo))
    return out


def below(alpha: Atom, beta: Atom) -> bool:
    """alpha <= beta: every set of beta contains some set of alpha."""
    return all(any(a <= b for a in alpha) for b in beta)


def atom(*sets: str | Iterable[int], names: Sequence[str] = ("X", "T", "I")) -> Atom:
    """Build an atom from source-name strings, e.g. ``atom("XT", "XI")``."""
    idx = {n: i for i, n in enumerate(names)}
    out = []
    for s in sets:
        if isinstance(s, str):
            out.append(frozenset(idx[c] for c in s))
        else:
            out.append(frozenset(s))
    return frozenset(out)


def atom_label(a: Atom, names: Sequence[str]) -> str:
    parts = sorted((sorted(s) for s in a), key=lambda s: (len(s), s))
    return "".join("{" + ",".join(names[i] for i in s) + "}" for s in parts)


def lattice_atoms(joint: DiscreteJoint) -> dict[Atom, float]:
    """Partial-information atoms via Moebius inversion of I_min."""
    nodes = antichains(joint.n_sources)
    red = {a: i_min(joint, a) for a in nodes}
    # process from the bottom: fewer strict descendants first
    strict = {a: [b for b in nodes if b != a and below(b, a)] for a in nodes}
    out: dict[Atom, float] = {}
    for a in sorted(nodes, key=lambda a: len(strict[a])):
        out[a] = red[a] - sum(out[b] for b in strict[a])
    return out


# atoms discarded when text-image interactions are neglected
TI_ATOMS = (
    atom("X", "T", "I"), atom("T", "I"), atom("X", "TI"), atom("XT", "XI", "TI"),
    atom("XT", "TI"), atom("XI", "TI"), atom("TI"),
)

# entangled aggregates on the reduced lattice: atoms that enter an information
# quantity without being part of Info(Y;X), a unique term, or a synergy atom
EI_ASSIGNMENT: dict[str, tuple[Atom, ...]] = {
    "XT": (atom("T", "XI"), atom("I", "XT"), atom("XT", "XI")),
    "XI": (atom("T", "XI"), atom("I", "XT"), atom("XT", "XI")),
    "XTI": (atom("T", "XI"), atom("I", "XT"), atom("XT", "XI")),
}


@dataclass
class PIDResult:
    names: tuple[str, ...]
    atoms: dict[Atom, float]
    redundancy: float
    unique: dict[str, float]
    synergy: dict[str, float]
    mutual_info: dict[str, float]  # Shannon, keyed by concatenated source names
    simplified: bool = False
    triple_synergy: float = 0.0
    entangled: dict[str, float] = field(default_factory=dict)
    lattice_info: dict[str, float] = field(default_factory=dict)  # re-aggregated atoms
    per_source_redundancy: dict[str, float] = field(default_factory=dict)

    def atom_table(self) -> dict[str, float]:
        return {atom_label(a, self.names): v for a, v in self.atoms.items()}

    def min_atom(self) -> float:
        return min(self.atoms.values())


def _subset_key(names, subset) -> str:
    return "".join(names[i] for i in sorted(subset))


def _all_mi(joint: DiscreteJoint) -> dict[str, float]:
    n = joint.n_sources
    return {_subset_key(joint.names, s): mutual_info(joint, s)
            for k in range(1, n + 1) for s in itertools.combinations(range(n), k)}


def decompose2(joint: DiscreteJoint) -> PIDResult:
    if joint.n_sources != 2:
        raise ContractError(f"decompose2 needs 2 sources, got {joint.n_sources}")
    mi = _all_mi(joint)
    n1, n2 = joint.names
    r = i_min(joint, [{0}, {1}])
    u1, u2 = mi[n1] - r, mi[n2] - r
    s = mi[n1 + n2] - r - u1 - u2
    atoms = {atom({0}, {1}): r, atom({0}): u1, atom({1}): u2, atom({0, 1}): s}
    return PIDResult(tuple(joint.names), atoms, r, {n1: u1, n2: u2}, {n1 + n2: s}, mi,
                     per_source_redundancy={n1: r, n2: r})


def decompose3(joint: DiscreteJoint, simplify: bool = True,
               ei_assignment: dict[str, Sequence[Atom]] | None = None) -> PIDResult:
    """Three-source decomposition (sources named X, T, I in axis order).

    ``simplify`` zeroes the text-image interaction atoms.  ``ei_assignment``
    overrides which atoms form each entangled aggregate.
    """
    if joint.n_sources != 3:
        raise ContractError(f"decompose3 needs exactly 3 sources, got {joint.n_sources}")
    names = tuple(joint.names)
    atoms = lattice_atoms(joint)
    if simplify:
        for a in TI_ATOMS:
            atoms[a] = 0.0
    mi = _all_mi(joint)

    def node_info(subset) -> float:
        node = frozenset([frozenset(subset)])
        return sum(v for a, v in atoms.items() if below(a, node))

    lattice_info = {_subset_key(names, s): node_info(s)
                    for k in (1, 2, 3) for s in itertools.combinations(range(3), k)}
    unique = {names[i]: atoms[atom({i})] for i in range(3)}
    synergy = {_subset_key(names, s): atoms[atom(set(s))] for s in itertools.combinations(range(3), 2)}
    triple = atoms[atom({0, 1, 2})]
    multi = [a for a in atoms if len(a) > 1]
    redundancy = sum(atoms[a] for a in multi)
    per_source = {names[i]: lattice_info[names[i]] - unique[names[i]] for i in range(3)}
    assignment = ei_assignment or EI_ASSIGNMENT
    key = {"XT": names[0] + names[1], "XI": names[0] + names[2], "XTI": "".join(names)}
    entangled = {key.get(k, k): sum(atoms[a] for a in members) for k, members in assignment.items()}
    return PIDResult(names, atoms, redundancy, unique, synergy, mi, simplify, triple, entangled,
                     lattice_info, per_source)


def decompose(joint: DiscreteJoint, simplify: bool = True) -> PIDResult:
    return decompose2(joint) if joint.n_sources == 2 else decompose3(joint, simplify)


# --------------------------------------------------------------------------
# identity checks


@dataclass
class IdentityReport:
    residuals: dict[str, float]
    tolerance: float = 1e-9

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values()) if self.residuals else 0.0

    @property
    def ok(self) -> bool:
        return self.max_residual < self.tolerance


def verify_lemma1(result: PIDResult, tolerance: float = 1e-9) -> IdentityReport:
    """Single-source information = redundancy + uniqueness; all-source
    information = redundancy + synergy + total uniqueness.

    Two-source results use the Shannon values.  Three-source results use the
    per-source redundancy (atoms under a source other than its own) and the
    aggregate redundancy / synergy atoms, with information taken from the
    lattice so that the reduced lattice is checked consistently.
    """
    names = result.names
    info = result.lattice_info or result.mutual_info
    res = {}
    for n in names:
        res[f"Info({n}) = R + U_{n}"] = abs(info[n] - (result.per_source_redundancy[n] + result.unique[n]))
    full = "".join(names)
    syn = sum(result.synergy.values()) + result.triple_synergy
    res[f"Info({full}) = R + S + sum U"] = abs(
        info[full] - (result.redundancy + syn + sum(result.unique.values())))
    return IdentityReport(res, tolerance)


def verify_corollary1(result: PIDResult, tolerance: float = 1e-9) -> IdentityReport:
    """The three pair / triple identities on the reduced lattice, with both
    sides re-aggregated from atoms."""
    if not result.simplified or len(result.names) != 3:
        raise ContractError("corollary identities apply to simplified three-source results")
    x, t, i = result.names
    info = result.lattice_info
    ei = result.entangled
    res = {
        f"Info({x}{t})": abs(info[x + t] - (result.synergy[x + t] + result.unique[t] + info[x] + ei[x + t])),
        f"Info({x}{i})": abs(info[x + i] - (result.synergy[x + i] + result.unique[i] + info[x] + ei[x + i])),
        f"Info({x}{t}{i})": abs(info[x + t + i] - (
            result.triple_synergy + result.synergy[x + i] + result.synergy[x + t] + ei[x + t + i]
            + info[x] + result.unique[t] + result.unique[i])),
        # Info(Y;X) itself is {X} + {X}{T} + {X}{I}
        f"Info({x}) from atoms": abs(info[x] - (result.atoms[atom({0})] + result.atoms[atom({0}, {1})]
                                               + result.atoms[atom({0}, {2})])),
    }
    return IdentityReport(res, tolerance)


def assumption_gap(result: PIDResult) -> dict[str, float]:
    """Shannon information minus lattice re-aggregation per source subset."""
    return {k: result.mutual_info[k] - v for k, v in result.lattice_info.items()}


# --------------------------------------------------------------------------
# canonical systems and random joints


def joint_from_function(cards: Sequence[int], fn, names=()) -> DiscreteJoint:
    """Uniform independent sources, deterministic target ``fn(*values)``."""
    ycard = max(fn(*v) for v in itertools.product(*(range(c) for c in cards))) + 1
    table = np.zeros(tuple(cards) + (max(ycard, 2),))
    p = 1.0 / np.prod(cards)
    for v in itertools.product(*(range(c) for c in cards)):
        table[v + (fn(*v),)] += p
    return DiscreteJoint(table, tuple(names))


def xor_joint() -> DiscreteJoint:
    return joint_from_function((2, 2), lambda a, b: a ^ b)


def copy_joint() -> DiscreteJoint:
    """M1 = M2 = Y, uniform binary."""
    table = np.zeros((2, 2, 2))
    table[0, 0, 0] = table[1, 1, 1] = 0.5
    return DiscreteJoint(table)


def unique_joint() -> DiscreteJoint:
    """Y = M1 with M2 independent noise."""
    return joint_from_function((2, 2), lambda a, b: a)


def random_joint(n_sources: int, rng: np.random.Generator, card: int = 2) -> DiscreteJoint:
    table = rng.random((card,) * (n_sources + 1)) ** 2
    return DiscreteJoint(table / table.sum())


# --------------------------------------------------------------------------
# plain-text joint files


def parse_joint(text: str) -> DiscreteJoint:
    """Rows of integer source values, target value, then probability.

    Blank lines and ``#`` comments are skipped.  An optional first
    non-comment line of names (``X T I Y``, optionally followed by a name for
    the probability column) names the sources.  Values index
    into the table; probabilities of repeated outcomes are summed.
    """
    header: list[str] = []
    rows = []
    width = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if not rows and not header and not _is_number(parts[-1]):
            header = parts
            continue
        if width is None:
            width = len(parts)
            if width < 3:
                raise JointParseError(f"line {lineno}: need at least one source, a target and a probability")
        if len(parts) != width:
            raise JointParseError(f"line {lineno}: expected {width} fields, got {len(parts)}")
        try:
            values = tuple(int(v) for v in parts[:-1])
            prob = float(parts[-1])
        except ValueError as exc:
            raise JointParseError(f"line {lineno}: malformed probability row {raw.strip()!r}") from exc
        if prob < 0 or not np.isfinite(prob):
            raise JointParseError(f"line {lineno}: probability must be finite and non-negative")
        if any(v < 0 or v >= MAX_CARD for v in values):
            raise JointParseError(f"line {lineno}: values must lie in 0..{MAX_CARD - 1}")
        rows.append((values, prob))
    if not rows:
        raise JointParseError("no probability rows found")
    shape = tuple(max(r[0][k] for r in rows) + 1 for k in range(width - 1))
    shape = tuple(max(s, 2) for s in shape)
    table = np.zeros(shape)
    for values, prob in rows:
        table[values] += prob
    total = table.sum()
    if abs(total - 1.0) > 1e-9:
        raise JointParseError(f"probabilities sum to {total:.12g}, not 1")
    table /= total
    names: tuple[str, ...] = ()
    if header:
        # sources and target, with or without a probability column name
        if len(header) not in (width - 1, width):
            raise JointParseError(f"header has {len(header)} names but rows carry {width} fields")
        names = tuple(header[:width - 2])
    try:
        return DiscreteJoint(table, names)
    except ContractError as exc:
        raise JointParseError(str(exc)) from exc


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_joint(path) -> DiscreteJoint:
    return parse_joint(Path(path).read_text())


def format_result(result: PIDResult) -> str:
    """Aligned text followed by a CSV block of every reported quantity."""
    rows = [("redundancy", result.redundancy)]
    rows += [(f"unique[{k}]", v) for k, v in result.unique.items()]
    rows += [(f"synergy[{k}]", v) for k, v in result.synergy.items()]
    if len(result.names) == 3:
        rows.append((f"synergy[{''.join(result.names)}]", result.triple_synergy))
        rows += [(f"entangled[{k}]", v) for k, v in result.entangled.items()]
    rows += [(f"info[{k}]", v) for k, v in result.mutual_info.items()]
    rows += [(f"atom{k}", v) for k, v in result.atom_table().items()]
    width = max(len(k) for k, _ in rows)
    text = "\n".join(f"{k:<{width}}  {v: .6f}" for k, v in rows)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["quantity", "bits"])
    writer.writerows((k, repr(v)) for k, v in rows)
    return text + "\n\n" + buf.getvalue()
