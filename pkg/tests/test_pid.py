import csv
import io
import itertools
import math

import numpy as np
import pytest

from prismnet import pid
from prismnet.cli import main
from prismnet.pid import (TI_ATOMS, DiscreteJoint, JointParseError, antichains, atom, below,
                          copy_joint, decompose2, decompose3, joint_from_function, mutual_info,
                          parse_joint, random_joint, unique_joint, verify_corollary1, verify_lemma1,
                          xor_joint)
from prismnet.tensor import ContractError

TOL = 1e-9


# -- brute-force oracles -----------------------------------------------------

def outcomes(joint):
    """(source values, y, p) triples with p > 0."""
    for idx in itertools.product(*(range(c) for c in joint.table.shape)):
        p = float(joint.table[idx])
        if p > 0:
            yield idx[:-1], idx[-1], p


def bf_mutual_info(joint, sources):
    pay, pa, py = {}, {}, {}
    for m, y, p in outcomes(joint):
        a = tuple(m[i] for i in sources)
        pay[a, y] = pay.get((a, y), 0.0) + p
        pa[a] = pa.get(a, 0.0) + p
        py[y] = py.get(y, 0.0) + p
    return sum(p * math.log2(p / (pa[a] * py[y])) for (a, y), p in pay.items())


def bf_specific(joint, sources, y0):
    pay, pa, py = {}, {}, 0.0
    for m, y, p in outcomes(joint):
        a = tuple(m[i] for i in sources)
        pa[a] = pa.get(a, 0.0) + p
        if y == y0:
            pay[a] = pay.get(a, 0.0) + p
            py += p
    return sum((q / py) * math.log2((q / pa[a]) / py) for a, q in pay.items())


def bf_i_min(joint, collection):
    ys = {y for _, y, _ in outcomes(joint)}
    total = 0.0
    for y0 in ys:
        py = sum(p for _, y, p in outcomes(joint) if y == y0)
        total += py * min(bf_specific(joint, sorted(a), y0) for a in collection)
    return total


def bf_atoms(joint):
    """Solve 'redundancy of a node = sum of atoms at or below it' as one linear system."""
    nodes = antichains(joint.n_sources)
    A = np.array([[1.0 if below(b, a) else 0.0 for b in nodes] for a in nodes])
    rhs = np.array([bf_i_min(joint, a) for a in nodes])
    return dict(zip(nodes, np.linalg.solve(A, rhs)))


# -- information measures ----------------------------------------------------

def test_mutual_info_examples():
    ind = DiscreteJoint(np.full((2, 2, 2), 1 / 8))
    assert abs(mutual_info(ind, [0, 1])) < 1e-15
    assert abs(mutual_info(unique_joint(), [0]) - 1.0) < 1e-15
    rng = np.random.default_rng(0)
    for _ in range(20):
        j = random_joint(2, rng)
        for s in ([0], [1], [0, 1]):
            assert abs(mutual_info(j, s) - bf_mutual_info(j, s)) < 1e-12
    with pytest.raises(ContractError):
        mutual_info(ind, [])


def test_i_min_matches_brute_force():
    rng = np.random.default_rng(1)
    for n in (2, 3):
        for _ in range(10):
            j = random_joint(n, rng, card=3 if n == 2 else 2)
            for a in antichains(n):
                assert abs(pid.i_min(j, a) - bf_i_min(j, a)) < 1e-12


def test_antichain_count():
    assert len(antichains(2)) == 4
    assert len(antichains(3)) == 18


def test_joint_validation():
    with pytest.raises(ContractError):
        DiscreteJoint(np.full((2, 2), 0.3))
    with pytest.raises(ContractError):
        DiscreteJoint(np.full((9, 2), 1 / 18))
    with pytest.raises(ContractError):
        DiscreteJoint(np.array([[1.5, -0.5], [0, 0]]))


# -- two sources -----------------------------------------------------------

def close_to(result, r, u1, u2, s):
    n1, n2 = result.names
    got = (result.redundancy, result.unique[n1], result.unique[n2], result.synergy[n1 + n2])
    return max(abs(a - b) for a, b in zip(got, (r, u1, u2, s)))


@pytest.mark.parametrize("joint,expect", [(xor_joint(), (0, 0, 0, 1)), (copy_joint(), (1, 0, 0, 0)),
                                          (unique_joint(), (0, 1, 0, 0))])
def test_canonical_two_source_systems(joint, expect):
    res = decompose2(joint)
    assert close_to(res, *expect) < TOL
    oracle = bf_atoms(joint)
    for a, v in res.atoms.items():
        assert abs(v - oracle[a]) < TOL
    assert verify_lemma1(res).max_residual < TOL


def test_two_source_random_suite():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        j = random_joint(2, rng, card=int(rng.integers(2, 4)))
        res = decompose2(j)
        assert res.min_atom() > -TOL
        worst = max(worst, verify_lemma1(res).max_residual)
        oracle = bf_atoms(j)
        assert max(abs(res.atoms[a] - oracle[a]) for a in oracle) < TOL
    assert worst < TOL


def test_two_source_relabel_symmetry():
    rng = np.random.default_rng(3)
    for _ in range(20):
        j = random_joint(2, rng)
        swapped = DiscreteJoint(np.transpose(j.table, (1, 0, 2)))
        a, b = decompose2(j), decompose2(swapped)
        assert abs(a.redundancy - b.redundancy) < 1e-12
        assert abs(a.synergy["M1M2"] - b.synergy["M1M2"]) < 1e-12
        assert abs(a.unique["M1"] - b.unique["M2"]) < 1e-12


# -- three sources ----------------------------------------------------------

def test_three_source_copy_of_x():
    j = joint_from_function((2, 2, 2), lambda x, t, i: x)
    res = decompose3(j, simplify=True)
    assert abs(res.mutual_info["X"] - 1) < TOL
    assert abs(res.unique["T"]) < TOL and abs(res.unique["I"]) < TOL
    assert all(abs(v) < TOL for v in res.synergy.values()) and abs(res.triple_synergy) < TOL
    assert abs(res.lattice_info["XT"] - res.lattice_info["X"]) < TOL


def test_three_source_xor_of_x_and_t():
    j = joint_from_function((2, 2, 2), lambda x, t, i: x ^ t)
    red, full = decompose3(j, simplify=True), decompose3(j, simplify=False)
    assert abs(red.synergy["XT"] - 1) < TOL
    assert max(abs(red.atoms[a] - full.atoms[a]) for a in full.atoms) < TOL
    rep = verify_corollary1(red)
    assert rep.ok
    # 1 = S_XT + U_T + Info(Y;X) + EI_XT = 1 + 0 + 0 + 0
    assert abs(red.lattice_info["XT"] - 1) < TOL and abs(red.entangled["XT"]) < TOL


def test_text_image_duplicate_shows_assumption_cost():
    # Y = T = I, X independent noise
    table = np.zeros((2, 2, 2, 2))
    for x, t in itertools.product(range(2), range(2)):
        table[x, t, t, t] = 0.25
    j = DiscreteJoint(table)
    red, full = decompose3(j, True), decompose3(j, False)
    assert full.atoms[atom("T", "I")] > 0.5
    assert red.atoms[atom("T", "I")] == 0.0
    gap = pid.assumption_gap(red)
    assert gap["TI"] > 0.5


def test_full_lattice_matches_oracle_and_is_nonnegative():
    rng = np.random.default_rng(4)
    for _ in range(15):
        j = random_joint(3, rng)
        res = decompose3(j, simplify=False)
        oracle = bf_atoms(j)
        assert max(abs(res.atoms[a] - oracle[a]) for a in oracle) < TOL
        assert res.min_atom() > -TOL
        # the full lattice reproduces every Shannon quantity
        assert max(abs(v) for v in pid.assumption_gap(res).values()) < TOL


def test_simplified_lattice_zeroes_text_image_atoms():
    res = decompose3(random_joint(3, np.random.default_rng(5)), simplify=True)
    assert len(TI_ATOMS) == 7
    assert all(res.atoms[a] == 0.0 for a in TI_ATOMS)


def test_random_three_source_identity_suites():
    rng = np.random.default_rng(6)
    lemma = corollary = 0.0
    for _ in range(100):
        res = decompose3(random_joint(3, rng), simplify=True)
        assert res.min_atom() > -TOL
        lemma = max(lemma, verify_lemma1(res).max_residual)
        corollary = max(corollary, verify_corollary1(res).max_residual)
    assert lemma < TOL and corollary < TOL


def test_alternative_entangled_assignment_is_testable():
    j = random_joint(3, np.random.default_rng(7))
    alt = {"XT": (atom("XT", "XI"),), "XI": (atom("XT", "XI"),), "XTI": (atom("XT", "XI"),)}
    res = decompose3(j, True, ei_assignment=alt)
    assert res.entangled["XT"] == res.atoms[atom("XT", "XI")]
    assert not verify_corollary1(res).ok or res.atoms[atom("T", "XI")] + res.atoms[atom("I", "XT")] < TOL


def test_three_source_errors():
    with pytest.raises(ContractError):
        decompose3(xor_joint())
    with pytest.raises(ContractError):
        decompose2(random_joint(3, np.random.default_rng(0)))
    with pytest.raises(ContractError):
        verify_corollary1(decompose3(random_joint(3, np.random.default_rng(0)), simplify=False))


# -- joint files -----------------------------------------------------------

XOR_FILE = """# xor of two fair bits
M1 M2 Y p
0 0 0 0.25
0 1 1 0.25
1 0 1 0.25
1 1 0 0.25
"""


def test_parse_joint_round_trip():
    j = parse_joint(XOR_FILE)
    assert j.names == ("M1", "M2")
    assert np.allclose(j.table, xor_joint().table)


@pytest.mark.parametrize("text,match", [
    ("0 0 0 0.5\n1 1 1\n", "line 2"),
    ("0 0 0 0.5\n1 1 x 0.5\n", "line 2"),
    ("0 0 0 0.5\n1 1 1 0.4\n", "sum"),
    ("0 0 0 -0.5\n", "line 1"),
    ("# nothing\n", "no probability rows"),
    ("0 9 0 1.0\n", "line 1"),
])
def test_parse_joint_errors(text, match):
    with pytest.raises(JointParseError, match=match):
        parse_joint(text)


def test_cli_pid_on_xor_file(tmp_path, capsys):
    path = tmp_path / "xor.txt"
    path.write_text(XOR_FILE)
    assert main(["pid", str(path), "--verify"]) == 0
    out = capsys.readouterr().out
    assert "synergy[M1M2]" in out and "quantity,bits" in out and "lemma 1: ok" in out
    block = out.split("quantity,bits\n")[1].split("\n\n")[0]
    rows = dict(csv.reader(io.StringIO(block)))
    assert rows["atom{M1,M2}"] == rows["synergy[M1M2]"]
    assert abs(float(rows["synergy[M1M2]"]) - 1) < TOL and abs(float(rows["redundancy"])) < TOL


def test_cli_pid_bad_file(tmp_path, capsys):
    path = tmp_path / "bad.txt"
    path.write_text("0 0 0 0.5\n1 1 1 0.1\n")
    assert main(["pid", str(path)]) == 2
    assert "sum" in capsys.readouterr().err
