"""Partial information decomposition on small discrete systems.

Three textbook two-source systems, then a three-source system where the
text and image sources duplicate each other, to show what the reduced
lattice throws away.

Run: python demos/pid_lab.py
"""
import itertools

import numpy as np

from prismnet.pid import (DiscreteJoint, assumption_gap, copy_joint, decompose2, decompose3,
                          joint_from_function, unique_joint, verify_corollary1, verify_lemma1,
                          xor_joint)


def show(name, res):
    n1, n2 = res.names
    print(f"{name:8s} R={res.redundancy:.3f}  U1={res.unique[n1]:.3f}  U2={res.unique[n2]:.3f}"
          f"  S={res.synergy[n1 + n2]:.3f}  lemma residual={verify_lemma1(res).max_residual:.1e}")


for name, joint in [("xor", xor_joint()), ("copy", copy_joint()), ("unique", unique_joint())]:
    show(name, decompose2(joint))

print("\nY = X xor T with an unrelated image source")
res = decompose3(joint_from_function((2, 2, 2), lambda x, t, i: x ^ t), simplify=True)
print("  synergy of series and text:", round(res.synergy["XT"], 6))
print("  corollary identities hold:", verify_corollary1(res).ok)

print("\nY = T = I with X independent: the reduced lattice cannot see this")
table = np.zeros((2, 2, 2, 2))
for x, t in itertools.product(range(2), range(2)):
    table[x, t, t, t] = 0.25
gap = assumption_gap(decompose3(DiscreteJoint(table), simplify=True))
for key, v in gap.items():
    if abs(v) > 1e-12:
        print(f"  lost from Info(Y;{key}): {v:.3f} bits")
