"""Correct, incorrect and extrinsic symmetry, and what an invariant model can reach.

Run: python demos/02_symmetry_bounds.py
"""

import numpy as np

from latentsym import bound_report, classify_action, consensus_analysis, tight_bound
from latentsym.tasks import invert_label_instance, make_ring_dataset, named_ring_points, ring_transform

# Points on the unit circle with the two-colour labelling
ring = make_ring_dataset(64, seed=0)
print("named points:", {k: np.round(v, 3).tolist() for k, v in named_ring_points().items()})

for spec in ("reflect", "rot_pi", "scale:2"):
    verdict = classify_action(list(ring.points), list(ring.labels), [(spec, ring_transform(spec))], ring.membership())
    tallies = (verdict.n_correct, verdict.n_incorrect, verdict.n_extrinsic)
    print(f"{spec:8s} -> {verdict.overall:9s} tallies (correct, incorrect, extrinsic) = {tallies}")
    witnesses = verdict.witnesses.get(verdict.overall, [])
    if witnesses:
        print("          first witness:", witnesses[0])

# The invert-label task as a finite C8 instance
inst = invert_label_instance()
report = consensus_analysis(inst)
print("\ninvert-label orbit consensus:", {str(p): str(c) for p, c in report.c_p.items()})
print("best accuracy of any C8-invariant classifier:", tight_bound(inst).exact, "=", tight_bound(inst).value)

doc = bound_report(inst)
print("loose bound:", doc["loose_bound"], "| orbits:", len(doc["orbits"]))
