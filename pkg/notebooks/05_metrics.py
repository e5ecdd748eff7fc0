"""
Scoring a crowd reconstruction
==============================

Predictions are matched to ground truth on 2D torso centres, then layout,
depth order and per-person pose are scored and punished by detection F1.
"""
import numpy as np

from crowdloc.metrics import evaluate, reports_csv
from crowdloc.synth import SceneSpec, generate_scene, ground_truth_dict

sc = generate_scene(SceneSpec(fov_deg=90.0, n_people=60, seed=2))
gt = ground_truth_dict(sc)
r = np.random.default_rng(0)
persons = []
for p in gt["persons"]:
    if p["excluded"] or r.random() < 0.1:  # miss one in ten
        continue
    shift = r.normal(0.0, 0.05, 3) + [0.0, 0.0, r.normal(0.0, 0.3)]
    persons.append({"id": "pred-" + p["id"], "torso": (np.array(p["torso"]) + shift).tolist(),
                    "joints_cam": {k: (np.array(v) + shift).tolist() for k, v in p["joints_cam"].items()}})
rep = evaluate({"camera": gt["camera"], "persons": persons}, gt)
print(f"precision {rep.precision:.3f} recall {rep.recall:.3f} f1 {rep.f1:.3f}")
for name, v in rep.metrics.items():
    print(f"{name:9s} match {v['match']:.4f}  norm {v['norm']:.4f}")
print(reports_csv([rep], ["scene2"]))
