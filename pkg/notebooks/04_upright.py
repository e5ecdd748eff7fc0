"""
Upright normalisation of one person
===================================

Each person is warped so that the ground normal is vertical, the body has a
fixed height and the torso sits at a fixed anchor.  A body expressed in that
frame comes back to the camera with one rotation, scale and translation.
"""
import numpy as np

from crowdloc.geometry import project
from crowdloc.skeleton import pose_free_pixel_height
from crowdloc.synth import SceneSpec, generate_scene, oracle_hvip, oracle_upright_regression
from crowdloc.upright import build_upright_frame, compose_hvip, heuristic_hvip, upright_to_camera

sc = generate_scene(SceneSpec(fov_deg=120.0, n_people=30, seed=0))
p = max((q for q in sc.persons if not q.truncated), key=lambda q: abs(q.p_t[0] - sc.K.cx))
skel = p.skeleton2d()
frame = build_upright_frame(sc.K, sc.G, skel)
up = skel.transformed(frame.H_upright)
print("person", p.id, "at pixel", p.p_t.round(1), "height", round(p.pixel_height, 1), "px")
print("upright height", round(pose_free_pixel_height(up), 3), "anchor", frame.anchor.round(6))

a, b = frame.to_upright(project(sc.K, np.stack([frame.P_t_rough, frame.P_t_rough - 0.5 * sc.G.N])))
print("warped normal tilt (rad)", abs(np.arctan2(b[0] - a[0], b[1] - a[1])))

d_true, d_heur = oracle_hvip(sc, p.id, frame), heuristic_hvip(up)
print("HVIP offset oracle", round(d_true, 4), "ankle heuristic", round(d_heur, 4))
p_v = compose_hvip(frame.anchor, d_true, frame)
X, O, resid = oracle_upright_regression(sc, p.id, frame)
place = upright_to_camera(X, O, frame, skel.torso_center(), p_v, sc.K, sc.G)
err = np.linalg.norm(place.joints_cam - p.joints_cam, axis=1)
print(f"joint error mean {1000 * err.mean():.1f} mm, max {1000 * err.max():.1f} mm; scale {place.S_toCam:.3f}")
