"""
Pinhole camera, ground plane and the torso height equation
==========================================================

A point on a tilted ground is projected, cast back onto the plane, and a
torso is recovered from its pixel and the pixel of its foot of perpendicular.
"""
import numpy as np

from crowdloc.geometry import (
    CameraIntrinsics, GroundPlane, normal_from_angles, progressive_position_transform, project,
    reverse_project_to_ground,
)

K = CameraIntrinsics.from_fov(90.0, 9600, 5400)
G = GroundPlane.from_normal(normal_from_angles(np.radians(10.0), np.radians(2.0)), 8.0)
print("focal", K.f, "normal", np.round(G.N, 4), "offset", G.D)

# a ground point 20 m ahead, projected and cast back
P = reverse_project_to_ground(K, G, [5200.0, 4000.0])
print("ground point", P.round(3), "pixel", project(K, P).round(3))

# a torso 1.15 m above that point
P_t = P + 1.15 * G.N
p_t, p_v = project(K, P_t), project(K, P)
got, d = progressive_position_transform(K, G, p_t, p_v)
print("recovered height", round(d, 12), "position error", np.linalg.norm(got - P_t))

# the horizontal pixel of the torso does not enter the height
_, d2 = progressive_position_transform(K, G, p_t + [300.0, 0.0], p_v)
print("height after a 300 px horizontal shift", round(d2, 6))
