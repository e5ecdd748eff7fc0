"""Shared scene cache and small independent oracles for the tests."""
import functools

import numpy as np

from crowdloc.geometry import CameraIntrinsics, GroundPlane, normal_from_angles
from crowdloc.synth import SceneSpec, generate_scene

ACCEPTANCE_LINES = []
FOV_SWEEP = (30.0, 60.0, 90.0, 120.0)


def report(n, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {title} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


@functools.lru_cache(maxsize=None)
def scene(fov=90.0, seed=0, n=100, **kw):
    return generate_scene(SceneSpec(fov_deg=fov, seed=seed, n_people=n, **kw))


def plane_basis(N):
    """Two unit vectors spanning the plane orthogonal to N."""
    a = np.array([1.0, 0.0, 0.0]) if abs(N[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    e1 = np.cross(N, a)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(N, e1)


def random_setup(r):
    fov = r.uniform(25.0, 140.0)
    K = CameraIntrinsics.from_fov(fov, int(r.integers(640, 9600)), int(r.integers(480, 5400)))
    G = GroundPlane.from_normal(normal_from_angles(r.uniform(-0.2, 1.0), r.uniform(-0.3, 0.3)),
                                r.uniform(1.0, 30.0))
    return K, G


def random_ground_point(r, G, zmin=0.5, zmax=200.0):
    """Point on the plane built from an in-plane basis, in front of the camera."""
    e1, e2 = plane_basis(G.N)
    while True:
        P = -G.D * G.N + r.uniform(-200, 200) * e1 + r.uniform(-200, 200) * e2
        if zmin < P[2] < zmax:
            return P
