"""Small geometric helpers shared across the package.

Conventions used throughout:

* ``rot90`` rotates counterclockwise, so for an incoming direction ``theta``
  the transverse axis is ``rot90(theta)`` and impact parameters are measured
  along it.
* The planar angular momentum returned by :func:`angular_momentum` is
  *positive for clockwise motion*.  With this sign a launch with transverse
  offset ``b`` along ``rot90(theta)`` has angular momentum ``b * sqrt(2E)``,
  which is the convention the deflection quadrature expects.
"""

from __future__ import annotations

import math

import numpy as np


def unit(v: np.ndarray) -> np.ndarray:
    """Return v normalized to unit length."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot normalize the zero vector")
    return v / n


def rot90(v: np.ndarray) -> np.ndarray:
    """Rotate a 2-vector counterclockwise by 90 degrees."""
    return np.array([-v[1], v[0]], dtype=float)


def rotation_2d(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def angle_of(v: np.ndarray) -> float:
    """Standard counterclockwise angle of a 2-vector."""
    return math.atan2(v[1], v[0])


def direction_2d(angle: float) -> np.ndarray:
    return np.array([math.cos(angle), math.sin(angle)])


def orthonormal_frame(theta: np.ndarray) -> tuple[np.ndarray, ...]:
    """Orthonormal basis of the hyperplane perpendicular to ``theta``.

    Returns one vector (``rot90(theta)``) in d=2 and two vectors
    ``(e1, e2)`` with ``e1 x e2 = theta`` in d=3.
    """
    theta = unit(theta)
    d = theta.shape[0]
    if d == 2:
        return (rot90(theta),)
    if d == 3:
        helper = np.array([0.0, 0.0, 1.0])
        if abs(np.dot(helper, theta)) > 0.9:
            helper = np.array([1.0, 0.0, 0.0])
        e1 = unit(np.cross(helper, theta))
        e2 = np.cross(theta, e1)
        return (e1, e2)
    raise ValueError(f"unsupported dimension {d}")


def rotation_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rotation matrix taking unit vector a to unit vector b (d=2 or 3)."""
    a = unit(a)
    b = unit(b)
    d = a.shape[0]
    if d == 2:
        return rotation_2d(angle_of(b) - angle_of(a))
    v = np.cross(a, b)
    c = float(np.dot(a, b))
    s = float(np.linalg.norm(v))
    if s < 1e-15:
        if c > 0.0:
            return np.eye(3)
        # antipodal: rotate by pi about any perpendicular axis
        axis = orthonormal_frame(a)[0]
        return 2.0 * np.outer(axis, axis) - np.eye(3)
    vx = np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])
    return np.eye(3) + vx + vx @ vx * ((1.0 - c) / (s * s))


def angular_momentum(q: np.ndarray, p: np.ndarray, center=None) -> float:
    """Angular momentum about ``center``.

    d=2: signed scalar, positive for clockwise motion (see module docstring).
    d>=3: norm of the bivector q ^ p.
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if center is not None:
        q = q - np.asarray(center, dtype=float)
    if q.shape[-1] == 2:
        return float(q[..., 1] * p[..., 0] - q[..., 0] * p[..., 1])
    q2 = float(np.dot(q, q))
    p2 = float(np.dot(p, p))
    qp = float(np.dot(q, p))
    return math.sqrt(max(q2 * p2 - qp * qp, 0.0))


def fibonacci_sphere(n: int) -> np.ndarray:
    """n roughly equidistributed unit vectors on S^2."""
    i = np.arange(n, dtype=float) + 0.5
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def circle_directions(n: int) -> np.ndarray:
    """n equally spaced unit vectors on S^1."""
    ang = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def sphere_directions(dim: int, n: int) -> np.ndarray:
    if dim == 2:
        return circle_directions(n)
    if dim == 3:
        return fibonacci_sphere(n)
    raise ValueError(f"unsupported dimension {dim}")


def signed_solid_angle(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
    """Signed solid angle of the spherical triangle (a, b, c).

    Positive when (a, b, c) is counterclockwise seen from outside the sphere
    (van Oosterom-Strackee formula).
    """
    num = float(np.dot(a, np.cross(b, c)))
    den = 1.0 + float(np.dot(a, b)) + float(np.dot(b, c)) + float(np.dot(c, a))
    return 2.0 * math.atan2(num, den)


_ICOSA_T = (1.0 + math.sqrt(5.0)) / 2.0

_ICOSA_VERTS = np.array(
    [
        (-1, _ICOSA_T, 0), (1, _ICOSA_T, 0), (-1, -_ICOSA_T, 0), (1, -_ICOSA_T, 0),
        (0, -1, _ICOSA_T), (0, 1, _ICOSA_T), (0, -1, -_ICOSA_T), (0, 1, -_ICOSA_T),
        (_ICOSA_T, 0, -1), (_ICOSA_T, 0, 1), (-_ICOSA_T, 0, -1), (-_ICOSA_T, 0, 1),
    ],
    dtype=float,
)

_ICOSA_FACES = [
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
]


def icosphere(level: int) -> tuple[np.ndarray, np.ndarray]:
    """Subdivided icosahedron on the unit sphere.

    Returns (vertices, faces); every face is oriented counterclockwise seen
    from outside.  Level 0 is the icosahedron (12 vertices, 20 faces); each
    level quadruples the face count.
    """
    verts = [unit(v) for v in _ICOSA_VERTS]
    faces = list(_ICOSA_FACES)
    for _ in range(level):
        verts, faces = _subdivide(verts, faces)
    v = np.array(verts)
    f = np.array(faces, dtype=int)
    # enforce outward orientation
    for i, (a, b, c) in enumerate(f):
        if np.dot(v[a], np.cross(v[b], v[c])) < 0.0:
            f[i] = (a, c, b)
    return v, f


def _subdivide(verts, faces):
    midpoint_cache: dict[tuple[int, int], int] = {}
    verts = list(verts)

    def midpoint(i, j):
        key = (min(i, j), max(i, j))
        if key not in midpoint_cache:
            verts.append(unit(verts[i] + verts[j]))
            midpoint_cache[key] = len(verts) - 1
        return midpoint_cache[key]

    new_faces = []
    for a, b, c in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
    return verts, new_faces
