"""Meshes, rigid transforms, quaternion utilities and exact distance queries.

Quaternions are stored (w, x, y, z) throughout the package and in every
file format.  Meshes are triangle soups in meters; degenerate (zero-area)
triangles are dropped at construction with a warning count rather than an
error, since generated meshes are frequently dirty.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import InputValidationError, NonWatertightMeshError

_DEGENERATE_AREA = 1e-12

# Fixed ray directions for the parity inside-test (majority of 3 votes);
# seeded once so containment queries are reproducible.
_PARITY_DIRS = np.random.Generator(np.random.PCG64(910633)).normal(size=(3, 3))
_PARITY_DIRS /= np.linalg.norm(_PARITY_DIRS, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# quaternions (w, x, y, z)

def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise InputValidationError("cannot normalize a zero quaternion")
    return q / n


def quat_multiply(q1, q2):
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_conjugate(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q):
    w, x, y, z = quat_normalize(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m):
    """Rotation matrix (3x3) to unit quaternion, w >= 0."""
    m = np.asarray(m, dtype=np.float64)
    tr = np.trace(m)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s,
                      (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s,
                      (m[1, 0] - m[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(m[i, i] - m[j, j] - m[k, k] + 1.0, 0.0)) * 2
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (m[j, i] + m[i, j]) / s
        q[1 + k] = (m[k, i] + m[i, k]) / s
    if q[0] < 0:
        q = -q
    return quat_normalize(q)


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n < 1e-15:
        return np.array([1.0, 0.0, 0.0, 0.0])
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis / n])


def quat_from_rotvec(v):
    """Axis-angle 3-vector (axis * radians) to quaternion."""
    v = np.asarray(v, dtype=np.float64)
    angle = np.linalg.norm(v)
    if angle < 1e-15:
        # first-order expansion keeps gradients sane near zero
        return quat_normalize(np.concatenate([[1.0], 0.5 * v]))
    return quat_from_axis_angle(v, angle)


def quat_angle(q):
    """Rotation angle of a unit quaternion, in [0, pi]."""
    w = np.clip(abs(float(q[0])), -1.0, 1.0)
    return 2.0 * np.arccos(min(w, 1.0))


def quat_angle_between(q1, q2):
    return quat_angle(quat_multiply(q1, quat_conjugate(q2)))


def quat_rotate(q, pts):
    """Rotate points (..., 3) by the unit quaternion q."""
    return np.asarray(pts, dtype=np.float64) @ quat_to_matrix(q).T


def slerp(q0, q1, t):
    """Shortest-arc spherical interpolation between unit quaternions.

    Antipodal representations are resolved by negating q1 when the dot
    product is negative; nearly parallel inputs fall back to normalized
    lerp.
    """
    q0 = quat_normalize(q0)
    q1 = quat_normalize(q1)
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 1.0 - 1e-12:
        return quat_normalize(q0 + t * (q1 - q0))
    theta = np.arccos(min(dot, 1.0))
    s = np.sin(theta)
    return (np.sin((1.0 - t) * theta) / s) * q0 + (np.sin(t * theta) / s) * q1


# ---------------------------------------------------------------------------
# rigid transforms

@dataclass(frozen=True)
class Pose6DoF:
    """Rigid transform: unit quaternion (w,x,y,z) + translation, optional
    uniform scale.  Applies as x -> scale * R(rotation) @ x + translation."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        q = quat_normalize(np.asarray(self.rotation, dtype=np.float64))
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "scale", float(self.scale))
        if not self.scale > 0:
            raise InputValidationError(f"pose scale must be > 0, got {self.scale}")

    @staticmethod
    def identity():
        return Pose6DoF(np.array([1.0, 0, 0, 0]), np.zeros(3))

    def apply(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        return self.scale * (pts @ quat_to_matrix(self.rotation).T) + self.translation

    def inverse(self):
        qinv = quat_conjugate(self.rotation)
        sinv = 1.0 / self.scale
        tinv = -sinv * quat_rotate(qinv, self.translation)
        return Pose6DoF(qinv, tinv, sinv)

    def to_matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.scale * quat_to_matrix(self.rotation)
        m[:3, 3] = self.translation
        return m


def compose_pose(a: Pose6DoF, b: Pose6DoF) -> Pose6DoF:
    """Composite transform applying b first, then a; scales multiply."""
    return Pose6DoF(
        quat_multiply(a.rotation, b.rotation),
        a.apply(b.translation),
        a.scale * b.scale,
    )


# ---------------------------------------------------------------------------
# meshes

class TriangleMesh:
    """Indexed triangle mesh.  Vertices in meters.

    Degenerate (zero-area) triangles are dropped on construction;
    ``dropped_degenerate`` records how many.
    """

    def __init__(self, vertices, triangles, normals=None):
        v = np.ascontiguousarray(vertices, dtype=np.float64).reshape(-1, 3)
        t = np.ascontiguousarray(triangles, dtype=np.int32).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise InputValidationError("triangle index out of range")
        areas = _triangle_areas(v, t)
        keep = areas > _DEGENERATE_AREA
        self.dropped_degenerate = int(np.count_nonzero(~keep))
        if self.dropped_degenerate:
            warnings.warn(
                f"dropped {self.dropped_degenerate} degenerate triangle(s)",
                stacklevel=2,
            )
            t = t[keep]
        self.vertices = v
        self.triangles = t
        self.normals = None if normals is None else np.asarray(normals, dtype=np.float64)
        self._watertight = None
        self.vertices.setflags(write=False)
        self.triangles.setflags(write=False)

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_triangles(self):
        return self.triangles.shape[0]

    @property
    def is_watertight(self):
        """True when every undirected edge is shared by exactly two faces."""
        if self._watertight is None:
            if self.num_triangles == 0:
                self._watertight = False
            else:
                t = self.triangles
                edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
                edges = np.sort(edges, axis=1)
                _, counts = np.unique(edges, axis=0, return_counts=True)
                self._watertight = bool(np.all(counts == 2))
        return self._watertight

    def face_normals(self):
        v, t = self.vertices, self.triangles
        n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        lens = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.maximum(lens, 1e-30)

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def bbox_diagonal(self):
        lo, hi = self.bounds()
        return float(np.linalg.norm(hi - lo))

    def transformed(self, pose: Pose6DoF) -> "TriangleMesh":
        return TriangleMesh(pose.apply(self.vertices), self.triangles.copy())


def _triangle_areas(v, t):
    if t.shape[0] == 0:
        return np.zeros(0)
    n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    return 0.5 * np.linalg.norm(n, axis=1)


@dataclass(frozen=True)
class VertexSelection:
    """Subset of vertex indices into a named mesh (e.g. the palm patch)."""

    indices: np.ndarray
    mesh_name: str = ""

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).ravel()
        if idx.size != np.unique(idx).size:
            raise InputValidationError("vertex selection indices must be unique")
        if idx.size and idx.min() < 0:
            raise InputValidationError("vertex selection indices must be >= 0")
        object.__setattr__(self, "indices", idx)

    def validate_against(self, mesh: TriangleMesh):
        if self.indices.size and self.indices.max() >= mesh.num_vertices:
            raise InputValidationError(
                f"selection index {self.indices.max()} out of range for mesh "
                f"with {mesh.num_vertices} vertices"
            )


# ---------------------------------------------------------------------------
# distance queries

def closest_points_on_mesh(points, mesh: TriangleMesh):
    """(distance, closest_point, face_index, barycentric) per query point."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return _kernels.mesh_closest_points(pts, mesh.vertices, mesh.triangles)


def points_inside_mesh(points, mesh: TriangleMesh):
    """Ray-parity containment with a majority vote over 3 fixed directions."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return _kernels.mesh_contains(pts, mesh.vertices, mesh.triangles, _PARITY_DIRS)


def signed_point_mesh_distances(points, mesh: TriangleMesh, unsigned=False):
    """Distances from points to the mesh surface, negative inside.

    The sign is only meaningful for watertight meshes; pass unsigned=True
    to skip the containment test (and the watertightness requirement).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    dist, _, _, _ = _kernels.mesh_closest_points(pts, mesh.vertices, mesh.triangles)
    if unsigned:
        return dist
    if not mesh.is_watertight:
        raise NonWatertightMeshError(
            "mesh is not watertight: inside/outside is undefined; "
            "pass unsigned=True for unsigned distances"
        )
    inside = points_inside_mesh(pts, mesh)
    return np.where(inside, -dist, dist)


def signed_point_mesh_distance(point, mesh: TriangleMesh, unsigned=False):
    return float(signed_point_mesh_distances(np.asarray(point)[None, :], mesh, unsigned)[0])


# ---------------------------------------------------------------------------
# octahedral rotation set

def octahedral_rotations():
    """The 24 rotational symmetries of the cube, as quaternions (24, 4).

    Generated from signed permutation matrices with determinant +1, in a
    fixed canonical order.
    """
    mats = []
    for perm in ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)):
        for sx in (1, -1):
            for sy in (1, -1):
                for sz in (1, -1):
                    m = np.zeros((3, 3))
                    m[0, perm[0]] = sx
                    m[1, perm[1]] = sy
                    m[2, perm[2]] = sz
                    if np.linalg.det(m) > 0.5:
                        mats.append(m)
    assert len(mats) == 24
    quats = np.array([matrix_to_quat(m) for m in mats])
    return quats
