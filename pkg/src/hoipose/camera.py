"""Pinhole camera model and silhouette/depth image containers.

The camera sits at the origin looking down +z (x right, y down).  Pixel
centers are at integer + 0.5; the continuous pixel coordinate of a 3D
point (x, y, z) is (f*x/z + cx, f*y/z + cy).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, InputValidationError


@dataclass(frozen=True)
class Camera:
    focal: float
    principal: tuple
    width: int
    height: int

    def __post_init__(self):
        if not self.focal > 0:
            raise InputValidationError("camera focal length must be > 0")
        cx, cy = self.principal
        if not (0 <= cx <= self.width and 0 <= cy <= self.height):
            raise InputValidationError("principal point outside image bounds")

    @staticmethod
    def reference():
        """512x512 with focal 700, principal at image center."""
        return Camera(700.0, (256.0, 256.0), 512, 512)

    @staticmethod
    def desk(resolution=128):
        """Desk-scale preset: focal rescaled proportionally from 700/512."""
        f = 700.0 * resolution / 512.0
        c = resolution / 2.0
        return Camera(f, (c, c), resolution, resolution)

    @staticmethod
    def preset(name):
        if name in ("paper512", "reference"):
            return Camera.reference()
        if name.startswith("desk"):
            res = int(name[4:]) if len(name) > 4 else 128
            return Camera.desk(res)
        raise InputValidationError(f"unknown camera preset: {name!r}")


def project(camera: Camera, p):
    """Project one camera-frame 3D point to continuous pixel coordinates."""
    p = np.asarray(p, dtype=np.float64)
    if p[2] <= 0:
        raise BehindCameraError(f"point with z <= 0 cannot be projected: z={p[2]}")
    cx, cy = camera.principal
    return np.array([camera.focal * p[0] / p[2] + cx,
                     camera.focal * p[1] / p[2] + cy])


def project_points(camera: Camera, pts):
    """Batch projection.  Returns (uv (N,2), z (N,)); caller culls z <= 0."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    z = pts[:, 2]
    cx, cy = camera.principal
    with np.errstate(divide="ignore", invalid="ignore"):
        u = camera.focal * pts[:, 0] / z + cx
        v = camera.focal * pts[:, 1] / z + cy
    return np.stack([u, v], axis=1), z


def backproject(camera: Camera, uv, depth):
    """Pixel coordinates + depth (z, meters) back to camera-frame points."""
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    depth = np.asarray(depth, dtype=np.float64).reshape(-1)
    cx, cy = camera.principal
    x = (uv[:, 0] - cx) / camera.focal * depth
    y = (uv[:, 1] - cy) / camera.focal * depth
    return np.stack([x, y, depth], axis=1)


class SilhouetteImage:
    """Soft occupancy in [0, 1], shape (H, W)."""

    def __init__(self, data):
        d = np.asarray(data, dtype=np.float64)
        if d.ndim != 2:
            raise InputValidationError("silhouette must be a 2D grid")
        if d.size and (d.min() < -1e-9 or d.max() > 1 + 1e-9):
            raise InputValidationError("silhouette values must lie in [0, 1]")
        self.data = np.clip(d, 0.0, 1.0)

    @property
    def shape(self):
        return self.data.shape


class DepthImage:
    """Depth in meters, shape (H, W); 0 marks empty pixels."""

    SENTINEL = 0.0

    def __init__(self, data):
        d = np.asarray(data, dtype=np.float64)
        if d.ndim != 2:
            raise InputValidationError("depth must be a 2D grid")
        if d.size and d.min() < 0:
            raise InputValidationError("depth values must be >= 0 (0 = empty)")
        self.data = d

    @property
    def shape(self):
        return self.data.shape

    @property
    def valid(self):
        return self.data > 0


def image_data(img):
    """Accept SilhouetteImage/DepthImage or a bare (H, W) array."""
    if isinstance(img, (SilhouetteImage, DepthImage)):
        return img.data
    return np.asarray(img, dtype=np.float64)
