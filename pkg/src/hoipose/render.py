"""Soft differentiable rasterization and pose-gradient plumbing.

The soft silhouette is a probabilistic union of per-face occupancies
sigmoid(d / sigma) with d the signed pixel-to-projected-boundary distance
(positive inside).  Two depth aggregates are produced:

* a presentation depth (temperature softmin over covering faces, sentinel
  0 where empty) that matches a hard z-buffer away from edges, and
* a composited depth (front-to-back alpha compositing against a fixed
  background depth) that is continuous in the pose and is the one the
  loss gradients flow through.

Pose gradients use an axis-angle increment composed onto the current
quaternion, so the optimizer never normalizes quaternions explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .camera import Camera, DepthImage, SilhouetteImage, project_points
from .errors import InputValidationError
from .geometry import Pose6DoF, TriangleMesh, quat_from_rotvec, quat_multiply, quat_to_matrix


@dataclass(frozen=True)
class RenderConfig:
    sigma_px: float = 1.0          # edge softness, pixels
    gamma_m: float = 1e-4          # softmin depth temperature, meters
    z_background: float = 10.0     # compositing background depth, meters
    occupancy_floor: float = 1e-12  # band cutoff: faces kept while o >= floor
    near_clip: float = 0.05        # faces with any vertex closer are culled

    @property
    def band_px(self):
        return self.sigma_px * float(np.log(1.0 / self.occupancy_floor - 1.0))


DEFAULT_RENDER = RenderConfig()


def _gather_scene(meshes):
    """Concatenate (mesh, pose) pairs into camera-frame vertex/face arrays."""
    verts = []
    faces = []
    offset = 0
    mesh_of_face = []
    face_of_face = []
    for mi, (mesh, pose) in enumerate(meshes):
        v = mesh.vertices if pose is None else pose.apply(mesh.vertices)
        verts.append(v)
        faces.append(mesh.triangles.astype(np.int64) + offset)
        mesh_of_face.append(np.full(mesh.num_triangles, mi, dtype=np.int32))
        face_of_face.append(np.arange(mesh.num_triangles, dtype=np.int32))
        offset += mesh.num_vertices
    if not verts:
        raise InputValidationError("at least one mesh is required")
    return (np.concatenate(verts), np.concatenate(faces).astype(np.int32),
            np.concatenate(mesh_of_face), np.concatenate(face_of_face))


def _seam_flags(uv, faces):
    """Flag face edges interior to the projected surface.

    An edge shared by exactly two faces of equal (nonzero) projected
    winding is a seam: the union of the two faces covers both of its
    sides, so it is not a silhouette boundary and must not shrink the
    inside-distance of either face.
    """
    m = faces.shape[0]
    seam = np.zeros((m, 3), dtype=np.uint8)
    if m == 0:
        return seam
    a = uv[faces[:, 0]]
    b = uv[faces[:, 1]]
    c = uv[faces[:, 2]]
    area = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - \
           (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    sign = np.where(np.abs(area) < 1e-9, 0, np.sign(area)).astype(np.int8)
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    rows = np.arange(3 * m)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    es = edges[order]
    same = np.all(es[1:] == es[:-1], axis=1)
    # pairs of consecutive rows sharing an undirected edge
    starts = np.nonzero(same)[0]
    for s in starts:
        r1, r2 = order[s], order[s + 1]
        f1, e1 = r1 % m, r1 // m
        f2, e2 = r2 % m, r2 // m
        if sign[f1] != 0 and sign[f1] == sign[f2]:
            seam[f1, e1] = 1
            seam[f2, e2] = 1
    return seam


def _prepare(verts_cam, faces, camera, cfg):
    """Project, near-cull and bin faces; returns raster-ready arrays."""
    uv, z = project_points(camera, verts_cam)
    ok = np.all(z[faces] > cfg.near_clip, axis=1)
    kept = faces[ok]
    seam = _seam_flags(uv, kept)
    ptr, fidx = _kernels.build_candidates(uv, z, kept, camera.width,
                                          camera.height, cfg.band_px)
    return uv, z, kept, seam, ok, ptr, fidx


def render_soft(meshes, camera: Camera, sigma=None, config: RenderConfig = None):
    """Render soft silhouette + presentation depth for (mesh, pose) pairs.

    `sigma` overrides the config's edge softness (pixels).  Empty
    projections yield an all-zero silhouette.
    """
    cfg = config or DEFAULT_RENDER
    if sigma is not None:
        if not sigma > 0:
            raise InputValidationError("softness sigma must be > 0")
        cfg = RenderConfig(sigma, cfg.gamma_m, cfg.z_background,
                           cfg.occupancy_floor, cfg.near_clip)
    verts_cam, faces, _, _ = _gather_scene(meshes)
    uv, z, kept, seam, _, ptr, fidx = _prepare(verts_cam, faces, camera, cfg)
    sil, _, dmin, valid, _, _ = _kernels.raster_forward(
        uv, z, kept, seam, ptr, fidx, camera.width, camera.height,
        cfg.sigma_px, cfg.gamma_m, cfg.z_background)
    depth = np.where(valid, dmin, DepthImage.SENTINEL)
    return SilhouetteImage(np.clip(sil, 0.0, 1.0)), DepthImage(depth)


def render_geometry(meshes, camera: Camera, config: RenderConfig = None):
    """Hard rasterization: per-pixel nearest covering face.

    Returns (mesh_id, face_id, depth, bary) grids; mesh_id/face_id are -1
    on empty pixels.  face_id indexes the source mesh's triangle list.
    """
    cfg = config or DEFAULT_RENDER
    verts_cam, faces, mesh_of, face_of = _gather_scene(meshes)
    uv, z, kept, seam, ok, ptr, fidx = _prepare(verts_cam, faces, camera, cfg)
    gid, depth, bary = _kernels.raster_nearest(uv, z, kept, ptr, fidx,
                                               camera.width, camera.height)
    kept_rows = np.nonzero(ok)[0]
    mesh_id = np.full_like(gid, -1)
    face_id = np.full_like(gid, -1)
    hit = gid >= 0
    rows = kept_rows[gid[hit]]
    mesh_id[hit] = mesh_of[rows]
    face_id[hit] = face_of[rows]
    return mesh_id, face_id, depth, bary


# ---------------------------------------------------------------------------
# differentiable object rendering against a static (pose-independent) layer

class StaticLayer:
    """Per-pixel occupancy/depth summary of pose-independent geometry.

    The slot depth is the coverage-weighted (premultiplied) mean of the
    static composite, chosen so that compositing the single slot over the
    background reproduces the static-only composite exactly.
    """

    def __init__(self, meshes, camera, cfg):
        npix = camera.width * camera.height
        if meshes:
            verts_cam, faces, _, _ = _gather_scene(meshes)
            uv, z, kept, seam, _, ptr, fidx = _prepare(verts_cam, faces, camera, cfg)
            sil, dc, dmin, valid, _, _ = _kernels.raster_forward(
                uv, z, kept, seam, ptr, fidx, camera.width, camera.height,
                cfg.sigma_px, cfg.gamma_m, cfg.z_background)
            occ = sil.ravel()
            comp = dc.ravel()
            slot = np.full(npix, cfg.z_background)
            covered = occ > 1e-300
            slot[covered] = (comp[covered]
                             - (1.0 - occ[covered]) * cfg.z_background) / occ[covered]
            self.occupancy = occ.copy()
            self.depth = slot
            self.dmin = np.where(valid, dmin, 0.0).ravel().copy()
        else:
            self.occupancy = np.zeros(npix)
            self.depth = np.full(npix, cfg.z_background)
            self.dmin = np.zeros(npix)

    @property
    def mean_depth(self):
        """Mean presentation depth over the layer's own covered pixels."""
        v = self.dmin > 0
        if not np.any(v):
            return None
        return float(self.dmin[v].mean())


class ObjectRender:
    """One differentiable forward render of the posed object template.

    Produces scene (object + static layer) and object-only silhouettes and
    composited depths, and can push image-space gradients back to the six
    (or seven, with scale) pose parameters.
    """

    def __init__(self, template: TriangleMesh, pose: Pose6DoF, camera: Camera,
                 cfg: RenderConfig, static: StaticLayer = None):
        self.template = template
        self.pose = pose
        self.camera = camera
        self.cfg = cfg
        self.static = static

        # camera-frame vertices; p_rot is the rotated+scaled point before
        # translation (the lever arm for rotation/scale gradients)
        self.p_rot = pose.scale * (template.vertices @ quat_to_matrix(pose.rotation).T)
        self.verts_cam = self.p_rot + pose.translation
        self.uv, self.z = project_points(camera, self.verts_cam)
        faces = template.triangles.astype(np.int32)
        okz = np.all(self.z[faces] > cfg.near_clip, axis=1)
        self.faces = faces[okz]
        self.seam = _seam_flags(self.uv, self.faces)
        self.ptr, self.fidx = _kernels.build_candidates(
            self.uv, self.z, self.faces, camera.width, camera.height, cfg.band_px)

        w, h = camera.width, camera.height
        self.sil_obj, self.depth_obj, _, _, self._o, self._zt = _kernels.raster_forward(
            self.uv, self.z, self.faces, self.seam, self.ptr, self.fidx, w, h,
            cfg.sigma_px, cfg.gamma_m, cfg.z_background)
        if static is not None:
            self.sil_scene, self.depth_scene, _, _, _, _ = _kernels.raster_forward(
                self.uv, self.z, self.faces, self.seam, self.ptr, self.fidx, w, h,
                cfg.sigma_px, cfg.gamma_m, cfg.z_background,
                static.occupancy, static.depth, static.dmin)
        else:
            self.sil_scene = self.sil_obj
            self.depth_scene = self.depth_obj

    def backward_images(self, g_sil_scene, g_depth_scene, g_sil_obj, g_depth_obj):
        """Image-space grads -> grads on camera-frame object vertices (N,3)."""
        cam, cfg = self.camera, self.cfg
        zeros = np.zeros((cam.height, cam.width))
        gv2 = np.zeros((self.uv.shape[0], 2))
        gz = np.zeros(self.uv.shape[0])
        if self.static is not None:
            if g_sil_scene is not None or g_depth_scene is not None:
                a, b = _kernels.raster_backward(
                    self.uv, self.z, self.faces, self.seam, self.ptr, self.fidx,
                    self._o, self._zt,
                    zeros if g_sil_scene is None else g_sil_scene,
                    zeros if g_depth_scene is None else g_depth_scene,
                    cam.width, cam.height, cfg.sigma_px, cfg.z_background,
                    self.static.occupancy, self.static.depth)
                gv2 += a
                gz += b
            g_sil_o = g_sil_obj
            g_depth_o = g_depth_obj
        else:
            # scene == object render: fold both gradients into one pass
            g_sil_o = _sum_opt(g_sil_scene, g_sil_obj)
            g_depth_o = _sum_opt(g_depth_scene, g_depth_obj)
        if g_sil_o is not None or g_depth_o is not None:
            a, b = _kernels.raster_backward(
                self.uv, self.z, self.faces, self.seam, self.ptr, self.fidx,
                self._o, self._zt,
                zeros if g_sil_o is None else g_sil_o,
                zeros if g_depth_o is None else g_depth_o,
                cam.width, cam.height, cfg.sigma_px, cfg.z_background)
            gv2 += a
            gz += b
        return self._to_vertex_grads(gv2, gz)

    def _to_vertex_grads(self, gv2, gz):
        f = self.camera.focal
        x, y, z = self.verts_cam[:, 0], self.verts_cam[:, 1], self.verts_cam[:, 2]
        gv3 = np.zeros_like(self.verts_cam)
        gv3[:, 0] = gv2[:, 0] * f / z
        gv3[:, 1] = gv2[:, 1] * f / z
        gv3[:, 2] = (-gv2[:, 0] * f * x / (z * z)
                     - gv2[:, 1] * f * y / (z * z) + gz)
        return gv3

    def pose_grad(self, gv3, optimize_scale=False):
        """Vertex grads -> gradient w.r.t. [rotvec(3), translation(3)(, log s)]."""
        grot = np.sum(np.cross(self.p_rot, gv3), axis=0)
        gtrans = np.sum(gv3, axis=0)
        if optimize_scale:
            gs = float(np.sum(gv3 * self.p_rot))
            return np.concatenate([grot, gtrans, [gs]])
        return np.concatenate([grot, gtrans])


def _sum_opt(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def apply_pose_increment(pose: Pose6DoF, delta) -> Pose6DoF:
    """Compose an increment [rotvec(3), dt(3)(, dlog_scale)] onto a pose.

    The rotation increment is applied in the camera frame (about the
    object origin), matching ObjectRender.pose_grad.
    """
    delta = np.asarray(delta, dtype=np.float64)
    q = quat_multiply(quat_from_rotvec(delta[:3]), pose.rotation)
    t = pose.translation + delta[3:6]
    s = pose.scale * (float(np.exp(delta[6])) if delta.shape[0] > 6 else 1.0)
    return Pose6DoF(q, t, s)
