"""Refinement loss terms: silhouette, scale-shift-invariant relative depth,
metric human-depth anchor, hand contact, penetration, and their staged
weighted total.

All pixel reductions are means so the weight table stays meaningful
across resolutions.  Every loss is >= 0 and vanishes at its own
perfect-alignment configuration.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .camera import Camera, image_data
from .errors import InputValidationError
from .geometry import TriangleMesh, VertexSelection, closest_points_on_mesh, \
    points_inside_mesh
from .render import ObjectRender, RenderConfig, StaticLayer, DEFAULT_RENDER

_SSI_EPS = 1e-8
_CONTACT_SMOOTH_M = 0.01


@dataclass(frozen=True)
class LossWeights:
    """Loss weights; defaults follow the reference configuration."""

    w_sil: float = 100.0
    w_depth_rel: float = 0.5
    w_depth_abs: float = 0.1
    w_contact: float = 1.0
    w_penetration: float = 100.0
    theta_contact: float = 0.1      # meters; contact proximity gate
    lambda_object: float = 1.0      # object-mask confidence in [0, 1]

    def __post_init__(self):
        for name in ("w_sil", "w_depth_rel", "w_depth_abs", "w_contact",
                     "w_penetration"):
            if getattr(self, name) < 0:
                raise InputValidationError(f"{name} must be >= 0")
        if not self.theta_contact > 0:
            raise InputValidationError("theta_contact must be > 0")


@dataclass(frozen=True)
class ContactSpec:
    """Per-hand binary contact flags + palm vertex selections."""

    w_left_hand: int = 0
    w_right_hand: int = 0
    left_palm: VertexSelection = field(default_factory=lambda: VertexSelection([]))
    right_palm: VertexSelection = field(default_factory=lambda: VertexSelection([]))

    def __post_init__(self):
        if self.w_left_hand not in (0, 1) or self.w_right_hand not in (0, 1):
            raise InputValidationError("hand contact flags must be 0 or 1")


# ---------------------------------------------------------------------------
# individual loss terms

def silhouette_loss(sil, sil_obs, sil_obj, sil_obj_obs, lambda_object):
    """mean |S - S_obs| + lambda_object * mean |S_o - S_o_obs|."""
    s = image_data(sil)
    sh = image_data(sil_obs)
    so = image_data(sil_obj)
    soh = image_data(sil_obj_obs)
    if s.shape != sh.shape or so.shape != soh.shape or s.shape != so.shape:
        raise InputValidationError("silhouette images must share dimensions")
    return float(np.mean(np.abs(s - sh)) + lambda_object * np.mean(np.abs(so - soh)))


def normalize_depth(depth, region):
    """Scale-shift normalization: (D - median) / mean|D - median| over the
    region.  Constant regions normalize to zero (guarded denominator).

    Returns a full grid with zeros outside the region.
    """
    d = image_data(depth)
    region = np.asarray(region, dtype=bool)
    if d.shape != region.shape:
        raise InputValidationError("depth and region mask must share dimensions")
    if not np.any(region):
        raise InputValidationError("empty region in depth normalization")
    vals = d[region]
    med = np.median(vals)
    dev = vals - med
    denom = max(float(np.mean(np.abs(dev))), _SSI_EPS)
    out = np.zeros_like(d)
    out[region] = dev / denom
    return out


def relative_depth_loss(depth, depth_obs, depth_obj, depth_obj_obs,
                        region_scene, region_obj, lambda_object):
    """Scale-shift-invariant L1 over the scene region plus the weighted
    object region; regions come from the observed masks."""
    t1 = _ssi_value(image_data(depth), image_data(depth_obs), region_scene)
    t2 = _ssi_value(image_data(depth_obj), image_data(depth_obj_obs), region_obj)
    return float(t1 + lambda_object * t2)


def _ssi_value(d, d_obs, region):
    e = normalize_depth(d, region)
    e_obs = normalize_depth(d_obs, region)
    return np.mean(np.abs(e[region] - e_obs[region]))


def human_depth_anchor_loss(depth_obj, human_depth):
    """|mean(object depth) - mean human depth|; empty object region errors."""
    d = image_data(depth_obj)
    valid = d > 0
    if not np.any(valid):
        raise InputValidationError("empty object region in depth anchor loss")
    return float(abs(np.mean(d[valid]) - human_depth))


def contact_loss(object_mesh_posed: TriangleMesh, human: TriangleMesh,
                 spec: ContactSpec, theta, smooth=False):
    """Sum over flagged palms of gated vertex-to-object distances.

    The gate is a hard Heaviside step for reporting; `smooth=True`
    substitutes sigmoid((theta - d) / 0.01) for gradient evaluation.
    """
    total = 0.0
    for flag, sel in ((spec.w_left_hand, spec.left_palm),
                      (spec.w_right_hand, spec.right_palm)):
        if not flag or sel.indices.size == 0:
            continue
        sel.validate_against(human)
        pts = human.vertices[sel.indices]
        dist, _, _, _ = closest_points_on_mesh(pts, object_mesh_posed)
        if smooth:
            gate = _sigmoid_scalar((theta - dist) / _CONTACT_SMOOTH_M)
        else:
            gate = (dist <= theta).astype(np.float64)
        total += float(np.sum(gate * dist))
    return total


def penetration_loss(object_mesh_posed: TriangleMesh, human: TriangleMesh):
    """Sum of penetration depths of object vertices inside the human mesh.

    Requires a watertight human mesh for the inside test; otherwise the
    term is disabled with a warning and contributes 0.
    """
    if not human.is_watertight:
        warnings.warn("human mesh is not watertight: penetration loss disabled",
                      stacklevel=2)
        return 0.0
    pts = object_mesh_posed.vertices
    dist, _, _, _ = closest_points_on_mesh(pts, human)
    inside = points_inside_mesh(pts, human)
    return float(np.sum(dist[inside]))


def _sigmoid_scalar(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


STAGE_TERMS = {
    1: ("sil",),
    2: ("sil", "depth_rel", "depth_abs"),
    3: ("sil", "depth_rel", "depth_abs", "contact", "penetration"),
}


@dataclass
class LossInputs:
    """Bag of rendered/observed quantities consumed by total_loss."""

    sil: np.ndarray = None
    sil_obs: np.ndarray = None
    sil_obj: np.ndarray = None
    sil_obj_obs: np.ndarray = None
    depth: np.ndarray = None
    depth_obs: np.ndarray = None
    depth_obj: np.ndarray = None
    depth_obj_obs: np.ndarray = None
    region_scene: np.ndarray = None
    region_obj: np.ndarray = None
    human_depth: float = None
    object_mesh_posed: TriangleMesh = None
    human_mesh: TriangleMesh = None
    contact: ContactSpec = None


def total_loss(inputs: LossInputs, weights: LossWeights, stage: int):
    """Weighted stage total + per-term breakdown (unweighted values)."""
    if stage not in STAGE_TERMS:
        raise InputValidationError(f"stage must be 1, 2 or 3, got {stage}")
    terms = {}
    active = STAGE_TERMS[stage]

    def need(*names):
        for n in names:
            if getattr(inputs, n) is None:
                raise InputValidationError(f"stage {stage} requires input {n!r}")

    need("sil", "sil_obs", "sil_obj", "sil_obj_obs")
    terms["sil"] = silhouette_loss(inputs.sil, inputs.sil_obs, inputs.sil_obj,
                                   inputs.sil_obj_obs, weights.lambda_object)
    if "depth_rel" in active:
        need("depth", "depth_obs", "depth_obj", "depth_obj_obs",
             "region_scene", "region_obj")
        terms["depth_rel"] = relative_depth_loss(
            inputs.depth, inputs.depth_obs, inputs.depth_obj,
            inputs.depth_obj_obs, inputs.region_scene, inputs.region_obj,
            weights.lambda_object)
        need("human_depth")
        masked = np.where(np.asarray(inputs.region_obj, dtype=bool),
                          image_data(inputs.depth_obj), 0.0)
        terms["depth_abs"] = human_depth_anchor_loss(masked, inputs.human_depth)
    if "contact" in active:
        need("object_mesh_posed", "human_mesh", "contact")
        terms["contact"] = contact_loss(inputs.object_mesh_posed,
                                        inputs.human_mesh, inputs.contact,
                                        weights.theta_contact)
        terms["penetration"] = penetration_loss(inputs.object_mesh_posed,
                                                inputs.human_mesh)
    w = {"sil": weights.w_sil, "depth_rel": weights.w_depth_rel,
         "depth_abs": weights.w_depth_abs, "contact": weights.w_contact,
         "penetration": weights.w_penetration}
    total = sum(w[k] * v for k, v in terms.items())
    return float(total), terms


# ---------------------------------------------------------------------------
# differentiable refinement objective

@dataclass
class RefineScene:
    """Inputs to pose refinement: the object template, the fixed human
    mesh (camera frame), observed masks/depth and render settings."""

    template: TriangleMesh
    camera: Camera
    observed_scene_sil: np.ndarray
    observed_object_sil: np.ndarray
    observed_depth: np.ndarray = None
    human_mesh: TriangleMesh = None
    contact: ContactSpec = None
    lambda_object: float = 1.0
    render: RenderConfig = DEFAULT_RENDER
    anchor_depth: float = 2.5


class RefineObjective:
    """Staged total loss with analytic pose gradients.

    The differentiable depth is the composited render (continuous in
    pose); the silhouette is the probabilistic union.  Contact and
    penetration differentiate through closest-point queries on the posed
    object.
    """

    def __init__(self, scene: RefineScene, weights: LossWeights, stage=3,
                 optimize_scale=False):
        if stage not in STAGE_TERMS:
            raise InputValidationError(f"stage must be 1, 2 or 3, got {stage}")
        self.scene = scene
        self.weights = weights
        self.stage = stage
        self.optimize_scale = optimize_scale
        self.active = STAGE_TERMS[stage]

        static_meshes = []
        if scene.human_mesh is not None:
            static_meshes.append((scene.human_mesh, None))
        self.static = StaticLayer(static_meshes, scene.camera, scene.render)
        self.human_depth = self.static.mean_depth
        if self.human_depth is None:
            self.human_depth = scene.anchor_depth

        self.obs_scene = image_data(scene.observed_scene_sil)
        self.obs_obj = image_data(scene.observed_object_sil)
        if self.obs_scene.shape != (scene.camera.height, scene.camera.width):
            raise InputValidationError("observed mask does not match camera size")
        if "depth_rel" in self.active:
            if scene.observed_depth is None:
                raise InputValidationError("stage >= 2 requires an observed depth map")
            self.obs_depth = image_data(scene.observed_depth)
            self.region_scene = (self.obs_scene >= 0.5) & (self.obs_depth > 0)
            self.region_obj = (self.obs_obj >= 0.5) & (self.obs_depth > 0)
            if not np.any(self.region_scene) or not np.any(self.region_obj):
                raise InputValidationError("empty depth-loss region")
            self.obs_norm_scene = normalize_depth(self.obs_depth, self.region_scene)
            self.obs_norm_obj = normalize_depth(self.obs_depth, self.region_obj)
        if "penetration" in self.active and scene.human_mesh is not None:
            self._pen_enabled = scene.human_mesh.is_watertight
            if not self._pen_enabled:
                warnings.warn("human mesh not watertight: penetration term disabled",
                              stacklevel=2)
        else:
            self._pen_enabled = False

    def evaluate(self, pose, with_grad=True):
        """Returns (weighted_total, per-term breakdown, grad or None)."""
        sc = self.scene
        rr = ObjectRender(sc.template, pose, sc.camera, sc.render, self.static)
        npix = sc.camera.width * sc.camera.height
        w = self.weights
        terms = {}
        g_ss = g_ds = g_so = g_do = None

        r_s = rr.sil_scene - self.obs_scene
        r_o = rr.sil_obj - self.obs_obj
        terms["sil"] = float(np.mean(np.abs(r_s)) + sc.lambda_object * np.mean(np.abs(r_o)))
        if with_grad:
            g_ss = w.w_sil * np.sign(r_s) / npix
            g_so = w.w_sil * sc.lambda_object * np.sign(r_o) / npix

        if "depth_rel" in self.active:
            v1, gd1 = _ssi_term(rr.depth_scene, self.obs_norm_scene,
                                self.region_scene, with_grad)
            v2, gd2 = _ssi_term(rr.depth_obj, self.obs_norm_obj,
                                self.region_obj, with_grad)
            terms["depth_rel"] = float(v1 + sc.lambda_object * v2)
            n_obj = int(np.count_nonzero(self.region_obj))
            mean_obj = float(np.mean(rr.depth_obj[self.region_obj]))
            terms["depth_abs"] = abs(mean_obj - self.human_depth)
            if with_grad:
                g_ds = w.w_depth_rel * gd1
                g_do = w.w_depth_rel * sc.lambda_object * gd2
                g_abs = np.zeros_like(g_do)
                g_abs[self.region_obj] = (w.w_depth_abs
                                          * np.sign(mean_obj - self.human_depth)
                                          / n_obj)
                g_do = g_do + g_abs

        gv3 = None
        if with_grad:
            gv3 = rr.backward_images(g_ss, g_ds, g_so, g_do)

        if "contact" in self.active:
            posed = TriangleMesh(rr.verts_cam, sc.template.triangles)
            c_val, c_gv3 = self._contact(posed, with_grad)
            terms["contact"] = c_val
            p_val, p_gv3 = self._penetration(posed, with_grad)
            terms["penetration"] = p_val
            if with_grad:
                gv3 = gv3 + w.w_contact * c_gv3 + w.w_penetration * p_gv3

        wmap = {"sil": w.w_sil, "depth_rel": w.w_depth_rel,
                "depth_abs": w.w_depth_abs, "contact": w.w_contact,
                "penetration": w.w_penetration}
        total = float(sum(wmap[k] * v for k, v in terms.items()))
        grad = rr.pose_grad(gv3, self.optimize_scale) if with_grad else None
        return total, terms, grad

    def _contact(self, posed: TriangleMesh, with_grad):
        sc = self.scene
        gv3 = np.zeros((posed.num_vertices, 3)) if with_grad else None
        if sc.contact is None or sc.human_mesh is None:
            return 0.0, gv3
        total = 0.0
        theta = self.weights.theta_contact
        for flag, sel in ((sc.contact.w_left_hand, sc.contact.left_palm),
                          (sc.contact.w_right_hand, sc.contact.right_palm)):
            if not flag or sel.indices.size == 0:
                continue
            pts = sc.human_mesh.vertices[sel.indices]
            dist, cp, fid, bary = closest_points_on_mesh(pts, posed)
            gate = _sigmoid_scalar((theta - dist) / _CONTACT_SMOOTH_M)
            total += float(np.sum(gate * dist))
            if with_grad:
                dgate = -gate * (1.0 - gate) / _CONTACT_SMOOTH_M
                coef = gate + dist * dgate      # d(gate*d)/dd
                ok = dist > 1e-12
                nrm = np.zeros_like(cp)
                nrm[ok] = (pts[ok] - cp[ok]) / dist[ok, None]
                tri = posed.triangles[fid]
                for k in range(3):
                    np.add.at(gv3, tri[:, k],
                              (-coef * bary[:, k])[:, None] * nrm)
        return total, gv3

    def _penetration(self, posed: TriangleMesh, with_grad):
        gv3 = np.zeros((posed.num_vertices, 3)) if with_grad else None
        human = self.scene.human_mesh
        if not self._pen_enabled or human is None:
            return 0.0, gv3
        dist, cp, _, _ = closest_points_on_mesh(posed.vertices, human)
        inside = points_inside_mesh(posed.vertices, human)
        val = float(np.sum(dist[inside]))
        if with_grad:
            sel = inside & (dist > 1e-12)
            gv3[sel] = (posed.vertices[sel] - cp[sel]) / dist[sel, None]
        return val, gv3


def _ssi_term(depth_img, obs_norm, region, with_grad):
    """Value and d/d(depth image) of mean |E*(D) - E*(D_obs)| over region."""
    x = depth_img[region]
    y = obs_norm[region]
    n = x.shape[0]
    med = np.median(x)
    dev = x - med
    mad = float(np.mean(np.abs(dev)))
    denom = max(mad, _SSI_EPS)
    e = dev / denom
    r = e - y
    val = float(np.mean(np.abs(r)))
    if not with_grad:
        return val, None
    u = np.sign(r) / n
    dm = _median_grad(x)
    su = float(np.sum(u))
    a = float(np.sum(u * dev))
    sbar = float(np.mean(np.sign(dev)))
    if mad > _SSI_EPS:
        dmad_direct = np.sign(dev) / n
        g = (u / denom - su * dm / denom
             - a * (dmad_direct - sbar * dm) / (denom * denom))
    else:
        g = u / denom - su * dm / denom
    grad = np.zeros_like(depth_img)
    grad[region] = g
    return val, grad


def _median_grad(x):
    """Subgradient of the (numpy-convention) median w.r.t. the samples."""
    n = x.shape[0]
    g = np.zeros(n)
    order = np.argsort(x, kind="stable")
    if n % 2 == 1:
        g[order[n // 2]] = 1.0
    else:
        g[order[n // 2 - 1]] = 0.5
        g[order[n // 2]] = 0.5
    return g
