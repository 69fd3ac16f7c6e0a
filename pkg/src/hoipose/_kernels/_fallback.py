"""Pure-numpy reference implementation of the hot kernels.

Semantics contract shared with the compiled backend:

* ``build_candidates`` bins faces to pixels whose center lies inside the
  face's projected bbox dilated by ``band`` pixels (CSR layout, entries
  ordered by pixel then face index).
* ``raster_forward`` evaluates, per (pixel, face) entry, the signed
  pixel-to-triangle-boundary distance d (positive inside), the occupancy
  o = sigmoid(d / sigma), and the perspective-correct depth zt at the
  closest point of the projected triangle.  Per pixel it aggregates a
  silhouette S = 1 - prod(1 - o), an occlusion-composited depth Dc
  (front-to-back alpha compositing against a background depth z_bg) and a
  presentation depth Dmin (temperature-softmin over covering faces,
  sentinel 0 when no face covers the pixel).
* ``raster_backward`` propagates dL/dS and dL/dDc to the projected
  vertices and their camera depths.  Dmin is presentation-only and has no
  gradient path.
* An optional static layer (per-pixel occupancy/depth of pose-independent
  geometry) participates in the aggregation but receives no gradient.
"""

import numpy as np

_NO_STATIC = None


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def build_candidates(verts2d, z, faces, width, height, band):
    """CSR map pixel -> candidate faces (projected bbox + band dilation)."""
    nf = faces.shape[0]
    pix_list = []
    face_list = []
    for f in range(nf):
        i0, i1, i2 = faces[f]
        xs = verts2d[[i0, i1, i2], 0]
        ys = verts2d[[i0, i1, i2], 1]
        # pixel centers are at integer+0.5; center (cx+0.5) is within `band`
        # of bbox iff cx in [floor(min-band-0.5)... ] -- use conservative bounds
        x0 = max(int(np.floor(xs.min() - band - 0.5)), 0)
        x1 = min(int(np.ceil(xs.max() + band - 0.5)), width - 1)
        y0 = max(int(np.floor(ys.min() - band - 0.5)), 0)
        y1 = min(int(np.ceil(ys.max() + band - 0.5)), height - 1)
        if x1 < x0 or y1 < y0:
            continue
        gx, gy = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
        pix = (gy * width + gx).ravel()
        pix_list.append(pix)
        face_list.append(np.full(pix.size, f, dtype=np.int32))
    if pix_list:
        pix = np.concatenate(pix_list)
        fidx = np.concatenate(face_list)
        order = np.argsort(pix, kind="stable")
        pix = pix[order]
        fidx = fidx[order]
    else:
        pix = np.zeros(0, dtype=np.int64)
        fidx = np.zeros(0, dtype=np.int32)
    ptr = np.zeros(width * height + 1, dtype=np.int64)
    np.add.at(ptr, pix + 1, 1)
    np.cumsum(ptr, out=ptr)
    return ptr, fidx


_SATURATED_D = 1e6  # inside-distance stand-in when every edge is a seam


def _entry_geometry(verts2d, z, faces, ptr, fidx, width, seam=None):
    """Per-entry signed distance, closest-feature data and clamped depth.

    `seam` marks face edges interior to the projected surface (shared with
    a face of equal winding); such edges are skipped when measuring the
    inside-distance so the occupancy union saturates across seams.
    Returns a dict of per-entry arrays shared by forward and backward.
    """
    k = fidx.shape[0]
    counts = np.diff(ptr)
    pix = np.repeat(np.arange(ptr.shape[0] - 1), counts)
    px = (pix % width) + 0.5
    py = (pix // width) + 0.5
    tri = faces[fidx]
    ax, ay = verts2d[tri[:, 0], 0], verts2d[tri[:, 0], 1]
    bx, by = verts2d[tri[:, 1], 0], verts2d[tri[:, 1], 1]
    cx, cy = verts2d[tri[:, 2], 0], verts2d[tri[:, 2], 1]
    za, zb, zc = z[tri[:, 0]], z[tri[:, 1]], z[tri[:, 2]]

    # segment distances: edge 0 = (a,b), 1 = (b,c), 2 = (c,a)
    ex = np.stack([bx - ax, cx - bx, ax - cx])
    ey = np.stack([by - ay, cy - by, ay - cy])
    sx = np.stack([ax, bx, cx])
    sy = np.stack([ay, by, cy])
    m = ex * ex + ey * ey
    rx = px[None, :] - sx
    ry = py[None, :] - sy
    with np.errstate(divide="ignore", invalid="ignore"):
        tr = np.where(m > 0, (rx * ex + ry * ey) / np.where(m > 0, m, 1.0), 0.0)
    t = np.clip(tr, 0.0, 1.0)
    qx = sx + t * ex
    qy = sy + t * ey
    d2 = (px[None, :] - qx) ** 2 + (py[None, :] - qy) ** 2
    kmin_all = np.argmin(d2, axis=0)
    idx = np.arange(k)

    # inside test via edge cross-product signs
    cr = ex * ry - ey * rx
    inside = np.all(cr >= 0, axis=0) | np.all(cr <= 0, axis=0)

    # inside pixels measure distance only to non-seam (silhouette) edges
    if seam is not None and seam.any():
        entry_seam = seam[fidx].T.astype(bool)  # (3, K)
        d2_in = np.where(entry_seam, np.inf, d2)
        kmin_in = np.argmin(d2_in, axis=0)
        all_seam = np.all(entry_seam, axis=0)
        kmin = np.where(inside, kmin_in, kmin_all)
    else:
        kmin = kmin_all
        all_seam = np.zeros(k, dtype=bool)
    dmin = np.sqrt(d2[kmin, idx])
    d = np.where(inside, np.where(all_seam, _SATURATED_D, dmin), -dmin)

    # barycentric weights of the clamped closest point
    delta = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    degen = np.abs(delta) < 1e-14
    safe = np.where(degen, 1.0, delta)
    w0_in = ((bx - px) * (cy - py) - (by - py) * (cx - px)) / safe
    w1_in = ((cx - px) * (ay - py) - (cy - py) * (ax - px)) / safe
    w2_in = ((ax - px) * (by - py) - (ay - py) * (bx - px)) / safe

    t_edge = t[kmin, idx]
    tr_edge = tr[kmin, idx]
    w_edge = np.zeros((3, k))
    w_edge[0] = np.where(kmin == 0, 1.0 - t_edge, np.where(kmin == 2, t_edge, 0.0))
    w_edge[1] = np.where(kmin == 1, 1.0 - t_edge, np.where(kmin == 0, t_edge, 0.0))
    w_edge[2] = np.where(kmin == 2, 1.0 - t_edge, np.where(kmin == 1, t_edge, 0.0))

    use_in = inside & ~degen
    w0 = np.where(use_in, w0_in, w_edge[0])
    w1 = np.where(use_in, w1_in, w_edge[1])
    w2 = np.where(use_in, w2_in, w_edge[2])
    inv = w0 / za + w1 / zb + w2 / zc
    zt = np.where(inv > 0, 1.0 / np.where(inv > 0, inv, 1.0), np.inf)

    return {
        "pix": pix, "px": px, "py": py, "tri": tri,
        "ax": ax, "ay": ay, "bx": bx, "by": by, "cx": cx, "cy": cy,
        "za": za, "zb": zb, "zc": zc,
        "d": d, "inside": use_in, "kmin": kmin, "t": t_edge, "tr": tr_edge,
        "w0": w0, "w1": w1, "w2": w2, "zt": zt, "degen": degen,
        "qx": qx[kmin, idx], "qy": qy[kmin, idx],
    }


def raster_forward(verts2d, z, faces, seam, ptr, fidx, width, height, sigma,
                   gamma, z_bg, static_o=_NO_STATIC, static_z=_NO_STATIC,
                   static_dmin=_NO_STATIC):
    npix = width * height
    geo = _entry_geometry(verts2d, z, faces, ptr, fidx, width, seam)
    o = _sigmoid(geo["d"] / sigma)
    o[geo["degen"]] = 0.0
    zt = geo["zt"]

    sil = np.zeros(npix)
    dc = np.full(npix, z_bg)
    dmin = np.zeros(npix)
    valid = np.zeros(npix, dtype=bool)

    has_static = static_o is not None
    for p in range(npix):
        lo, hi = ptr[p], ptr[p + 1]
        oo = o[lo:hi]
        zz = zt[lo:hi]
        if has_static and static_o[p] > 0.0:
            oo = np.append(oo, static_o[p])
            zz = np.append(zz, static_z[p])
        if oo.size == 0:
            continue
        sil[p] = 1.0 - np.prod(1.0 - oo)
        order = np.argsort(zz, kind="stable")
        comp = z_bg
        for j in order[::-1]:
            comp = oo[j] * zz[j] + (1.0 - oo[j]) * comp
        dc[p] = comp
        cov = oo >= 0.5
        if has_static and static_o[p] > 0.0:
            # static slot is the appended last one; covering iff it has depth
            cov[-1] = static_dmin is not None and static_dmin[p] > 0.0
            if cov[-1]:
                zz = zz.copy()
                zz[-1] = static_dmin[p]
        if np.any(cov):
            zs = zz[cov]
            ws = oo[cov] * np.exp(-(zs - zs.min()) / gamma)
            dmin[p] = float(np.sum(ws * zs) / np.sum(ws))
            valid[p] = True

    shape = (height, width)
    return (sil.reshape(shape), dc.reshape(shape), dmin.reshape(shape),
            valid.reshape(shape), o, zt)


def raster_backward(verts2d, z, faces, seam, ptr, fidx, o, zt, grad_sil,
                    grad_depth, width, height, sigma, z_bg,
                    static_o=_NO_STATIC, static_z=_NO_STATIC):
    npix = width * height
    geo = _entry_geometry(verts2d, z, faces, ptr, fidx, width, seam)
    g_sil = np.asarray(grad_sil).ravel()
    g_dc = np.asarray(grad_depth).ravel()

    go = np.zeros(o.shape[0])
    gzt = np.zeros(o.shape[0])
    has_static = static_o is not None

    for p in range(npix):
        lo, hi = ptr[p], ptr[p + 1]
        n = hi - lo
        gs, gd = g_sil[p], g_dc[p]
        if (n == 0) or (gs == 0.0 and gd == 0.0):
            continue
        oo = o[lo:hi]
        zz = zt[lo:hi]
        stat = has_static and static_o[p] > 0.0
        if stat:
            oo = np.append(oo, static_o[p])
            zz = np.append(zz, static_z[p])
        # silhouette: dS/do_e = prod_{g != e} (1 - o_g)
        if gs != 0.0:
            one = 1.0 - oo
            nn = one.shape[0]
            pre = np.ones(nn + 1)
            np.cumprod(one, out=pre[1:])
            suf = np.ones(nn + 1)
            suf[:-1] = np.cumprod(one[::-1])[::-1]
            dso = pre[:nn] * suf[1:]
            go[lo:hi] += gs * dso[:n]
        # composite depth: sorted front-to-back sweep
        if gd != 0.0:
            order = np.argsort(zz, kind="stable")
            nn = order.shape[0]
            cnext = np.empty(nn)
            comp = z_bg
            for j in range(nn - 1, -1, -1):
                cnext[j] = comp
                e = order[j]
                comp = oo[e] * zz[e] + (1.0 - oo[e]) * comp
            tprod = 1.0
            for j in range(nn):
                e = order[j]
                if e < n:  # static slot gets no gradient
                    go[lo + e] += gd * tprod * (zz[e] - cnext[j])
                    gzt[lo + e] += gd * tprod * oo[e]
                tprod *= 1.0 - oo[e]

    return _chain_entry_grads(geo, o, go, gzt, verts2d.shape[0], sigma)


def _chain_entry_grads(geo, o, go, gzt, nverts, sigma):
    """Chain per-entry dL/do, dL/dzt into projected-vertex and depth grads."""
    gv2 = np.zeros((nverts, 2))
    gz = np.zeros(nverts)
    tri = geo["tri"]
    live = (go != 0.0) | (gzt != 0.0)
    live &= ~geo["degen"]
    if not np.any(live):
        return gv2, gz
    idx = np.nonzero(live)[0]

    gd = go[idx] * o[idx] * (1.0 - o[idx]) / sigma
    d = geo["d"][idx]
    px, py = geo["px"][idx], geo["py"][idx]
    qx, qy = geo["qx"][idx], geo["qy"][idx]
    kmin = geo["kmin"][idx]
    t = geo["t"][idx]
    tr = geo["tr"][idx]
    tri = tri[idx]
    inside = geo["inside"][idx]

    dist = np.abs(d)
    ok = dist > 1e-12
    nx = np.where(ok, (px - qx) / np.where(ok, dist, 1.0), 0.0)
    ny = np.where(ok, (py - qy) / np.where(ok, dist, 1.0), 0.0)
    sgn = np.where(inside, 1.0, -1.0)
    coef = gd * sgn

    # distance path: argmin edge (kmin) endpoints i0 -> i1
    i0 = tri[np.arange(tri.shape[0]), kmin]
    i1 = tri[np.arange(tri.shape[0]), (kmin + 1) % 3]
    interior = (tr > 0.0) & (tr < 1.0)
    wa = np.where(interior, 1.0 - t, np.where(tr <= 0.0, 1.0, 0.0))
    wb = np.where(interior, t, np.where(tr >= 1.0, 1.0, 0.0))
    np.add.at(gv2, i0, np.stack([-coef * wa * nx, -coef * wa * ny], axis=1))
    np.add.at(gv2, i1, np.stack([-coef * wb * nx, -coef * wb * ny], axis=1))

    # depth path: zt = 1 / (w0/za + w1/zb + w2/zc)
    gzt_l = gzt[idx]
    zt = geo["zt"][idx]
    za, zb, zc = geo["za"][idx], geo["zb"][idx], geo["zc"][idx]
    w0, w1, w2 = geo["w0"][idx], geo["w1"][idx], geo["w2"][idx]
    zt2 = zt * zt
    np.add.at(gz, tri[:, 0], gzt_l * zt2 * w0 / (za * za))
    np.add.at(gz, tri[:, 1], gzt_l * zt2 * w1 / (zb * zb))
    np.add.at(gz, tri[:, 2], gzt_l * zt2 * w2 / (zc * zc))
    gw0 = -gzt_l * zt2 / za
    gw1 = -gzt_l * zt2 / zb
    gw2 = -gzt_l * zt2 / zc

    # barycentric jacobian, interior pixels: w_i = S_i / delta
    ins = np.nonzero(inside)[0]
    if ins.size:
        ax, ay = geo["ax"][idx][ins], geo["ay"][idx][ins]
        bx, by = geo["bx"][idx][ins], geo["by"][idx][ins]
        cx, cy = geo["cx"][idx][ins], geo["cy"][idx][ins]
        pxi, pyi = px[ins], py[ins]
        delta = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        apx, apy = ax - pxi, ay - pyi
        bpx, bpy = bx - pxi, by - pyi
        cpx, cpy = cx - pxi, cy - pyi
        # dcross(u,v)/du = (vy, -vx); dcross(u,v)/dv = (-uy, ux)
        dSa_b = np.stack([cpy, -cpx], axis=1)
        dSa_c = np.stack([-bpy, bpx], axis=1)
        dSb_c = np.stack([apy, -apx], axis=1)
        dSb_a = np.stack([-cpy, cpx], axis=1)
        dSc_a = np.stack([bpy, -bpx], axis=1)
        dSc_b = np.stack([-apy, apx], axis=1)
        dD_a = dSb_a + dSc_a
        dD_b = dSa_b + dSc_b
        dD_c = dSa_c + dSb_c
        wi0, wi1, wi2 = w0[ins], w1[ins], w2[ins]
        g0, g1, g2 = gw0[ins], gw1[ins], gw2[ins]
        inv_d = 1.0 / delta
        ga = (g0[:, None] * (-wi0[:, None] * dD_a)
              + g1[:, None] * (dSb_a - wi1[:, None] * dD_a)
              + g2[:, None] * (dSc_a - wi2[:, None] * dD_a)) * inv_d[:, None]
        gb = (g0[:, None] * (dSa_b - wi0[:, None] * dD_b)
              + g1[:, None] * (-wi1[:, None] * dD_b)
              + g2[:, None] * (dSc_b - wi2[:, None] * dD_b)) * inv_d[:, None]
        gc = (g0[:, None] * (dSa_c - wi0[:, None] * dD_c)
              + g1[:, None] * (dSb_c - wi1[:, None] * dD_c)
              + g2[:, None] * (-wi2[:, None] * dD_c)) * inv_d[:, None]
        np.add.at(gv2, tri[ins, 0], ga)
        np.add.at(gv2, tri[ins, 1], gb)
        np.add.at(gv2, tri[ins, 2], gc)

    # edge pixels: w = (1-t, t) on edge (i0, i1); t varies only when interior
    out = np.nonzero(~inside & interior)[0]
    if out.size:
        # gradient on t: gw_i1 - gw_i0 where i0/i1 are the edge endpoints
        gw_all = np.stack([gw0, gw1, gw2], axis=1)
        rows = np.arange(gw_all.shape[0])
        gt = gw_all[rows, (kmin + 1) % 3][out] - gw_all[rows, kmin][out]
        averts = np.stack([geo["ax"][idx], geo["ay"][idx]], axis=1)
        bverts = np.stack([geo["bx"][idx], geo["by"][idx]], axis=1)
        cverts = np.stack([geo["cx"][idx], geo["cy"][idx]], axis=1)
        allv = np.stack([averts, bverts, cverts], axis=1)
        A = allv[rows, kmin][out]
        B = allv[rows, (kmin + 1) % 3][out]
        P = np.stack([px, py], axis=1)[out]
        u = B - A
        m = np.sum(u * u, axis=1)
        pa = P - A
        tt = t[out]
        dt_dA = (-u - pa + 2.0 * tt[:, None] * u) / m[:, None]
        dt_dB = (pa - 2.0 * tt[:, None] * u) / m[:, None]
        np.add.at(gv2, i0[out], gt[:, None] * dt_dA)
        np.add.at(gv2, i1[out], gt[:, None] * dt_dB)

    return gv2, gz


def raster_nearest(verts2d, z, faces, ptr, fidx, width, height):
    """Hard rasterization: nearest covering face per pixel (-1 when empty).

    Barycentric output is perspective-correct (valid for interpolating 3D
    vertex attributes, not just screen quantities).
    """
    npix = width * height
    geo = _entry_geometry(verts2d, z, faces, ptr, fidx, width)
    inside = geo["inside"]
    face_id = np.full(npix, -1, dtype=np.int32)
    depth = np.zeros(npix)
    bary = np.zeros((npix, 3))
    if np.any(inside):
        pix = geo["pix"][inside]
        zt = geo["zt"][inside]
        fida = fidx[inside]
        w = np.stack([geo["w0"][inside] / geo["za"][inside],
                      geo["w1"][inside] / geo["zb"][inside],
                      geo["w2"][inside] / geo["zc"][inside]], axis=1)
        w *= zt[:, None]
        order = np.lexsort((zt, pix))
        pix_s = pix[order]
        first = np.ones(pix_s.shape[0], dtype=bool)
        first[1:] = pix_s[1:] != pix_s[:-1]
        sel = order[first]
        face_id[pix[sel]] = fida[sel]
        depth[pix[sel]] = zt[sel]
        bary[pix[sel]] = w[sel]
    shape = (height, width)
    return face_id.reshape(shape), depth.reshape(shape), bary.reshape(height, width, 3)


def mesh_closest_points(points, verts, faces):
    """Closest point on a triangle mesh for each query point.

    Returns (distance, closest_point, face_index, barycentric).
    """
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    best_d2 = np.full(n, np.inf)
    best_cp = np.zeros((n, 3))
    best_f = np.full(n, -1, dtype=np.int32)
    best_w = np.zeros((n, 3))
    for f in range(faces.shape[0]):
        a = verts[faces[f, 0]]
        b = verts[faces[f, 1]]
        c = verts[faces[f, 2]]
        cp, w = _closest_on_triangle(pts, a, b, c)
        d2 = np.sum((pts - cp) ** 2, axis=1)
        upd = d2 < best_d2
        best_d2[upd] = d2[upd]
        best_cp[upd] = cp[upd]
        best_f[upd] = f
        best_w[upd] = w[upd]
    return np.sqrt(best_d2), best_cp, best_f, best_w


def _closest_on_triangle(pts, a, b, c):
    """Vectorized closest point: plane foot if inside, else best edge point."""
    e0 = b - a
    e1 = c - a
    a00 = e0 @ e0
    a01 = e0 @ e1
    a11 = e1 @ e1
    det = a00 * a11 - a01 * a01
    pa = pts - a
    b0 = pa @ e0
    b1 = pa @ e1
    if abs(det) > 1e-18:
        beta = (a11 * b0 - a01 * b1) / det
        gamma = (a00 * b1 - a01 * b0) / det
    else:
        beta = np.zeros(pts.shape[0])
        gamma = np.zeros(pts.shape[0])
    inside = (beta >= 0) & (gamma >= 0) & (beta + gamma <= 1)
    cp = a + beta[:, None] * e0 + gamma[:, None] * e1
    w = np.stack([1.0 - beta - gamma, beta, gamma], axis=1)

    best_d2 = np.where(inside, np.sum((pts - cp) ** 2, axis=1), np.inf)
    for (sa, sb, wi, wj) in ((a, b, 0, 1), (b, c, 1, 2), (c, a, 2, 0)):
        u = sb - sa
        m = u @ u
        if m < 1e-30:
            continue
        t = np.clip(((pts - sa) @ u) / m, 0.0, 1.0)
        q = sa + t[:, None] * u
        d2 = np.sum((pts - q) ** 2, axis=1)
        upd = d2 < best_d2
        best_d2[upd] = d2[upd]
        cp[upd] = q[upd]
        wt = np.zeros((pts.shape[0], 3))
        wt[:, wi] = 1.0 - t
        wt[:, wj] = t
        w[upd] = wt[upd]
    return cp, w


def mesh_contains(points, verts, faces, directions):
    """Ray-parity containment, majority vote over the given ray directions."""
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    votes = np.zeros(n, dtype=np.int64)
    eps = 1e-12
    for d in directions:
        counts = np.zeros(n, dtype=np.int64)
        for f in range(faces.shape[0]):
            a = verts[faces[f, 0]]
            b = verts[faces[f, 1]]
            c = verts[faces[f, 2]]
            e1 = b - a
            e2 = c - a
            h = np.cross(d, e2)
            det = e1 @ h
            if abs(det) < eps:
                continue
            inv = 1.0 / det
            s = pts - a
            u = (s @ h) * inv
            q = np.cross(s, e1)
            v = (q @ d) * inv
            t = (q @ e2) * inv
            hit = (u >= 0) & (u <= 1) & (v >= 0) & (u + v <= 1) & (t > eps)
            counts += hit
        votes += counts % 2
    return votes * 2 > len(directions)
