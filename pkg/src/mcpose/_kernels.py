"""Compiled kernels for the rendering/scoring hot path.

Everything here is deliberately shared between the one-sample API in
``raster``/``scoring`` and the batch path in ``engine``: both routes run
the exact same compiled code with the same operation order, so per-sample
and batch results are bitwise identical, and a crop of a full-image
render equals the boxed render bitwise (pixel coordinates are absolute,
never accumulated incrementally).

No fastmath anywhere: determinism and the bitwise contracts above depend
on strict IEEE evaluation order.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# Near-plane clip distance in meters; triangles are clipped, never dropped,
# when they straddle it, so partial and full renders stay identical.
NEAR_Z = 1e-4
# z-buffer value meaning "no triangle covers this pixel".
EMPTY_DEPTH = 0.0
# Saturation limit of the 16-bit millimeter fixed-point mode.
MM_MAX = 65535

# Row layout of the RasterStats accumulator array.
STAT_IN = 0
STAT_CULLED = 1
STAT_CLIPPED = 2
STAT_DEGENERATE = 3
STAT_PIXELS = 4
N_STATS = 5

# Column layout of the per-sample score-count array.
CNT_INLIER = 0
CNT_OBSERVED = 1
CNT_RENDERED = 2
CNT_SATURATED = 3
N_COUNTS = 4

_JIT = {"cache": True, "nogil": True}


@njit(**_JIT)
def _fill_triangle(depth, bx0, by0, bx1, by1,
                   x0, y0, z0, x1, y1, z1, x2, y2, z2):
    """Rasterize one projected triangle into a box-relative z-buffer.

    Vertex coordinates are absolute screen pixels with camera-space depths;
    ``depth`` covers the inclusive pixel box [bx0..bx1] x [by0..by1].
    Coverage samples pixel centers (i + 0.5, j + 0.5) under the top-left
    fill rule; depth is interpolated perspective-correctly (1/z linear in
    screen space) and merged with a min rule. Returns (pixels_written,
    was_degenerate).
    """
    area2 = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
    if area2 == 0.0:
        return 0, True
    if area2 < 0.0:
        # reorder so all three edge functions are positive inside
        x1, y1, z1, x2, y2, z2 = x2, y2, z2, x1, y1, z1
        area2 = -area2

    xmin = min(x0, min(x1, x2))
    xmax = max(x0, max(x1, x2))
    ymin = min(y0, min(y1, y2))
    ymax = max(y0, max(y1, y2))
    ix0 = int(np.ceil(xmin - 0.5))
    ix1 = int(np.floor(xmax - 0.5))
    iy0 = int(np.ceil(ymin - 0.5))
    iy1 = int(np.floor(ymax - 0.5))
    if ix0 < bx0:
        ix0 = bx0
    if ix1 > bx1:
        ix1 = bx1
    if iy0 < by0:
        iy0 = by0
    if iy1 > by1:
        iy1 = by1
    if ix0 > ix1 or iy0 > iy1:
        return 0, False

    # Edge k lies opposite vertex k, so e_k / area2 is vertex k's
    # barycentric weight.
    dx0 = x2 - x1
    dy0 = y2 - y1
    dx1 = x0 - x2
    dy1 = y0 - y2
    dx2 = x1 - x0
    dy2 = y1 - y0
    # Top-left rule in y-down screen coordinates: a pixel center exactly on
    # an edge belongs to the triangle iff that edge is horizontal pointing
    # +x (top edge) or points -y (left edge).
    acc0 = (dy0 == 0.0 and dx0 > 0.0) or dy0 < 0.0
    acc1 = (dy1 == 0.0 and dx1 > 0.0) or dy1 < 0.0
    acc2 = (dy2 == 0.0 and dx2 > 0.0) or dy2 < 0.0
    iz0 = 1.0 / z0
    iz1 = 1.0 / z1
    iz2 = 1.0 / z2

    written = 0
    for j in range(iy0, iy1 + 1):
        py = j + 0.5
        for i in range(ix0, ix1 + 1):
            px = i + 0.5
            e0 = dx0 * (py - y1) - dy0 * (px - x1)
            if e0 < 0.0 or (e0 == 0.0 and not acc0):
                continue
            e1 = dx1 * (py - y2) - dy1 * (px - x2)
            if e1 < 0.0 or (e1 == 0.0 and not acc1):
                continue
            e2 = dx2 * (py - y0) - dy2 * (px - x0)
            if e2 < 0.0 or (e2 == 0.0 and not acc2):
                continue
            z = area2 / (e0 * iz0 + e1 * iz1 + e2 * iz2)
            r = j - by0
            c = i - bx0
            cur = depth[r, c]
            if cur == EMPTY_DEPTH or z < cur:
                depth[r, c] = z
                written += 1
    return written, False


@njit(**_JIT)
def _clip_near(xs, ys, zs, ox, oy, oz):
    """Sutherland-Hodgman clip of a camera-space triangle against z = NEAR_Z.

    Reads 3 vertices from xs/ys/zs, writes the clipped polygon into
    ox/oy/oz (length >= 4) and returns its vertex count (0, 3, or 4).
    Intersection vertices get z = NEAR_Z exactly.
    """
    n = 0
    for k in range(3):
        m = k + 1
        if m == 3:
            m = 0
        az = zs[k]
        bz = zs[m]
        a_in = az >= NEAR_Z
        if a_in:
            ox[n] = xs[k]
            oy[n] = ys[k]
            oz[n] = az
            n += 1
        if a_in != (bz >= NEAR_Z):
            t = (NEAR_Z - az) / (bz - az)
            ox[n] = xs[k] + t * (xs[m] - xs[k])
            oy[n] = ys[k] + t * (ys[m] - ys[k])
            oz[n] = NEAR_Z
            n += 1
    return n


@njit(**_JIT)
def rasterize_mesh(verts, faces, kfx, kfy, kcx, kcy,
                   bx0, by0, bx1, by1, culling, depth, stats):
    """Render camera-frame vertices into a box z-buffer, accumulating stats.

    ``verts`` is (V, 3) camera-frame float64, ``faces`` (F, 3) int64,
    ``depth`` a (by1-by0+1, bx1-bx0+1) buffer initialized to EMPTY_DEPTH,
    ``stats`` an int64[N_STATS] accumulator.
    """
    pxs = np.empty(4)
    pys = np.empty(4)
    pzs = np.empty(4)
    cxs = np.empty(4)
    cys = np.empty(4)
    czs = np.empty(4)
    xs3 = np.empty(3)
    ys3 = np.empty(3)
    zs3 = np.empty(3)
    for f in range(faces.shape[0]):
        stats[STAT_IN] += 1
        i0 = faces[f, 0]
        i1 = faces[f, 1]
        i2 = faces[f, 2]
        v0x = verts[i0, 0]
        v0y = verts[i0, 1]
        v0z = verts[i0, 2]
        v1x = verts[i1, 0]
        v1y = verts[i1, 1]
        v1z = verts[i1, 2]
        v2x = verts[i2, 0]
        v2y = verts[i2, 1]
        v2z = verts[i2, 2]

        e1x = v1x - v0x
        e1y = v1y - v0y
        e1z = v1z - v0z
        e2x = v2x - v0x
        e2y = v2y - v0y
        e2z = v2z - v0z
        nx = e1y * e2z - e1z * e2y
        ny = e1z * e2x - e1x * e2z
        nz = e1x * e2y - e1y * e2x
        if nx == 0.0 and ny == 0.0 and nz == 0.0:
            stats[STAT_DEGENERATE] += 1
            continue
        if culling:
            # view ray through the triangle centroid; dot >= 0 faces away
            mx = (v0x + v1x + v2x) / 3.0
            my = (v0y + v1y + v2y) / 3.0
            mz = (v0z + v1z + v2z) / 3.0
            if nx * mx + ny * my + nz * mz >= 0.0:
                stats[STAT_CULLED] += 1
                continue

        in0 = v0z >= NEAR_Z
        in1 = v1z >= NEAR_Z
        in2 = v2z >= NEAR_Z
        if in0 and in1 and in2:
            npoly = 3
            cxs[0] = v0x
            cys[0] = v0y
            czs[0] = v0z
            cxs[1] = v1x
            cys[1] = v1y
            czs[1] = v1z
            cxs[2] = v2x
            cys[2] = v2y
            czs[2] = v2z
        elif not (in0 or in1 or in2):
            stats[STAT_CLIPPED] += 1
            continue
        else:
            stats[STAT_CLIPPED] += 1
            xs3[0] = v0x
            ys3[0] = v0y
            zs3[0] = v0z
            xs3[1] = v1x
            ys3[1] = v1y
            zs3[1] = v1z
            xs3[2] = v2x
            ys3[2] = v2y
            zs3[2] = v2z
            npoly = _clip_near(xs3, ys3, zs3, cxs, cys, czs)
            if npoly < 3:
                continue

        for k in range(npoly):
            z = czs[k]
            pxs[k] = cxs[k] * kfx / z + kcx
            pys[k] = cys[k] * kfy / z + kcy
            pzs[k] = z
        for k in range(1, npoly - 1):
            written, degen = _fill_triangle(
                depth, bx0, by0, bx1, by1,
                pxs[0], pys[0], pzs[0],
                pxs[k], pys[k], pzs[k],
                pxs[k + 1], pys[k + 1], pzs[k + 1])
            stats[STAT_PIXELS] += written
            if degen:
                stats[STAT_DEGENERATE] += 1


@njit(**_JIT)
def transform_verts(verts, rot, trans, out):
    """out[i] = rot @ verts[i] + trans, in a fixed evaluation order."""
    for i in range(verts.shape[0]):
        vx = verts[i, 0]
        vy = verts[i, 1]
        vz = verts[i, 2]
        out[i, 0] = rot[0, 0] * vx + rot[0, 1] * vy + rot[0, 2] * vz + trans[0]
        out[i, 1] = rot[1, 0] * vx + rot[1, 1] * vy + rot[1, 2] * vz + trans[1]
        out[i, 2] = rot[2, 0] * vx + rot[2, 1] * vy + rot[2, 2] * vz + trans[2]


@njit(**_JIT)
def quantize_mm(z):
    """Depth in meters -> 16-bit millimeter code, round half up, saturating."""
    q = int(np.floor(z * 1000.0 + 0.5))
    if q > MM_MAX:
        return MM_MAX
    return q


@njit(**_JIT)
def score_region(depth, obs, bx0, by0, kfx, kfy, kcx, kcy,
                 eps, mode3d, quantize, counts):
    """Pixel-wise inlier comparison of a rendered box against the observation.

    ``depth`` is the box-relative rendered buffer, ``obs`` the full
    observed image (0 = invalid pixel). Accumulates into ``counts``
    (int64[N_COUNTS]). In 3d mode the threshold tightens with the pixel's
    ray obliquity; in quantized mode depths are compared as millimeter
    integers, saturations counted.
    """
    h = depth.shape[0]
    w = depth.shape[1]
    for r in range(h):
        y = by0 + r
        for c in range(w):
            x = bx0 + c
            zr = depth[r, c]
            zo = obs[y, x]
            if zr > 0.0:
                counts[CNT_RENDERED] += 1
            if zo > 0.0:
                counts[CNT_OBSERVED] += 1
            if zr > 0.0 and zo > 0.0:
                thr = eps
                if mode3d:
                    ux = (x + 0.5 - kcx) / kfx
                    uy = (y + 0.5 - kcy) / kfy
                    thr = eps / np.sqrt(1.0 + ux * ux + uy * uy)
                if quantize:
                    qo = quantize_mm(zo)
                    qr = quantize_mm(zr)
                    if zo * 1000.0 + 0.5 > MM_MAX:
                        counts[CNT_SATURATED] += 1
                    if zr * 1000.0 + 0.5 > MM_MAX:
                        counts[CNT_SATURATED] += 1
                    d = qo - qr
                    if d < 0:
                        d = -d
                    if d < thr * 1000.0:
                        counts[CNT_INLIER] += 1
                else:
                    d = zo - zr
                    if d < 0.0:
                        d = -d
                    if d < thr:
                        counts[CNT_INLIER] += 1


@njit(**_JIT)
def score_samples_batch(verts, faces, rots, trans, boxes, obs,
                        kfx, kfy, kcx, kcy, culling,
                        eps, mode3d, quantize,
                        start, stop, counts, stats):
    """Render and score samples [start, stop) against the observation.

    ``rots`` (M,3,3), ``trans`` (M,3), ``boxes`` (M,4) inclusive pixel
    boxes. Fills ``counts`` rows (M, N_COUNTS) and accumulates ``stats``
    (int64[N_STATS]). One scratch buffer sized to the largest box in the
    chunk is reused; its box region is reset per sample, which reproduces
    the one-sample path on a fresh buffer exactly.
    """
    maxh = 1
    maxw = 1
    for s in range(start, stop):
        h = boxes[s, 3] - boxes[s, 1] + 1
        w = boxes[s, 2] - boxes[s, 0] + 1
        if h > maxh:
            maxh = h
        if w > maxw:
            maxw = w
    scratch = np.empty((maxh, maxw))
    tv = np.empty((verts.shape[0], 3))
    for s in range(start, stop):
        bx0 = boxes[s, 0]
        by0 = boxes[s, 1]
        bx1 = boxes[s, 2]
        by1 = boxes[s, 3]
        h = by1 - by0 + 1
        w = bx1 - bx0 + 1
        sub = scratch[:h, :w]
        for r in range(h):
            for c in range(w):
                sub[r, c] = EMPTY_DEPTH
        transform_verts(verts, rots[s], trans[s], tv)
        rasterize_mesh(tv, faces, kfx, kfy, kcx, kcy,
                       bx0, by0, bx1, by1, culling, sub, stats)
        score_region(sub, obs, bx0, by0, kfx, kfy, kcx, kcy,
                     eps, mode3d, quantize, counts[s])


@njit(**_JIT)
def resample_search_batch(cdf, bin_start, rs, out_pos, counters):
    """Coarse bin jump plus fine linear scan for each query in ``rs``.

    Writes the CDF position (first i with r < cdf[i]) per query and
    accumulates access ``counters`` (int64[3]): [coarse lookups, fine cdf
    reads, cdf reads a naive front-to-back scan would have issued].
    """
    k = cdf.shape[0]
    nbins = bin_start.shape[0]
    for q in range(rs.shape[0]):
        r = rs[q]
        b = int(r * nbins)
        if b >= nbins:
            b = nbins - 1
        counters[0] += 1
        i = bin_start[b]
        if i > k - 1:
            i = k - 1
        while True:
            counters[1] += 1
            if r < cdf[i] or i == k - 1:
                break
            i += 1
        out_pos[q] = i
        counters[2] += i + 1


@njit(**_JIT)
def union_area(boxes):
    """Exact pixel count of the union of inclusive boxes, via x-strip sweep."""
    m = boxes.shape[0]
    if m == 0:
        return 0
    xs = np.empty(2 * m, dtype=np.int64)
    for i in range(m):
        xs[2 * i] = boxes[i, 0]
        xs[2 * i + 1] = boxes[i, 2] + 1
    xs = np.sort(xs)
    order = np.argsort(boxes[:, 1])  # by y_min, so strip intervals arrive sorted
    ys0 = np.empty(m, dtype=np.int64)
    ys1 = np.empty(m, dtype=np.int64)
    total = 0
    prev = xs[0]
    for t in range(1, 2 * m):
        x = xs[t]
        if x == prev:
            continue
        width = x - prev
        cnt = 0
        for oi in range(m):
            b = order[oi]
            if boxes[b, 0] <= prev and boxes[b, 2] + 1 >= x:
                ys0[cnt] = boxes[b, 1]
                ys1[cnt] = boxes[b, 3] + 1
                cnt += 1
        if cnt > 0:
            cur0 = ys0[0]
            cur1 = ys1[0]
            covered = 0
            for u in range(1, cnt):
                if ys0[u] > cur1:
                    covered += cur1 - cur0
                    cur0 = ys0[u]
                    cur1 = ys1[u]
                elif ys1[u] > cur1:
                    cur1 = ys1[u]
            covered += cur1 - cur0
            total += covered * width
        prev = x
    return total


@njit(**_JIT)
def project_bounds_batch(verts, rots, trans, kfx, kfy, kcx, kcy,
                         width, height, out_boxes):
    """Per-sample inclusive pixel box of the projected model bounds.

    Covers every pixel whose center can fall inside the projection. A
    sample with any vertex closer than the near plane gets the full image
    (its clipped silhouette is unbounded in general); a sample projecting
    fully off-screen gets a 1x1 box at the nearest image corner.
    """
    m = rots.shape[0]
    nv = verts.shape[0]
    for s in range(m):
        minx = 1e300
        maxx = -1e300
        miny = 1e300
        maxy = -1e300
        behind = False
        for i in range(nv):
            vx = verts[i, 0]
            vy = verts[i, 1]
            vz = verts[i, 2]
            x = rots[s, 0, 0] * vx + rots[s, 0, 1] * vy + rots[s, 0, 2] * vz + trans[s, 0]
            y = rots[s, 1, 0] * vx + rots[s, 1, 1] * vy + rots[s, 1, 2] * vz + trans[s, 1]
            z = rots[s, 2, 0] * vx + rots[s, 2, 1] * vy + rots[s, 2, 2] * vz + trans[s, 2]
            if z < NEAR_Z:
                behind = True
                break
            px = x * kfx / z + kcx
            py = y * kfy / z + kcy
            if px < minx:
                minx = px
            if px > maxx:
                maxx = px
            if py < miny:
                miny = py
            if py > maxy:
                maxy = py
        if behind:
            out_boxes[s, 0] = 0
            out_boxes[s, 1] = 0
            out_boxes[s, 2] = width - 1
            out_boxes[s, 3] = height - 1
            continue
        x0 = int(np.ceil(minx - 0.5))
        x1 = int(np.floor(maxx - 0.5))
        y0 = int(np.ceil(miny - 0.5))
        y1 = int(np.floor(maxy - 0.5))
        if x1 < x0:
            x1 = x0
        if y1 < y0:
            y1 = y0
        if x0 < 0:
            x0 = 0
        if y0 < 0:
            y0 = 0
        if x0 > width - 1:
            x0 = width - 1
        if y0 > height - 1:
            y0 = height - 1
        if x1 < x0:
            x1 = x0
        if y1 < y0:
            y1 = y0
        if x1 > width - 1:
            x1 = width - 1
        if y1 > height - 1:
            y1 = height - 1
        out_boxes[s, 0] = x0
        out_boxes[s, 1] = y0
        out_boxes[s, 2] = x1
        out_boxes[s, 3] = y1
