"""Numba kernels: BVH traversal, ray casting, hemisphere Monte Carlo.

The RNG is counter-based: every uniform is a pure function of
(seed, pixel index, draw index), so results are bit-identical whether the
pixel loop runs serially or across any number of threads.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

_U64_A = np.uint64(0x9E3779B97F4A7C15)
_U64_B = np.uint64(0xC2B2AE3D27D4EB4F)
_U64_C = np.uint64(0x165667B19E3779F9)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV_2_53 = 1.0 / 9007199254740992.0

_STACK_DEPTH = 128
_EPS_DET = 1e-12
_TRI_T_MIN = 1e-9


@njit(cache=True, inline="always")
def _uniform(seed, pix, draw):
    """Deterministic uniform in [0, 1) from (seed, pixel, draw counter)."""
    x = np.uint64(seed) * _U64_A + np.uint64(pix) * _U64_B + np.uint64(draw) * _U64_C
    x = (x ^ (x >> _S30)) * _MIX1
    x = (x ^ (x >> _S27)) * _MIX2
    x = x ^ (x >> _S31)
    return float(x >> _S11) * _INV_2_53


@njit(cache=True, inline="always")
def _box_hit(bmin, bmax, ox, oy, oz, dx, dy, dz, t_best):
    # per-axis branching avoids the 0 * inf = nan slab-test failure mode
    tmin = -math.inf
    tmax = math.inf
    if dx != 0.0:
        inv = 1.0 / dx
        t0 = (bmin[0] - ox) * inv
        t1 = (bmax[0] - ox) * inv
        tmin = max(tmin, min(t0, t1))
        tmax = min(tmax, max(t0, t1))
    elif ox < bmin[0] or ox > bmax[0]:
        return False
    if dy != 0.0:
        inv = 1.0 / dy
        t0 = (bmin[1] - oy) * inv
        t1 = (bmax[1] - oy) * inv
        tmin = max(tmin, min(t0, t1))
        tmax = min(tmax, max(t0, t1))
    elif oy < bmin[1] or oy > bmax[1]:
        return False
    if dz != 0.0:
        inv = 1.0 / dz
        t0 = (bmin[2] - oz) * inv
        t1 = (bmax[2] - oz) * inv
        tmin = max(tmin, min(t0, t1))
        tmax = min(tmax, max(t0, t1))
    elif oz < bmin[2] or oz > bmax[2]:
        return False
    return tmax >= tmin and tmax > 0.0 and tmin < t_best


@njit(cache=True)
def _closest_hit(ox, oy, oz, dx, dy, dz,
                 v0, e1, e2, node_min, node_max, node_left, node_count,
                 tri_order, stack):
    """Nearest intersection along the ray; returns (t, triangle index).

    Ties at equal t break toward the lowest triangle index. Direction need
    not be unit length; t is in direction units.
    """
    best_t = math.inf
    best_tri = -1
    top = 0
    stack[top] = 0
    top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        if not _box_hit(node_min[node], node_max[node], ox, oy, oz, dx, dy, dz, best_t):
            continue
        count = node_count[node]
        if count < 0:  # internal node: children are adjacent at node_left
            left = node_left[node]
            stack[top] = left
            stack[top + 1] = left + 1
            top += 2
        else:
            first = node_left[node]
            for s in range(count):
                k = tri_order[first + s]
                px = dy * e2[k, 2] - dz * e2[k, 1]
                py = dz * e2[k, 0] - dx * e2[k, 2]
                pz = dx * e2[k, 1] - dy * e2[k, 0]
                det = e1[k, 0] * px + e1[k, 1] * py + e1[k, 2] * pz
                if -_EPS_DET < det < _EPS_DET:
                    continue
                inv = 1.0 / det
                tx = ox - v0[k, 0]
                ty = oy - v0[k, 1]
                tz = oz - v0[k, 2]
                u = (tx * px + ty * py + tz * pz) * inv
                if u < 0.0 or u > 1.0:
                    continue
                qx = ty * e1[k, 2] - tz * e1[k, 1]
                qy = tz * e1[k, 0] - tx * e1[k, 2]
                qz = tx * e1[k, 1] - ty * e1[k, 0]
                v = (dx * qx + dy * qy + dz * qz) * inv
                if v < 0.0 or u + v > 1.0:
                    continue
                t = (e2[k, 0] * qx + e2[k, 1] * qy + e2[k, 2] * qz) * inv
                if t > _TRI_T_MIN:
                    if t < best_t or (t == best_t and k < best_tri):
                        best_t = t
                        best_tri = k
    return best_t, best_tri


@njit(cache=True)
def _any_hit(ox, oy, oz, dx, dy, dz,
             v0, e1, e2, node_min, node_max, node_left, node_count,
             tri_order, stack):
    """True if the ray hits anything beyond the self-intersection guard."""
    top = 0
    stack[top] = 0
    top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        if not _box_hit(node_min[node], node_max[node], ox, oy, oz, dx, dy, dz, math.inf):
            continue
        count = node_count[node]
        if count < 0:  # internal node: children are adjacent at node_left
            left = node_left[node]
            stack[top] = left
            stack[top + 1] = left + 1
            top += 2
        else:
            first = node_left[node]
            for s in range(count):
                k = tri_order[first + s]
                px = dy * e2[k, 2] - dz * e2[k, 1]
                py = dz * e2[k, 0] - dx * e2[k, 2]
                pz = dx * e2[k, 1] - dy * e2[k, 0]
                det = e1[k, 0] * px + e1[k, 1] * py + e1[k, 2] * pz
                if -_EPS_DET < det < _EPS_DET:
                    continue
                inv = 1.0 / det
                tx = ox - v0[k, 0]
                ty = oy - v0[k, 1]
                tz = oz - v0[k, 2]
                u = (tx * px + ty * py + tz * pz) * inv
                if u < 0.0 or u > 1.0:
                    continue
                qx = ty * e1[k, 2] - tz * e1[k, 1]
                qy = tz * e1[k, 0] - tx * e1[k, 2]
                qz = tx * e1[k, 1] - ty * e1[k, 0]
                v = (dx * qx + dy * qy + dz * qz) * inv
                if v < 0.0 or u + v > 1.0:
                    continue
                t = (e2[k, 0] * qx + e2[k, 1] * qy + e2[k, 2] * qz) * inv
                if t > _TRI_T_MIN:
                    return True
    return False


@njit(cache=True, parallel=True)
def render_primary(origin, dirs,
                   v0, e1, e2, node_min, node_max, node_left, node_count, tri_order,
                   t_out, tri_out):
    """Closest hit for one ray per pixel from a common origin."""
    n = dirs.shape[0]
    for r in prange(n):
        stack = np.empty(_STACK_DEPTH, np.int32)
        t, k = _closest_hit(origin[0], origin[1], origin[2],
                            dirs[r, 0], dirs[r, 1], dirs[r, 2],
                            v0, e1, e2, node_min, node_max, node_left,
                            node_count, tri_order, stack)
        t_out[r] = t
        tri_out[r] = k


@njit(cache=True, parallel=True)
def occlusion_batch(points, direction, active,
                    v0, e1, e2, node_min, node_max, node_left, node_count, tri_order,
                    blocked_out):
    """Shadow rays from per-pixel points along one shared direction."""
    n = points.shape[0]
    for r in prange(n):
        if not active[r]:
            blocked_out[r] = False
            continue
        stack = np.empty(_STACK_DEPTH, np.int32)
        blocked_out[r] = _any_hit(points[r, 0], points[r, 1], points[r, 2],
                                  direction[0], direction[1], direction[2],
                                  v0, e1, e2, node_min, node_max, node_left,
                                  node_count, tri_order, stack)


@njit(cache=True, inline="always")
def _cosine_dir(u1, u2, ax, ay, az):
    """Cosine-weighted direction about axis (ax, ay, az); axis must be unit."""
    r = math.sqrt(u1)
    phi = 2.0 * math.pi * u2
    lx = r * math.cos(phi)
    ly = r * math.sin(phi)
    lz = math.sqrt(max(0.0, 1.0 - u1))
    # build a tangent frame around the axis
    if abs(az) < 0.999:
        tx, ty, tz = -ay, ax, 0.0
    else:
        tx, ty, tz = 0.0, -az, ay
    inv = 1.0 / math.sqrt(tx * tx + ty * ty + tz * tz)
    tx *= inv
    ty *= inv
    tz *= inv
    bx = ay * tz - az * ty
    by = az * tx - ax * tz
    bz = ax * ty - ay * tx
    return (lx * tx + ly * bx + lz * ax,
            lx * ty + ly * by + lz * ay,
            lx * tz + ly * bz + lz * az)


@njit(cache=True, parallel=True)
def sky_visibility_mc(points, normals, active, samples, seed, eps,
                      v0, e1, e2, node_min, node_max, node_left, node_count, tri_order,
                      out):
    """Fraction of unoccluded directions, cosine-weighted over the up hemisphere."""
    n = points.shape[0]
    for r in prange(n):
        if not active[r]:
            out[r] = 0.0
            continue
        stack = np.empty(_STACK_DEPTH, np.int32)
        ox = points[r, 0] + eps * normals[r, 0]
        oy = points[r, 1] + eps * normals[r, 1]
        oz = points[r, 2] + eps * normals[r, 2]
        clear = 0
        for s in range(samples):
            u1 = _uniform(seed, r, 2 * s)
            u2 = _uniform(seed, r, 2 * s + 1)
            dx, dy, dz = _cosine_dir(u1, u2, 0.0, 0.0, 1.0)
            if not _any_hit(ox, oy, oz, dx, dy, dz,
                            v0, e1, e2, node_min, node_max, node_left,
                            node_count, tri_order, stack):
                clear += 1
        out[r] = clear / samples


@njit(cache=True, inline="always")
def _radical_inverse_base2(i):
    """Bit-reversed fraction of a 32-bit index (van der Corput sequence)."""
    x = np.uint32(i)
    x = (x >> np.uint32(16)) | (x << np.uint32(16))
    x = ((x & np.uint32(0x00FF00FF)) << np.uint32(8)) | \
        ((x & np.uint32(0xFF00FF00)) >> np.uint32(8))
    x = ((x & np.uint32(0x0F0F0F0F)) << np.uint32(4)) | \
        ((x & np.uint32(0xF0F0F0F0)) >> np.uint32(4))
    x = ((x & np.uint32(0x33333333)) << np.uint32(2)) | \
        ((x & np.uint32(0xCCCCCCCC)) >> np.uint32(2))
    x = ((x & np.uint32(0x55555555)) << np.uint32(1)) | \
        ((x & np.uint32(0xAAAAAAAA)) >> np.uint32(1))
    return float(x) * 2.3283064365386963e-10


@njit(cache=True, inline="always")
def _dome_bilinear(dome, az, el):
    """Bilinear lookup on an equirect dome: az east-of-north [rad], el [rad]."""
    h, w = dome.shape
    az_deg = math.degrees(az) % 360.0
    el_deg = math.degrees(el)
    u = az_deg / 360.0 * w - 0.5
    v = (90.0 - el_deg) / 180.0 * h - 0.5
    if v < 0.0:
        v = 0.0
    elif v > h - 1.0:
        v = h - 1.0
    u0 = int(math.floor(u))
    v0i = int(math.floor(v))
    fu = u - u0
    fv = v - v0i
    u1 = (u0 + 1) % w
    u0 = u0 % w
    v1 = min(v0i + 1, h - 1)
    top = dome[v0i, u0] * (1.0 - fu) + dome[v0i, u1] * fu
    bot = dome[v1, u0] * (1.0 - fu) + dome[v1, u1] * fu
    return top * (1.0 - fv) + bot * fv


@njit(cache=True, parallel=True)
def sky_shading_mc(points, normals, active, samples, seed, eps,
                   v0, e1, e2, node_min, node_max, node_left, node_count, tri_order,
                   dome, use_dome, gain, out):
    """Sky shading by quasi-Monte Carlo: cosine sampling about the surface
    normal, sky support clipped to the hemisphere above the horizontal plane.

    Samples form a per-pixel randomly rotated Hammersley set (azimuth on a
    jittered lattice, cosine dimension on the bit-reversed sequence), which
    collapses the variance of the horizon-clip indicator; with the 1/pi
    normalization baked into cosine sampling, a fully visible up-facing
    surface under a unit uniform sky reads exactly 1.
    """
    n = points.shape[0]
    for r in prange(n):
        if not active[r]:
            out[r] = 0.0
            continue
        stack = np.empty(_STACK_DEPTH, np.int32)
        nx = normals[r, 0]
        ny = normals[r, 1]
        nz = normals[r, 2]
        ox = points[r, 0] + eps * nx
        oy = points[r, 1] + eps * ny
        oz = points[r, 2] + eps * nz
        rot1 = _uniform(seed, r, 0)
        rot2 = _uniform(seed, r, 1)
        acc = 0.0
        for s in range(samples):
            u1 = _radical_inverse_base2(s) + rot1
            if u1 >= 1.0:
                u1 -= 1.0
            u2 = (s + rot2) / samples
            dx, dy, dz = _cosine_dir(u1, u2, nx, ny, nz)
            if dz <= 0.0:
                continue
            if _any_hit(ox, oy, oz, dx, dy, dz,
                        v0, e1, e2, node_min, node_max, node_left,
                        node_count, tri_order, stack):
                continue
            if use_dome:
                az = math.atan2(dx, dy)
                el = math.asin(min(1.0, max(-1.0, dz)))
                acc += gain * _dome_bilinear(dome, az, el)
            else:
                acc += 1.0
        out[r] = acc / samples
