"""Bounding-volume hierarchy for segment occlusion tests.

Median-split BVH over triangle centroids, flattened into arrays and
traversed by numba kernels (Moller-Trumbore per leaf triangle).  Hits that
land on a triangle boundary are classified by whether the ray actually
crosses the surface there: passing through the shared edge of two facets
whose normals face the ray the same way is a crossing (blocks); passing
tangentially through a silhouette edge or a sheet rim is a graze (does
not).  A plain numpy all-facets tester with the same semantics is kept as
the independent reference for the occlusion invariants.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_LEAF_SIZE = 4
_PARALLEL_EPS = 1.0e-12
# barycentric margin that routes a hit into boundary classification
_EDGE_MARGIN = 1.0e-7


def _facet_adjacency(facets):
    """neighbors[f, e]: facet across edge e of f (0:(v0,v1) 1:(v1,v2)
    2:(v2,v0)), or -1 for sheet boundaries."""
    edge_owner = {}
    n = len(facets)
    neighbors = np.full((n, 3), -1, dtype=np.int64)
    for f, (a, b, c) in enumerate(facets):
        for e, (p, q) in enumerate(((a, b), (b, c), (c, a))):
            key = (p, q) if p < q else (q, p)
            edge_owner.setdefault(key, []).append((f, e))
    for key, owners in edge_owner.items():
        if len(owners) == 2:
            (f1, e1), (f2, e2) = owners
            neighbors[f1, e1] = f2
            neighbors[f2, e2] = f1
    return neighbors


class Bvh:
    def __init__(self, vertices, facets, leaf_size=_LEAF_SIZE):
        vertices = np.asarray(vertices, dtype=np.float64)
        facets = np.asarray(facets, dtype=np.int64)
        tri = vertices[facets]
        self.v0 = np.ascontiguousarray(tri[:, 0])
        self.e1 = np.ascontiguousarray(tri[:, 1] - tri[:, 0])
        self.e2 = np.ascontiguousarray(tri[:, 2] - tri[:, 0])
        cross = np.cross(self.e1, self.e2)
        self.normals = np.ascontiguousarray(
            cross / np.linalg.norm(cross, axis=1, keepdims=True)
        )
        self.neighbors = np.ascontiguousarray(_facet_adjacency(facets))
        lo = tri.min(axis=1)
        hi = tri.max(axis=1)
        cen = tri.mean(axis=1)

        n = len(facets)
        order = np.arange(n)
        nodes_lo, nodes_hi = [], []
        nodes_left, nodes_right = [], []
        nodes_start, nodes_count = [], []

        def build(idx):
            node = len(nodes_lo)
            nodes_lo.append(lo[idx].min(axis=0))
            nodes_hi.append(hi[idx].max(axis=0))
            nodes_left.append(-1)
            nodes_right.append(-1)
            nodes_start.append(-1)
            nodes_count.append(0)
            if len(idx) <= leaf_size:
                start = build.cursor
                build.perm[start : start + len(idx)] = idx
                nodes_start[node] = start
                nodes_count[node] = len(idx)
                build.cursor += len(idx)
                return node
            c = cen[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            half = len(idx) // 2
            part = np.argpartition(c[:, axis], half)
            left = build(idx[part[:half]])
            right = build(idx[part[half:]])
            nodes_left[node] = left
            nodes_right[node] = right
            return node

        build.perm = np.empty(n, dtype=np.int64)
        build.cursor = 0
        build(order)

        self.node_lo = np.ascontiguousarray(np.asarray(nodes_lo))
        self.node_hi = np.ascontiguousarray(np.asarray(nodes_hi))
        self.node_left = np.asarray(nodes_left, dtype=np.int64)
        self.node_right = np.asarray(nodes_right, dtype=np.int64)
        self.node_start = np.asarray(nodes_start, dtype=np.int64)
        self.node_count = np.asarray(nodes_count, dtype=np.int64)
        self.perm = build.perm

    def segments_blocked(self, origins, ends, eps):
        """True where the open segment (origin, end) crosses any surface.

        ``eps`` (meters) trims both segment ends, so path legs that start or
        finish exactly on the geometry do not self-block.
        """
        origins = np.ascontiguousarray(np.atleast_2d(origins), dtype=np.float64)
        ends = np.ascontiguousarray(np.atleast_2d(ends), dtype=np.float64)
        out = np.zeros(len(origins), dtype=np.bool_)
        _segments_blocked_kernel(
            origins, ends, float(eps),
            self.node_lo, self.node_hi, self.node_left, self.node_right,
            self.node_start, self.node_count, self.perm,
            self.v0, self.e1, self.e2, self.normals, self.neighbors, out,
        )
        return out


def _boundary_hit_blocks(u, v, margin, f, d, normals, neighbors):
    """Shared boundary-classification logic (python mirror of the kernel)."""
    near_u0 = u <= margin          # edge (v0, v2) -> neighbor slot 2
    near_v0 = v <= margin          # edge (v0, v1) -> neighbor slot 0
    near_hyp = u + v >= 1.0 - margin   # edge (v1, v2) -> neighbor slot 1
    if (near_u0 and near_v0) or (near_u0 and near_hyp) or (near_v0 and near_hyp):
        return False               # vertex passage: tangential
    if near_v0:
        nb = neighbors[f, 0]
    elif near_hyp:
        nb = neighbors[f, 1]
    elif near_u0:
        nb = neighbors[f, 2]
    else:
        return True                # interior hit
    if nb < 0:
        return False               # sheet rim: graze
    s1 = d @ normals[f]
    s2 = d @ normals[nb]
    return s1 * s2 > 0.0           # same-side crossing blocks


def brute_segments_blocked(vertices, facets, origins, ends, eps):
    """All-facets reference tester (no BVH) with the same hit semantics."""
    vertices = np.asarray(vertices, dtype=float)
    facets = np.asarray(facets, dtype=np.int64)
    tri = vertices[facets]
    v0 = tri[:, 0]
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    cross = np.cross(e1, e2)
    normals = cross / np.linalg.norm(cross, axis=1, keepdims=True)
    neighbors = _facet_adjacency(facets)
    origins = np.atleast_2d(np.asarray(origins, dtype=float))
    ends = np.atleast_2d(np.asarray(ends, dtype=float))
    out = np.zeros(len(origins), dtype=bool)
    for i, (o, q) in enumerate(zip(origins, ends)):
        d = q - o
        seg_len = np.linalg.norm(d)
        if seg_len <= 2.0 * eps:
            continue
        t_lo = eps / seg_len
        t_hi = 1.0 - t_lo
        pvec = np.cross(d, e2)
        det = np.einsum("ij,ij->i", e1, pvec)
        ok = np.abs(det) > _PARALLEL_EPS
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = o - v0
        u = np.einsum("ij,ij->i", tvec, pvec) * inv
        qvec = np.cross(tvec, e1)
        v = (qvec @ d) * inv
        t = np.einsum("ij,ij->i", e2, qvec) * inv
        hit = ok & (u >= -_EDGE_MARGIN) & (v >= -_EDGE_MARGIN) & \
            (u + v <= 1.0 + _EDGE_MARGIN) & (t > t_lo) & (t < t_hi)
        for f in np.nonzero(hit)[0]:
            if _boundary_hit_blocks(u[f], v[f], _EDGE_MARGIN, f, d,
                                    normals, neighbors):
                out[i] = True
                break
    return out


@njit(cache=True)
def _segments_blocked_kernel(origins, ends, eps,
                             node_lo, node_hi, node_left, node_right,
                             node_start, node_count, perm,
                             v0, e1, e2, normals, neighbors, out):
    n_seg = origins.shape[0]
    stack = np.empty(128, dtype=np.int64)
    margin = _EDGE_MARGIN
    for s in range(n_seg):
        ox, oy, oz = origins[s, 0], origins[s, 1], origins[s, 2]
        dx = ends[s, 0] - ox
        dy = ends[s, 1] - oy
        dz = ends[s, 2] - oz
        seg_len = np.sqrt(dx * dx + dy * dy + dz * dz)
        if seg_len <= 2.0 * eps:
            continue
        t_lo = eps / seg_len
        t_hi = 1.0 - t_lo
        inv_dx = 1.0 / dx if dx != 0.0 else np.inf
        inv_dy = 1.0 / dy if dy != 0.0 else np.inf
        inv_dz = 1.0 / dz if dz != 0.0 else np.inf

        top = 0
        stack[top] = 0
        top += 1
        blocked = False
        while top > 0 and not blocked:
            top -= 1
            node = stack[top]
            tmin = 0.0
            tmax = 1.0
            t1 = (node_lo[node, 0] - ox) * inv_dx
            t2 = (node_hi[node, 0] - ox) * inv_dx
            if t1 > t2:
                t1, t2 = t2, t1
            tmin = t1 if t1 > tmin else tmin
            tmax = t2 if t2 < tmax else tmax
            t1 = (node_lo[node, 1] - oy) * inv_dy
            t2 = (node_hi[node, 1] - oy) * inv_dy
            if t1 > t2:
                t1, t2 = t2, t1
            tmin = t1 if t1 > tmin else tmin
            tmax = t2 if t2 < tmax else tmax
            t1 = (node_lo[node, 2] - oz) * inv_dz
            t2 = (node_hi[node, 2] - oz) * inv_dz
            if t1 > t2:
                t1, t2 = t2, t1
            tmin = t1 if t1 > tmin else tmin
            tmax = t2 if t2 < tmax else tmax
            if tmin > tmax:
                continue
            cnt = node_count[node]
            if cnt > 0:
                start = node_start[node]
                for kk in range(start, start + cnt):
                    f = perm[kk]
                    px = dy * e2[f, 2] - dz * e2[f, 1]
                    py = dz * e2[f, 0] - dx * e2[f, 2]
                    pz = dx * e2[f, 1] - dy * e2[f, 0]
                    det = e1[f, 0] * px + e1[f, 1] * py + e1[f, 2] * pz
                    if det > -_PARALLEL_EPS and det < _PARALLEL_EPS:
                        continue
                    inv_det = 1.0 / det
                    tx = ox - v0[f, 0]
                    ty = oy - v0[f, 1]
                    tz = oz - v0[f, 2]
                    u = (tx * px + ty * py + tz * pz) * inv_det
                    if u < -margin or u > 1.0 + margin:
                        continue
                    qx = ty * e1[f, 2] - tz * e1[f, 1]
                    qy = tz * e1[f, 0] - tx * e1[f, 2]
                    qz = tx * e1[f, 1] - ty * e1[f, 0]
                    v = (dx * qx + dy * qy + dz * qz) * inv_det
                    if v < -margin or u + v > 1.0 + margin:
                        continue
                    t = (e2[f, 0] * qx + e2[f, 1] * qy + e2[f, 2] * qz) * inv_det
                    if t <= t_lo or t >= t_hi:
                        continue
                    near_u0 = u <= margin
                    near_v0 = v <= margin
                    near_hyp = u + v >= 1.0 - margin
                    if (near_u0 and near_v0) or (near_u0 and near_hyp) or \
                            (near_v0 and near_hyp):
                        continue              # vertex passage
                    if near_v0 or near_hyp or near_u0:
                        if near_v0:
                            nb = neighbors[f, 0]
                        elif near_hyp:
                            nb = neighbors[f, 1]
                        else:
                            nb = neighbors[f, 2]
                        if nb < 0:
                            continue          # sheet rim graze
                        s1 = (dx * normals[f, 0] + dy * normals[f, 1]
                              + dz * normals[f, 2])
                        s2 = (dx * normals[nb, 0] + dy * normals[nb, 1]
                              + dz * normals[nb, 2])
                        if s1 * s2 <= 0.0:
                            continue          # tangential silhouette graze
                    blocked = True
                    break
            else:
                stack[top] = node_left[node]
                top += 1
                stack[top] = node_right[node]
                top += 1
        out[s] = blocked
