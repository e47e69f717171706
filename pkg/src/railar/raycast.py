"""Ray-triangle intersection engine: Möller-Trumbore plus a median-split BVH.

Conventions (shared by the brute-force and BVH paths, which must produce
bit-identical results):
  - directions need not be normalized; the returned t is in units of the
    direction vector, so a hit point is origin + t * direction
  - a triangle is missed when the Möller-Trumbore determinant is exactly 0
  - barycentric boundaries are inclusive, so a ray through a shared edge
    hits both triangles; the winner is the lexicographic minimum of
    (t, triangle_index)
  - hits at t <= t_min are ignored
"""

from __future__ import annotations

import numpy as np
from numba import njit

NO_HIT = -1


@njit(inline="always")
def _intersect_triangle(ox, oy, oz, dx, dy, dz,
                        v0x, v0y, v0z, e1x, e1y, e1z, e2x, e2y, e2z, t_min):
    # Möller-Trumbore; returns np.inf on miss
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if det == 0.0:
        return np.inf
    inv = 1.0 / det
    tx = ox - v0x
    ty = oy - v0y
    tz = oz - v0z
    u = (tx * px + ty * py + tz * pz) * inv
    if u < 0.0 or u > 1.0:
        return np.inf
    qx = ty * e1z - tz * e1y
    qy = tz * e1x - tx * e1z
    qz = tx * e1y - ty * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return np.inf
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t <= t_min:
        return np.inf
    return t


@njit(cache=True, nogil=True)
def _cast_brute(origins, dirs, v0, e1, e2, t_min, t_out, idx_out):
    n = origins.shape[0]
    f_count = v0.shape[0]
    for i in range(n):
        ox, oy, oz = origins[i, 0], origins[i, 1], origins[i, 2]
        dx, dy, dz = dirs[i, 0], dirs[i, 1], dirs[i, 2]
        best_t = np.inf
        best_f = NO_HIT
        for f in range(f_count):
            t = _intersect_triangle(
                ox, oy, oz, dx, dy, dz,
                v0[f, 0], v0[f, 1], v0[f, 2],
                e1[f, 0], e1[f, 1], e1[f, 2],
                e2[f, 0], e2[f, 1], e2[f, 2], t_min)
            if t < best_t or (t == best_t and t < np.inf and f < best_f):
                best_t = t
                best_f = f
        t_out[i] = best_t
        idx_out[i] = best_f


@njit(cache=True, nogil=True)
def _cast_bvh(origins, dirs, v0, e1, e2,
              node_min, node_max, node_left, node_right,
              leaf_start, leaf_count, tri_order, t_min, t_out, idx_out):
    n = origins.shape[0]
    stack = np.empty(128, dtype=np.int64)
    for i in range(n):
        ox, oy, oz = origins[i, 0], origins[i, 1], origins[i, 2]
        dx, dy, dz = dirs[i, 0], dirs[i, 1], dirs[i, 2]
        # parallel axes are tested by containment; avoids 0 * inf = NaN
        inv_x = 1.0 / dx if dx != 0.0 else 0.0
        inv_y = 1.0 / dy if dy != 0.0 else 0.0
        inv_z = 1.0 / dz if dz != 0.0 else 0.0
        best_t = np.inf
        best_f = NO_HIT
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            # slab test against the node AABB
            tnear = t_min
            tfar = np.inf
            ok = True
            if dx == 0.0:
                ok = node_min[node, 0] <= ox <= node_max[node, 0]
            else:
                t1 = (node_min[node, 0] - ox) * inv_x
                t2 = (node_max[node, 0] - ox) * inv_x
                if t2 < t1:
                    t1, t2 = t2, t1
                if t1 > tnear:
                    tnear = t1
                if t2 < tfar:
                    tfar = t2
            if ok and dy != 0.0:
                t1 = (node_min[node, 1] - oy) * inv_y
                t2 = (node_max[node, 1] - oy) * inv_y
                if t2 < t1:
                    t1, t2 = t2, t1
                if t1 > tnear:
                    tnear = t1
                if t2 < tfar:
                    tfar = t2
            elif ok:
                ok = node_min[node, 1] <= oy <= node_max[node, 1]
            if ok and dz != 0.0:
                t1 = (node_min[node, 2] - oz) * inv_z
                t2 = (node_max[node, 2] - oz) * inv_z
                if t2 < t1:
                    t1, t2 = t2, t1
                if t1 > tnear:
                    tnear = t1
                if t2 < tfar:
                    tfar = t2
            elif ok:
                ok = node_min[node, 2] <= oz <= node_max[node, 2]
            if not ok or tnear > tfar:
                continue
            if tnear > best_t:
                continue  # strict: equal-t candidates must still be visited
            cnt = leaf_count[node]
            if cnt > 0:
                start = leaf_start[node]
                for k in range(start, start + cnt):
                    f = tri_order[k]
                    t = _intersect_triangle(
                        ox, oy, oz, dx, dy, dz,
                        v0[f, 0], v0[f, 1], v0[f, 2],
                        e1[f, 0], e1[f, 1], e1[f, 2],
                        e2[f, 0], e2[f, 1], e2[f, 2], t_min)
                    if t < best_t or (t == best_t and t < np.inf and f < best_f):
                        best_t = t
                        best_f = f
            else:
                stack[sp] = node_left[node]
                sp += 1
                stack[sp] = node_right[node]
                sp += 1
        t_out[i] = best_t
        idx_out[i] = best_f


def _build_bvh(tri_min: np.ndarray, tri_max: np.ndarray, leaf_size: int):
    """Deterministic median-split BVH over triangle AABBs.

    Returns flat arrays (node_min, node_max, left, right, leaf_start,
    leaf_count, tri_order). Internal nodes have leaf_count == 0.
    """
    n_tris = tri_min.shape[0]
    centroids = 0.5 * (tri_min + tri_max)

    node_min, node_max = [], []
    node_left, node_right = [], []
    leaf_start, leaf_count = [], []
    tri_order = np.empty(n_tris, dtype=np.int64)
    order_fill = 0

    # stack of (node_id, triangle indices); children allocated on pop
    pending = [(0, np.arange(n_tris, dtype=np.int64))]
    for arr in (node_min, node_max, node_left, node_right, leaf_start, leaf_count):
        arr.append(None)

    while pending:
        node_id, idx = pending.pop()
        node_min[node_id] = tri_min[idx].min(axis=0)
        node_max[node_id] = tri_max[idx].max(axis=0)
        if idx.shape[0] <= leaf_size:
            node_left[node_id] = -1
            node_right[node_id] = -1
            leaf_start[node_id] = order_fill
            leaf_count[node_id] = idx.shape[0]
            tri_order[order_fill:order_fill + idx.shape[0]] = np.sort(idx)
            order_fill += idx.shape[0]
            continue
        c = centroids[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        order = np.lexsort((idx, c[:, axis]))  # tie-break on index: deterministic
        half = idx.shape[0] // 2
        left_idx = idx[order[:half]]
        right_idx = idx[order[half:]]
        left_id = len(node_left)
        right_id = left_id + 1
        for arr in (node_min, node_max, node_left, node_right, leaf_start, leaf_count):
            arr.extend([None, None])
        node_left[node_id] = left_id
        node_right[node_id] = right_id
        leaf_start[node_id] = 0
        leaf_count[node_id] = 0
        pending.append((left_id, left_idx))
        pending.append((right_id, right_idx))

    return (
        np.asarray(node_min, dtype=np.float64),
        np.asarray(node_max, dtype=np.float64),
        np.asarray(node_left, dtype=np.int64),
        np.asarray(node_right, dtype=np.int64),
        np.asarray(leaf_start, dtype=np.int64),
        np.asarray(leaf_count, dtype=np.int64),
        tri_order,
    )


class RaycastScene:
    """Immutable triangle soup prepared for repeated ray queries.

    Carries per-triangle stencil ids and colors so callers can map a hit
    index back to the mesh it came from.
    """

    def __init__(self, vertices: np.ndarray, triangles: np.ndarray,
                 tri_stencil: np.ndarray | None = None,
                 tri_color: np.ndarray | None = None,
                 leaf_size: int = 4):
        vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        f = triangles.shape[0]
        self.n_triangles = f
        self.v0 = np.ascontiguousarray(vertices[triangles[:, 0]]) if f else np.zeros((0, 3))
        self.e1 = (vertices[triangles[:, 1]] - vertices[triangles[:, 0]]) if f else np.zeros((0, 3))
        self.e2 = (vertices[triangles[:, 2]] - vertices[triangles[:, 0]]) if f else np.zeros((0, 3))
        self.e1 = np.ascontiguousarray(self.e1)
        self.e2 = np.ascontiguousarray(self.e2)
        cross = np.cross(self.e1, self.e2)
        norm = np.linalg.norm(cross, axis=1, keepdims=True)
        norm[norm == 0] = 1.0
        self.normals = cross / norm  # unit geometric normals, winding-dependent
        self.tri_stencil = (np.asarray(tri_stencil, dtype=np.uint16)
                            if tri_stencil is not None else np.zeros(f, dtype=np.uint16))
        self.tri_color = (np.asarray(tri_color, dtype=np.float64)
                          if tri_color is not None else np.full((f, 3), 200.0))
        if f:
            pts = np.stack([self.v0, self.v0 + self.e1, self.v0 + self.e2])
            self._bvh = _build_bvh(pts.min(axis=0), pts.max(axis=0), leaf_size)
        else:
            self._bvh = None

    def cast(self, origins: np.ndarray, dirs: np.ndarray,
             t_min: float = 1e-9, use_bvh: bool = True):
        """Intersect rays with the scene.

        Args:
            origins: (N, 3) ray origins.
            dirs: (N, 3) ray directions (need not be unit length).
            t_min: hits at or below this parameter are ignored.
            use_bvh: traverse the BVH; False forces the all-triangles loop.
                Both paths return bit-identical results.

        Returns:
            t: (N,) hit parameter, np.inf where nothing was hit.
            idx: (N,) triangle index, -1 where nothing was hit.
        """
        origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
        dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
        if origins.shape != dirs.shape:
            raise ValueError("origins and dirs must have matching shapes")
        n = origins.shape[0]
        t_out = np.empty(n, dtype=np.float64)
        idx_out = np.empty(n, dtype=np.int64)
        if self.n_triangles == 0:
            t_out.fill(np.inf)
            idx_out.fill(NO_HIT)
            return t_out, idx_out
        if use_bvh:
            nmin, nmax, left, right, lstart, lcount, order = self._bvh
            _cast_bvh(origins, dirs, self.v0, self.e1, self.e2,
                      nmin, nmax, left, right, lstart, lcount, order,
                      float(t_min), t_out, idx_out)
        else:
            _cast_brute(origins, dirs, self.v0, self.e1, self.e2,
                        float(t_min), t_out, idx_out)
        return t_out, idx_out
