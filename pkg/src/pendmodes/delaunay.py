"""Incremental Bowyer-Watson Delaunay triangulation with robust
predicates.

Orientation and in-circle tests are evaluated in floating point behind a
forward error bound; only near-degenerate cases fall back to exact
rational arithmetic (floats are exact rationals, so the fallback sign is
always correct).  The point clouds triangulated here contain long exactly
collinear runs (orbit samples sharing one energy), which makes the exact
on-edge handling load-bearing, not theoretical.

Insertion follows a Morton-order schedule with a walk from the last
touched triangle, giving near-linear construction time.  Point location
for queries starts from a uniform background grid of triangle seeds and
finishes with a visibility walk.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

_ORIENT_EPS = 3.3306690738754716e-16
_INCIRCLE_EPS = 5.0e-15


class DegenerateTriangulation(Exception):
    pass


class OutOfHull(Exception):
    pass


def orient2d(ax, ay, bx, by, cx, cy) -> int:
    """Sign of the doubled signed area of (a, b, c); +1 for
    counterclockwise."""
    detleft = (bx - ax) * (cy - ay)
    detright = (by - ay) * (cx - ax)
    det = detleft - detright
    detsum = abs(detleft) + abs(detright)
    if abs(det) > _ORIENT_EPS * detsum:
        return 1 if det > 0.0 else -1
    F = Fraction
    det = (F(bx) - F(ax)) * (F(cy) - F(ay)) - (F(by) - F(ay)) * (F(cx) - F(ax))
    return (det > 0) - (det < 0)


def incircle(ax, ay, bx, by, cx, cy, dx, dy) -> int:
    """+1 if d lies inside the circumcircle of the counterclockwise
    triangle (a, b, c), -1 outside, 0 cocircular."""
    adx = ax - dx
    ady = ay - dy
    bdx = bx - dx
    bdy = by - dy
    cdx = cx - dx
    cdy = cy - dy
    ad2 = adx * adx + ady * ady
    bd2 = bdx * bdx + bdy * bdy
    cd2 = cdx * cdx + cdy * cdy
    det = (
        ad2 * (bdx * cdy - bdy * cdx)
        + bd2 * (cdx * ady - cdy * adx)
        + cd2 * (adx * bdy - ady * bdx)
    )
    perm = (
        ad2 * (abs(bdx * cdy) + abs(bdy * cdx))
        + bd2 * (abs(cdx * ady) + abs(cdy * adx))
        + cd2 * (abs(adx * bdy) + abs(ady * bdx))
    )
    if abs(det) > _INCIRCLE_EPS * perm:
        return 1 if det > 0.0 else -1
    F = Fraction
    adx = F(ax) - F(dx)
    ady = F(ay) - F(dy)
    bdx = F(bx) - F(dx)
    bdy = F(by) - F(dy)
    cdx = F(cx) - F(dx)
    cdy = F(cy) - F(dy)
    det = (
        (adx * adx + ady * ady) * (bdx * cdy - bdy * cdx)
        + (bdx * bdx + bdy * bdy) * (cdx * ady - cdy * adx)
        + (cdx * cdx + cdy * cdy) * (adx * bdy - ady * bdx)
    )
    return (det > 0) - (det < 0)


def _morton_order(pts: np.ndarray) -> np.ndarray:
    """Z-order insertion schedule (16 bits per axis)."""
    lo = pts.min(axis=0)
    span = pts.max(axis=0) - lo
    span[span == 0.0] = 1.0
    scaled = ((pts - lo) / span * 65535.0).astype(np.uint64)
    code = np.zeros(len(pts), dtype=np.uint64)
    for bit in range(16):
        code |= ((scaled[:, 0] >> np.uint64(bit)) & np.uint64(1)) << np.uint64(2 * bit)
        code |= ((scaled[:, 1] >> np.uint64(bit)) & np.uint64(1)) << np.uint64(2 * bit + 1)
    return np.argsort(code, kind="stable")


class Triangulation:
    """Delaunay triangulation of a planar point set.

    Attributes after construction: `points` (n, 2), `triangles` (m, 3
    vertex indices, counterclockwise) and `neighbors` (m, 3; entry k is
    the triangle across the edge opposite vertex k, -1 on the hull).
    """

    def __init__(self, points: np.ndarray, grid_res: int = 0):
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != 2 or len(points) < 3:
            raise DegenerateTriangulation("need at least three 2-d points")
        self.points = points
        self._build()
        if len(self.triangles) == 0:
            raise DegenerateTriangulation("all points collinear")
        if grid_res == 0:
            grid_res = max(8, int(np.sqrt(len(self.triangles) / 2.0)))
        self._build_grid(grid_res)

    # -- construction ---------------------------------------------------

    def _build(self):
        pts = self.points
        n = len(pts)
        self._walk_rng = np.random.default_rng(0)  # reproducible walks
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        center = 0.5 * (lo + hi)
        radius = max(hi[0] - lo[0], hi[1] - lo[1], 1e-9)
        big = 65536.0 * radius
        # super-triangle vertices live past any real circumcircle that a
        # non-degenerate interior triangle can produce
        sx = [center[0] - big, center[0] + big, center[0]]
        sy = [center[1] - big, center[1] - big, center[1] + big]
        px = list(pts[:, 0]) + sx
        py = list(pts[:, 1]) + sy

        tri_v = [[n, n + 1, n + 2]]
        tri_n = [[-1, -1, -1]]
        dead = [False]
        last = 0

        order = _morton_order(pts)
        for p in order:
            x, y = px[p], py[p]
            t_loc, on_edge = self._locate_build(px, py, tri_v, tri_n, dead, last, x, y)
            cavity = self._grow_cavity(px, py, tri_v, tri_n, dead, t_loc, on_edge, x, y)
            last = self._retriangulate(px, py, tri_v, tri_n, dead, cavity, p, x, y)
        del self._walk_rng

        keep = [
            t
            for t in range(len(tri_v))
            if not dead[t] and all(v < n for v in tri_v[t])
        ]
        remap = {t: i for i, t in enumerate(keep)}
        self.triangles = np.array([tri_v[t] for t in keep], dtype=np.int64).reshape(-1, 3)
        self.neighbors = np.array(
            [
                [remap.get(nb, -1) if nb >= 0 else -1 for nb in tri_n[t]]
                for t in keep
            ],
            dtype=np.int64,
        ).reshape(-1, 3)

    def _locate_build(self, px, py, tri_v, tri_n, dead, start, x, y):
        """Remembering stochastic visibility walk; returns (triangle,
        edge index if exactly on that edge else -1)."""
        t = start
        prev = -1
        rng = self._walk_rng
        for _ in range(8 * len(tri_v) + 64):
            vs = tri_v[t]
            on_edge = -1
            exits = []
            for k in range(3):
                a, b = vs[(k + 1) % 3], vs[(k + 2) % 3]
                s = orient2d(px[a], py[a], px[b], py[b], x, y)
                if s < 0:
                    exits.append(k)
                elif s == 0:
                    on_edge = k
            if not exits:
                return t, on_edge
            choices = [k for k in exits if tri_n[t][k] != prev] or exits
            k = choices[rng.integers(len(choices))] if len(choices) > 1 else choices[0]
            nxt = tri_n[t][k]
            if nxt < 0:
                raise DegenerateTriangulation("walk left the super-triangle")
            prev, t = t, nxt
        raise DegenerateTriangulation("point location did not terminate")

    @staticmethod
    def _grow_cavity(px, py, tri_v, tri_n, dead, t0, on_edge, x, y):
        cavity = {t0}
        stack = [t0]
        if on_edge >= 0 and tri_n[t0][on_edge] >= 0:
            # point exactly on an interior edge: both flanking triangles
            # must open up or a zero-area triangle would be created
            t1 = tri_n[t0][on_edge]
            cavity.add(t1)
            stack.append(t1)
        while stack:
            t = stack.pop()
            for nb in tri_n[t]:
                if nb < 0 or nb in cavity:
                    continue
                a, b, c = tri_v[nb]
                if incircle(px[a], py[a], px[b], py[b], px[c], py[c], x, y) > 0:
                    cavity.add(nb)
                    stack.append(nb)
        return cavity

    @staticmethod
    def _retriangulate(px, py, tri_v, tri_n, dead, cavity, p, x, y):
        # boundary edges of the cavity, with the outside triangle
        boundary = []
        for t in cavity:
            for k in range(3):
                nb = tri_n[t][k]
                if nb in cavity:
                    continue
                a, b = tri_v[t][(k + 1) % 3], tri_v[t][(k + 2) % 3]
                boundary.append((a, b, nb))
        for t in cavity:
            dead[t] = True

        edge_owner = {}
        new_ids = []
        for a, b, outer in boundary:
            tid = len(tri_v)
            tri_v.append([p, a, b])
            tri_n.append([outer, -1, -1])
            dead.append(False)
            if outer >= 0:
                # the outer slot opposite the shared edge {a, b} is the
                # one holding its third vertex
                ov = tri_v[outer]
                for k in range(3):
                    if ov[k] != a and ov[k] != b:
                        tri_n[outer][k] = tid
                        break
            edge_owner[(p, a)] = (tid, 2)  # edge (p, a) is opposite vertex b
            edge_owner[(b, p)] = (tid, 1)  # edge (b, p) is opposite vertex a
            new_ids.append(tid)
        for a, b, _ in boundary:
            tid, slot = edge_owner[(p, a)]
            other = edge_owner.get((a, p))
            if other:
                tri_n[tid][slot] = other[0]
            tid, slot = edge_owner[(b, p)]
            other = edge_owner.get((p, b))
            if other:
                tri_n[tid][slot] = other[0]
        return new_ids[-1]

    # -- queries --------------------------------------------------------

    def _build_grid(self, res: int):
        pts = self.points
        self._grid_lo = pts.min(axis=0)
        span = pts.max(axis=0) - self._grid_lo
        span[span == 0.0] = 1.0
        self._grid_span = span
        self._grid_res = res
        grid = np.full((res, res), -1, dtype=np.int64)
        centroids = pts[self.triangles].mean(axis=1)
        cells = self._cell_of(centroids)
        grid[cells[:, 0], cells[:, 1]] = np.arange(len(self.triangles))
        # flood-fill empty cells from filled neighbors
        while (grid < 0).any():
            empty = np.argwhere(grid < 0)
            filled_any = False
            for i, j in empty:
                for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    ii, jj = i + di, j + dj
                    if 0 <= ii < res and 0 <= jj < res and grid[ii, jj] >= 0:
                        grid[i, j] = grid[ii, jj]
                        filled_any = True
                        break
            if not filled_any:
                grid[grid < 0] = 0
        self._grid = grid

    def _cell_of(self, xy: np.ndarray) -> np.ndarray:
        rel = (np.atleast_2d(xy) - self._grid_lo) / self._grid_span
        return np.clip(
            (rel * self._grid_res).astype(np.int64), 0, self._grid_res - 1
        )

    def locate(self, x: float, y: float) -> int:
        """Index of a triangle containing (x, y); raises OutOfHull."""
        cell = self._cell_of(np.array([x, y]))[0]
        t = int(self._grid[cell[0], cell[1]])
        px, py = self.points[:, 0], self.points[:, 1]
        tv, tn = self.triangles, self.neighbors
        prev = -1
        rng = None
        for _ in range(8 * len(tv) + 64):
            vs = tv[t]
            exits = []
            for k in range(3):
                a, b = vs[(k + 1) % 3], vs[(k + 2) % 3]
                if orient2d(px[a], py[a], px[b], py[b], x, y) < 0:
                    exits.append(k)
            if not exits:
                return t
            choices = [k for k in exits if tn[t][k] != prev] or exits
            if len(choices) > 1:
                if rng is None:
                    rng = np.random.default_rng(17)
                k = choices[rng.integers(len(choices))]
            else:
                k = choices[0]
            nxt = tn[t][k]
            if nxt < 0:
                raise OutOfHull(f"query ({x:.6g}, {y:.6g}) outside the hull")
            prev, t = int(t), int(nxt)
        raise DegenerateTriangulation("query walk did not terminate")

    def barycentric(self, t: int, x: float, y: float) -> np.ndarray:
        """Barycentric weights of (x, y) in triangle t (sum to 1; tiny
        negative round-off is clipped)."""
        a, b, c = self.points[self.triangles[t]]
        det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        w1 = ((x - a[0]) * (c[1] - a[1]) - (y - a[1]) * (c[0] - a[0])) / det
        w2 = ((b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0])) / det
        w = np.array([1.0 - w1 - w2, w1, w2])
        w[np.abs(w) < 1e-14] = 0.0
        return w / w.sum()
