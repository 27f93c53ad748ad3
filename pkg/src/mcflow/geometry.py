"""Scene geometry: solids, ray queries, boundary sampling, insidedness.

Solids are closed polylines (2D) or watertight triangle meshes (3D).
Normals are oriented *outward from the fluid*: for an obstacle immersed
in fluid they point into the solid, for a container (bounded fluid
domain) they point out of the shell.  Everything downstream relies on
this orientation, which is pinned by the kappa*sign kernel identity
tests.

All queries are vectorized over query points; scenes are immutable
after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


class GeometryError(ValueError):
    pass


class NoBoundary(GeometryError):
    pass


# rows per intersection tile; keeps [rows x nseg] temporaries ~64 MB
_TILE_ELEMS = 8_000_000


def _cross2(u, v):
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


@dataclass(frozen=True)
class SegmentSet:
    """2D boundary as a soup of oriented segments."""

    a: np.ndarray          # [n, 2] segment start
    b: np.ndarray          # [n, 2] segment end
    normal: np.ndarray     # [n, 2] unit, outward from fluid
    solid_id: np.ndarray   # [n] int
    length: np.ndarray     # [n]

    @property
    def count(self) -> int:
        return len(self.length)

    @property
    def total_measure(self) -> float:
        return float(self.length.sum())


@dataclass(frozen=True)
class TriangleSet:
    """3D boundary as a soup of oriented triangles."""

    v0: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    normal: np.ndarray
    solid_id: np.ndarray
    area: np.ndarray

    @property
    def count(self) -> int:
        return len(self.area)

    @property
    def total_measure(self) -> float:
        return float(self.area.sum())


@dataclass(frozen=True)
class Hit:
    point: np.ndarray
    normal: np.ndarray
    t_ray: float
    solid_id: int


def _polygon_segments(vertices: np.ndarray, solid_id: int, container: bool):
    """Segments of one closed loop with outward-from-fluid normals."""
    v = np.asarray(vertices, float)
    if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
        raise GeometryError("polygon needs at least 3 2D vertices")
    if np.linalg.norm(v[0] - v[-1]) < 1e-14 * (1.0 + np.abs(v).max()):
        v = v[:-1]
    # normalize to counter-clockwise
    signed_area = 0.5 * np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
    if signed_area < 0.0:
        v = v[::-1]
    a = v
    b = np.roll(v, -1, axis=0)
    e = b - a
    length = np.linalg.norm(e, axis=1)
    if np.any(length == 0.0):
        raise GeometryError("degenerate polygon edge")
    # CCW loop: (-ey, ex) points into the polygon interior
    interior = np.stack([-e[:, 1], e[:, 0]], axis=1) / length[:, None]
    normal = -interior if container else interior
    sid = np.full(len(a), solid_id, dtype=np.int64)
    return a, b, normal, sid, length


@dataclass(frozen=True)
class Solid:
    """One rigid solid: closed loop(s)/shell plus a constant velocity."""

    vertices: np.ndarray            # 2D: [n,2] loop; 3D: [n,3] positions
    faces: np.ndarray | None = None  # 3D only: [m,3] vertex indices
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    container: bool = False

    @property
    def dimension(self) -> int:
        return self.vertices.shape[1]


def circle_vertices(center, radius: float, n: int = 64) -> np.ndarray:
    theta = 2.0 * np.pi * np.arange(n) / n
    return np.asarray(center, float) + radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)


def box_vertices(lo, hi) -> np.ndarray:
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    return np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])


def sphere_mesh(center, radius: float, subdiv: int = 3):
    """Octahedron-subdivision sphere mesh (positions, faces)."""
    verts = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float)
    faces = np.array([[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4],
                      [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]])
    for _ in range(subdiv):
        new_faces = []
        verts = list(verts)
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for i, j, k in faces:
            ij, jk, ki = midpoint(i, j), midpoint(j, k), midpoint(k, i)
            new_faces += [[i, ij, ki], [j, jk, ij], [k, ki, jk], [ij, jk, ki]]
        verts = np.array([v / np.linalg.norm(v) for v in verts])
        faces = np.array(new_faces)
    return np.asarray(center, float) + radius * verts, faces


def load_obj(path: str):
    """OBJ positions + faces only; polygon faces are fan-triangulated."""
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    if not verts or not faces:
        raise GeometryError(f"no geometry in OBJ file {path}")
    return np.array(verts, float), np.array(faces, int)


def _build_triangles(solid: Solid, sid: int):
    v = np.asarray(solid.vertices, float)
    f = np.asarray(solid.faces, int)
    v0, v1, v2 = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    n = np.cross(v1 - v0, v2 - v0)
    twice_area = np.linalg.norm(n, axis=1)
    if np.any(twice_area == 0.0):
        raise GeometryError("degenerate triangle")
    n = n / twice_area[:, None]
    # mesh faces are assumed oriented outward from the solid material
    if not solid.container:
        n = -n
    return v0, v1, v2, n, np.full(len(f), sid, np.int64), 0.5 * twice_area


@dataclass(frozen=True)
class Scene:
    """Immutable simulation world: solids, domain box, sinks."""

    dimension: int
    boundary: SegmentSet | TriangleSet | None
    solid_velocities: np.ndarray    # [n_solids, d]
    sim_lo: np.ndarray
    sim_hi: np.ndarray
    bounded: bool = False
    sink_pos: np.ndarray = None
    sink_strength: np.ndarray = None

    @property
    def eps_geo(self) -> float:
        return 1e-9 * float(np.linalg.norm(self.sim_hi - self.sim_lo))

    @property
    def has_solids(self) -> bool:
        return self.boundary is not None and self.boundary.count > 0

    @property
    def fluid_winding(self) -> int:
        return 1 if self.bounded else 0

    @property
    def has_sinks(self) -> bool:
        return self.sink_pos is not None and len(self.sink_pos) > 0

    # ------------------------------------------------------------------
    # construction helpers

    def at_time(self, t: float) -> "Scene":
        """Snapshot with every solid rigidly translated to time t."""
        if not self.has_solids or t == 0.0:
            return self
        shift = self.solid_velocities * t
        bnd = self.boundary
        if self.dimension == 2:
            off = shift[bnd.solid_id]
            bnd = replace(bnd, a=bnd.a + off, b=bnd.b + off)
        else:
            off = shift[bnd.solid_id]
            bnd = replace(bnd, v0=bnd.v0 + off, v1=bnd.v1 + off, v2=bnd.v2 + off)
        return replace(self, boundary=bnd)

    # ------------------------------------------------------------------
    # domain queries

    def in_sim_domain(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.all((pts >= self.sim_lo) & (pts <= self.sim_hi), axis=-1)

    def enclosing_radius(self, pts: np.ndarray) -> np.ndarray:
        """Distance from each point to the farthest corner of the sim box."""
        pts = np.atleast_2d(pts)
        far = np.maximum(np.abs(pts - self.sim_lo), np.abs(pts - self.sim_hi))
        return np.linalg.norm(far, axis=-1)

    # ------------------------------------------------------------------
    # intersection queries

    def _segment_hits(self, origins, dirs):
        """t parameters of line/segment intersections.

        Returns (t[N, nseg], valid[N, nseg]); t is signed along dirs.
        Segment endpoints use a half-open rule so a line through a shared
        loop vertex hits exactly one of the two adjacent segments.
        """
        bnd = self.boundary
        e = bnd.b - bnd.a                       # [m,2]
        ao = bnd.a[None, :, :] - origins[:, None, :]
        den = _cross2(dirs[:, None, :], e[None, :, :])
        ok = np.abs(den) > 1e-300
        den_safe = np.where(ok, den, 1.0)
        t = _cross2(ao, e[None, :, :]) / den_safe
        s = _cross2(ao, dirs[:, None, :]) / den_safe
        valid = ok & (s >= 0.0) & (s < 1.0)
        return t, valid

    def _triangle_hits(self, origins, dirs):
        """Moller-Trumbore; same contract as _segment_hits."""
        bnd = self.boundary
        e1 = bnd.v1 - bnd.v0
        e2 = bnd.v2 - bnd.v0
        p = np.cross(dirs[:, None, :], e2[None, :, :])
        den = np.einsum("me,nme->nm", e1, p)
        ok = np.abs(den) > 1e-300
        den_safe = np.where(ok, den, 1.0)
        tv = origins[:, None, :] - bnd.v0[None, :, :]
        u = np.einsum("nme,nme->nm", tv, p) / den_safe
        q = np.cross(tv, e1[None, :, :])
        v = np.einsum("nme,nme->nm", dirs[:, None, :], q) / den_safe
        t = np.einsum("me,nme->nm", e2, q) / den_safe
        valid = ok & (u >= 0.0) & (v >= 0.0) & (u + v < 1.0)
        return t, valid

    def _line_hits(self, origins, dirs):
        if self.dimension == 2:
            return self._segment_hits(origins, dirs)
        return self._triangle_hits(origins, dirs)

    def intersect_all(self, origin, direction) -> list[Hit]:
        """All boundary hits along the ray (t >= eps_geo), sorted by t.

        Ties are broken by primitive index so the ordering is
        deterministic; callers handle the full line by issuing +/- rays.
        """
        if not self.has_solids:
            return []
        origin = np.asarray(origin, float).reshape(1, -1)
        direction = np.asarray(direction, float).reshape(1, -1)
        t, valid = self._line_hits(origin, direction)
        t, valid = t[0], valid[0]
        keep = valid & (t >= self.eps_geo)
        idx = np.nonzero(keep)[0]
        order = np.lexsort((idx, t[idx]))
        bnd = self.boundary
        hits = []
        for j in idx[order]:
            pt = origin[0] + t[j] * direction[0]
            hits.append(Hit(point=pt, normal=bnd.normal[j].copy(),
                            t_ray=float(t[j]), solid_id=int(bnd.solid_id[j])))
        return hits

    def winding_sum(self, pts: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Sum of sign(dir . normal) over ray hits, one ray per point."""
        if not self.has_solids:
            return np.zeros(len(pts), dtype=np.int64)
        nseg = self.boundary.count
        rows = max(1, _TILE_ELEMS // max(nseg, 1))
        out = np.zeros(len(pts), np.int64)
        for s0 in range(0, len(pts), rows):
            sl = slice(s0, min(s0 + rows, len(pts)))
            t, valid = self._line_hits(pts[sl], dirs[sl])
            keep = valid & (t >= self.eps_geo)
            sgn = np.sign(dirs[sl] @ self.boundary.normal.T)
            out[sl] = np.sum(keep * sgn, axis=1).astype(np.int64)
        return out

    def inside_solid(self, pts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Monte Carlo winding-number insidedness (solid side of the boundary).

        One random-direction ray per point; points within eps_geo of the
        boundary may land on either side.
        """
        pts = np.atleast_2d(np.asarray(pts, float))
        if not self.has_solids:
            return np.zeros(len(pts), bool)
        from .kernels import sample_unit_directions

        dirs = sample_unit_directions(self.dimension, rng, len(pts))
        return self.winding_sum(pts, dirs) != self.fluid_winding

    def in_fluid(self, pts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Inside the active fluid region Omega^s (used to zero integrands)."""
        pts = np.atleast_2d(np.asarray(pts, float))
        if self.bounded:
            return ~self.inside_solid(pts, rng)
        ok = self.in_sim_domain(pts)
        if self.has_solids and ok.any():
            ok = ok & ~self.inside_solid(pts, rng)
        return ok

    # ------------------------------------------------------------------
    # boundary sampling

    def sample_boundary_uniform(self, rng: np.random.Generator, n: int = 1):
        """n area-uniform boundary points: (pts, normals, solid_ids, pdf)."""
        if not self.has_solids:
            raise NoBoundary("no boundary")
        bnd = self.boundary
        measures = bnd.length if self.dimension == 2 else bnd.area
        cum = np.cumsum(measures)
        total = cum[-1]
        u = rng.random(n) * total
        idx = np.searchsorted(cum, u, side="right").clip(0, bnd.count - 1)
        if self.dimension == 2:
            frac = rng.random(n)
            pts = bnd.a[idx] + frac[:, None] * (bnd.b[idx] - bnd.a[idx])
        else:
            r1 = np.sqrt(rng.random(n))
            r2 = rng.random(n)
            w0 = 1.0 - r1
            w1 = r1 * (1.0 - r2)
            w2 = r1 * r2
            pts = (w0[:, None] * bnd.v0[idx] + w1[:, None] * bnd.v1[idx]
                   + w2[:, None] * bnd.v2[idx])
        return pts, bnd.normal[idx].copy(), bnd.solid_id[idx].copy(), 1.0 / total

    def sample_line_intersection(self, x: np.ndarray, rng: np.random.Generator):
        """Uniform-line intersection sampling from each point in x [N, d].

        Draws one uniformly random (undirected) line through each point
        and picks uniformly among its boundary intersections, excluding
        hits within eps_geo of the point itself.  Returns
        (y, n_y, kappa, sign, hit) where sign = sgn(n(y) . (y - x)) and
        hit is False where the line misses the boundary (kappa = 0).

        The PDF of y given x is 2 |n(y) . (y - x)| / (|dB| kappa r^d),
        which makes 2 dG/dn / P_R collapse to kappa * sign.
        """
        from .kernels import sample_unit_directions

        x = np.atleast_2d(np.asarray(x, float))
        n_pts = len(x)
        if not self.has_solids:
            z = np.zeros((n_pts, self.dimension))
            return z, z.copy(), np.zeros(n_pts, np.int64), np.zeros(n_pts), np.zeros(n_pts, bool)
        dirs = sample_unit_directions(self.dimension, rng, n_pts)
        sel_u = rng.random(n_pts)

        bnd = self.boundary
        nseg = bnd.count
        rows = max(1, _TILE_ELEMS // max(nseg, 1))
        y = np.zeros((n_pts, self.dimension))
        n_y = np.zeros((n_pts, self.dimension))
        kappa = np.zeros(n_pts, np.int64)
        hit = np.zeros(n_pts, bool)
        eps = self.eps_geo
        for s0 in range(0, n_pts, rows):
            sl = slice(s0, min(s0 + rows, n_pts))
            t, valid = self._line_hits(x[sl], dirs[sl])
            valid = valid & (np.abs(t) >= eps)
            k = valid.sum(axis=1)
            kappa[sl] = k
            got = k > 0
            hit[sl] = got
            # pick the (floor(u*kappa)+1)-th valid entry per row
            target = np.minimum((sel_u[sl] * k).astype(np.int64), np.maximum(k - 1, 0)) + 1
            csum = np.cumsum(valid, axis=1)
            pick = np.argmax(csum == target[:, None], axis=1)
            rows_idx = np.nonzero(got)[0]
            seg = pick[rows_idx]
            tt = t[rows_idx, seg]
            y[sl][rows_idx] = x[sl][rows_idx] + tt[:, None] * dirs[sl][rows_idx]
            n_y[sl][rows_idx] = bnd.normal[seg]
        sign = np.sign(np.sum(n_y * (y - x), axis=-1))
        sign[~hit] = 0.0
        return y, n_y, kappa, sign, hit

    # ------------------------------------------------------------------
    # solid attribution

    def closest_boundary(self, pts: np.ndarray):
        """(closest boundary point, primitive index) per query point."""
        if not self.has_solids:
            raise NoBoundary("no boundary")
        pts = np.atleast_2d(np.asarray(pts, float))
        bnd = self.boundary
        if self.dimension == 2:
            e = bnd.b - bnd.a
            ee = np.sum(e * e, axis=1)
            ap = pts[:, None, :] - bnd.a[None, :, :]
            tt = np.clip(np.einsum("nme,me->nm", ap, e) / ee[None, :], 0.0, 1.0)
            closest = bnd.a[None, :, :] + tt[..., None] * e[None, :, :]
        else:
            closest = _closest_on_triangles(pts, bnd.v0, bnd.v1, bnd.v2)
        d2 = np.sum((pts[:, None, :] - closest) ** 2, axis=-1)
        idx = np.argmin(d2, axis=1)
        return closest[np.arange(len(pts)), idx], idx

    def solid_velocity(self, pts, t: float = 0.0) -> np.ndarray:
        """Rigid velocity of the solid nearest to each point (zeros if none)."""
        pts = np.atleast_2d(np.asarray(pts, float))
        if not self.has_solids:
            return np.zeros_like(pts)
        if len(self.solid_velocities) == 1:
            return np.broadcast_to(self.solid_velocities[0], pts.shape).copy()
        _, idx = self.at_time(t).closest_boundary(pts)
        return self.solid_velocities[self.boundary.solid_id[idx]]


def _closest_on_triangles(pts, v0, v1, v2):
    """Closest point on each triangle for each query point, [N, m, 3]."""
    e0 = v1 - v0
    e1 = v2 - v0
    w = pts[:, None, :] - v0[None, :, :]
    a = np.sum(e0 * e0, axis=1)[None, :]
    b = np.sum(e0 * e1, axis=1)[None, :]
    c = np.sum(e1 * e1, axis=1)[None, :]
    d = np.einsum("nme,me->nm", w, e0)
    e = np.einsum("nme,me->nm", w, e1)
    det = a * c - b * b
    s = np.clip((c * d - b * e) / det, 0.0, 1.0)
    t = np.clip((a * e - b * d) / det, 0.0, 1.0)
    outside = s + t > 1.0
    # project onto the three edges and keep the nearest candidate
    cand = []
    cand.append(v0[None] + s[..., None] * e0[None] + t[..., None] * e1[None])
    t01 = np.clip(d / a, 0.0, 1.0)
    cand.append(v0[None] + t01[..., None] * e0[None])
    t02 = np.clip(e / c, 0.0, 1.0)
    cand.append(v0[None] + t02[..., None] * e1[None])
    e12 = v2 - v1
    w1 = pts[:, None, :] - v1[None, :, :]
    t12 = np.clip(np.einsum("nme,me->nm", w1, e12) / np.sum(e12 * e12, axis=1)[None, :], 0.0, 1.0)
    cand.append(v1[None] + t12[..., None] * e12[None])
    cand = np.stack(cand)  # [4, N, m, 3]
    d2 = np.sum((pts[None, :, None, :] - cand) ** 2, axis=-1)
    d2[0][outside] = np.inf  # interior projection invalid outside the triangle
    best = np.argmin(d2, axis=0)
    return np.take_along_axis(cand, best[None, ..., None], axis=0)[0]


def make_scene(
    solids: list[Solid] | None = None,
    sim_domain: tuple | None = None,
    sinks: list[tuple] | None = None,
    bounded: bool = False,
    dimension: int | None = None,
) -> Scene:
    """Assemble an immutable Scene from solids and the simulation box.

    sim_domain is ((lo...), (hi...)).  For the bounded case the fluid
    region is the interior of a single container solid and the box is
    only used for grids, sampling radii and seeding.
    """
    solids = solids or []
    if dimension is None:
        dimension = solids[0].dimension if solids else 2
    if sim_domain is None:
        raise GeometryError("sim_domain is required")
    lo = np.asarray(sim_domain[0], float)
    hi = np.asarray(sim_domain[1], float)
    if np.any(hi <= lo):
        raise GeometryError("degenerate sim domain")

    boundary = None
    vels = np.zeros((max(len(solids), 1), dimension))
    if solids:
        if dimension == 2:
            parts = [_polygon_segments(s.vertices, i, s.container) for i, s in enumerate(solids)]
            boundary = SegmentSet(
                a=np.concatenate([p[0] for p in parts]),
                b=np.concatenate([p[1] for p in parts]),
                normal=np.concatenate([p[2] for p in parts]),
                solid_id=np.concatenate([p[3] for p in parts]),
                length=np.concatenate([p[4] for p in parts]),
            )
        else:
            parts = [_build_triangles(s, i) for i, s in enumerate(solids)]
            boundary = TriangleSet(
                v0=np.concatenate([p[0] for p in parts]),
                v1=np.concatenate([p[1] for p in parts]),
                v2=np.concatenate([p[2] for p in parts]),
                normal=np.concatenate([p[3] for p in parts]),
                solid_id=np.concatenate([p[4] for p in parts]),
                area=np.concatenate([p[5] for p in parts]),
            )
        vels = np.stack([np.asarray(s.velocity, float) for s in solids])
        if bounded and sum(s.container for s in solids) != 1:
            raise GeometryError("bounded scene needs exactly one container solid")

    sink_pos = sink_strength = None
    if sinks:
        sink_pos = np.array([np.asarray(p, float) for p, _ in sinks])
        sink_strength = np.array([float(q) for _, q in sinks])

    return Scene(
        dimension=dimension,
        boundary=boundary,
        solid_velocities=vels,
        sim_lo=lo,
        sim_hi=hi,
        bounded=bounded,
        sink_pos=sink_pos,
        sink_strength=sink_strength,
    )
