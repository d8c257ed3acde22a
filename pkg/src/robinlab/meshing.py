"""Conforming graded triangulation of polygonal domains.

The mesher follows the batch Delaunay-refinement pattern: boundary edges are
subdivided to the local size target, interior points are seeded on a hex
lattice, and rounds of scipy Delaunay triangulations insert circumcenters of
bad triangles (Ruppert's rule: a circumcenter that would encroach a boundary
segment splits the segment instead).  Cusp tips force arbitrarily thin
triangles; splits near marked singular vertices are floored so refinement
terminates, and the triangles that remain below the angle floor there are
reported as protected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .geometry import PolygonDomain, points_in_polygon, polygon_area

MAX_TRIANGLES_DEFAULT = 500_000


class MeshingError(RuntimeError):
    """Triangulation failed (degenerate input, non-conforming boundary...)."""


class MeshBudgetError(MeshingError):
    """Refinement exceeded the element budget."""


@dataclass(frozen=True)
class GradingSpec:
    """Geometric size decay toward singular vertices.

    Element size shrinks by the ratio q per ring over `depth` rings, so the
    innermost target size is h_target * q**depth.  Provide tip_size instead
    of depth to have depth derived as ceil(log(tip_size/h_target)/log(q)).
    """

    q: float = 0.6
    depth: int | None = 8
    tip_size: float | None = None

    def resolve(self, h_target: float) -> tuple[float, float]:
        if not 0.0 < self.q < 1.0:
            raise MeshingError("grading ratio q must be in (0,1)")
        if self.tip_size is not None:
            if not 0.0 < self.tip_size <= h_target:
                raise MeshingError("tip_size must be in (0, h_target]")
            depth = math.ceil(math.log(self.tip_size / h_target) / math.log(self.q))
            return self.q, h_target * self.q ** depth
        depth = 8 if self.depth is None else self.depth
        if depth < 0:
            raise MeshingError("grading depth must be >= 0")
        return self.q, h_target * self.q ** depth


@dataclass(frozen=True)
class Mesh:
    """Conforming triangulation with boundary tag inheritance.

    nodes: (n, 2) coordinates; triangles: (m, 3) counterclockwise node
    triples; boundary edges carry the polygon tag and relative Robin weight
    they were split from.  protected marks triangles near singular vertices
    that are allowed below the minimum-angle floor.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    edge_nodes: np.ndarray          # (k, 2) node pairs on the boundary
    edge_tags: tuple                # len k
    edge_beta: np.ndarray           # (k,) relative Robin weights
    grading_q: float = 1.0
    protected: np.ndarray = field(default=None)
    domain: PolygonDomain = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        tris = np.ascontiguousarray(self.triangles, dtype=np.int64)
        edges = np.ascontiguousarray(self.edge_nodes, dtype=np.int64)
        beta = np.ascontiguousarray(self.edge_beta, dtype=float)
        prot = self.protected
        prot = np.zeros(len(tris), dtype=bool) if prot is None else np.ascontiguousarray(prot, dtype=bool)
        # enforce counterclockwise triangles
        a, b, c = nodes[tris[:, 0]], nodes[tris[:, 1]], nodes[tris[:, 2]]
        signed = 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) -
                        (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
        flip = signed < 0.0
        if np.any(flip):
            tris = tris.copy()
            tris[flip, 1], tris[flip, 2] = tris[flip, 2].copy(), tris[flip, 1].copy()
        for arr in (nodes, tris, edges, beta, prot):
            arr.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "edge_nodes", edges)
        object.__setattr__(self, "edge_beta", beta)
        object.__setattr__(self, "protected", prot)

    # -- derived quantities --------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def triangle_areas(self) -> np.ndarray:
        a = self.nodes[self.triangles[:, 0]]
        b = self.nodes[self.triangles[:, 1]]
        c = self.nodes[self.triangles[:, 2]]
        return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) -
                      (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))

    def area(self) -> float:
        return float(math.fsum(self.triangle_areas()))

    def edge_lengths(self) -> np.ndarray:
        d = self.nodes[self.edge_nodes[:, 1]] - self.nodes[self.edge_nodes[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def min_angles_deg(self) -> np.ndarray:
        return _min_angles_deg(self.nodes, self.triangles)

    def validate(self, area_rtol: float = 1e-10) -> None:
        """Check conformity, orientation and area consistency; raise on failure."""
        if np.any(self.triangle_areas() <= 0.0):
            raise MeshingError("triangle with non-positive area")
        counts = _edge_counts(self.triangles)
        boundary = {e for e, c in counts.items() if c == 1}
        if np.any(np.array([c for c in counts.values()]) > 2):
            raise MeshingError("edge shared by more than two triangles")
        segs = {tuple(sorted(e)) for e in self.edge_nodes.tolist()}
        if boundary != segs:
            raise MeshingError("boundary edges do not match tagged segment set")
        if self.domain is not None:
            poly = polygon_area(self.domain.vertices)
            if abs(self.area() - poly) > area_rtol * abs(poly):
                raise MeshingError(
                    f"mesh area {self.area():.15g} != polygon area {poly:.15g}")


def _edge_counts(tris: np.ndarray) -> dict:
    counts: dict = {}
    for t in tris:
        for i in range(3):
            e = (int(t[i]), int(t[(i + 1) % 3]))
            key = (e[0], e[1]) if e[0] < e[1] else (e[1], e[0])
            counts[key] = counts.get(key, 0) + 1
    return counts


def _min_angles_deg(nodes: np.ndarray, tris: np.ndarray) -> np.ndarray:
    p = nodes[tris]
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    lens = np.linalg.norm(e, axis=2)
    shortest = lens.min(axis=1)
    area2 = np.abs(e[:, 0, 0] * e[:, 1, 1] - e[:, 0, 1] * e[:, 1, 0])
    # R = abc / (2 * |2A|); sin(min angle) = shortest / (2R)
    prod = lens[:, 0] * lens[:, 1] * lens[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        sin_min = shortest * area2 / np.where(prod > 0.0, prod, np.inf)
    return np.degrees(np.arcsin(np.clip(sin_min, 0.0, 1.0)))


def _circumcenters(nodes: np.ndarray, tris: np.ndarray):
    a = nodes[tris[:, 0]]
    b = nodes[tris[:, 1]]
    c = nodes[tris[:, 2]]
    ab = b - a
    ac = c - a
    d = 2.0 * (ab[:, 0] * ac[:, 1] - ab[:, 1] * ac[:, 0])
    ab2 = (ab ** 2).sum(axis=1)
    ac2 = (ac ** 2).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ux = (ac[:, 1] * ab2 - ab[:, 1] * ac2) / d
        uy = (ab[:, 0] * ac2 - ac[:, 0] * ab2) / d
    centers = a + np.column_stack([ux, uy])
    radii = np.linalg.norm(centers - a, axis=1)
    return centers, radii


class _Builder:
    """Mutable state for one triangulate() call."""

    def __init__(self, domain: PolygonDomain, h_target: float, q: float, h_tip: float,
                 min_angle_deg: float, max_triangles: int):
        self.domain = domain
        self.h_target = h_target
        self.q = q
        self.h_tip = h_tip
        self.min_angle = min_angle_deg
        self.max_triangles = max_triangles
        self.diam = domain.diameter()
        self.global_floor = 1e-9 * self.diam
        self.points: list = [tuple(p) for p in domain.vertices]
        # protected centers: singular vertices plus input corners too sharp
        # for the angle floor to be attainable; each carries a capped
        # influence radius so the split floor stays local
        self.sing = domain.vertices[list(domain.singular_vertices)].reshape(-1, 2)
        centers = [domain.vertices[i] for i in domain.singular_vertices]
        radii = [2.0 * h_tip] * len(centers)
        angles = _corner_angles(domain.vertices)
        for i, ang in enumerate(angles):
            if ang < 2.0 * min_angle_deg and i not in domain.singular_vertices:
                centers.append(domain.vertices[i])
                radii.append(2.0 * h_target)
        self.centers = np.array(centers, dtype=float).reshape(-1, 2)
        self.center_radius = np.asarray(radii, dtype=float)
        # segments: (i, j, tag, beta)
        n = len(domain.vertices)
        self.segments = [
            (i, (i + 1) % n, domain.edge_tags[i], float(domain.edge_beta[i]))
            for i in range(n)
        ]
        self.floor_slope = 0.5 * math.tan(math.radians(min_angle_deg))

    # -- size and floor fields ------------------------------------------------

    def size_at(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        s = np.full(len(pts), self.h_target)
        for v in self.sing:
            d = np.hypot(pts[:, 0] - v[0], pts[:, 1] - v[1])
            s = np.minimum(s, np.clip(d * (1.0 - self.q), self.h_tip, self.h_target))
        return s

    def floor_at(self, pts: np.ndarray) -> np.ndarray:
        """Minimum admissible split length: inside each protected center's
        influence radius the floor grows linearly with distance, so split
        cascades toward the center terminate while refinement farther out is
        unaffected."""
        pts = np.atleast_2d(pts)
        f = np.full(len(pts), self.global_floor)
        for v, r in zip(self.centers, self.center_radius):
            d = np.hypot(pts[:, 0] - v[0], pts[:, 1] - v[1])
            f = np.maximum(f, np.where(d <= r, self.floor_slope * d, self.global_floor))
        return f

    # -- boundary handling -----------------------------------------------------

    def subdivide_boundary(self) -> None:
        out = []
        for (i, j, tag, beta) in self.segments:
            out.extend(self._split_to_size(i, j, tag, beta))
        self.segments = out

    def _split_to_size(self, i, j, tag, beta):
        a = np.asarray(self.points[i])
        b = np.asarray(self.points[j])
        length = float(np.hypot(*(b - a)))
        mid = 0.5 * (a + b)
        target = float(self.size_at(mid)[0])
        if length <= target or length <= 2.0 * float(self.floor_at(mid)[0]):
            return [(i, j, tag, beta)]
        k = len(self.points)
        self.points.append(tuple(mid))
        return self._split_to_size(i, k, tag, beta) + self._split_to_size(k, j, tag, beta)

    def split_segment(self, seg_index: int, respect_floor: bool = True) -> bool:
        i, j, tag, beta = self.segments[seg_index]
        a = np.asarray(self.points[i])
        b = np.asarray(self.points[j])
        mid = 0.5 * (a + b)
        half = 0.5 * float(np.hypot(*(b - a)))
        if respect_floor:
            if half < float(self.floor_at(mid[None, :])[0]):
                return False
        elif half <= self.global_floor:
            raise MeshingError("boundary segment split below global floor; "
                               "domain cannot be conformed at this budget")
        k = len(self.points)
        self.points.append(tuple(mid))
        self.segments[seg_index] = (i, k, tag, beta)
        self.segments.append((k, j, tag, beta))
        return True

    # -- interior seeding --------------------------------------------------------

    def seed_interior(self) -> None:
        v = self.domain.vertices
        x0, x1 = v[:, 0].min(), v[:, 0].max()
        y0, y1 = v[:, 1].min(), v[:, 1].max()
        h = self.h_target
        dy = h * math.sqrt(3.0) / 2.0
        rows = int((y1 - y0) / dy) + 1
        cols = int((x1 - x0) / h) + 2
        pts = []
        for r in range(rows + 1):
            y = y0 + r * dy
            off = 0.5 * h if r % 2 else 0.0
            for cidx in range(cols + 1):
                pts.append((x0 + off + cidx * h, y))
        pts = np.array(pts)
        inside = points_in_polygon(pts, v)
        pts = pts[inside]
        if len(pts) == 0:
            return
        # drop seeds inside graded zones (refinement fills those) and seeds
        # too close to the boundary
        keep = self.size_at(pts) >= 0.999 * h
        pts = pts[keep]
        if len(pts) == 0:
            return
        seg_a, seg_b = self._segment_arrays()
        d = _point_segment_distance(pts, seg_a, seg_b)
        pts = pts[d >= 0.55 * h]
        self.points.extend(map(tuple, pts))

    def _segment_arrays(self):
        p = np.asarray(self.points)
        idx = np.array([(s[0], s[1]) for s in self.segments], dtype=np.int64)
        return p[idx[:, 0]], p[idx[:, 1]]

    # -- main refinement loop -------------------------------------------------------

    def run(self, max_rounds: int = 400) -> Mesh:
        self.subdivide_boundary()
        self.seed_interior()
        protected_mask = None
        tris = None
        for _ in range(max_rounds):
            pts = np.asarray(self.points)
            if len(pts) < 3:
                raise MeshingError("not enough points to triangulate")
            tri = Delaunay(pts)
            tris = tri.simplices.astype(np.int64)
            # collinear boundary chains make Qhull emit zero-area slivers;
            # drop them before locating centroids
            p = pts[tris]
            area2 = np.abs((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) -
                           (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
            lmax2 = np.maximum(((p[:, 1] - p[:, 0]) ** 2).sum(axis=1),
                               np.maximum(((p[:, 2] - p[:, 1]) ** 2).sum(axis=1),
                                          ((p[:, 0] - p[:, 2]) ** 2).sum(axis=1)))
            tris = tris[area2 > 1e-7 * lmax2]
            cent = pts[tris].mean(axis=1)
            keep = points_in_polygon(cent, self.domain.vertices)
            tris = tris[keep]
            if len(tris) > self.max_triangles:
                raise MeshBudgetError(
                    f"triangle budget exceeded ({len(tris)} > {self.max_triangles})")
            if self._fix_conformity(pts, tris):
                continue
            bad = self._bad_triangles(pts, tris)
            if not np.any(bad):
                protected_mask = np.zeros(len(tris), dtype=bool)
                break
            changed, suppressed = self._refine(pts, tris, bad)
            if not changed:
                protected_mask = np.zeros(len(tris), dtype=bool)
                protected_mask[np.where(bad)[0]] = True
                break
        else:
            raise MeshingError("refinement did not terminate within round budget")
        return self._build_mesh(np.asarray(self.points), tris, protected_mask)

    def _fix_conformity(self, pts: np.ndarray, tris: np.ndarray) -> bool:
        counts = _edge_counts(tris)
        boundary = {e for e, c in counts.items() if c == 1}
        seg_keys = {}
        for s_idx, (i, j, _, _) in enumerate(self.segments):
            seg_keys[(i, j) if i < j else (j, i)] = s_idx
        missing = [s_idx for key, s_idx in seg_keys.items() if key not in boundary]
        leaks = [e for e in boundary if e not in seg_keys]
        changed = False
        for s_idx in sorted(missing, reverse=True):
            changed |= self.split_segment(s_idx, respect_floor=False)
        if leaks and not changed:
            # split the segment nearest to each leaking edge midpoint
            seg_a, seg_b = self._segment_arrays()
            mids = np.array([(pts[a] + pts[b]) * 0.5 for a, b in leaks])
            d = _point_segment_distance(mids, seg_a, seg_b, full=True)
            for row in range(len(mids)):
                changed |= self.split_segment(int(np.argmin(d[row])), respect_floor=False)
        return changed

    def _bad_triangles(self, pts: np.ndarray, tris: np.ndarray) -> np.ndarray:
        angles = _min_angles_deg(pts, tris)
        p = pts[tris]
        longest = np.max(np.stack([
            np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
            np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
            np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
        ], axis=1), axis=1)
        cent = p.mean(axis=1)
        too_big = longest > 1.5 * self.size_at(cent)
        return (angles < self.min_angle) | too_big

    def _refine(self, pts: np.ndarray, tris: np.ndarray, bad: np.ndarray):
        centers, radii = _circumcenters(pts, tris)
        bad_idx = np.where(bad)[0]
        seg_a, seg_b = self._segment_arrays()
        seg_mid = 0.5 * (seg_a + seg_b)
        seg_half = 0.5 * np.hypot(*(seg_b - seg_a).T)
        seg_tree = cKDTree(seg_mid)
        inside = points_in_polygon(centers[bad_idx], self.domain.vertices)

        to_split: set = set()
        inserts: list = []
        max_half = float(seg_half.max()) if len(seg_half) else 0.0
        for row, t_idx in enumerate(bad_idx):
            c = centers[t_idx]
            hits = seg_tree.query_ball_point(c, max_half) if max_half > 0 else []
            enc = [s for s in hits
                   if np.hypot(*(c - seg_mid[s])) < seg_half[s] * (1.0 - 1e-12)]
            if enc:
                to_split.update(enc)
            elif inside[row]:
                inserts.append((c[0], c[1], radii[t_idx]))
            else:
                # circumcenter outside and no encroached segment: fall back to
                # the midpoint of the triangle's longest edge
                p = pts[tris[t_idx]]
                e_len = [np.linalg.norm(p[1] - p[0]), np.linalg.norm(p[2] - p[1]),
                         np.linalg.norm(p[0] - p[2])]
                k = int(np.argmax(e_len))
                m = 0.5 * (p[k] + p[(k + 1) % 3])
                inserts.append((m[0], m[1], e_len[k] * 0.5))

        changed = False
        suppressed = False
        for s_idx in sorted(to_split, reverse=True):
            if self.split_segment(s_idx, respect_floor=True):
                changed = True
            else:
                suppressed = True
        if inserts:
            inserts.sort()
            arr = np.array(inserts)
            small = arr[:, 2] < self.floor_at(arr[:, :2])
            suppressed |= bool(small.any())
            arr = arr[~small]
            if len(arr):
                # thin out clustered proposals, larger insertion radii first
                order = np.argsort(-arr[:, 2], kind="stable")
                prop_tree = cKDTree(arr[:, :2])
                alive = np.ones(len(arr), dtype=bool)
                chosen = []
                for idx in order:
                    if not alive[idx]:
                        continue
                    chosen.append(int(idx))
                    for nb in prop_tree.query_ball_point(arr[idx, :2], 0.5 * arr[idx, 2]):
                        if nb != idx:
                            alive[nb] = False
                cand = arr[sorted(chosen)]
                exist_tree = cKDTree(np.asarray(self.points))
                d, _ = exist_tree.query(cand[:, :2])
                ok = d > 0.25 * cand[:, 2]
                for x, y, _ in cand[ok]:
                    self.points.append((float(x), float(y)))
                changed |= bool(ok.any())
        return changed, suppressed

    def _build_mesh(self, pts, tris, protected_mask) -> Mesh:
        seg_idx = np.array([(s[0], s[1]) for s in self.segments], dtype=np.int64)
        used = np.unique(np.concatenate([tris.ravel(), seg_idx.ravel()]))
        remap = -np.ones(len(pts), dtype=np.int64)
        remap[used] = np.arange(len(used))
        mesh = Mesh(
            nodes=pts[used],
            triangles=remap[tris],
            edge_nodes=remap[seg_idx],
            edge_tags=tuple(s[2] for s in self.segments),
            edge_beta=np.array([s[3] for s in self.segments]),
            grading_q=self.q,
            protected=protected_mask,
            domain=self.domain,
        )
        mesh.validate()
        return mesh


def _corner_angles(vertices: np.ndarray) -> np.ndarray:
    v = np.asarray(vertices, dtype=float)
    prev = np.roll(v, 1, axis=0)
    nxt = np.roll(v, -1, axis=0)
    a = prev - v
    b = nxt - v
    cosang = (a * b).sum(axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
    ang = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
    # for a CCW polygon the corner is convex iff cross(prev-v, next-v) < 0
    cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    return np.where(cross < 0.0, ang, 360.0 - ang)


def _point_segment_distance(pts, seg_a, seg_b, full: bool = False):
    """Distances from pts (n,2) to segments (m,2); returns (n,) min or (n,m)."""
    pts = np.atleast_2d(pts)
    d = seg_b - seg_a
    l2 = (d ** 2).sum(axis=1)
    l2 = np.where(l2 > 0.0, l2, 1.0)
    w = pts[:, None, :] - seg_a[None, :, :]
    t = np.clip((w * d[None, :, :]).sum(axis=2) / l2[None, :], 0.0, 1.0)
    proj = seg_a[None, :, :] + t[:, :, None] * d[None, :, :]
    dist = np.linalg.norm(pts[:, None, :] - proj, axis=2)
    return dist if full else dist.min(axis=1)


def triangulate(domain: PolygonDomain, h_target: float,
                grading: GradingSpec | None = None,
                min_angle_deg: float = 15.0,
                max_triangles: int = MAX_TRIANGLES_DEFAULT) -> Mesh:
    """Delaunay-refined mesh with edge length ~ h_target and geometric size
    decay toward each marked singular vertex.

    Raises MeshBudgetError when refinement would exceed max_triangles and
    MeshingError for degenerate input.
    """
    if h_target <= 0.0:
        raise MeshingError("h_target must be positive")
    if grading is None:
        grading = GradingSpec()
    q, h_tip = grading.resolve(h_target)
    builder = _Builder(domain, h_target, q, h_tip, min_angle_deg, max_triangles)
    return builder.run()


def mesh_quality_report(mesh: Mesh) -> dict:
    """Scan statistics: worst angle, worst edge-length ratio, sizes."""
    angles = mesh.min_angles_deg()
    p = mesh.nodes[mesh.triangles]
    lens = np.stack([
        np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
        np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
        np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
    ], axis=1)
    aspect = lens.max(axis=1) / lens.min(axis=1)
    unprot = ~mesh.protected
    return {
        "min_angle": float(angles.min()) if len(angles) else float("nan"),
        "min_angle_unprotected": float(angles[unprot].min()) if np.any(unprot) else float("nan"),
        "max_aspect": float(aspect.max()) if len(aspect) else float("nan"),
        "n_nodes": mesh.n_nodes,
        "n_tris": mesh.n_triangles,
        "n_protected": int(mesh.protected.sum()),
    }


def export_mesh(mesh: Mesh, path: str) -> None:
    """Plain-text node/element dump: header, node table, triangle table,
    tagged boundary edge table."""
    lines = [f"robinlab-mesh 1 {mesh.n_nodes} {mesh.n_triangles} {len(mesh.edge_nodes)}"]
    for i, (x, y) in enumerate(mesh.nodes):
        lines.append(f"{i} {x:.17g} {y:.17g}")
    for a, b, c in mesh.triangles:
        lines.append(f"{a} {b} {c}")
    for (a, b), tag, beta in zip(mesh.edge_nodes, mesh.edge_tags, mesh.edge_beta):
        lines.append(f"{a} {b} {tag} {beta:.17g}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
