"""Cusp-domain geometry and polygonal test domains.

A cusp domain is {(x1, x') : x1 > 0, |x'| < h(x1)} for an increasing profile
h with h(0) = 0.  This module evaluates the exact geometric quantities of
its axial slices (volume, lateral and cross-section perimeters) and builds
polygonal approximations of truncated cusps for the 2D finite element
pipeline, together with the generic polygon utilities (area, orientation,
point location, convex clipping) used by the level-set and profile code.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .quadrature import integrate, integrate_to_zero

ROBIN = "robin"
DIRICHLET = "dirichlet"
TRUNCATION = "truncation"
EDGE_TAGS = (ROBIN, DIRICHLET, TRUNCATION)


def unit_ball_volume(k: int) -> float:
    """Volume of the unit ball of R^k (k=0 gives 1, k=1 gives 2, k=2 gives pi)."""
    return math.pi ** (k / 2.0) / math.gamma(k / 2.0 + 1.0)


def isoperimetric_constant(N: int) -> float:
    """Sharp constant C_N in |w|^((N-1)/N) <= C_N * Per(w); C_2 = 1/(2 sqrt(pi))."""
    return 1.0 / (N * unit_ball_volume(N) ** (1.0 / N))


class GeometryError(ValueError):
    """Invalid geometric input (bad profile parameters, degenerate polygon...)."""


# ---------------------------------------------------------------------------
# Profile functions h
# ---------------------------------------------------------------------------

def _power_log_offset(alpha: float, gamma: float) -> float:
    """Log offset b for h(t) = t^alpha * log(b/t)^gamma.

    b is chosen so that h is increasing and convex on (0, 1]; the offset only
    shifts log(1/t) by a constant, so small-t asymptotics (and hence every
    summability classification) are unchanged.  Monotonicity needs
    log b > gamma/alpha; convexity needs log b at least the larger root of
    a(a-1) L^2 - g(2a-1) L + g(g-1) = 0 in L.
    """
    if gamma == 0.0:
        return math.e
    lo_mono = gamma / alpha + 1.0
    if alpha <= 1.0:
        return math.exp(lo_mono)
    aa = alpha * (alpha - 1.0)
    bb = gamma * (2.0 * alpha - 1.0)
    cc = gamma * (gamma - 1.0)
    disc = bb * bb - 4.0 * aa * cc
    lo_conv = (bb + math.sqrt(max(disc, 0.0))) / (2.0 * aa) + 0.5
    return math.exp(max(lo_mono, lo_conv))


@dataclass(frozen=True)
class ProfileFunction:
    """Cusp generator h on (0, t_max]: h(0+) = 0, increasing, bounded slope.

    family is one of:
      power      h(t) = t^alpha                      (alpha >= 1)
      power_log  h(t) = t^alpha * log(b/t)^gamma     (alpha > 1; b keeps h
                 increasing/convex on (0, 1] without changing asymptotics)
      tabulated  monotone piecewise-cubic interpolant through (t_k, h_k)
    """

    family: str
    alpha: float = 1.0
    gamma: float = 0.0
    knots: tuple = ()
    t_max: float = 1.0
    _interp: PchipInterpolator | None = field(default=None, repr=False, compare=False)
    _log_b: float = field(default=0.0, repr=False, compare=False)

    def __post_init__(self):
        if self.t_max <= 0.0:
            raise GeometryError("t_max must be positive")
        if self.family == "power":
            if self.alpha < 1.0:
                raise GeometryError("power profile needs alpha >= 1")
        elif self.family == "power_log":
            if self.alpha <= 1.0:
                raise GeometryError("power_log profile needs alpha > 1")
            if self.gamma < 0.0:
                raise GeometryError("power_log profile needs gamma >= 0")
            object.__setattr__(self, "_log_b", math.log(_power_log_offset(self.alpha, self.gamma)))
        elif self.family == "tabulated":
            pts = np.asarray(self.knots, dtype=float)
            if pts.ndim != 2 or pts.shape[0] < 4 or pts.shape[1] != 2:
                raise GeometryError("tabulated profile needs >= 4 knots of (t, h)")
            t, h = pts[:, 0], pts[:, 1]
            if t[0] < 0.0 or np.any(np.diff(t) <= 0.0) or np.any(np.diff(h) <= 0.0):
                raise GeometryError("tabulated knots must be strictly increasing in t and h")
            if t[0] > 0.0:
                # anchor h(0) = 0 so the interpolant honors the cusp limit
                t = np.concatenate([[0.0], t])
                h = np.concatenate([[0.0], h])
            elif h[0] != 0.0:
                raise GeometryError("tabulated profile must have h(0) = 0")
            interp = PchipInterpolator(t, h)
            object.__setattr__(self, "_interp", interp)
            object.__setattr__(self, "t_max", float(t[-1]))
        else:
            raise GeometryError(f"unknown profile family {self.family!r}")

    # -- evaluation ---------------------------------------------------------

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.family == "power":
            out = np.power(np.maximum(t, 0.0), self.alpha)
        elif self.family == "power_log":
            tt = np.maximum(t, 1e-300)
            out = np.power(tt, self.alpha) * np.power(self._log_b - np.log(tt), self.gamma)
            out = np.where(t <= 0.0, 0.0, out)
        else:
            out = np.maximum(self._interp(np.clip(t, 0.0, self.t_max)), 0.0)
        return out if out.ndim else float(out)

    def deriv(self, t):
        t = np.asarray(t, dtype=float)
        if self.family == "power":
            if self.alpha == 1.0:
                out = np.ones_like(t)
            else:
                out = self.alpha * np.power(np.maximum(t, 0.0), self.alpha - 1.0)
        elif self.family == "power_log":
            tt = np.maximum(t, 1e-300)
            L = self._log_b - np.log(tt)
            out = np.power(tt, self.alpha - 1.0) * np.power(L, self.gamma - 1.0) * (
                self.alpha * L - self.gamma
            )
            out = np.where(t <= 0.0, 0.0, out)
        else:
            out = self._interp.derivative()(np.clip(t, 0.0, self.t_max))
        return out if out.ndim else float(out)

    def deriv_bound(self) -> float:
        """Upper bound for |h'| on (0, t_max] (sampled for tabulated profiles)."""
        ts = np.linspace(self.t_max * 1e-9, self.t_max, 2001)
        return float(np.max(np.abs(self.deriv(ts))))

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        d = {"family": self.family, "t_max": self.t_max}
        if self.family == "power":
            d["alpha"] = self.alpha
        elif self.family == "power_log":
            d["alpha"] = self.alpha
            d["gamma"] = self.gamma
        else:
            d["knots"] = [list(k) for k in self.knots]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProfileFunction":
        fam = d["family"]
        if fam == "power":
            return cls("power", alpha=float(d["alpha"]), t_max=float(d.get("t_max", 1.0)))
        if fam == "power_log":
            return cls("power_log", alpha=float(d["alpha"]), gamma=float(d["gamma"]),
                       t_max=float(d.get("t_max", 1.0)))
        if fam == "tabulated":
            return cls("tabulated", knots=tuple(tuple(k) for k in d["knots"]))
        raise GeometryError(f"unknown profile family {fam!r}")


def power_profile(alpha: float, t_max: float = 1.0) -> ProfileFunction:
    return ProfileFunction("power", alpha=alpha, t_max=t_max)


def power_log_profile(alpha: float, gamma: float, t_max: float = 1.0) -> ProfileFunction:
    return ProfileFunction("power_log", alpha=alpha, gamma=gamma, t_max=t_max)


def tabulated_profile(knots) -> ProfileFunction:
    return ProfileFunction("tabulated", knots=tuple(tuple(k) for k in knots))


# ---------------------------------------------------------------------------
# Slice quantities of the revolution cusp
# ---------------------------------------------------------------------------

def _check_slice_args(h: ProfileFunction, t: float, N: int) -> None:
    if N < 2:
        raise GeometryError("dimension N must be >= 2")
    if not 0.0 < t <= h.t_max * (1.0 + 1e-12):
        raise GeometryError(f"t={t:g} outside profile domain (0, {h.t_max:g}]")


def cusp_volume(h: ProfileFunction, t: float, N: int = 2) -> float:
    """|Omega_t| = alpha_{N-1} * int_0^t h(s)^{N-1} ds (alpha_1 = 2, alpha_2 = pi)."""
    if t == 0.0:
        return 0.0
    _check_slice_args(h, t, N)
    return unit_ball_volume(N - 1) * integrate_to_zero(lambda s: h(s) ** (N - 1), t)


def cusp_exterior_perimeter(h: ProfileFunction, t: float, N: int = 2) -> float:
    """Lateral boundary measure of the revolution slab up to t.

    The cross-section at x1 is an (N-2)-sphere of radius h(x1), so the
    lateral area is (N-1)*alpha_{N-1} * int_0^t h^{N-2} sqrt(1+h'^2) ds; for
    N = 2 the prefactor is 2 and this is the arclength of both graph arcs.
    The prefactor is a dimensional constant that cancels in every summability
    ratio built downstream.
    """
    if t == 0.0:
        return 0.0
    _check_slice_args(h, t, N)

    def w(s):
        return h(s) ** (N - 2) * math.sqrt(1.0 + h.deriv(s) ** 2)

    return (N - 1) * unit_ball_volume(N - 1) * integrate_to_zero(w, t)


def cusp_interior_perimeter(h: ProfileFunction, t: float, N: int = 2) -> float:
    """Cross-section measure alpha_{N-1} * h(t)^{N-1} (the slice {x1 = t})."""
    if t == 0.0:
        return 0.0
    _check_slice_args(h, t, N)
    return unit_ball_volume(N - 1) * h(t) ** (N - 1)


def cusp_volume_convexity_bound(h: ProfileFunction, t: float, N: int = 2) -> float:
    """Lower bound alpha_{N-1} * h(t)^N / ((2N-2) h'(t)), valid when h^{N-1}
    is convex; equals cusp_volume exactly for linear h."""
    if t == 0.0:
        return 0.0
    _check_slice_args(h, t, N)
    hp = h.deriv(t)
    if hp <= 0.0:
        raise GeometryError("convexity bound needs h'(t) > 0")
    return unit_ball_volume(N - 1) * h(t) ** N / ((2 * N - 2) * hp)


# ---------------------------------------------------------------------------
# Polygon utilities
# ---------------------------------------------------------------------------

def polygon_area(vertices: np.ndarray) -> float:
    """Signed shoelace area (positive for counterclockwise orientation)."""
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(math.fsum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def polygon_perimeter(vertices: np.ndarray) -> float:
    v = np.asarray(vertices, dtype=float)
    d = np.roll(v, -1, axis=0) - v
    return float(math.fsum(np.hypot(d[:, 0], d[:, 1])))


def points_in_polygon(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Even-odd rule point location, vectorized over points.

    Points within roundoff of an edge may land on either side; callers that
    care (the mesher) only locate points well inside or outside.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    v = np.asarray(vertices, dtype=float)
    x, y = pts[:, 0][:, None], pts[:, 1][:, None]
    x0, y0 = v[:, 0][None, :], v[:, 1][None, :]
    x1, y1 = np.roll(v[:, 0], -1)[None, :], np.roll(v[:, 1], -1)[None, :]
    crosses = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_int = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    hits = crosses & (x < x_int)
    return hits.sum(axis=1) % 2 == 1


def _segments_intersect(p1, p2, q1, q2) -> bool:
    """Proper intersection test for open segments (shared endpoints ignored)."""
    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    d1 = cross(q1, q2, p1)
    d2 = cross(q1, q2, p2)
    d3 = cross(p1, p2, q1)
    d4 = cross(p1, p2, q2)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


def polygon_is_simple(vertices: np.ndarray) -> bool:
    v = np.asarray(vertices, dtype=float)
    n = len(v)
    for i in range(n):
        a1, a2 = v[i], v[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            if _segments_intersect(a1, a2, v[j], v[(j + 1) % n]):
                return False
    return True


def clip_polygon_halfplane(vertices, labels, normal, offset):
    """Clip a labeled polygon by the half-plane {x . normal <= offset}.

    labels[i] tags the edge from vertex i to vertex i+1; edges created along
    the clip line get label -1.  Returns (vertices, labels) of the clipped
    polygon (possibly empty).  This is one Sutherland-Hodgman stage, which is
    exact for convex clippers applied stage by stage.
    """
    v = np.asarray(vertices, dtype=float)
    n = len(v)
    if n == 0:
        return v, []
    d = v @ np.asarray(normal, dtype=float) - offset
    out_v: list = []
    out_l: list = []
    for i in range(n):
        j = (i + 1) % n
        inside_i, inside_j = d[i] <= 0.0, d[j] <= 0.0
        if inside_i:
            out_v.append(v[i])
            out_l.append(labels[i])
            if not inside_j:
                s = d[i] / (d[i] - d[j])
                out_v.append(v[i] + s * (v[j] - v[i]))
                out_l.append(-1)
        elif inside_j:
            s = d[i] / (d[i] - d[j])
            out_v.append(v[i] + s * (v[j] - v[i]))
            out_l.append(labels[i])
    if len(out_v) < 3:
        return np.zeros((0, 2)), []
    return np.asarray(out_v), out_l


def clip_polygon_convex(vertices, labels, clipper_vertices):
    """Clip a labeled polygon by a convex polygon (counterclockwise)."""
    cv = np.asarray(clipper_vertices, dtype=float)
    v, lab = np.asarray(vertices, dtype=float), list(labels)
    for i in range(len(cv)):
        a, b = cv[i], cv[(i + 1) % len(cv)]
        t = b - a
        normal = np.array([t[1], -t[0]])  # outward for CCW clipper
        v, lab = clip_polygon_halfplane(v, lab, normal, float(normal @ a))
        if len(v) == 0:
            break
    return v, lab


def regular_polygon(n_sides: int, radius: float = 1.0, center=(0.0, 0.0)) -> np.ndarray:
    ang = 2.0 * np.pi * np.arange(n_sides) / n_sides
    return np.column_stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)])


# ---------------------------------------------------------------------------
# PolygonDomain
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolygonDomain:
    """Simple closed polygon with per-edge boundary tags.

    edge i runs from vertices[i] to vertices[i+1 mod n]; edge_tags[i] is one
    of robin / dirichlet / truncation and edge_beta[i] is the relative Robin
    weight of that edge (the run-level beta multiplies it).  Vertices listed
    in singular_vertices get graded mesh refinement.
    """

    vertices: np.ndarray
    edge_tags: tuple
    edge_beta: np.ndarray
    singular_vertices: tuple = ()

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise GeometryError("polygon needs >= 3 two-dimensional vertices")
        if len(self.edge_tags) != len(v) or len(self.edge_beta) != len(v):
            raise GeometryError("need one tag and one beta per edge")
        for tag in self.edge_tags:
            if tag not in EDGE_TAGS:
                raise GeometryError(f"unknown edge tag {tag!r}")
        beta = np.asarray(self.edge_beta, dtype=float)
        if np.any(~np.isfinite(beta)) or np.any(beta < 0.0):
            raise GeometryError("edge beta weights must be finite and >= 0")
        d = np.roll(v, -1, axis=0) - v
        lengths = np.hypot(d[:, 0], d[:, 1])
        diam = max(np.ptp(v[:, 0]), np.ptp(v[:, 1]))
        if np.any(lengths < 1e-12 * diam):
            raise GeometryError("degenerate polygon edge (length below 1e-12 of diameter)")
        if polygon_area(v) <= 0.0:
            raise GeometryError("polygon must be counterclockwise with positive area")
        if not polygon_is_simple(v):
            raise GeometryError("polygon boundary self-intersects")
        for s in self.singular_vertices:
            if not 0 <= s < len(v):
                raise GeometryError("singular vertex index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "edge_beta", beta)
        v.flags.writeable = False
        beta.flags.writeable = False

    @property
    def n_edges(self) -> int:
        return len(self.vertices)

    def area(self) -> float:
        return polygon_area(self.vertices)

    def boundary_length(self, tags=EDGE_TAGS) -> float:
        v = self.vertices
        d = np.roll(v, -1, axis=0) - v
        lengths = np.hypot(d[:, 0], d[:, 1])
        mask = np.array([t in tags for t in self.edge_tags])
        return float(lengths[mask].sum())

    def diameter(self) -> float:
        v = self.vertices
        return float(math.hypot(np.ptp(v[:, 0]), np.ptp(v[:, 1])))

    def to_dict(self) -> dict:
        return {
            "vertices": self.vertices.tolist(),
            "edge_tags": list(self.edge_tags),
            "edge_beta": self.edge_beta.tolist(),
            "singular_vertices": list(self.singular_vertices),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolygonDomain":
        return cls(
            vertices=np.asarray(d["vertices"], dtype=float),
            edge_tags=tuple(d["edge_tags"]),
            edge_beta=np.asarray(d["edge_beta"], dtype=float),
            singular_vertices=tuple(d.get("singular_vertices", ())),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def rectangle_domain(width: float = 1.0, height: float = 1.0,
                     edge_beta=(1.0, 1.0, 1.0, 1.0)) -> PolygonDomain:
    """Axis-aligned rectangle [0,w]x[0,h]; edges ordered bottom, right, top, left."""
    v = np.array([[0.0, 0.0], [width, 0.0], [width, height], [0.0, height]])
    return PolygonDomain(v, (ROBIN,) * 4, np.asarray(edge_beta, dtype=float))


def square_domain() -> PolygonDomain:
    return rectangle_domain(1.0, 1.0)


def disk_domain(n_sides: int = 128, radius: float = 1.0) -> PolygonDomain:
    v = regular_polygon(n_sides, radius)
    return PolygonDomain(v, (ROBIN,) * n_sides, np.ones(n_sides))


def build_cusp_polygon(h: ProfileFunction, x_min: float, x_max: float,
                       n_boundary: int, right_tag: str = DIRICHLET,
                       tip_fraction: float = 1e-4) -> PolygonDomain:
    """Polygonal approximation of the cusp slab {x_min < x1 < x_max, |y| < h(x1)}.

    Graph vertices are sampled geometrically densely toward x_min (log-spaced
    for x_min > 0; a geometric ladder down to x_max*tip_fraction plus the tip
    vertex itself for x_min = 0).  Graph edges are tagged robin, the right
    cross-section dirichlet or robin per right_tag, and the left cross-section
    (x_min > 0) truncation, treated downstream as a Robin edge.  The tip
    vertex, when present, is marked singular for mesh grading.
    """
    if n_boundary < 8:
        raise GeometryError("n_boundary must be >= 8")
    if not 0.0 <= x_min < x_max <= h.t_max * (1.0 + 1e-12):
        raise GeometryError("need 0 <= x_min < x_max <= t_max")
    if right_tag not in (DIRICHLET, ROBIN):
        raise GeometryError("right cross-section must be dirichlet or robin")

    if x_min > 0.0:
        xs = np.geomspace(x_min, x_max, n_boundary)
    else:
        ratio = tip_fraction ** (1.0 / (n_boundary - 1))
        xs = x_max * ratio ** np.arange(n_boundary - 1, -1, -1)
    ys = np.asarray(h(xs), dtype=float)

    verts: list = []
    tags: list = []
    tip_index = None
    if x_min == 0.0:
        verts.append([0.0, 0.0])
        tags.append(ROBIN)  # edge tip -> first lower-graph vertex
        tip_index = 0
    # lower graph, left to right
    for x, y in zip(xs, ys):
        verts.append([x, -y])
        tags.append(ROBIN)
    tags[-1] = right_tag  # edge from (x_max,-h) up to (x_max,+h)
    # upper graph, right to left
    for x, y in zip(xs[::-1], ys[::-1]):
        verts.append([x, y])
        tags.append(ROBIN)
    if x_min > 0.0:
        tags[-1] = TRUNCATION  # edge from (x_min,+h) down to (x_min,-h)
    else:
        tags[-1] = ROBIN  # edge from first upper-graph vertex back to the tip

    v = np.asarray(verts, dtype=float)
    beta = np.ones(len(v))
    singular = (tip_index,) if tip_index is not None else ()
    return PolygonDomain(v, tuple(tags), beta, singular)
