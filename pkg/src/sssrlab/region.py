"""Security-region boundary fitting and interior margin sampling.

A region lives in an l-dimensional axis-aligned parameter box. The boundary
is grown as a star-shaped simplicial surface around a stable origin: rays
find margin-band crossings, facet centroids spawn refinement rays, and a
new vertex is kept only while its cone volume still matters relative to the
running total. All ray geometry happens in the unit cube (each axis mapped
affinely to [0, 1]) so heterogeneous axis scales do not skew normals;
reported volumes are in physical units.

Margin convention: the space's margin callback returns the signed margin
(positive = stable, -max Re of the state matrix); infeasible points (no
equilibrium) may be signalled with -inf.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from .equilibrium import EquilibriumError
from .model import ModelError
from .smallsignal import EPS_MARGIN, margin as _margin_op

__all__ = [
    "RegionError",
    "Axis",
    "ParamSpace",
    "BoundaryPoint",
    "NotFound",
    "Region",
    "IsmdSample",
    "ParameterPlaneMargin",
    "ray_boundary_search",
    "fit_sssr",
    "polytope_volume",
    "sample_ismd",
    "region_union_probe",
    "save_region",
    "load_region",
    "save_ismd",
    "load_ismd",
]

MAX_DIMENSION = 6
BISECT_TOL = 1e-4         # on the normalized axis, secondary to the margin band
EXPAND_FACTOR = 1.6
FIRST_STEP = 0.02         # initial ray step, normalized units
DEFAULT_EPS_R = 1e-3
DEFAULT_MC_SAMPLES = 5000
MIN_ACCEPTANCE = 1e-3


class RegionError(RuntimeError):
    """Raised for precondition violations and degenerate geometry."""


@dataclass(frozen=True)
class Axis:
    name: str
    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower < self.upper:
            raise RegionError(f"axis {self.name!r}: lower must be < upper")


@dataclass(frozen=True)
class ParamSpace:
    """Axis-aligned search box plus a pure margin callback.

    ``margin_fn`` maps a physical coordinate vector (length l) to the signed
    stability margin. It must be deterministic; feasibility failures should
    surface as -inf (or an EquilibriumError, which is treated the same).
    """

    axes: tuple
    margin_fn: object

    def __post_init__(self):
        if len(self.axes) < 1:
            raise RegionError("need at least one axis")
        names = [a.name for a in self.axes]
        if len(set(names)) != len(names):
            raise RegionError("axis names must be unique")

    @property
    def dimension(self) -> int:
        return len(self.axes)

    @property
    def lower(self) -> np.ndarray:
        return np.array([a.lower for a in self.axes])

    @property
    def upper(self) -> np.ndarray:
        return np.array([a.upper for a in self.axes])

    @property
    def span(self) -> np.ndarray:
        return self.upper - self.lower

    def to_unit(self, x) -> np.ndarray:
        return (np.asarray(x, float) - self.lower) / self.span

    def from_unit(self, u) -> np.ndarray:
        return self.lower + np.asarray(u, float) * self.span

    def margin_at(self, x) -> float:
        """Signed margin; infeasible points collapse to -inf.

        Infeasible covers missing equilibria and degenerate parameter
        combinations at box edges (zero gains, zero X/R and the like).
        """
        try:
            return float(self.margin_fn(np.asarray(x, float)))
        except (EquilibriumError, ModelError, ZeroDivisionError):
            return -math.inf

    def same_box(self, other: "ParamSpace") -> bool:
        return (
            self.dimension == other.dimension
            and all(a.name == b.name and a.lower == b.lower and a.upper == b.upper
                    for a, b in zip(self.axes, other.axes))
        )


@dataclass(frozen=True)
class BoundaryPoint:
    """A vertex of the fitted surface.

    For a proper boundary point the rightmost real part lies in [-eps, 0].
    ``clipped`` marks vertices pinned to the search-box edge because the
    true boundary lies outside the box; those carry whatever margin the
    edge point has.
    """

    coords: np.ndarray        # physical coordinates, length l
    max_real: float           # rightmost eigenvalue real part = -margin
    generation: int = 0
    clipped: bool = False


@dataclass(frozen=True)
class NotFound:
    """Ray left the box while still strictly stable; edge point retained."""

    edge_point: BoundaryPoint


@dataclass(frozen=True)
class IsmdSample:
    coords: np.ndarray
    margin: float


@dataclass
class Region:
    """Star-shaped boundary fit: vertices, facet simplices, outward normals."""

    space: ParamSpace
    origin: np.ndarray                 # physical coordinates, strictly stable
    points: list                       # list[BoundaryPoint]
    facets: list                       # list[tuple[int, ...]], l indices each
    normals: list                      # outward unit normals (normalized coords)
    volume: float                      # physical units
    epsilon: float = EPS_MARGIN

    @property
    def points_unit(self) -> np.ndarray:
        return np.array([self.space.to_unit(p.coords) for p in self.points])

    @property
    def origin_unit(self) -> np.ndarray:
        return self.space.to_unit(self.origin)


# ---------------------------------------------------------------------------
# margin callbacks over named parameter planes


_SETPOINT_FIELDS = ("p_ref", "q_ref", "vd_ref", "vq_ref")


@dataclass(frozen=True)
class ParameterPlaneMargin:
    """Picklable margin callback over named gain/grid-parameter axes.

    Each axis name must be a field of the mode's gain set, of SystemParams,
    or of Setpoint; the call substitutes the coordinates into copies of the
    bound objects and evaluates the signed margin.
    """

    mode: str
    params: object
    gains: object
    sp: object
    names: tuple

    def __call__(self, coords) -> float:
        params, gains, sp = self.params, self.gains, self.sp
        for name, value in zip(self.names, np.asarray(coords, float)):
            if hasattr(gains, name):
                gains = gains.replace(**{name: float(value)})
            elif hasattr(params, name):
                params = params.replace(**{name: float(value)})
            elif name in _SETPOINT_FIELDS:
                sp = sp.replace(**{name: float(value)})
            else:
                raise RegionError(f"unknown parameter axis {name!r}")
        return _margin_op(self.mode, params, gains, sp)


def parameter_plane(mode, params, gains, sp, axes) -> ParamSpace:
    """Build a ParamSpace over named parameters.

    ``axes`` is a sequence of (name, lower, upper) triples.
    """
    ax = tuple(Axis(n, float(lo), float(hi)) for n, lo, hi in axes)
    fn = ParameterPlaneMargin(mode, params, gains, sp, tuple(a.name for a in ax))
    return ParamSpace(axes=ax, margin_fn=fn)


# ---------------------------------------------------------------------------
# ray search


def _exit_parameter(u0: np.ndarray, d: np.ndarray) -> float:
    """Largest t with u0 + t*d still inside the unit cube."""
    t_max = math.inf
    for ui, di in zip(u0, d):
        if di > 0:
            t_max = min(t_max, (1.0 - ui) / di)
        elif di < 0:
            t_max = min(t_max, -ui / di)
    if not math.isfinite(t_max) or t_max <= 0:
        raise RegionError("ray does not advance into the box")
    return t_max


def ray_boundary_search(space: ParamSpace, origin, direction,
                        epsilon: float = EPS_MARGIN, generation: int = 0):
    """March along a ray until the margin band [-eps, 0] is crossed.

    Geometric expansion (factor 1.6) brackets the first sign change of the
    margin, then bisection tightens to 1e-4 on the normalized axis and the
    stable-side endpoint is returned once its rightmost real part lies in
    [-eps, 0]. Returns NotFound (with the flagged edge point) when the box
    edge is reached while still strictly stable.
    """
    origin = np.asarray(origin, float)
    d_phys = np.asarray(direction, float)
    if not np.any(d_phys):
        raise RegionError("direction must be nonzero")
    u0 = space.to_unit(origin)
    if np.any(u0 < -1e-12) or np.any(u0 > 1 + 1e-12):
        raise RegionError("origin lies outside the search box")
    m0 = space.margin_at(origin)
    if not m0 > epsilon:
        raise RegionError(
            f"ray origin must be strictly stable (margin {m0:.4g} <= eps {epsilon:.4g})")

    d = d_phys / space.span
    d = d / np.linalg.norm(d)
    t_edge = _exit_parameter(u0, d)

    def eval_at(t):
        x = space.from_unit(u0 + t * d)
        m = space.margin_at(x)
        return x, m

    # expansion: find the first t with margin <= 0 (unstable or infeasible)
    t_lo, m_lo = 0.0, m0
    t = min(FIRST_STEP, t_edge)
    hit_edge = False
    while True:
        x, m = eval_at(t)
        if m <= 0.0:
            t_hi, m_hi = t, m
            break
        t_lo, m_lo = t, m
        if t >= t_edge:
            hit_edge = True
            break
        t = min(t * EXPAND_FACTOR, t_edge)
    if hit_edge:
        x_edge, m_edge = eval_at(t_edge)
        return NotFound(edge_point=BoundaryPoint(
            coords=x_edge, max_real=-m_edge, generation=generation, clipped=True))

    # bisection on the margin sign; stable side is the candidate
    x_best, m_best = eval_at(t_lo) if t_lo > 0 else (origin.copy(), m0)
    for _ in range(200):
        in_band = 0.0 <= m_best <= epsilon
        if t_hi - t_lo <= BISECT_TOL and in_band:
            break
        if t_hi - t_lo <= 1e-12:
            break
        t_mid = 0.5 * (t_lo + t_hi)
        x_mid, m_mid = eval_at(t_mid)
        if m_mid <= 0.0:
            t_hi, m_hi = t_mid, m_mid
        else:
            t_lo = t_mid
            x_best, m_best = x_mid, m_mid
    return BoundaryPoint(coords=x_best, max_real=-m_best, generation=generation)


# ---------------------------------------------------------------------------
# facet helpers (normalized coordinates)


def _facet_normal(vertices_unit: np.ndarray, origin_unit: np.ndarray) -> np.ndarray:
    """Outward unit normal of an (l-1)-simplex, or None if degenerate."""
    v0 = vertices_unit[0]
    edges = vertices_unit[1:] - v0
    if edges.size == 0:            # l = 1: a facet is a single point
        n = v0 - origin_unit
        norm = np.linalg.norm(n)
        return n / norm if norm > 0 else None
    _, _, vt = np.linalg.svd(edges)
    n = vt[-1]
    centroid = vertices_unit.mean(axis=0)
    dot = float(n @ (centroid - origin_unit))
    if abs(dot) < 1e-14:
        return None
    return n if dot > 0 else -n


def _cone_volume_unit(vertices_unit: np.ndarray, origin_unit: np.ndarray) -> float:
    l = origin_unit.size
    mat = (vertices_unit - origin_unit).T
    return abs(float(np.linalg.det(mat))) / math.factorial(l)


def _initial_facets(dimension: int):
    """One (l-1)-simplex per orthant; vertex index i maps to +axis point i
    and index i+l to the -axis point. In l=2 this is the 4-edge diamond."""
    facets = []
    for signs in np.ndindex(*(2,) * dimension):
        facet = tuple(i if s == 0 else i + dimension for i, s in enumerate(signs))
        facets.append(facet)
    return facets


# ---------------------------------------------------------------------------
# the seven-step fit


def fit_sssr(space: ParamSpace, origin, epsilon: float = EPS_MARGIN,
             epsilon_r: float = DEFAULT_EPS_R, max_rounds: int = 12,
             jobs: int = 1) -> Region:
    """Grow a star-shaped boundary surface around a stable origin.

    Steps: axis rays out of the origin give 2l seed vertices; orthant
    combinations of those seeds give the initial facets; then each facet
    centroid launches a refinement ray along the outward normal, and a new
    vertex is retained only while its cone volume exceeds epsilon_r of the
    running total, splitting its facet into l sub-facets. Stops when no
    facet refines further.
    """
    l = space.dimension
    if l > MAX_DIMENSION:
        raise RegionError(f"dimension {l} > {MAX_DIMENSION} rejected "
                          "(combinatorial facet growth)")
    origin = np.asarray(origin, float)
    m0 = space.margin_at(origin)
    if not m0 > epsilon:
        raise RegionError(
            f"fit origin must be strictly stable (margin {m0:.4g} <= eps {epsilon:.4g})")

    runner = Parallel(n_jobs=jobs, prefer="processes")

    # steps 1-2: 2l seed vertices along +/- axis directions
    eye = np.eye(l)
    directions = [eye[i] for i in range(l)] + [-eye[i] for i in range(l)]
    # directions are in normalized units; convert to physical for the API
    seeds = runner(
        delayed(ray_boundary_search)(space, origin, d * space.span, epsilon, 0)
        for d in directions
    )
    points = [s.edge_point if isinstance(s, NotFound) else s for s in seeds]

    # step 3: orthant facets
    facets = _initial_facets(l)

    origin_u = space.to_unit(origin)
    unit_of = lambda p: space.to_unit(p.coords)

    def facet_geometry(facet):
        verts = np.array([unit_of(points[i]) for i in facet])
        return verts, _cone_volume_unit(verts, origin_u)

    generation = 0
    active = list(range(len(facets)))
    for _ in range(max_rounds):
        generation += 1
        # step 4: total volume
        vols = []
        for f in facets:
            _, v = facet_geometry(f)
            vols.append(v)
        total = sum(vols)
        if total <= 0:
            raise RegionError("degenerate region: zero volume after seeding")

        # step 5: refinement rays from active facet centroids
        tasks, meta = [], []
        for fi in active:
            verts, _ = facet_geometry(facets[fi])
            normal = _facet_normal(verts, origin_u)
            if normal is None:
                continue
            centroid_u = verts.mean(axis=0)
            centroid = space.from_unit(centroid_u)
            if not space.margin_at(centroid) > epsilon:
                continue  # centroid already hugging the boundary
            tasks.append((centroid, normal * space.span, centroid_u))
            meta.append(fi)
        if not tasks:
            break
        results = runner(
            delayed(_try_ray)(space, c, d, epsilon, generation)
            for c, d, _ in tasks
        )

        # step 6: retain while the cone volume still matters
        new_active = []
        grew = False
        for fi, res, (centroid, _, centroid_u) in zip(meta, results, tasks):
            if res is None:
                continue
            pt = res.edge_point if isinstance(res, NotFound) else res
            facet = facets[fi]
            verts = np.array([unit_of(points[i]) for i in facet])
            p_u = unit_of(pt)
            if not _in_facet_cone(origin_u, verts, p_u):
                # normal ray left the facet's origin-cone; redo radially so
                # the split keeps the surface star-shaped and closed
                radial = (centroid_u - origin_u) * space.span
                res = _try_ray(space, centroid, radial, epsilon, generation)
                if res is None:
                    continue
                pt = res.edge_point if isinstance(res, NotFound) else res
                p_u = unit_of(pt)
                if not _in_facet_cone(origin_u, verts, p_u):
                    continue
            # local cone volume: simplex spanned by the new vertex and the facet
            v_i = _added_volume(verts, p_u, origin_u)
            if v_i / total <= epsilon_r:
                continue
            idx = len(points)
            points.append(pt)
            grew = True
            # split the facet into l sub-facets around the new vertex
            first_new = len(facets)
            for k in range(len(facet)):
                sub = list(facet)
                sub[k] = idx
                facets.append(tuple(sub))
            facets[fi] = facets.pop()  # replace parent with last sub-facet
            new_active.extend(range(first_new, len(facets)))
            new_active.append(fi)
        active = new_active
        if not grew:
            break

    # step 7: assemble
    vols, normals = [], []
    for f in facets:
        verts = np.array([unit_of(points[i]) for i in f])
        vols.append(_cone_volume_unit(verts, origin_u))
        normals.append(_facet_normal(verts, origin_u))
    volume_unit = float(sum(vols))
    volume = volume_unit * float(np.prod(space.span))
    return Region(space=space, origin=origin, points=points, facets=facets,
                  normals=normals, volume=volume, epsilon=epsilon)


def _try_ray(space, origin, direction, epsilon, generation):
    """Refinement ray wrapper: box-edge and stability precondition failures
    simply skip the facet instead of aborting the whole fit."""
    try:
        return ray_boundary_search(space, origin, direction, epsilon, generation)
    except RegionError:
        return None


def _added_volume(facet_verts_unit: np.ndarray, p_unit: np.ndarray,
                  origin_unit: np.ndarray) -> float:
    """Volume of the simplex spanned by the new vertex and the facet."""
    verts = np.vstack([facet_verts_unit, p_unit])
    mat = (verts[1:] - verts[0]).T
    l = origin_unit.size
    return abs(float(np.linalg.det(mat))) / math.factorial(l)


def _in_facet_cone(origin_u, verts_u, p_u) -> bool:
    """True when p lies in the cone from the origin through the facet simplex.

    Splitting a facet around a vertex outside its cone would self-intersect
    the surface, so refinement falls back to a radial ray in that case.
    """
    n = _facet_normal(verts_u, origin_u)
    if n is None:
        return False
    d = p_u - origin_u
    denom = float(n @ d)
    if abs(denom) < 1e-300:
        return False
    t = float(n @ (verts_u[0] - origin_u)) / denom
    if t <= 0:
        return False
    hit = origin_u + t * d
    base = verts_u[0]
    edges = (verts_u[1:] - base).T
    if edges.size == 0:
        return bool(np.linalg.norm(hit - base) < 1e-9)
    lam, *_ = np.linalg.lstsq(edges, hit - base, rcond=None)
    return bool((lam >= -1e-9).all() and lam.sum() <= 1 + 1e-9)


def polytope_volume(region: Region) -> float:
    """Sum of facet cone volumes |det[p_1-o, ..., p_l-o]|/l! in physical units."""
    o = np.asarray(region.origin, float)
    l = o.size
    total = 0.0
    for f in region.facets:
        mat = np.array([region.points[i].coords - o for i in f]).T
        total += abs(float(np.linalg.det(mat))) / math.factorial(l)
    return total


# ---------------------------------------------------------------------------
# containment and sampling


def surface_crossing(region: Region, points_unit: np.ndarray) -> np.ndarray:
    """For each unit-coordinate point, the ray parameter t in (0, inf] where
    the ray origin -> point pierces the facet surface (inf when it misses,
    which only happens for degenerate fits)."""
    pts = np.atleast_2d(np.asarray(points_unit, float))
    o_u = region.origin_unit
    d = pts - o_u                                     # (B, l)
    best = np.full(len(pts), np.inf)
    verts_all = region.points_unit
    l = region.space.dimension
    tol = 1e-9
    for f, n in zip(region.facets, region.normals):
        if n is None:
            continue
        verts = verts_all[list(f)]
        base = verts[0]
        denom = d @ n                                  # (B,)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (n @ (base - o_u)) / denom
        ok = np.isfinite(t) & (t > 0)
        if not ok.any():
            continue
        t = np.where(ok, t, 1.0)  # dummy ray parameter for masked rows
        hits = o_u + t[:, None] * d                    # (B, l)
        if l == 1:
            inside = np.linalg.norm(hits - base, axis=1) < tol
        else:
            edges = (verts[1:] - base).T               # (l, l-1)
            pinv = np.linalg.pinv(edges)               # (l-1, l)
            lam = (hits - base) @ pinv.T               # (B, l-1)
            inside = (lam >= -tol).all(axis=1) & (lam.sum(axis=1) <= 1 + tol)
        ok &= inside
        np.minimum(best, np.where(ok, t, np.inf), out=best)
    return best


def _contains_unit(region: Region, points_unit: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points_unit, float))
    t = surface_crossing(region, pts)
    at_origin = np.all(np.abs(pts - region.origin_unit) < 1e-12, axis=1)
    return (t >= 1.0 - 1e-12) & np.isfinite(t) | at_origin


def region_contains(region: Region, point) -> bool:
    """Star-shaped membership: the segment origin -> point must end before
    the surface crossing along the same ray."""
    p_u = region.space.to_unit(point)
    return bool(_contains_unit(region, p_u[None, :])[0])


def sample_ismd(region: Region, n_samples: int = DEFAULT_MC_SAMPLES,
                seed: int = 0, jobs: int = 1):
    """Uniform rejection sampling inside the fitted surface.

    Candidates are drawn uniformly over the boundary's axis-aligned bounding
    box; a candidate is kept when it lies inside the facet star and its
    margin is positive. Deterministic for a fixed seed. Raises when the
    acceptance ratio collapses below 1e-3 (box badly mismatched to region).
    """
    if n_samples < 1:
        raise RegionError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    pts_u = region.points_unit
    lo_u = pts_u.min(axis=0)
    hi_u = pts_u.max(axis=0)
    l = region.space.dimension
    kept = []
    drawn = 0
    runner = Parallel(n_jobs=jobs, prefer="processes")
    batch = max(256, int(1.5 * n_samples))
    while len(kept) < n_samples:
        u = rng.uniform(lo_u, hi_u, size=(batch, l))
        drawn += batch
        inside = u[_contains_unit(region, u)]
        coords = [region.space.from_unit(row) for row in inside]
        margins = runner(delayed(region.space.margin_at)(c) for c in coords)
        for c, m in zip(coords, margins):
            if m > 0:
                kept.append(IsmdSample(coords=np.asarray(c), margin=float(m)))
                if len(kept) == n_samples:
                    break
        if drawn >= 4096 and len(kept) / drawn < MIN_ACCEPTANCE:
            raise RegionError(
                f"acceptance ratio {len(kept) / drawn:.2e} < {MIN_ACCEPTANCE}; "
                "bounding box likely mismatched to the region")
    return kept


def region_union_probe(regions, point) -> str:
    """Membership of a point in a union of regions over one shared box."""
    if not regions:
        raise RegionError("need at least one region")
    first = regions[0].space
    for r in regions[1:]:
        if not first.same_box(r.space):
            raise RegionError("regions are defined over different parameter boxes")
    for r in regions:
        if region_contains(r, point):
            return "inside_some"
    return "inside_none"


# ---------------------------------------------------------------------------
# plain-text export


def save_region(region: Region, path):
    """Boundary vertices (one row per point) plus a facet index list."""
    with open(path, "w") as fh:
        fh.write("# sssr region v1\n")
        fh.write(f"dimension {region.space.dimension}\n")
        for a in region.space.axes:
            fh.write(f"axis {a.name} {a.lower:.17g} {a.upper:.17g}\n")
        fh.write("origin " + " ".join(f"{v:.17g}" for v in region.origin) + "\n")
        fh.write(f"epsilon {region.epsilon:.17g}\n")
        fh.write(f"volume {region.volume:.17g}\n")
        fh.write(f"points {len(region.points)}\n")
        for p in region.points:
            row = " ".join(f"{v:.17g}" for v in p.coords)
            fh.write(f"{row} {p.max_real:.17g} {p.generation} {int(p.clipped)}\n")
        fh.write(f"facets {len(region.facets)}\n")
        for f in region.facets:
            fh.write(" ".join(str(i) for i in f) + "\n")


def load_region(path, margin_fn=None) -> Region:
    """Rebuild a Region from a save_region file.

    The margin callback is not serialized; pass one to re-enable margin
    queries (containment tests work without it).
    """
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip() and not ln.startswith("#")]
    it = iter(lines)
    tok = next(it).split()
    if tok[0] != "dimension":
        raise RegionError("not a region file")
    l = int(tok[1])
    axes = []
    for _ in range(l):
        _, name, lo, hi = next(it).split()
        axes.append(Axis(name, float(lo), float(hi)))
    tok = next(it).split()
    origin = np.array([float(v) for v in tok[1:]])
    eps = float(next(it).split()[1])
    volume = float(next(it).split()[1])
    n_pts = int(next(it).split()[1])
    points = []
    for _ in range(n_pts):
        vals = next(it).split()
        coords = np.array([float(v) for v in vals[:l]])
        points.append(BoundaryPoint(coords=coords, max_real=float(vals[l]),
                                    generation=int(vals[l + 1]),
                                    clipped=bool(int(vals[l + 2]))))
    n_fac = int(next(it).split()[1])
    facets = [tuple(int(i) for i in next(it).split()) for _ in range(n_fac)]
    space = ParamSpace(axes=tuple(axes),
                       margin_fn=margin_fn if margin_fn is not None else _no_margin)
    region = Region(space=space, origin=origin, points=points, facets=facets,
                    normals=[], volume=volume, epsilon=eps)
    o_u = region.origin_unit
    pts_u = region.points_unit
    region.normals = [
        _facet_normal(pts_u[list(f)], o_u) for f in facets
    ]
    return region


def _no_margin(x):
    raise RegionError("region was loaded without a margin callback")


def save_ismd(samples, path, axis_names=None):
    """Comma-separated rows: param_1, ..., param_l, margin."""
    with open(path, "w") as fh:
        if axis_names:
            fh.write(",".join(list(axis_names) + ["margin"]) + "\n")
        for s in samples:
            row = ",".join(f"{v:.17g}" for v in s.coords)
            fh.write(f"{row},{s.margin:.17g}\n")


def load_ismd(path):
    samples = []
    with open(path) as fh:
        for ln in fh:
            ln = ln.strip()
            if not ln:
                continue
            parts = ln.split(",")
            try:
                vals = [float(v) for v in parts]
            except ValueError:
                continue  # header row
            samples.append(IsmdSample(coords=np.array(vals[:-1]), margin=vals[-1]))
    return samples
