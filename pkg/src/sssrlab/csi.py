"""Comprehensive stability index over a fitted security region.

J(X) = w_m*Mbar(X) - w_s*Sbar(X) + w_d*Dbar(X): the max-min normalized
margin, gradient-norm sensitivity, and boundary distance, scalarized with
weights that sum to one. Maps are evaluated on a grid restricted to the
region interior; the normalization spans are frozen into a context so
online lookups stay comparable across time.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .gmm import GmmModel, margin_gradient, predict_margin
from .region import Region, _contains_unit, region_contains

__all__ = [
    "CsiError",
    "CsiWeights",
    "NormContext",
    "CsiMap",
    "boundary_distance",
    "normalize_indicator",
    "csi_map",
    "csi_at_operating_point",
    "save_csi_map",
    "load_csi_map",
]

DEFAULT_RESOLUTION = 60


class CsiError(ValueError):
    """Raised for invalid weights, grids, or out-of-region queries."""


@dataclass(frozen=True)
class CsiWeights:
    """Scalarization weights; must lie in [0,1] and sum to one."""

    w_m: float = 0.4
    w_s: float = 0.3
    w_d: float = 0.3

    def __post_init__(self):
        if not all(0.0 <= w <= 1.0 for w in (self.w_m, self.w_s, self.w_d)):
            raise CsiError("weights must lie in [0, 1]")
        if abs(self.w_m + self.w_s + self.w_d - 1.0) > 1e-12:
            raise CsiError("weights must sum to 1")

    @property
    def lower_bound(self) -> float:
        return -self.w_s

    @property
    def upper_bound(self) -> float:
        return self.w_m + self.w_d


@dataclass(frozen=True)
class NormContext:
    """Frozen max-min spans of the three raw indicators, from one map."""

    margin_span: tuple
    sensitivity_span: tuple
    distance_span: tuple


@dataclass(frozen=True)
class CsiMap:
    """Grid evaluation of J over the region interior."""

    points: np.ndarray        # (n, l) physical coordinates inside the region
    margin: np.ndarray        # raw predicted margin
    sensitivity: np.ndarray   # raw gradient norm
    distance: np.ndarray      # raw boundary distance (normalized axis units)
    m_bar: np.ndarray
    s_bar: np.ndarray
    d_bar: np.ndarray
    j: np.ndarray
    argmax_j: np.ndarray      # coordinates of the J maximizer
    argmax_margin: np.ndarray
    weights: CsiWeights
    context: NormContext


# ---------------------------------------------------------------------------
# geometry


def _simplex_distance(p: np.ndarray, verts: np.ndarray) -> float:
    """Euclidean distance from p to the simplex conv(verts).

    Projects onto the affine hull; if the projection leaves the simplex,
    recurses on the sub-simplices (standard exact algorithm, fine for the
    <= 6 vertices the dimension guard allows).
    """
    if len(verts) == 1:
        return float(np.linalg.norm(p - verts[0]))
    base = verts[0]
    edges = verts[1:] - base                       # (m-1, l)
    t, *_ = np.linalg.lstsq(edges.T, p - base, rcond=None)
    bary = np.concatenate([[1.0 - t.sum()], t])
    if np.all(bary >= -1e-12):
        return float(np.linalg.norm(p - (base + t @ edges)))
    return min(_simplex_distance(p, np.delete(verts, i, axis=0))
               for i in range(len(verts)))


def _segment_distances(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distances from one point to many segments (the l=2 fast path)."""
    ab = b - a                                     # (F, 2)
    denom = np.sum(ab * ab, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.sum((p - a) * ab, axis=1) / denom
    t = np.clip(np.where(np.isfinite(t), t, 0.0), 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(p - proj, axis=1)


def boundary_distance(x, region: Region) -> float:
    """Minimum point-to-facet Euclidean distance in normalized axis units.

    The operating point must be inside the region; distance to a security
    boundary is meaningless from the insecure side.
    """
    x = np.asarray(x, float)
    if not region_contains(region, x):
        raise CsiError("operating point is outside the region")
    p_u = region.space.to_unit(x)
    verts_all = region.points_unit
    facets = [f for f, n in zip(region.facets, region.normals) if n is not None]
    if not facets:
        raise CsiError("region has no usable facets")
    if region.space.dimension == 2:
        a = np.array([verts_all[f[0]] for f in facets])
        b = np.array([verts_all[f[1]] for f in facets])
        return float(np.min(_segment_distances(p_u, a, b)))
    return min(_simplex_distance(p_u, verts_all[list(f)]) for f in facets)


# ---------------------------------------------------------------------------
# normalization


def normalize_indicator(values) -> np.ndarray:
    """Max-min rescale to [0, 1]; a degenerate span maps to all 0.5."""
    v = np.asarray(values, float)
    if v.size == 0:
        raise CsiError("cannot normalize an empty indicator")
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        warnings.warn("indicator has zero span; mapping all values to 0.5",
                      stacklevel=2)
        return np.full(v.shape, 0.5)
    return (v - lo) / (hi - lo)


def _apply_span(value: float, span) -> float:
    lo, hi = span
    if hi == lo:
        return 0.5
    # clip so frozen-context online values stay inside the J bounds
    return min(1.0, max(0.0, (value - lo) / (hi - lo)))


# ---------------------------------------------------------------------------
# maps


def csi_map(region: Region, model: GmmModel,
            grid_resolution: int = DEFAULT_RESOLUTION,
            weights: CsiWeights | None = None) -> CsiMap:
    """Evaluate J over a regular grid restricted to the region interior."""
    weights = weights or CsiWeights()
    space = region.space
    l = space.dimension
    axes_pts = [np.linspace(space.lower[i], space.upper[i], grid_resolution)
                for i in range(l)]
    mesh = np.meshgrid(*axes_pts, indexing="ij")
    grid = np.column_stack([m.ravel() for m in mesh])
    inside = _contains_unit(region, (grid - space.lower) / space.span)
    pts = grid[inside]
    if len(pts) == 0:
        raise CsiError("no grid points fall inside the region")

    margin = np.asarray(predict_margin(model, pts), float)
    grads = np.atleast_2d(margin_gradient(model, pts))
    sensitivity = np.linalg.norm(grads, axis=1)
    distance = np.array([boundary_distance(p, region) for p in pts])

    m_bar = normalize_indicator(margin)
    s_bar = normalize_indicator(sensitivity)
    d_bar = normalize_indicator(distance)
    j = weights.w_m * m_bar - weights.w_s * s_bar + weights.w_d * d_bar
    assert np.all(j >= weights.lower_bound - 1e-12)
    assert np.all(j <= weights.upper_bound + 1e-12)

    ctx = NormContext(
        margin_span=(float(margin.min()), float(margin.max())),
        sensitivity_span=(float(sensitivity.min()), float(sensitivity.max())),
        distance_span=(float(distance.min()), float(distance.max())),
    )
    return CsiMap(
        points=pts, margin=margin, sensitivity=sensitivity, distance=distance,
        m_bar=m_bar, s_bar=s_bar, d_bar=d_bar, j=j,
        argmax_j=pts[int(np.argmax(j))].copy(),
        argmax_margin=pts[int(np.argmax(margin))].copy(),
        weights=weights, context=ctx,
    )


def csi_at_operating_point(x, region: Region, model: GmmModel,
                           context: NormContext,
                           weights: CsiWeights | None = None) -> float:
    """Online J(x) with frozen normalization spans.

    Outside the region the point is insecure by definition and gets the
    sentinel J = -w_s - 1, strictly below any attainable value.
    """
    weights = weights or CsiWeights()
    if context is None:
        raise CsiError("missing normalization context")
    x = np.asarray(x, float)
    if not region_contains(region, x):
        return -weights.w_s - 1.0
    m = predict_margin(model, x)
    s = float(np.linalg.norm(margin_gradient(model, x)))
    d = boundary_distance(x, region)
    return (weights.w_m * _apply_span(m, context.margin_span)
            - weights.w_s * _apply_span(s, context.sensitivity_span)
            + weights.w_d * _apply_span(d, context.distance_span))


# ---------------------------------------------------------------------------
# export


def save_csi_map(cmap: CsiMap, path):
    """Summary block plus comma-separated grid rows, 17 significant digits."""
    w = cmap.weights

    def fmt(vals):
        return ",".join(f"{v:.17g}" for v in np.atleast_1d(vals))

    with open(path, "w") as fh:
        fh.write("# csi map v1\n")
        fh.write(f"weights,{w.w_m:.17g},{w.w_s:.17g},{w.w_d:.17g}\n")
        fh.write(f"argmax_j,{fmt(cmap.argmax_j)}\n")
        fh.write(f"argmax_margin,{fmt(cmap.argmax_margin)}\n")
        fh.write(f"margin_span,{fmt(cmap.context.margin_span)}\n")
        fh.write(f"sensitivity_span,{fmt(cmap.context.sensitivity_span)}\n")
        fh.write(f"distance_span,{fmt(cmap.context.distance_span)}\n")
        fh.write("data\n")
        for i in range(len(cmap.points)):
            row = np.concatenate([
                cmap.points[i],
                [cmap.margin[i], cmap.sensitivity[i], cmap.distance[i],
                 cmap.m_bar[i], cmap.s_bar[i], cmap.d_bar[i], cmap.j[i]],
            ])
            fh.write(fmt(row) + "\n")


def load_csi_map(path):
    """Rebuild the numeric payload of a saved map.

    Returns (points, raw, normalized, j, summary) where raw and normalized
    are (n, 3) arrays and summary is the key-value header block.
    """
    summary = {}
    rows = []
    with open(path) as fh:
        in_data = False
        for ln in fh:
            ln = ln.strip()
            if not ln or ln.startswith("#"):
                continue
            if ln == "data":
                in_data = True
                continue
            if in_data:
                rows.append([float(v) for v in ln.split(",")])
            else:
                key, *vals = ln.split(",")
                summary[key] = np.array([float(v) for v in vals])
    if not rows:
        raise CsiError("csi map file has no data rows")
    arr = np.array(rows)
    l = arr.shape[1] - 7
    return arr[:, :l], arr[:, l:l + 3], arr[:, l + 3:l + 6], arr[:, l + 6], summary
