"""Region fitting tests.

Oracles are analytic shapes: margin fields whose zero level set is a disk,
ellipse, ball, or interval give closed-form areas/volumes, and determinant
arithmetic on hand-built diamonds/hexagons checks the cone-volume formula
directly. One grid-parameter plane exercises the physical margin path.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sssrlab.model import GflGains, Setpoint, SystemParams
from sssrlab.region import (
    Axis,
    BoundaryPoint,
    IsmdSample,
    NotFound,
    ParamSpace,
    Region,
    RegionError,
    fit_sssr,
    load_ismd,
    load_region,
    parameter_plane,
    polytope_volume,
    ray_boundary_search,
    region_contains,
    region_union_probe,
    sample_ismd,
    save_ismd,
    save_region,
)

EPS = 0.01


def disk_space(radius=1.0, box=1.2, center=(0.0, 0.0)):
    c = np.asarray(center)
    return ParamSpace(
        axes=(Axis("x", -box, box), Axis("y", -box, box)),
        margin_fn=lambda p, c=c, r=radius: r - float(np.linalg.norm(p - c)),
    )


# ---------------------------------------------------------------------------
# ray search


def test_ray_finds_disk_radius_along_axis():
    bp = ray_boundary_search(disk_space(), np.zeros(2), np.array([1.0, 0.0]))
    assert isinstance(bp, BoundaryPoint)
    assert np.linalg.norm(bp.coords) == pytest.approx(1.0, abs=EPS)
    assert -EPS <= bp.max_real <= 0.0
    assert not bp.clipped


@pytest.mark.parametrize("angle", [0.3, 1.1, 2.0, 3.9, 5.5])
def test_ray_radius_is_direction_independent(angle):
    d = np.array([math.cos(angle), math.sin(angle)])
    bp = ray_boundary_search(disk_space(), np.zeros(2), d)
    assert np.linalg.norm(bp.coords) == pytest.approx(1.0, abs=EPS)


def test_ray_reversed_direction_same_radius():
    r1 = ray_boundary_search(disk_space(), np.zeros(2), np.array([1.0, 0.0]))
    r2 = ray_boundary_search(disk_space(), np.zeros(2), np.array([-1.0, 0.0]))
    assert np.linalg.norm(r1.coords) == pytest.approx(np.linalg.norm(r2.coords), abs=1e-6)


def test_ray_from_unstable_origin_rejected():
    with pytest.raises(RegionError, match="strictly stable"):
        ray_boundary_search(disk_space(), np.array([0.995, 0.0]), np.array([1.0, 0.0]))


def test_ray_zero_direction_rejected():
    with pytest.raises(RegionError, match="nonzero"):
        ray_boundary_search(disk_space(), np.zeros(2), np.zeros(2))


def test_ray_clips_at_box_edge_when_still_stable():
    res = ray_boundary_search(disk_space(box=0.8), np.zeros(2), np.array([1.0, 0.0]))
    assert isinstance(res, NotFound)
    ep = res.edge_point
    assert ep.clipped
    assert ep.coords[0] == pytest.approx(0.8, abs=1e-9)
    assert ep.max_real == pytest.approx(-0.2, abs=1e-9)


def test_ray_treats_infeasible_as_unstable():
    # margin jumps to -inf beyond radius 0.5: boundary must land at 0.5
    def m(p):
        r = float(np.linalg.norm(p))
        return 0.6 - r if r <= 0.5 else -math.inf

    space = ParamSpace(axes=(Axis("x", -1.0, 1.0), Axis("y", -1.0, 1.0)), margin_fn=m)
    bp = ray_boundary_search(space, np.zeros(2), np.array([1.0, 0.0]))
    # discontinuous margin: bisection collapses onto the feasibility edge
    assert np.linalg.norm(bp.coords) == pytest.approx(0.5, abs=1e-3)


# ---------------------------------------------------------------------------
# fitting


def test_disk_area_within_two_percent():
    reg = fit_sssr(disk_space(), np.zeros(2), epsilon_r=1e-3)
    assert reg.volume == pytest.approx(math.pi, rel=0.02)
    assert polytope_volume(reg) == pytest.approx(reg.volume, rel=1e-12)


def test_stored_boundary_points_reverify_band():
    space = disk_space()
    reg = fit_sssr(space, np.zeros(2), epsilon_r=1e-3)
    assert len(reg.points) >= 4
    for p in reg.points:
        assert not p.clipped
        m = space.margin_at(p.coords)
        assert -EPS <= -m <= 0.0


def test_ellipse_area_with_heterogeneous_axes():
    # 1000:1 axis scales: normalization should make this as easy as the disk
    space = ParamSpace(
        axes=(Axis("x", -1200.0, 1200.0), Axis("y", -1.2, 1.2)),
        margin_fn=lambda p: 1.0 - math.hypot(p[0] / 1000.0, p[1]),
    )
    reg = fit_sssr(space, np.zeros(2), epsilon_r=1e-3)
    assert reg.volume == pytest.approx(1000.0 * math.pi, rel=0.02)


@settings(max_examples=8, deadline=None)
@given(
    a=st.floats(0.5, 2.0),
    b=st.floats(0.5, 2.0),
    theta=st.floats(0.0, math.pi),
)
def test_rotated_ellipse_area_property(a, b, theta):
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    scale = np.diag([1.0 / a, 1.0 / b])
    m = lambda p: 1.0 - float(np.linalg.norm(scale @ rot.T @ p))
    space = ParamSpace(axes=(Axis("x", -3.0, 3.0), Axis("y", -3.0, 3.0)), margin_fn=m)
    reg = fit_sssr(space, np.zeros(2), epsilon_r=1e-3)
    assert reg.volume == pytest.approx(math.pi * a * b, rel=0.02)


def test_interval_region_in_one_dimension():
    space = ParamSpace(axes=(Axis("x", -2.0, 2.0),),
                       margin_fn=lambda p: 1.0 - abs(float(p[0])))
    reg = fit_sssr(space, np.zeros(1), epsilon_r=1e-3)
    assert reg.volume == pytest.approx(2.0, abs=2 * EPS)


def test_ball_volume_improves_with_tighter_epsilon_r():
    space = ParamSpace(axes=tuple(Axis(n, -1.2, 1.2) for n in "xyz"),
                       margin_fn=lambda p: 1.0 - float(np.linalg.norm(p)))
    target = 4.0 * math.pi / 3.0
    coarse = fit_sssr(space, np.zeros(3), epsilon_r=1e-3, max_rounds=20)
    fine = fit_sssr(space, np.zeros(3), epsilon_r=1e-4, max_rounds=20)
    assert coarse.volume < target  # inscribed surface underestimates
    assert abs(fine.volume - target) < abs(coarse.volume - target)
    assert fine.volume == pytest.approx(target, rel=0.15)


def test_fit_rejects_unstable_origin_and_high_dimension():
    with pytest.raises(RegionError, match="strictly stable"):
        fit_sssr(disk_space(), np.array([0.999, 0.0]))
    axes = tuple(Axis(f"a{i}", 0.0, 1.0) for i in range(7))
    space = ParamSpace(axes=axes, margin_fn=lambda p: 1.0)
    with pytest.raises(RegionError, match="> 6"):
        fit_sssr(space, np.full(7, 0.5))


def test_fit_with_clipped_vertices_still_closes():
    # disk of radius 1 in a box of half-width 0.8: axis rays clip, diagonal
    # rays find the true boundary
    space = disk_space(box=0.8)
    reg = fit_sssr(space, np.zeros(2), epsilon_r=1e-3)
    clipped = [p for p in reg.points if p.clipped]
    proper = [p for p in reg.points if not p.clipped]
    assert clipped and proper
    exact = math.pi - 4.0 * (math.acos(0.8) - 0.8 * math.sqrt(1.0 - 0.64))
    assert reg.volume == pytest.approx(exact, rel=0.03)


def test_gain_plane_fit_reverifies_on_physical_margin():
    space = parameter_plane(
        "gfl", SystemParams(scr=2.0), GflGains(), Setpoint(),
        [("kp_o1", 0.0, 0.1), ("ki_o1", 0.0, 4.0)],
    )
    reg = fit_sssr(space, np.array([0.01, 1.0 / math.pi]), epsilon_r=5e-3)
    assert reg.volume > 0
    for p in reg.points:
        if p.clipped:
            continue
        m = space.margin_at(p.coords)
        assert -EPS <= -m <= 0.0


# ---------------------------------------------------------------------------
# volumes on hand-built regions


def _hand_region(vertices):
    n = len(vertices)
    pts = [BoundaryPoint(coords=np.asarray(v, float), max_real=0.0) for v in vertices]
    facets = [(i, (i + 1) % n) for i in range(n)]
    space = ParamSpace(axes=(Axis("x", -2.0, 2.0), Axis("y", -2.0, 2.0)),
                       margin_fn=lambda p: 1.0)
    return Region(space=space, origin=np.zeros(2), points=pts, facets=facets,
                  normals=[None] * n, volume=float("nan"))


def test_polytope_volume_diamond():
    reg = _hand_region([(1, 0), (0, 1), (-1, 0), (0, -1)])
    assert polytope_volume(reg) == pytest.approx(2.0, abs=1e-14)


def test_polytope_volume_hexagon():
    verts = [(math.cos(k * math.pi / 3), math.sin(k * math.pi / 3)) for k in range(6)]
    reg = _hand_region(verts)
    assert polytope_volume(reg) == pytest.approx(3.0 * math.sqrt(3.0) / 2.0, rel=1e-12)


def test_polytope_volume_tolerates_degenerate_facet():
    # repeated vertex: facet (A, B) is degenerate and edge (B, C) is
    # collinear with the origin; only the two lower cones contribute
    reg = _hand_region([(1, 0), (1, 0), (-1, 0), (0, -1)])
    assert polytope_volume(reg) == pytest.approx(1.0, rel=1e-12)


# ---------------------------------------------------------------------------
# sampling and containment


def test_ismd_samples_inside_with_positive_margin():
    space = disk_space()
    reg = fit_sssr(space, np.zeros(2), epsilon_r=1e-3)
    samples = sample_ismd(reg, 500, seed=7)
    assert len(samples) == 500
    for s in samples:
        assert s.margin > 0
        assert s.margin == pytest.approx(space.margin_at(s.coords), rel=1e-12)
        assert region_contains(reg, s.coords)


def test_ismd_seeded_and_bit_reproducible():
    reg = fit_sssr(disk_space(), np.zeros(2), epsilon_r=1e-3)
    a = sample_ismd(reg, 300, seed=123)
    b = sample_ismd(reg, 300, seed=123)
    c = sample_ismd(reg, 300, seed=124)
    assert all(np.array_equal(x.coords, y.coords) and x.margin == y.margin
               for x, y in zip(a, b))
    assert any(not np.array_equal(x.coords, y.coords) for x, y in zip(a, c))


def test_disk_rejection_fraction_matches_area_ratio():
    reg = fit_sssr(disk_space(), np.zeros(2), epsilon_r=1e-3)
    rng = np.random.default_rng(5)
    pts = rng.uniform(-1.0, 1.0, size=(10000, 2))
    inside = sum(bool(region_contains(reg, p)) for p in pts)
    assert inside / 10000 == pytest.approx(math.pi / 4.0, abs=0.02)


def test_acceptance_ratio_collapse_raises():
    space = disk_space()
    reg = fit_sssr(space, np.zeros(2), epsilon_r=1e-3)
    # same geometry, but almost nothing inside still has positive margin
    tiny = ParamSpace(axes=space.axes,
                      margin_fn=lambda p: 0.005 - float(np.linalg.norm(p)))
    broken = Region(space=tiny, origin=reg.origin, points=reg.points,
                    facets=reg.facets, normals=reg.normals, volume=reg.volume)
    with pytest.raises(RegionError, match="acceptance ratio"):
        sample_ismd(broken, 200, seed=0)


def test_containment_agrees_with_margin_sign():
    space = disk_space()
    reg = fit_sssr(space, np.zeros(2), epsilon_r=1e-3)
    rng = np.random.default_rng(11)
    checked = 0
    for p in rng.uniform(-1.2, 1.2, size=(500, 2)):
        m = space.margin_at(p)
        if abs(m) < 0.02:
            continue  # inside the fit's tolerance shell
        checked += 1
        assert region_contains(reg, p) == (m > 0)
    assert checked > 400


def test_union_probe():
    left = fit_sssr(disk_space(radius=0.5, center=(-0.3, 0.0)),
                    np.array([-0.3, 0.0]), epsilon_r=1e-3)
    right = fit_sssr(disk_space(radius=0.5, center=(0.3, 0.0)),
                     np.array([0.3, 0.0]), epsilon_r=1e-3)
    assert region_union_probe([left, right], np.array([0.7, 0.0])) == "inside_some"
    assert region_union_probe([left, right], np.array([-0.7, 0.0])) == "inside_some"
    assert region_union_probe([left, right], np.array([0.0, 0.9])) == "inside_none"
    assert region_union_probe([left, right], left.origin) == "inside_some"
    other = fit_sssr(disk_space(box=0.9, radius=0.5), np.zeros(2), epsilon_r=1e-3)
    with pytest.raises(RegionError, match="different parameter boxes"):
        region_union_probe([left, other], np.zeros(2))


# ---------------------------------------------------------------------------
# validation and serialization


def test_param_space_validation():
    with pytest.raises(RegionError):
        Axis("x", 1.0, 1.0)
    with pytest.raises(RegionError):
        ParamSpace(axes=(), margin_fn=lambda p: 1.0)
    with pytest.raises(RegionError):
        ParamSpace(axes=(Axis("x", 0, 1), Axis("x", 0, 2)), margin_fn=lambda p: 1.0)


def test_parameter_plane_rejects_unknown_axis():
    space = parameter_plane("gfl", SystemParams(), GflGains(), Setpoint(),
                            [("no_such_gain", 0.0, 1.0)])
    with pytest.raises(RegionError, match="unknown parameter axis"):
        space.margin_fn(np.array([0.5]))


def test_region_save_load_round_trip(tmp_path):
    space = disk_space(box=0.8)
    reg = fit_sssr(space, np.zeros(2), epsilon_r=1e-3)
    path = tmp_path / "region.txt"
    save_region(reg, path)
    back = load_region(path, margin_fn=space.margin_fn)
    assert back.volume == reg.volume
    assert back.facets == reg.facets
    assert len(back.points) == len(reg.points)
    for p, q in zip(reg.points, back.points):
        np.testing.assert_array_equal(p.coords, q.coords)
        assert p.max_real == q.max_real
        assert p.clipped == q.clipped
        assert p.generation == q.generation
    rng = np.random.default_rng(3)
    for probe in rng.uniform(-0.8, 0.8, size=(50, 2)):
        assert region_contains(back, probe) == region_contains(reg, probe)


def test_loaded_region_without_margin_rejects_queries(tmp_path):
    reg = fit_sssr(disk_space(), np.zeros(2), epsilon_r=1e-3)
    path = tmp_path / "region.txt"
    save_region(reg, path)
    back = load_region(path)
    with pytest.raises(RegionError, match="margin callback"):
        back.space.margin_at(np.zeros(2))
    assert region_contains(back, np.zeros(2))  # geometry still works


def test_ismd_save_load_round_trip(tmp_path):
    samples = [IsmdSample(coords=np.array([0.1, -2.5e-7]), margin=0.123456789012345678),
               IsmdSample(coords=np.array([1.0 / 3.0, math.pi]), margin=1e-300)]
    path = tmp_path / "ismd.csv"
    save_ismd(samples, path, axis_names=("a", "b"))
    back = load_ismd(path)
    assert len(back) == 2
    for s, t in zip(samples, back):
        np.testing.assert_array_equal(s.coords, t.coords)
        assert s.margin == t.margin
