import math

import numpy as np
import pytest

from mselab.geometry import (
    ConvexDomain,
    DomainKind,
    EmptyTruncationError,
    GeometryError,
    HalfPlane,
    classify,
    contains,
    domain_from_spec,
    exterior_cone,
    half_space,
    halfplane,
    inner_distance,
    slab,
    truncate,
    wedge,
)


def rotated(domain, angle, shift=(0.0, 0.0)):
    c, s = math.cos(angle), math.sin(angle)
    R = np.array([[c, -s], [s, c]])
    shift = np.asarray(shift, dtype=float)
    hps = []
    for hp in domain.halfplanes:
        n = R @ hp.normal
        hps.append(HalfPlane(n, hp.offset + n @ shift))
    return ConvexDomain(hps)


class TestContains:
    def test_half_space_above(self):
        assert contains(half_space(), (0.0, 1.0)) is True

    def test_half_space_below(self):
        assert contains(half_space(), (0.0, -1.0)) is False

    def test_quarter_wedge(self):
        quad = ConvexDomain([halfplane([0, -1], 0), halfplane([-1, 0], 0)])
        assert contains(quad, (1.0, 1.0)) is True
        assert contains(quad, (-1.0, 1.0)) is False

    def test_vectorized(self):
        pts = np.array([[0.0, 1.0], [0.0, -1.0], [3.0, 0.5]])
        np.testing.assert_array_equal(contains(half_space(), pts), [True, False, True])


class TestInnerDistance:
    def test_half_space(self):
        assert inner_distance(half_space(), (3.0, 2.0)) == pytest.approx(2.0)

    def test_quarter_wedge_min_of_coordinates(self):
        quad = ConvexDomain([halfplane([0, -1], 0), halfplane([-1, 0], 0)])
        assert inner_distance(quad, (1.0, 2.0)) == pytest.approx(1.0)

    def test_slab(self):
        assert inner_distance(slab(4.0), (7.0, 1.0)) == pytest.approx(1.0)

    def test_negative_outside(self):
        assert inner_distance(half_space(), (0.0, -0.5)) == pytest.approx(-0.5)

    def test_concave_along_segments(self):
        dom = wedge(2 * math.pi / 3)
        rng = np.random.default_rng(7)
        for _ in range(50):
            x = rng.uniform([-2, 0.1], [2, 5])
            y = rng.uniform([-2, 0.1], [2, 5])
            if not (contains(dom, x) and contains(dom, y)):
                continue
            for t in np.linspace(0, 1, 7):
                z = t * x + (1 - t) * y
                lhs = inner_distance(dom, z)
                rhs = t * inner_distance(dom, x) + (1 - t) * inner_distance(dom, y)
                assert lhs >= rhs - 1e-9


class TestClassify:
    def test_half_space(self):
        assert half_space().kind == DomainKind.HALF_SPACE

    def test_slab(self):
        assert slab(1.0).kind == DomainKind.SLAB

    def test_wedge_is_cone(self):
        assert wedge(math.pi / 3).kind == DomainKind.CONE

    def test_redundant_halfplane_dropped(self):
        dom = ConvexDomain([halfplane([0, -1], 0), halfplane([0, -1], 1)])
        assert dom.kind == DomainKind.HALF_SPACE
        assert len(dom.essential) == 1

    def test_three_lines_pencil_is_cone(self):
        # three boundary lines through the origin, all containing (0,1) side
        hps = [halfplane([1, -1], 0), halfplane([-1, -1], 0), halfplane([0, -1], 0)]
        # middle constraint is redundant for the wedge; still a cone
        assert classify(hps) == DomainKind.CONE

    def test_general_convex(self):
        hps = [
            halfplane([0, -1], 0),
            halfplane([1, -1], 1),
            halfplane([-1, -1], 1),
        ]
        assert classify(hps) == DomainKind.GENERAL_CONVEX

    def test_invariant_under_rotation_translation(self):
        rng = np.random.default_rng(3)
        for dom in (half_space(), slab(2.0), wedge(1.0)):
            for _ in range(5):
                ang = rng.uniform(0, 2 * math.pi)
                shift = rng.uniform(-5, 5, size=2)
                assert rotated(dom, ang, shift).kind == dom.kind

    def test_bounded_domain_rejected(self):
        box = [
            halfplane([1, 0], 1),
            halfplane([-1, 0], 1),
            halfplane([0, 1], 1),
            halfplane([0, -1], 1),
        ]
        with pytest.raises(GeometryError):
            ConvexDomain(box)

    def test_empty_domain_rejected(self):
        with pytest.raises(GeometryError):
            ConvexDomain([halfplane([0, 1], 0), halfplane([0, -1], -1)])

    def test_non_unit_normal_rejected(self):
        with pytest.raises(GeometryError):
            HalfPlane(np.array([0.0, 2.0]), 0.0)


class TestTruncate:
    def test_half_disk(self):
        poly = truncate(half_space(), 1.0, 0.0, arc_resolution=64)
        v = poly.vertices
        assert np.all(np.linalg.norm(v, axis=1) <= 1.0 + 1e-12)
        assert np.all(v[:, 1] >= -1e-12)
        # area approaches pi/2 from below (inscribed chords)
        assert 0.98 * math.pi / 2 < poly.area <= math.pi / 2 + 1e-12

    def test_wedge_margin_invariants(self):
        dom = wedge(math.pi / 2)
        poly = truncate(dom, 2.0, 0.1)
        v = poly.vertices
        assert np.all(np.linalg.norm(v, axis=1) <= 2.0 + 1e-12)
        d = inner_distance(dom, v)
        assert np.all(d >= 0.1 - 1e-9)

    def test_nesting_under_schedule(self):
        dom = wedge(2 * math.pi / 3)
        inner = truncate(dom, 4.0, 1.0 / 4.0)
        outer = truncate(dom, 5.0, 1.0 / 5.0)
        assert outer.contains_points(inner.vertices, tol=-1e-9).all()

    def test_nesting_long_schedule(self):
        dom = slab(2.0)
        polys = [truncate(dom, k, 1.0 / k) for k in range(3, 8)]
        for a, b in zip(polys, polys[1:]):
            assert b.contains_points(a.vertices, tol=-1e-12).all()

    def test_convexity_of_output(self):
        for dom in (half_space(), wedge(1.0), slab(1.5)):
            poly = truncate(dom, 6.0, 1.0 / 6.0)
            v = poly.vertices
            e = np.roll(v, -1, axis=0) - v
            cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
            assert np.all(cross >= -1e-9)

    def test_empty_truncation_raises(self):
        # slab of width 0.5 shrunk by margin 0.4 on both sides is empty
        with pytest.raises(EmptyTruncationError):
            truncate(slab(0.5), 2.0, 0.4)

    def test_bad_parameters_raise(self):
        with pytest.raises(GeometryError):
            truncate(half_space(), 1.0, 0.6)

    def test_slab_truncation_has_two_arcs(self):
        poly = truncate(slab(2.0), 8.0, 0.0, arc_resolution=128)
        v = poly.vertices
        on_circle = np.abs(np.linalg.norm(v, axis=1) - 8.0) < 1e-9
        # both left and right caps present
        assert np.any(v[on_circle, 0] > 0) and np.any(v[on_circle, 0] < 0)


class TestExteriorCone:
    def test_half_space_has_none(self):
        assert exterior_cone(half_space()) is None

    def test_wedge_cone_disjoint(self):
        dom = wedge(math.pi / 2)
        cone = exterior_cone(dom)
        assert cone is not None
        rng = np.random.default_rng(11)
        rel = rng.normal(size=(4000, 2)) * 20
        inside_cone = cone.contains_points(rel)
        assert inside_cone.sum() > 0
        assert not np.any(inside_cone & contains(dom, rel))

    def test_slab_cone_disjoint(self):
        dom = slab(1.0)
        cone = exterior_cone(dom)
        rng = np.random.default_rng(12)
        pts = rng.uniform(-30, 30, size=(4000, 2))
        inside_cone = cone.contains_points(pts)
        assert inside_cone.sum() > 0
        assert not np.any(inside_cone & contains(dom, pts))


class TestDomainFromSpec:
    def test_shortcuts(self):
        assert domain_from_spec("half_space").kind == DomainKind.HALF_SPACE
        assert domain_from_spec("wedge(1.0472)").kind == DomainKind.CONE
        assert domain_from_spec("slab(2)").kind == DomainKind.SLAB

    def test_halfplane_list(self):
        dom = domain_from_spec(
            {"halfplanes": [{"normal": [0, -2], "offset": 0}]}
        )
        assert dom.kind == DomainKind.HALF_SPACE

    def test_bad_spec(self):
        with pytest.raises(GeometryError):
            domain_from_spec("wedge")
        with pytest.raises(GeometryError):
            domain_from_spec({"nope": 1})
