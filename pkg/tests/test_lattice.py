import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from torcover.lattice import (
    AnnulusFamily,
    DegenerateRegionError,
    InvalidRadiusError,
    Region,
    Site,
    ball,
    box_corners,
    disc,
    inner_boundary,
    neighbors,
    site,
    tile_boxes,
    torus_distance,
)

from .oracles import brute_ball, brute_boundary, brute_distance

NORMS = ["euclidean", "l1", "linf"]


def sites_on(n):
    return st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)).map(lambda t: Site(*t))


class TestDistance:
    def test_identity(self):
        assert torus_distance(Site(0, 0), Site(0, 0), 8, "l1") == 0

    def test_wraparound_adjacency(self):
        assert torus_distance(Site(0, 0), Site(7, 0), 8, "l1") == 1

    def test_pythagorean_oracle(self):
        # frozen from oracles.brute_distance((0,0), (3,4), 16)
        assert torus_distance(Site(0, 0), Site(3, 4), 16, "euclidean") == pytest.approx(5.0)

    @pytest.mark.parametrize("norm", NORMS)
    @pytest.mark.parametrize("n", [3, 8, 11])
    def test_matches_brute_force(self, n, norm):
        for a in [(0, 0), (1, 2), (n - 1, n // 2)]:
            for b in [(0, 0), (n - 1, n - 1), (n // 2, 1)]:
                assert torus_distance(Site(*a), Site(*b), n, norm) == pytest.approx(brute_distance(a, b, n, norm))

    def test_unknown_norm(self):
        with pytest.raises(ValueError):
            torus_distance(Site(0, 0), Site(1, 1), 8, "l3")

    @settings(max_examples=200, deadline=None)
    @given(st.data(), st.sampled_from(NORMS), st.integers(2, 20))
    def test_metric_axioms(self, data, norm, n):
        a, b, c = (data.draw(sites_on(n)) for _ in range(3))
        dab = torus_distance(a, b, n, norm)
        assert dab == pytest.approx(torus_distance(b, a, n, norm))
        assert (dab == 0) == (a == b)
        assert dab <= torus_distance(a, c, n, norm) + torus_distance(c, b, n, norm) + 1e-12


class TestBall:
    def test_singleton(self):
        b = ball(Site(4, 4), 0.5, 8)
        assert b.sites == (Site(4, 4),)
        assert b.boundary == (Site(4, 4),)

    def test_unit_ball_is_plus_shape(self):
        assert len(ball(Site(4, 4), 1, 8)) == 5

    def test_radius_two_and_half(self):
        # frozen from oracles.brute_ball((8,8), 2.5, 16): 21 sites, 12 on the boundary
        b = ball(Site(8, 8), 2.5, 16)
        assert len(b) == 21
        assert len(b.boundary) == 12
        for s in b.boundary:
            assert 1.5 < torus_distance(s, Site(8, 8), 16) <= 2.5

    @pytest.mark.parametrize("r", [0.9, 1.5, 2.5, 3.2, 4.9])
    def test_matches_brute_force(self, r):
        assert b_set(ball(Site(5, 3), r, 12)) == brute_ball((5, 3), r, 12)

    @pytest.mark.parametrize("r", [4, 4.5, 10])
    def test_radius_too_large(self, r):
        with pytest.raises(InvalidRadiusError):
            ball(Site(0, 0), r, 8)

    def test_nonpositive_radius(self):
        with pytest.raises(InvalidRadiusError):
            ball(Site(0, 0), 0, 8)

    def test_disc_allows_half_side(self):
        d = disc(Site(8, 8), 8, 16)
        assert 0 < len(d) < 256

    def test_symmetric_under_square_group(self):
        c = Site(6, 6)
        rel = {((s.x - c.x), (s.y - c.y)) for s in ball(c, 3.7, 13).sites}
        for dx, dy in rel:
            assert (dy, -dx) in rel and (-dx, dy) in rel

    @settings(max_examples=50, deadline=None)
    @given(st.integers(3, 16).flatmap(lambda n: st.tuples(st.just(n), sites_on(n))), st.floats(0.3, 1.45))
    def test_translation_invariant_size(self, n_center, frac):
        n, c = n_center
        r = frac * n / 3
        assert len(ball(c, r, n)) == len(ball(Site(0, 0), r, n))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(3, 16).flatmap(lambda n: st.tuples(st.just(n), sites_on(n))), st.floats(0.3, 1.45))
    def test_cached_boundary_recomputes(self, n_center, frac):
        n, c = n_center
        b = ball(c, frac * n / 3, n)
        assert set(b.boundary) == inner_boundary(b.sites, n)


def b_set(region):
    return {(s.x, s.y) for s in region.sites}


class TestInnerBoundary:
    def test_singleton(self):
        assert inner_boundary({Site(2, 2)}, 8) == {Site(2, 2)}

    def test_full_row(self):
        row = {Site(3, y) for y in range(8)}
        assert inner_boundary(row, 8) == row

    def test_matches_brute_force(self):
        sites = {Site(x, y) for x in range(2, 6) for y in range(1, 4)} | {Site(7, 7)}
        assert {(s.x, s.y) for s in inner_boundary(sites, 9)} == brute_boundary({(s.x, s.y) for s in sites}, 9)

    @pytest.mark.parametrize("sites", [set(), {Site(x, y) for x in range(4) for y in range(4)}])
    def test_degenerate(self, sites):
        with pytest.raises(DegenerateRegionError):
            inner_boundary(sites, 4)


class TestTiling:
    def test_divisible_partition(self):
        boxes = tile_boxes(16, 0.5)
        assert len(boxes) == 16
        assert all(len(b) == 16 for b in boxes)
        seen = [s for b in boxes for s in b.sites]
        assert len(seen) == len(set(seen)) == 256

    def test_non_divisible_overlap(self):
        boxes = tile_boxes(10, 0.5)
        assert len(boxes) == 16
        assert all(len(b) == 9 for b in boxes)
        assert set().union(*(b.site_set for b in boxes)) == {Site(x, y) for x in range(10) for y in range(10)}
        # B_{jN} overlaps B_{(j-1)N+1} in every row of boxes (1-based labels)
        N = 4
        for j in range(1, N + 1):
            assert boxes[j * N - 1].site_set & boxes[(j - 1) * N].site_set
        # B_j overlaps B_{N^2-(j-1)} (first and last row of boxes)
        for j in range(1, N + 1):
            assert boxes[j - 1].site_set & boxes[N * N - j].site_set

    def test_serpentine_adjacency(self):
        corners = box_corners(16, 0.5)
        assert corners[0] == Site(0, 0)
        # box 5 (second row, entered from the right) sits directly above box 4
        assert corners[4] == Site(12, 4) and corners[3] == Site(12, 0)
        for a, b in zip(corners, corners[1:]):
            assert abs(a.x - b.x) + abs(a.y - b.y) == 4

    @pytest.mark.parametrize("n,alpha", [(10, 0.5), (64, 0.8), (17, 0.6), (1000, 1 / 3)])
    def test_covers_torus(self, n, alpha):
        boxes = tile_boxes(n, alpha)
        size = math.floor(n**alpha + 1e-9)
        assert len(boxes) == math.ceil(n / size) ** 2
        covered = set().union(*(b.site_set for b in boxes))
        assert len(covered) == n * n

    def test_too_small(self):
        with pytest.raises(ValueError):
            tile_boxes(4, 0.0001 - 1)


class TestRegionAndFamily:
    def test_json_roundtrip(self):
        r = ball(Site(3, 3), 2, 9)
        again = Region.from_json(r.to_json(), 9)
        assert again == r
        assert r.to_json() == '[' + ", ".join(f"[{s.x}, {s.y}]" for s in sorted(r.sites)) + ']'

    def test_site_reduction(self):
        assert site(-1, 17, 8) == Site(7, 1)

    def test_neighbors_on_two_torus_double_up(self):
        assert sorted(neighbors(Site(0, 0), 2)) == [Site(0, 1), Site(0, 1), Site(1, 0), Site(1, 0)]

    def test_family_invariants(self):
        fam = AnnulusFamily.balls([Site(4, 4), Site(12, 12)], 1, 3, 16)
        assert len(fam) == 2
        assert fam.region_of(Site(12, 10)) == 1
        assert fam.region_of(Site(0, 8)) == -1
        assert set(fam.outer.boundary) == set(fam.pairs[0][1].boundary) | set(fam.pairs[1][1].boundary)

    def test_family_rejects_overlap(self):
        with pytest.raises(ValueError):
            AnnulusFamily.balls([Site(4, 4), Site(6, 4)], 1, 3, 16)

    def test_family_rejects_inner_on_outer_boundary(self):
        with pytest.raises(ValueError):
            AnnulusFamily.of([(ball(Site(4, 4), 2, 16), ball(Site(4, 4), 2, 16))])
