import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from torcover.harmonic import EntranceLaw, entrance_law_exact, reference_laws
from torcover.lattice import Site
from torcover.slt import (
    FieldExhausted,
    PoissonField,
    SoftLocalTime,
    check_U_event,
    count_N,
    prefix_lengths,
    ratio_bound_holds,
    reference_vector,
    simulate_excursions_via_slt,
    simulate_independent_via_slt,
    slt_step,
    verify_inclusions,
)
from torcover.stats import chi2_goodness

from .oracles import poisson_first_selection

A, B, C = Site(0, 0), Site(0, 1), Site(0, 2)


def fixed(heights, cap=100.0):
    return PoissonField.from_points(list(heights), heights, cap)


class TestStep:
    def test_single_ray_takes_its_height(self):
        G = SoftLocalTime(fixed({A: [0.7, 2.0]}))
        xi, p = G.step(np.array([1.0]))
        assert xi == pytest.approx(0.7)
        assert p.key == (0, 0)
        xi, p = G.step(np.array([1.0]))
        assert xi == pytest.approx(1.3) and p.rank == 1

    def test_two_rays_against_direct_formula(self):
        # frozen from oracles.poisson_first_selection({"a": [1.0], "b": [3.0]}, {"a": .5, "b": .5})
        assert poisson_first_selection({"a": [1.0], "b": [3.0]}, {"a": 0.5, "b": 0.5}) == (2.0, ("a", 1.0))
        G = SoftLocalTime(fixed({A: [1.0], B: [3.0]}))
        xi, p = G.step(np.array([0.5, 0.5]))
        assert xi == 2.0 and p.z == A
        assert G.G.tolist() == [1.0, 1.0]

    def test_tie_goes_to_lowest_index(self):
        G = SoftLocalTime(fixed({A: [2.0], B: [1.0]}))
        _, p = G.step(np.array([0.5, 0.25]))
        assert p.z == A

    def test_zero_density_ray_is_ignored(self):
        G = SoftLocalTime(fixed({A: [0.1], B: [5.0]}))
        _, p = G.step(np.array([0.0, 1.0]))
        assert p.z == B and G.G[0] == 0.0

    def test_vanishing_density(self):
        with pytest.raises(ValueError):
            SoftLocalTime(fixed({A: [1.0]})).step(np.array([0.0]))

    def test_exhausted_fixed_field(self):
        G = SoftLocalTime(fixed({A: [1.0]}, cap=1.5))
        G.step(np.array([1.0]))
        with pytest.raises(FieldExhausted):
            G.step(np.array([1.0]))

    def test_entrance_law_as_density(self):
        f = fixed({A: [1.0], B: [1.0]})
        G = SoftLocalTime(f)
        law = EntranceLaw((B, A), np.array([0.75, 0.25]))
        xi, p, G2 = slt_step(f, G, law)
        assert G2 is G and p.z == B and xi == pytest.approx(4 / 3)
        with pytest.raises(ValueError):
            slt_step(fixed({A: [1.0]}), G, law)

    def test_accumulation_identity(self, slt_family):
        field = PoissonField.for_family(slt_family, 3)
        run = simulate_excursions_via_slt(field, slt_family, 40, x_d0=slt_family.outer.boundary[0],
                                          keep_densities=True)
        G = run.slt
        recon = sum(x * d for x, d in zip(G.xi_history, run.densities))
        assert np.allclose(G.G, recon, rtol=1e-12)
        # every consumed point sits at or below the final soft local time
        for i, r in G.consumed:
            assert field.height(i, r) <= G.G[i] * (1 + 1e-12)

    def test_independent_run_keeps_reference_shape(self, slt_family):
        field = PoissonField.for_family(slt_family, 4)
        href = reference_laws(slt_family)[0]
        _, G = simulate_independent_via_slt(field, href, 30)
        r = G.ratios(reference_vector(field, href))
        assert np.allclose(r, r[0], rtol=1e-12)
        # points are taken in increasing order of u / href(z)
        vec = reference_vector(field, href)
        q = [field.height(i, k) / vec[i] for i, k in G.consumed]
        assert q == sorted(q)


class TestField:
    def test_lazy_extension_keeps_realization(self, slt_family):
        f1 = PoissonField.for_family(slt_family, 9)
        f2 = PoissonField.for_family(slt_family, 9)
        low = f1.heights(0, 5.0).copy()
        f1.extend(500.0)
        f2.extend(3.0)
        assert np.array_equal(f1.heights(0, 5.0), low)
        assert np.array_equal(f1.heights(2, 100.0), f2.heights(2, 100.0))

    def test_unit_rate(self, slt_family):
        f = PoissonField.for_family(slt_family, 1)
        counts = [f.heights(i, 10_000.0).size for i in range(len(f.sites))]
        for c in counts:
            assert abs(c - 10_000) < 5 * math.sqrt(10_000)

    def test_marks_are_excursions_to_outer_boundary(self, slt_family):
        f = PoissonField.for_family(slt_family, 2)
        outer = set(slt_family.outer.boundary)
        for k in range(10):
            e = f.mark(f.point(k % 4, k))
            assert e.start_site == f.sites[k % 4]
            assert e.end_site in outer
            inner_path = [s for s in e.sites(16)[:-1]]
            assert all(s not in outer for s in inner_path)
            assert f.mark(f.point(k % 4, k)) is e

    def test_marks_depend_only_on_point(self, slt_family):
        a = PoissonField.for_family(slt_family, 7)
        b = PoissonField.for_family(slt_family, 7)
        b.extend(50.0)
        pa, pb = a.mark(a.point(1, 3)), b.mark(b.point(1, 3))
        assert np.array_equal(pa.path, pb.path)

    def test_dump_load(self, slt_family):
        f = PoissonField.for_family(slt_family, 5)
        again = PoissonField.load(f.dump(20.0))
        assert again.height_cap == 20.0
        assert np.array_equal(again.heights(3, 20.0), f.heights(3, 20.0))
        with pytest.raises(FieldExhausted):
            again.heights(3, 25.0)

    def test_fixed_field_has_no_marks(self):
        f = fixed({A: [1.0]})
        with pytest.raises(ValueError):
            f.mark(f.point(0, 0))


REF3 = EntranceLaw((A, B, C), np.array([0.5, 0.25, 0.25]))


class TestWindows:
    def test_count_by_hand(self):
        f = fixed({A: [0.2, 1.0, 3.0], B: [0.1, 0.3], C: []})
        # thresholds a*h < u <= b*h with h = (0.5, 0.25, 0.25)
        assert count_N(f, REF3, 0, 2) == 4
        assert count_N(f, REF3, 1, 2) == 2
        with pytest.raises(ValueError):
            count_N(f, REF3, 2, 1)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0, 20), st.floats(0, 20), st.floats(0, 20))
    def test_additive(self, x, y, z):
        a, b, c = sorted((x, y, z))
        f = PoissonField([A, B, C], 77)
        assert count_N(f, REF3, a, c) == count_N(f, REF3, a, b) + count_N(f, REF3, b, c)

    def test_empty_field_violates(self):
        f = fixed({A: [], B: [], C: []}, cap=1e6)
        holds, bad = check_U_event(f, REF3, 5, 0.5, 10)
        assert not holds and bad == 5

    def test_regular_field_satisfies(self):
        # points exactly at ratios 0.5, 1.5, 2.5, ... hit the two-sided band for every m
        q = np.arange(0.5, 200, 1.0)
        f = fixed({A: list(q[0::2] * 0.5), B: list(q[1::2] * 0.25), C: []}, cap=1e6)
        assert check_U_event(f, REF3, 5, 0.5, 40) == (True, None)

    def test_two_sided_part_nested_in_v(self):
        f = PoissonField([A, B, C], 11)
        held = [check_U_event(f, REF3, 8, v, 16, two_sided_only=True)[0] for v in (0.1, 0.3, 0.6, 0.9)]
        assert held == sorted(held)

    @pytest.mark.parametrize("v,m_max", [(0.0, 10), (1.0, 10), (0.5, 4)])
    def test_rejects_bad_arguments(self, v, m_max):
        with pytest.raises(ValueError):
            check_U_event(fixed({A: [1.0]}), REF3, 5, v, m_max)


class TestInclusions:
    @pytest.mark.parametrize("m,v,expected", [(10, 0.5, (5, 25)), (0, 0.5, (0, 0)), (7, 0.1, (6, 10))])
    def test_prefix_lengths(self, m, v, expected):
        assert prefix_lengths(m, v) == expected

    def test_refuses_when_uncertified(self):
        chk = verify_inclusions([], [], 10, 0.2, 0.1)
        assert not chk.certified and chk.holds is None

    def test_empty_prefixes(self):
        assert verify_inclusions([], [], 0, 0.5, 0.1).holds

    def test_detects_violation(self):
        dep = [(0, k) for k in range(10)]
        ind = [(1, k) for k in range(10)]
        chk = verify_inclusions(dep, ind, 4, 0.5, 0.1)
        assert chk.certified and not chk.holds

    def test_too_short(self):
        with pytest.raises(ValueError):
            verify_inclusions([(0, 0)], [(0, 0)], 4, 0.5, 0.1)

    def test_ratio_bound(self):
        assert ratio_bound_holds(np.array([1.0, 1.5]), np.array([1.0, 1.0]), 0.5)
        assert not ratio_bound_holds(np.array([1.0, 1.6]), np.array([1.0, 1.0]), 0.5)


class TestLaws:
    def test_first_site_follows_entrance_law(self, slt_family):
        y = slt_family.outer.boundary[5]
        exact = entrance_law_exact(slt_family.inner, y, 16)
        counts = np.zeros(len(exact.sites))
        root = np.random.SeedSequence(404)
        for child in root.spawn(20_000):
            f = PoissonField.for_family(slt_family, child)
            G = SoftLocalTime(f)
            _, p = G.step(reference_vector(f, exact))
            counts[p.site_index] += 1
        tv = 0.5 * np.abs(counts / counts.sum() - exact.probs).sum()
        assert tv <= 0.02

    def test_independent_starts_follow_reference(self, slt_family):
        href = reference_laws(slt_family)[0]
        counts = np.zeros(len(href.sites))
        for child in np.random.SeedSequence(505).spawn(2_000):
            _, G = simulate_independent_via_slt(PoissonField(href.sites, child), href, 5)
            for i, _ in G.consumed:
                counts[i] += 1
        assert chi2_goodness(counts, href.probs) > 0.001

    def test_x_d0_needs_outer_boundary(self, slt_family):
        f = PoissonField.for_family(slt_family, 0)
        with pytest.raises(ValueError):
            simulate_excursions_via_slt(f, slt_family, 1, x_d0=Site(8, 8))
        with pytest.raises(ValueError):
            simulate_excursions_via_slt(f, slt_family, 1)

    def test_run_chains_endpoints(self, slt_family, rng):
        f = PoissonField.for_family(slt_family, 12)
        run = simulate_excursions_via_slt(f, slt_family, 20, start=Site(0, 0), rng=rng)
        assert len(run.excursions) == 20
        for e, y in zip(run.excursions, run.entry_sites[1:]):
            assert e.end_site == y
