"""Cone construction, Lemke projection, and the conic-hull formula."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import project_generators_oracle, project_polyhedral_oracle
from riskscen.cones import (Cone, FeasibleRegion, cone_member, conic_hull, project,
                            project_generators, project_polyhedral, transform)
from riskscen.errors import ConfigError


def orthant(d, form="both"):
    gens = np.eye(d) if form in ("both", "generators") else None
    facets = np.eye(d) if form in ("both", "facets") else None
    return Cone(d, gens, facets)


class TestFeasibleRegion:
    def test_requires_positive_capital(self):
        with pytest.raises(ConfigError):
            FeasibleRegion(2, 0.0)
        with pytest.raises(ConfigError):
            FeasibleRegion(2, -1.0)

    def test_rejects_empty_region(self):
        # upper bounds sum below the budget
        with pytest.raises(ConfigError):
            FeasibleRegion(2, 1.0, upper=[0.3, 0.3])

    def test_rejects_bad_bounds(self):
        with pytest.raises(ConfigError):
            FeasibleRegion(2, 1.0, lower=[0.5, 0.5], upper=[0.4, 1.0])

    def test_rejects_nonfinite_rows(self):
        with pytest.raises(ConfigError):
            FeasibleRegion(2, 1.0, A=[[np.inf, 0.0]], b=[1.0])

    def test_roundtrip_dict(self):
        r = FeasibleRegion(3, 1.0, A=[[1.0, 0, 0]], b=[0.5], upper=[0.5, 0.9, 1.0])
        r2 = FeasibleRegion.from_dict(r.to_dict())
        assert np.allclose(r2.A, r.A) and np.allclose(r2.upper, r.upper)


class TestConicHull:
    def test_orthant_when_unconstrained(self):
        cone = conic_hull(FeasibleRegion(2, 1.0))
        assert np.allclose(cone.facets, np.eye(2))
        assert cone.generators is not None and np.allclose(cone.generators, np.eye(2))

    def test_single_quota_facet(self):
        cone = conic_hull(FeasibleRegion(2, 1.0, A=[[1.0, 0.0]], b=[0.7]))
        assert np.allclose(cone.facets[0], [-0.3, 0.7])
        # boundary direction of the facet scales back into the region
        x = np.array([0.7, 0.3])
        scaled = x / x.sum()
        assert scaled[0] <= 0.7 + 1e-12

    def test_symmetric_quota_wedge(self):
        # quotas x1 <= 0.7 and x2 <= 0.7 leave the wedge between slopes 3/7 and 7/3
        region = FeasibleRegion(2, 1.0, A=[[1.0, 0.0], [0.0, 1.0]], b=[0.7, 0.7])
        cone = conic_hull(region)
        for slope, inside in [(3 / 7, True), (7 / 3, True), (0.3, False), (4.0, False)]:
            pt = np.array([1.0, slope])
            assert cone_member(cone, pt, tol=1e-9) == inside

    def test_upper_bounds_folded_in(self):
        direct = conic_hull(FeasibleRegion(2, 1.0, upper=[0.7, 1.0]))
        via_row = conic_hull(FeasibleRegion(2, 1.0, A=[[1.0, 0.0]], b=[0.7]))
        probe = np.random.default_rng(0).normal(size=(50, 2))
        for y in probe:
            assert cone_member(direct, y) == cone_member(via_row, y)

    def test_scaling_into_region(self):
        # forward implication of the hull formula, checked numerically
        rng = np.random.default_rng(3)
        region = FeasibleRegion(3, 2.0, A=[[1.0, 0, 0], [0.2, 0.3, 0.1]], b=[1.2, 0.5])
        cone = conic_hull(region)
        hits = 0
        for _ in range(300):
            x = rng.uniform(0, 1, 3)
            if cone_member(cone, x, tol=0) and x.sum() > 1e-9:
                scaled = region.capital / x.sum() * x
                assert region.contains(scaled, tol=1e-9)
                hits += 1
        assert hits > 20
        # and region points always belong to the cone
        for _ in range(200):
            w = rng.dirichlet([1.0, 1.0, 1.0]) * region.capital
            if region.contains(w, tol=0):
                assert cone_member(cone, w, tol=1e-9)


class TestProjection:
    def test_interior_point_fixed(self):
        assert project_generators(orthant(2), [1.0, 1.0]) == pytest.approx([1.0, 1.0])

    def test_orthant_clamp(self):
        assert project_generators(orthant(2), [-1.0, 2.0]) == pytest.approx([0.0, 2.0])
        assert project_polyhedral(orthant(2), [-1.0, 2.0]) == pytest.approx([0.0, 2.0])

    def test_single_ray_least_squares(self):
        cone = Cone(2, generators=[[1.0, 1.0]])
        assert project_generators(cone, [1.0, 0.0]) == pytest.approx([0.5, 0.5])

    def test_member_projects_to_itself(self):
        rng = np.random.default_rng(1)
        B = rng.normal(size=(4, 3))
        cone = Cone(3, facets=B)
        y = project_polyhedral(cone, rng.normal(size=3) * 2)
        assert project_polyhedral(cone, y) == pytest.approx(list(y), abs=1e-10)

    def test_rejects_nonfinite(self):
        with pytest.raises(ConfigError):
            project_generators(orthant(2), [np.nan, 0.0])

    def test_kkt_residuals_generator_path(self):
        rng = np.random.default_rng(2)
        for _ in range(40):
            d = int(rng.integers(2, 7))
            G = rng.normal(size=(int(rng.integers(1, 9)), d))
            cone = Cone(d, generators=G)
            x = rng.normal(size=d) * 3
            p = project_generators(cone, x)
            assert abs((x - p) @ p) < 1e-8
            assert np.all(cone.generators @ (x - p) <= 1e-8)

    def test_polyhedral_matches_active_set_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            d = int(rng.integers(2, 7))
            B = rng.normal(size=(int(rng.integers(1, 9)), d))
            cone = Cone(d, facets=B)
            pts = rng.normal(size=(40, d)) * 2
            mine = np.array([project_polyhedral(cone, y) for y in pts])
            assert np.abs(mine - project_polyhedral_oracle(B, pts)).max() < 1e-8

    def test_generators_match_subset_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(25):
            d = int(rng.integers(2, 7))
            G = rng.normal(size=(int(rng.integers(1, 9)), d))
            cone = Cone(d, generators=G)
            pts = rng.normal(size=(40, d)) * 2
            mine = np.array([project_generators(cone, y) for y in pts])
            assert np.abs(mine - project_generators_oracle(cone.generators, pts)).max() < 1e-8


class TestProjectionProperties:
    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_idempotent_and_nonexpansive(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 6))
        cone = Cone(d, facets=rng.normal(size=(int(rng.integers(1, 7)), d)))
        x = rng.normal(size=d) * 2
        y = rng.normal(size=d) * 2
        px, py = project(cone, x), project(cone, y)
        assert np.linalg.norm(project(cone, px) - px) < 1e-10
        assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) + 1e-9

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_moreau_decomposition(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 6))
        B = rng.normal(size=(int(rng.integers(1, 7)), d))
        cone = Cone(d, facets=B)
        polar = Cone(d, generators=-B)
        x = rng.normal(size=d) * 3
        p = project_polyhedral(cone, x)
        q = project_generators(polar, x)
        assert np.linalg.norm(p + q - x) < 1e-8
        assert abs(p @ q) < 1e-8

    @given(st.integers(0, 10_000), st.floats(0.1, 20.0))
    @settings(max_examples=40, deadline=None)
    def test_positive_homogeneity(self, seed, lam):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 6))
        cone = Cone(d, generators=rng.normal(size=(int(rng.integers(1, 7)), d)))
        x = rng.normal(size=d)
        assert np.allclose(project(cone, lam * x), lam * project(cone, x), atol=1e-8 * (1 + lam))


class TestConeBasics:
    def test_membership_examples(self):
        cone = orthant(3)
        assert cone_member(cone, np.zeros(3))
        assert cone_member(cone, [1.0, 0.0, 0.0])
        assert not cone_member(cone, [-1.0, -1.0, -1.0])

    def test_needs_some_form(self):
        with pytest.raises(ConfigError):
            Cone(2)

    def test_zero_and_duplicate_generators_dropped(self):
        cone = Cone(2, generators=[[0.0, 0.0], [2.0, 0.0], [4.0, 0.0], [0.0, 1.0]])
        assert cone.generators.shape == (2, 2)
        assert np.allclose(np.linalg.norm(cone.generators, axis=1), 1.0)

    def test_forms_agree_on_membership(self):
        rng = np.random.default_rng(4)
        cone = orthant(3)
        for y in rng.normal(size=(100, 3)):
            by_facet = bool(np.min(cone.facets @ y) >= -1e-9)
            by_gen = np.linalg.norm(y - project_generators(cone, y)) <= 1e-9
            assert by_facet == by_gen

    def test_json_roundtrip(self):
        cone = Cone(2, generators=[[1.0, 0.5], [0.0, 1.0]], facets=[[1.0, 0.0]])
        doc = json.loads(cone.to_json())
        assert set(doc) == {"d", "generators", "facets"}
        back = Cone.from_json(cone.to_json())
        assert np.allclose(back.generators, cone.generators)
        assert np.allclose(back.facets, cone.facets)

    def test_transform_maps_both_forms(self):
        P = np.array([[2.0, 0.5], [0.0, 1.0]])
        cone = orthant(2)
        img = transform(cone, P)
        rng = np.random.default_rng(9)
        for y in rng.normal(size=(100, 2)):
            # y in PK  <=>  P^{-1} y in K
            back = np.linalg.solve(P, y)
            assert cone_member(Cone(2, facets=img.facets), y, 1e-9) == bool(np.min(back) >= -1e-9)
