import numpy as np
import pytest

from gbdlab import (
    CaccioppoliPartition,
    DisplacementField,
    Domain,
    FacetAmbiguityError,
    JumpFacet,
    OutsideDomainError,
    PiecewiseRigidMotion,
    ResolutionError,
    RigidMotion,
    axis_facet,
    dyadic_cubes,
    evaluate,
    perimeter,
)


def unit_square(h=1.0 / 64.0):
    return Domain([[0.0, 1.0], [0.0, 1.0]], h)


class TestDomain:
    def test_basic(self):
        dom = unit_square(1.0 / 64.0)
        assert dom.shape == (64, 64)
        assert dom.cell_count == 64 * 64
        centers = dom.centers()
        assert centers.shape == (64, 64, 2)
        # every center strictly inside the box
        assert centers[..., 0].min() > 0 and centers[..., 0].max() < 1

    def test_side_must_divide(self):
        with pytest.raises(ValueError):
            Domain([[0.0, 1.0], [0.0, 0.95]], 1.0 / 10.0)

    def test_dimension_guard(self):
        with pytest.raises(ValueError):
            Domain([[0.0, 1.0]], 0.5)


class TestRigidMotion:
    def test_skew_enforced(self):
        with pytest.raises(ValueError):
            RigidMotion([[1.0, 0.0], [0.0, 0.0]], [0.0, 0.0])

    def test_zero_discrete_symmetric_gradient(self):
        # centered differences of a rigid motion symmetrize to zero
        rng = np.random.default_rng(3)
        for _ in range(5):
            w01 = rng.uniform(-2, 2)
            motion = RigidMotion([[0.0, w01], [-w01, 0.0]], rng.uniform(-1, 1, 2))
            dom = unit_square(1.0 / 32.0)
            vals = motion(dom.centers().reshape(-1, 2)).reshape(32, 32, 2)
            h = dom.h
            dudx = (vals[2:, 1:-1] - vals[:-2, 1:-1]) / (2 * h)
            dudy = (vals[1:-1, 2:] - vals[1:-1, :-2]) / (2 * h)
            grad = np.stack([dudx, dudy], axis=-1)
            sym = 0.5 * (grad + np.swapaxes(grad, -1, -2))
            assert np.max(np.abs(sym)) <= 1e-12


class TestEvaluate:
    def test_zero_field(self):
        dom = unit_square()
        f = DisplacementField(dom, np.zeros(dom.shape + (2,)))
        assert np.allclose(evaluate(f, [0.3, 0.7]), 0.0)

    def test_affine_exact(self):
        # multilinear interpolation reproduces affine fields exactly
        dom = unit_square()
        motion = RigidMotion([[0.0, 1.0], [-1.0, 0.0]], [0.0, 0.0])
        vals = motion(dom.centers().reshape(-1, 2)).reshape(dom.shape + (2,))
        f = DisplacementField(dom, vals)
        got = evaluate(f, [0.5, 0.25])
        assert np.allclose(got, [0.25, -0.5], atol=1e-12)
        rng = np.random.default_rng(0)
        pts = rng.uniform(0.0, 1.0, size=(200, 2))
        expect = motion(pts)
        assert np.max(np.abs(f.evaluate_many(pts) - expect)) <= 1e-12

    def test_one_sided_across_facet(self):
        # oracle: the analytic piecewise-constant definition
        dom = unit_square()
        facet = axis_facet(0, 0.5, (0.0, 1.0), (2.0, 0.0), d=2)
        centers = dom.centers()
        vals = np.zeros(dom.shape + (2,))
        vals[centers[..., 0] > 0.5] = [2.0, 0.0]
        f = DisplacementField(dom, vals, [facet])
        assert np.allclose(evaluate(f, [0.75, 0.5]), [2.0, 0.0])
        assert np.allclose(evaluate(f, [0.25, 0.5]), [0.0, 0.0])
        # immediately next to the facet the query stays one-sided
        assert np.allclose(evaluate(f, [0.5 + 1e-6, 0.3]), [2.0, 0.0])
        assert np.allclose(evaluate(f, [0.5 - 1e-6, 0.3]), [0.0, 0.0])

    def test_point_on_facet_is_ambiguous(self):
        dom = unit_square()
        facet = axis_facet(0, 0.5, (0.0, 1.0), (2.0, 0.0), d=2)
        vals = np.zeros(dom.shape + (2,))
        vals[dom.centers()[..., 0] > 0.5] = [2.0, 0.0]
        f = DisplacementField(dom, vals, [facet])
        with pytest.raises(FacetAmbiguityError):
            evaluate(f, [0.5, 0.25])

    def test_outside_domain(self):
        dom = unit_square()
        f = DisplacementField(dom, np.zeros(dom.shape + (2,)))
        with pytest.raises(OutsideDomainError):
            evaluate(f, [1.5, 0.5])

    def test_sampler_used(self):
        dom = unit_square()

        def sampler(pts):
            pts = np.atleast_2d(pts)
            return np.stack([pts[:, 0] ** 2, pts[:, 1]], axis=1)

        vals = sampler(dom.centers().reshape(-1, 2)).reshape(dom.shape + (2,))
        f = DisplacementField(dom, vals, sampler=sampler)
        assert np.allclose(evaluate(f, [0.3, 0.4]), [0.09, 0.4])

    def test_sampler_mismatch_rejected(self):
        dom = unit_square()
        with pytest.raises(ValueError):
            DisplacementField(
                dom, np.zeros(dom.shape + (2,)),
                sampler=lambda p: np.ones_like(np.atleast_2d(p)),
            )


class TestFacets:
    def test_area_and_normal(self):
        f = axis_facet(0, 0.5, (0.25, 0.75), (1.0, 0.0), d=2)
        assert f.area == pytest.approx(0.5)
        assert np.allclose(f.normal, [1.0, 0.0])

    def test_overlap_rejected(self):
        dom = unit_square()
        a = axis_facet(0, 0.5, (0.0, 0.6), (2.0, 0.0), d=2)
        b = axis_facet(0, 0.5, (0.4, 1.0), (2.0, 0.0), d=2)
        vals = np.zeros(dom.shape + (2,))
        with pytest.raises(ValueError):
            DisplacementField(dom, vals, [a, b])

    def test_abutting_facets_allowed(self):
        dom = unit_square()
        a = axis_facet(0, 0.5, (0.0, 0.5), (2.0, 0.0), d=2)
        b = axis_facet(0, 0.5, (0.5, 1.0), (2.0, 0.0), d=2)
        vals = np.zeros(dom.shape + (2,))
        vals[dom.centers()[..., 0] > 0.5] = [2.0, 0.0]
        DisplacementField(dom, vals, [a, b])

    def test_clip_area_tiles(self):
        # half-open convention: areas tile exactly across abutting boxes
        f = axis_facet(0, 0.5, (0.1, 0.9), (2.0, 0.0), d=2)
        left = f.clip_area([0.25, 0.0], [0.5, 1.0])
        right = f.clip_area([0.5, 0.0], [0.75, 1.0])
        assert left == pytest.approx(0.8)
        assert right == pytest.approx(0.0)
        top = f.clip_area([0.25, 0.5], [0.5, 1.0])
        bottom = f.clip_area([0.25, 0.0], [0.5, 0.5])
        assert top + bottom == pytest.approx(0.8)

    def test_3d_polygon_area(self):
        tri = JumpFacet(
            [[0.2, 0.2, 0.2], [0.8, 0.2, 0.2], [0.2, 0.8, 0.2]],
            [0.0, 0.0, 1.0],
        )
        assert tri.area == pytest.approx(0.18)
        # clip to half the box
        got = tri.clip_area([0.0, 0.0, 0.0], [0.5, 1.0, 1.0], half_open=False)
        # brute force by Monte Carlo triangle sampling
        rng = np.random.default_rng(1)
        a = rng.random((200000, 2))
        flip = a.sum(axis=1) > 1
        a[flip] = 1.0 - a[flip]
        pts = (
            np.array([0.2, 0.2])
            + a[:, :1] * np.array([0.6, 0.0])
            + a[:, 1:] * np.array([0.0, 0.6])
        )
        frac = np.mean(pts[:, 0] <= 0.5)
        assert got == pytest.approx(tri.area * frac, rel=2e-2)


class TestPerimeter:
    def test_single_label(self):
        dom = unit_square()
        p = CaccioppoliPartition(dom, np.ones(dom.shape, dtype=np.int32))
        assert perimeter(p) == 0.0

    def test_half_split_exact(self):
        dom = unit_square(1.0 / 64.0)
        labels = np.ones(dom.shape, dtype=np.int32)
        labels[32:, :] = 2
        p = CaccioppoliPartition(dom, labels)
        assert perimeter(p) == pytest.approx(1.0, abs=1e-15)

    def test_three_stripes(self):
        dom = unit_square(1.0 / 64.0)
        labels = np.ones(dom.shape, dtype=np.int32)
        x = dom.centers()[..., 0]
        labels[x > 1.0 / 3.0] = 2
        labels[x > 2.0 / 3.0] = 3
        p = CaccioppoliPartition(dom, labels)
        assert abs(perimeter(p) - 2.0) <= dom.h + 1e-12

    def test_label_permutation_invariant(self):
        dom = unit_square(1.0 / 32.0)
        rng = np.random.default_rng(5)
        labels = rng.integers(1, 4, size=dom.shape).astype(np.int32)
        labels.flat[:3] = [1, 2, 3]  # ensure all labels used
        p1 = CaccioppoliPartition(dom, labels)
        perm = np.array([0, 3, 1, 2])  # 1->3, 2->1, 3->2
        p2 = CaccioppoliPartition(dom, perm[labels])
        assert perimeter(p1) == pytest.approx(perimeter(p2))

    def test_labels_must_cover(self):
        dom = unit_square(1.0 / 32.0)
        labels = np.ones(dom.shape, dtype=np.int32)
        labels[0, 0] = 3  # label 2 missing
        with pytest.raises(ValueError):
            CaccioppoliPartition(dom, labels)


class TestPiecewiseRigidMotion:
    def test_eval_matches_label(self):
        dom = unit_square(1.0 / 32.0)
        labels = np.ones(dom.shape, dtype=np.int32)
        labels[16:, :] = 2
        p = CaccioppoliPartition(dom, labels)
        m1 = RigidMotion(np.zeros((2, 2)), [0.0, 0.0])
        m2 = RigidMotion(np.zeros((2, 2)), [5.0, 0.0])
        prm = PiecewiseRigidMotion(p, [m1, m2])
        got = prm(np.array([[0.25, 0.5], [0.75, 0.5]]))
        assert np.allclose(got, [[0.0, 0.0], [5.0, 0.0]])
        vals = prm.at_centers()
        assert np.allclose(vals[0, 0], [0.0, 0.0])
        assert np.allclose(vals[-1, -1], [5.0, 0.0])


class TestDyadicCubes:
    def test_counts(self):
        dom = unit_square(1.0 / 64.0)
        assert len(dyadic_cubes(dom, 0.5, 0)) == 4
        assert len(dyadic_cubes(dom, 0.5, 1)) == 16

    def test_too_small_domain(self):
        dom = Domain([[0.0, 0.25], [0.0, 0.25]], 1.0 / 64.0)
        grid = dyadic_cubes(dom, 0.5, 0)
        assert len(grid) == 0

    def test_resolution_error(self):
        dom = unit_square(1.0 / 8.0)
        with pytest.raises(ResolutionError):
            dyadic_cubes(dom, 0.5, 2)  # delta = 1/8 < 2h

    def test_refinement_nesting(self):
        dom = unit_square(1.0 / 64.0)
        coarse = dyadic_cubes(dom, 0.5, 0)
        fine = dyadic_cubes(dom, 0.5, 1)
        for i in range(len(fine)):
            pi = coarse.parent_index(fine, i)
            assert pi is not None
            cb = coarse.cube_box(pi)
            fb = fine.cube_box(i)
            assert np.all(fb[:, 0] >= cb[:, 0] - 1e-12)
            assert np.all(fb[:, 1] <= cb[:, 1] + 1e-12)

    def test_cell_slices_partition_cells(self):
        dom = unit_square(1.0 / 64.0)
        grid = dyadic_cubes(dom, 0.5, 1)
        seen = np.zeros(dom.shape, dtype=int)
        for i in range(len(grid)):
            seen[grid.cell_slices(i)] += 1
        assert np.all(seen == 1)

    def test_lexicographic_order(self):
        dom = unit_square(1.0 / 64.0)
        grid = dyadic_cubes(dom, 0.5, 0)
        assert grid.index == ((0, 0), (0, 1), (1, 0), (1, 1))
