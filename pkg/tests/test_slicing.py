import math

import numpy as np
import pytest

from gbdlab import (
    DisplacementField,
    Domain,
    EmptySliceError,
    RigidMotion,
    SliceFamily,
    SliceFunction,
    axis_facet,
    default_directions,
    directional_measure,
    dominating_measure,
    extract_slice,
    gradient_identity_check,
    jump_surface_measure,
    line_measure,
    small_jump_variation,
)
from gbdlab.slicing import SliceMeasures, small_jump_variation_of_slice


def unit_square(h=1.0 / 64.0):
    return Domain([[0.0, 1.0], [0.0, 1.0]], h)


def identity_field(h=1.0 / 64.0):
    dom = unit_square(h)

    def sampler(pts):
        return np.atleast_2d(pts).copy()

    vals = dom.centers().copy()
    return DisplacementField(dom, vals, sampler=sampler)


def step_field(h=1.0 / 64.0, jump=(2.0, 0.0), coord=0.5):
    dom = unit_square(h)
    facet = axis_facet(0, coord, (0.0, 1.0), jump, d=2)
    vals = np.zeros(dom.shape + (2,))
    vals[dom.centers()[..., 0] > coord] = jump
    return DisplacementField(dom, vals, [facet])


# -- independent 1D oracle -------------------------------------------------

def brute_line_measure(t, v, jumps, big=1.0):
    """Direct summation oracle on a sampled slice: sum of |dv| within
    segments plus per-jump contributions capped at ``big``."""
    total = float(np.abs(np.diff(v)).sum())
    for _, amp in jumps:
        a = abs(amp)
        total += a if a < big else 1.0
    return total


def brute_small_jump_variation(t, v, jumps, sigma):
    total = float(np.abs(np.diff(v)).sum())
    for _, amp in jumps:
        if abs(amp) < sigma:
            total += abs(amp)
    return total


def make_slice(t, v, jumps, norms=None):
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    segments = ((float(t[0]), float(t[-1]), 0, len(t)),)
    return SliceFunction(
        xi=np.array([1.0, 0.0]), y=np.array([0.0, 0.0]), t=t, v=v,
        jumps=tuple(jumps), segments=segments,
        jump_norms=tuple(norms or [abs(a) for _, a in jumps]),
    )


class TestExtractSlice:
    def test_identity_slice(self):
        f = identity_field()
        sf = extract_slice(f, [1.0, 0.0], [0.0, 0.5])
        assert not sf.jumps
        assert np.allclose(sf.v, sf.t, atol=1e-12)
        assert sf.t[0] >= 0.0 and sf.t[-1] <= 1.0
        assert np.max(np.diff(sf.t)) <= f.domain.h + 1e-12

    def test_step_slice_along_normal(self):
        f = step_field()
        sf = extract_slice(f, [1.0, 0.0], [0.0, 0.5])
        assert len(sf.jumps) == 1
        t0, amp = sf.jumps[0]
        assert t0 == pytest.approx(0.5)
        assert amp == pytest.approx(2.0)

    def test_step_slice_orthogonal_direction_sees_nothing(self):
        f = step_field()
        sf = extract_slice(f, [0.0, 1.0], [0.75, 0.0])
        # the facet is parallel to this line: no crossing, constant values
        assert not sf.jumps
        assert np.allclose(sf.v, sf.v[0])

    def test_zero_amplitude_on_orthogonal_jump_component(self):
        # jump (0, 2): slicing along e1 crosses but the amplitude vanishes
        f = step_field(jump=(0.0, 2.0))
        sf = extract_slice(f, [1.0, 0.0], [0.0, 0.5])
        assert len(sf.jumps) == 1
        assert sf.jumps[0][1] == pytest.approx(0.0)

    def test_slice_amplitude_is_jump_dot_xi(self):
        f = step_field(jump=(1.5, 0.7))
        xi = np.array([1.0, 1.0]) / math.sqrt(2.0)
        y = np.array([0.2, -0.2]) / math.sqrt(2.0) * 1.0
        y = y - (y @ xi) * xi
        sf = extract_slice(f, xi, y)
        assert len(sf.jumps) == 1
        assert sf.jumps[0][1] == pytest.approx((1.5 + 0.7) / math.sqrt(2.0))

    def test_missing_line(self):
        f = identity_field()
        with pytest.raises(EmptySliceError):
            extract_slice(f, [1.0, 0.0], [0.0, 2.0])

    def test_direction_flip_symmetry(self):
        f = step_field(jump=(1.5, 0.7))
        xi = np.array([1.0, 0.0])
        sf1 = extract_slice(f, xi, [0.0, 0.5])
        sf2 = extract_slice(f, -xi, [0.0, 0.5])
        assert line_measure(sf1) == pytest.approx(line_measure(sf2), abs=1e-12)


class TestLineMeasure:
    def test_identity_unit(self):
        t = np.linspace(0.0, 1.0, 33)
        sf = make_slice(t, t, [])
        assert line_measure(sf) == pytest.approx(1.0, abs=1e-15)

    def test_big_jump_capped(self):
        t = np.linspace(0.0, 1.0, 9)
        sf = make_slice(t, np.zeros(9), [(0.5, 2.0)])
        assert line_measure(sf) == pytest.approx(1.0, abs=1e-15)

    def test_small_jump_counts_amplitude(self):
        t = np.linspace(0.0, 1.0, 9)
        sf = make_slice(t, np.zeros(9), [(0.5, 0.3)])
        assert line_measure(sf) == pytest.approx(0.3, abs=1e-15)

    def test_interval_restriction(self):
        t = np.linspace(0.0, 1.0, 101)
        sf = make_slice(t, t, [(0.75, 2.0)])
        got = line_measure(sf, intervals=[(0.0, 0.5)])
        assert got == pytest.approx(0.5, abs=1e-12)
        got = line_measure(sf, intervals=[(0.5, 1.0)])
        assert got == pytest.approx(0.5 + 1.0, abs=1e-12)

    def test_oracle_equivalence_randomized(self):
        # acceptance-grade oracle: 1000 random slices with <= 64 samples
        rng = np.random.default_rng(42)
        for _ in range(1000):
            n = int(rng.integers(2, 65))
            t = np.sort(rng.uniform(0.0, 1.0, n))
            t[0] -= 1e-3  # keep the first gap from degenerating
            t = np.unique(t)
            if len(t) < 2:
                continue
            v = rng.uniform(-2.0, 2.0, len(t))
            n_j = int(rng.integers(0, 4))
            jumps = [
                (float(rng.uniform(t[0], t[-1])), float(rng.uniform(-3.0, 3.0)))
                for _ in range(n_j)
            ]
            sf = make_slice(t, v, jumps)
            expect = brute_line_measure(t, v, jumps)
            assert line_measure(sf) == pytest.approx(expect, abs=1e-12)
            sigma = float(rng.uniform(1.01, 4.0))
            expect_i = brute_small_jump_variation(t, v, jumps, sigma)
            got_i = small_jump_variation_of_slice(sf, sigma)
            assert got_i == pytest.approx(expect_i, abs=1e-12)


class TestDirectionalMeasure:
    def test_zero_field(self):
        dom = unit_square()
        f = DisplacementField(dom, np.zeros(dom.shape + (2,)))
        assert directional_measure(f, [1.0, 0.0]) == pytest.approx(0.0, abs=1e-12)

    def test_identity_axis(self):
        f = identity_field(1.0 / 128.0)
        got = directional_measure(f, [1.0, 0.0])
        assert got == pytest.approx(1.0, rel=0.02)

    def test_step_capped_lines(self):
        f = step_field(1.0 / 128.0)
        got = directional_measure(f, [1.0, 0.0])
        assert got == pytest.approx(1.0, rel=0.02)

    def test_angled_direction_converges(self):
        f = identity_field(1.0 / 128.0)
        xi = np.array([math.cos(0.4), math.sin(0.4)])
        got = directional_measure(f, xi)
        # analytic value: integral of |xi^T e xi| = area = 1
        assert got == pytest.approx(1.0, rel=0.02)

    def test_coverage_invariant(self):
        dom = unit_square(1.0 / 64.0)
        for ang in (0.0, 0.3, 1.1):
            xi = np.array([math.cos(ang), math.sin(ang)])
            fam = SliceFamily(dom, xi)
            frac = fam.coverage_fraction()
            assert frac >= 1.0 - 2.0 * fam.h_slice / dom.diameter
            assert frac <= 1.0 + 2.0 * fam.h_slice / dom.diameter


class TestDominatingMeasure:
    def test_zero(self):
        dom = unit_square()
        f = DisplacementField(dom, np.zeros(dom.shape + (2,)))
        assert dominating_measure(f, default_directions(2, 4)) == pytest.approx(0.0)

    def test_monotone_in_directions(self):
        f = identity_field(1.0 / 64.0)
        one = dominating_measure(f, np.array([[1.0, 0.0]]))
        two = dominating_measure(f, np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert two >= one - 1e-12

    def test_step_two_directions(self):
        f = step_field(1.0 / 128.0)
        got = dominating_measure(f, np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert got == pytest.approx(1.0, rel=0.02)

    def test_additive_over_masks(self):
        f = step_field(1.0 / 64.0)
        dirs = default_directions(2, 8)
        m = SliceMeasures(f, dirs)
        dom = f.domain
        left = np.zeros(dom.shape, dtype=bool)
        left[:32] = True
        total = dominating_measure(f, measures=m)
        a = dominating_measure(f, mask=left, measures=m)
        b = dominating_measure(f, mask=~left, measures=m)
        assert a + b == pytest.approx(total, abs=1e-12)


class TestJumpSurfaceMeasure:
    def test_no_facets(self):
        dom = unit_square()
        f = DisplacementField(dom, np.zeros(dom.shape + (2,)))
        assert jump_surface_measure(f, 0.0) == 0.0

    def test_threshold_filter(self):
        f = step_field(jump=(5.0, 0.0))
        assert jump_surface_measure(f, 3.0) == pytest.approx(1.0)
        assert jump_surface_measure(f, 7.0) == 0.0

    def test_two_facets(self):
        dom = unit_square()
        a = axis_facet(0, 0.25, (0.0, 0.5), (0.5, 0.0), d=2)
        b = axis_facet(0, 0.75, (0.5, 1.0), (2.0, 0.0), d=2)
        vals = np.zeros(dom.shape + (2,))
        c = dom.centers()
        vals[(c[..., 0] > 0.25) & (c[..., 1] < 0.5)] += [0.5, 0.0]
        vals[(c[..., 0] > 0.75) & (c[..., 1] >= 0.5)] += [2.0, 0.0]
        f = DisplacementField(dom, vals, [a, b])
        assert jump_surface_measure(f, 1.0) == pytest.approx(0.5)
        assert jump_surface_measure(f, 0.0) == pytest.approx(1.0)

    def test_monotone_in_sigma(self):
        f = step_field(jump=(1.5, 0.0))
        vals = [jump_surface_measure(f, s) for s in (0.0, 1.0, 1.5, 2.0)]
        assert all(vals[i] >= vals[i + 1] for i in range(len(vals) - 1))


class TestSmallJumpVariation:
    def test_smooth_slice(self):
        f = identity_field()
        got = small_jump_variation(f, [1.0, 0.0], [0.0, 0.5], 2.0)
        assert got == pytest.approx(1.0, rel=1e-6)

    def test_amplitude_filter(self):
        f = step_field(jump=(1.5, 0.0))
        got = small_jump_variation(f, [1.0, 0.0], [0.0, 0.5], 2.0)
        assert got == pytest.approx(1.5, abs=1e-9)
        got = small_jump_variation(f, [1.0, 0.0], [0.0, 0.5], 1.2)
        assert got == pytest.approx(0.0, abs=1e-9)

    def test_mixed(self):
        # jump 0.4 over identity trend: 1.0 + 0.4
        dom = unit_square()
        facet = axis_facet(0, 0.5, (0.0, 1.0), (0.4, 0.0), d=2)
        vals = dom.centers().copy()
        vals[dom.centers()[..., 0] > 0.5, 0] += 0.4

        def sampler(pts):
            pts = np.atleast_2d(pts)
            out = pts.copy()
            out[pts[:, 0] > 0.5, 0] += 0.4
            return out

        exact = DisplacementField(dom, vals, [facet], sampler=sampler)
        got = small_jump_variation(exact, [1.0, 0.0], [0.0, 0.5], 2.0)
        assert got == pytest.approx(1.4, rel=1e-6)
        # lattice-only version smears at most O(h) of AC mass per crossing
        sampled = DisplacementField(dom, vals, [facet])
        got = small_jump_variation(sampled, [1.0, 0.0], [0.0, 0.5], 2.0)
        assert got == pytest.approx(1.4, abs=2 * dom.h)

    def test_sigma_guard(self):
        f = identity_field()
        with pytest.raises(ValueError):
            small_jump_variation(f, [1.0, 0.0], [0.0, 0.5], 1.0)

    def test_directional_consistency_bound(self):
        # per-offset integral of the small-jump variation stays below
        # sigma times the directional measure, up to quadrature slack
        f = step_field(1.0 / 64.0, jump=(1.5, 0.0))
        xi = np.array([1.0, 0.0])
        fam = SliceFamily(f.domain, xi)
        for sigma in (1.2, 2.0, 4.0):
            total = 0.0
            for j in range(len(fam)):
                sf = extract_slice(f, xi, fam.offsets[j])
                total += fam.weight * small_jump_variation_of_slice(sf, sigma)
            bound = sigma * directional_measure(f, xi)
            assert total <= bound * 1.01 + 1e-12


class TestGradientIdentity:
    def test_rigid_motion_zero(self):
        dom = unit_square()
        motion = RigidMotion([[0.0, 1.2], [-1.2, 0.0]], [0.3, -0.1])

        def sampler(pts):
            return motion(np.atleast_2d(pts))

        vals = motion(dom.centers().reshape(-1, 2)).reshape(dom.shape + (2,))
        f = DisplacementField(dom, vals, sampler=sampler)
        rep = gradient_identity_check(f, [1.0, 0.0])
        assert rep.max_error <= 1e-10

    def test_shear_invisible(self):
        dom = unit_square()

        def sampler(pts):
            pts = np.atleast_2d(pts)
            return np.stack([pts[:, 1], np.zeros(len(pts))], axis=1)

        vals = sampler(dom.centers().reshape(-1, 2)).reshape(dom.shape + (2,))
        f = DisplacementField(dom, vals, sampler=sampler)
        rep = gradient_identity_check(f, [1.0, 0.0])
        assert rep.max_error <= 1e-10

    def test_quadratic_first_order(self):
        dom = unit_square(1.0 / 64.0)

        def sampler(pts):
            pts = np.atleast_2d(pts)
            return np.stack([pts[:, 0] ** 2, np.zeros(len(pts))], axis=1)

        vals = sampler(dom.centers().reshape(-1, 2)).reshape(dom.shape + (2,))
        f = DisplacementField(dom, vals, sampler=sampler)
        rep = gradient_identity_check(f, [1.0, 0.0])
        # first differences against the centered field derivative: error ~ dt
        assert rep.max_error <= 2.5 * dom.h
        assert rep.max_error > 0.1 * dom.h

    def test_l1_halves_with_h(self):
        reps = []
        for h in (1.0 / 64.0, 1.0 / 128.0):
            dom = unit_square(h)

            def sampler(pts):
                pts = np.atleast_2d(pts)
                return np.stack(
                    [np.sin(2 * math.pi * pts[:, 0]) * 0.3,
                     np.cos(2 * math.pi * pts[:, 1]) * 0.3], axis=1)

            vals = sampler(dom.centers().reshape(-1, 2)).reshape(dom.shape + (2,))
            f = DisplacementField(dom, vals, sampler=sampler)
            xi = np.array([math.cos(0.5), math.sin(0.5)])
            reps.append(gradient_identity_check(f, xi))
        ratio = reps[1].l1 / reps[0].l1
        assert 0.35 <= ratio <= 0.65
