"""Named synthetic suites used by the experiments and the acceptance runs."""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .compactness import PieceRule, SequenceSpec
from .fields import DisplacementField, Domain, JumpFacet, axis_facet


def unit_square(h: float = 1.0 / 128.0) -> Domain:
    return Domain([[0.0, 1.0], [0.0, 1.0]], h)


def smooth_sine_values(domain: Domain, amplitude: float = 0.5,
                       freqs=((1.0, 1.0), (1.0, 2.0))):
    """Analytic trigonometric field, its sampler and a curvature bound."""
    d = domain.d
    freqs = np.asarray(freqs, dtype=float)[:d]

    def sampler(pts):
        pts = np.atleast_2d(pts)
        out = np.zeros_like(pts)
        for comp in range(d):
            phase = 2.0 * math.pi * (pts @ freqs[comp % len(freqs)])
            out[:, comp] = amplitude * np.sin(phase + 0.3 * comp)
        return out

    centers = domain.centers().reshape(-1, d)
    values = sampler(centers).reshape(domain.shape + (d,))
    curv = max(
        amplitude * (2.0 * math.pi) ** 2 * float(np.sum(f * f)) for f in freqs
    )
    return values, sampler, curv


def sine_field(domain: Domain, amplitude: float = 0.5,
               freqs=((1.0, 1.0), (1.0, 2.0))) -> DisplacementField:
    values, sampler, _ = smooth_sine_values(domain, amplitude, freqs)
    return DisplacementField(domain, values, sampler=sampler)


def _split_labels(domain: Domain, boundaries_cells) -> np.ndarray:
    """Vertical stripe labels split after the given cell columns."""
    labels = np.ones(domain.shape, dtype=np.int32)
    for b in boundaries_cells:
        labels[b:, ...] += 1
    return labels


def two_piece_spec(h: float = 1.0 / 128.0, K: int = 20, rate=(1.0, 0.0),
                   noise_amp0: float = 0.0, noise_decay: float = 2.0,
                   base_amplitude: float = 0.0, noise_seed: int = 7) -> SequenceSpec:
    """Two half squares whose translations diverge linearly in the index.

    The interface sits one cell off the midline so it never coincides with a
    dyadic cube boundary.
    """
    dom = unit_square(h)
    n = dom.shape[0]
    split = n // 2 + 1
    labels = _split_labels(dom, [split])
    rules = (
        PieceRule.make(2),
        PieceRule.make(2, b_rate=rate),
    )
    base_values = None
    base_curv = 0.0
    if base_amplitude > 0.0:
        base_values, _, base_curv = smooth_sine_values(dom, base_amplitude)
    return SequenceSpec(
        domain=dom, K=K, base_values=base_values, base_curvature=base_curv,
        pattern_labels=labels, rules=rules, noise_amp0=noise_amp0,
        noise_decay=noise_decay, noise_seed=noise_seed,
    )


def three_stripe_spec(h: float = 1.0 / 128.0, K: int = 20) -> SequenceSpec:
    """Three vertical stripes with pairwise diverging translations."""
    dom = unit_square(h)
    n = dom.shape[0]
    b1 = int(round(n / 3)) + (1 if int(round(n / 3)) % 4 == 0 else 0)
    b2 = int(round(2 * n / 3)) + (1 if int(round(2 * n / 3)) % 4 == 0 else 0)
    labels = _split_labels(dom, [b1, b2])
    rules = (
        PieceRule.make(2),
        PieceRule.make(2, b_rate=(1.0, 0.0)),
        PieceRule.make(2, b_rate=(0.0, 1.5)),
    )
    return SequenceSpec(domain=dom, K=K, pattern_labels=labels, rules=rules)


def smooth_single_spec(h: float = 1.0 / 128.0, K: int = 8,
                       amplitude: float = 0.4,
                       noise_amp0: float = 0.0) -> SequenceSpec:
    """One piece, smooth base, no divergence: the partition must be trivial."""
    dom = unit_square(h)
    values, sampler, curv = smooth_sine_values(dom, amplitude)
    labels = np.ones(dom.shape, dtype=np.int32)
    return SequenceSpec(
        domain=dom, K=K, base_values=values, base_sampler=sampler,
        base_curvature=curv, pattern_labels=labels,
        rules=(PieceRule.make(2),), noise_amp0=noise_amp0, noise_seed=11,
    )


def noisy_two_piece_spec(h: float = 1.0 / 128.0, K: int = 20,
                         noise_amp0: float = 0.05,
                         noise_decay: float = 2.0) -> SequenceSpec:
    return two_piece_spec(h=h, K=K, noise_amp0=noise_amp0,
                          noise_decay=noise_decay)


def gsbdp_rotation_spec(h: float = 1.0 / 128.0, K: int = 20,
                        base_amplitude: float = 0.2) -> SequenceSpec:
    """Two pieces with diverging rotations plus a fixed base jump facet.

    The symmetric gradient of each element equals the base's, so the
    p-energy is constant along the sequence.  The base facet spans the full
    height with a large-amplitude jump, so the cubes containing it classify
    as bad and never produce polluted motion fits.
    """
    dom = unit_square(h)
    n = dom.shape[0]
    split = n // 2 + 1
    labels = _split_labels(dom, [split])
    spin = np.array([[0.0, 1.0], [-1.0, 0.0]])
    rules = (
        PieceRule.make(2),
        PieceRule.make(2, w_rate=2.0 * spin, b_rate=(0.7, 0.0)),
    )
    base_values, _, base_curv = smooth_sine_values(dom, base_amplitude)
    jump = np.array([1.2, 0.0])
    # full-height facet: the half-plane value shift is then consistent with
    # the declared jump set (a partial facet would leave undeclared jump
    # lines at its tips)
    facet = axis_facet(0, 97 * h, (0.0, 1.0), jump, d=2)
    base_values = base_values.copy()
    base_values[dom.centers()[..., 0] > 97 * h] += jump
    return SequenceSpec(
        domain=dom, K=K, base_values=base_values, base_facets=(facet,),
        base_curvature=base_curv, pattern_labels=labels, rules=rules,
        energy_mode="gsbdp", p=2.0,
    )


def calibration_field(seed: int, h: float = 1.0 / 128.0) -> DisplacementField:
    """Smooth trigonometric field plus up to three facets.

    Large-amplitude facets get short extents so the total large-jump area
    stays below the early-exit density of the unit cube; small-amplitude
    facets may span freely.  Facet planes snap to cell boundaries, extents
    do not need to.
    """
    dom = unit_square(h)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                       spawn_key=(101,)))
    d = dom.d
    n = dom.shape[0]
    amp = 0.3 + 0.7 * rng.random()
    f1 = rng.integers(1, 3, size=d).astype(float)
    f2 = rng.integers(1, 3, size=d).astype(float)
    phases = rng.random(2) * 2.0 * math.pi
    centers = dom.centers().reshape(-1, d)
    values = np.zeros((n * n, d))
    values[:, 0] = amp * np.sin(2 * math.pi * centers @ f1 + phases[0])
    values[:, 1] = amp * np.cos(2 * math.pi * centers @ f2 + phases[1])
    values = values.reshape(dom.shape + (d,))
    facets = []
    n_f = int(rng.integers(0, 4))
    early_area = 1.0 / (32.0 * d ** 3)
    large_budget = 0.8 * early_area
    taken = []
    for _ in range(n_f):
        axis = int(rng.integers(0, d))
        gi = int(rng.integers(2, n - 2))
        coord = gi * h
        if any(a == axis and abs(c - coord) < 2 * h for a, c in taken):
            continue
        taken.append((axis, coord))
        if rng.random() < 0.5:
            jump_norm = 0.2 + 0.7 * rng.random()
            length = 0.1 + 0.4 * rng.random()
        else:
            jump_norm = 1.0 + 2.0 * rng.random()
            length = large_budget / 3.0 * (0.5 + 0.5 * rng.random())
        lo = float(rng.random() * (1.0 - length))
        direction = rng.random(d) * 2.0 - 1.0
        direction /= np.linalg.norm(direction)
        jump = jump_norm * direction
        facets.append(axis_facet(axis, coord, (lo, lo + length), jump, d=d))
        # keep the sampled values consistent: shift the plus side by the jump
        mask = centers[:, axis] > coord
        other = 1 - axis
        mask &= (centers[:, other] >= lo) & (centers[:, other] < lo + length)
        values.reshape(-1, d)[mask] += jump
    return DisplacementField(dom, values, facets)


def rigid_field(seed: int, h: float = 1.0 / 128.0,
                scale: float = 1.0) -> DisplacementField:
    """Seeded rigid motion sampled on the unit square."""
    from .fields import RigidMotion

    dom = unit_square(h)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                       spawn_key=(55,)))
    d = dom.d
    w = np.zeros((d, d))
    iu = np.triu_indices(d, k=1)
    vals = scale * (rng.random(len(iu[0])) * 2.0 - 1.0)
    w[iu] = vals
    w = w - w.T
    b = scale * (rng.random(d) * 2.0 - 1.0)
    motion = RigidMotion(w, b)

    def sampler(pts):
        return motion(np.atleast_2d(pts))

    centers = dom.centers().reshape(-1, d)
    values = motion(centers).reshape(dom.shape + (d,))
    field = DisplacementField(dom, values, sampler=sampler)
    field.motion = motion  # ground truth for the tests
    return field


def analytic_smooth_fields(h: float = 1.0 / 128.0):
    """Five analytic smooth fields with samplers, for derivative checks."""
    dom = unit_square(h)
    recipes = [
        lambda p: np.stack([p[:, 0] ** 2, np.zeros(len(p))], axis=1),
        lambda p: np.stack([np.sin(2 * math.pi * p[:, 0]) * 0.3,
                            np.cos(2 * math.pi * p[:, 1]) * 0.3], axis=1),
        lambda p: np.stack([p[:, 0] * p[:, 1], 0.5 * p[:, 1] ** 2], axis=1),
        lambda p: np.stack([0.2 * np.sin(2 * math.pi * (p[:, 0] + p[:, 1])),
                            0.2 * np.sin(2 * math.pi * (p[:, 0] - p[:, 1]))],
                           axis=1),
        lambda p: np.stack([0.25 * np.cos(2 * math.pi * p[:, 1]),
                            0.25 * np.sin(4 * math.pi * p[:, 0])], axis=1),
    ]
    out = []
    centers = dom.centers().reshape(-1, dom.d)
    for sampler in recipes:
        values = sampler(centers).reshape(dom.shape + (dom.d,))
        out.append(DisplacementField(dom, values, sampler=sampler))
    return out
