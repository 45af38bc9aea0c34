"""Sequence generation, truncation-based convergence checks and the
lower-semicontinuity ledger.

The harness produces sequences ``u_k = base + pattern(k) + noise(k)`` whose
piecewise-rigid part diverges across pieces, runs the truncated Cauchy
estimate scale by scale, estimates the limit from the tail, and audits the
inequality between the limit partition's perimeter and the thresholded jump
areas of the sequence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DependencyError, SequenceSpecError
from .fields import (
    CaccioppoliPartition,
    DisplacementField,
    Domain,
    JumpFacet,
    PiecewiseRigidMotion,
    RigidMotion,
    axis_facet,
)
from .partition import PartitionResult
from .slicing import SliceMeasures, default_directions, dominating_measure, jump_surface_measure


def truncate(x, sigma: float):
    """Smooth one-Lipschitz truncation ``sigma * tanh(x / sigma)``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return sigma * np.tanh(np.asarray(x, dtype=float) / sigma)


@dataclass(frozen=True)
class PieceRule:
    """Per-piece motion schedule ``a_k(x) = (W0 + k Wr) x + (b0 + k br)``."""

    w_rate: np.ndarray
    b_rate: np.ndarray
    w_offset: np.ndarray
    b_offset: np.ndarray

    @staticmethod
    def make(d: int, w_rate=None, b_rate=None, w_offset=None, b_offset=None):
        def skew(m):
            m = np.zeros((d, d)) if m is None else np.asarray(m, dtype=float)
            if np.max(np.abs(m + m.T)) > 1e-12 * max(1.0, np.max(np.abs(m))):
                raise ValueError("rotation rates must be skew-symmetric")
            return m

        def vec(v):
            return np.zeros(d) if v is None else np.asarray(v, dtype=float)

        return PieceRule(skew(w_rate), vec(b_rate), skew(w_offset), vec(b_offset))

    def motion(self, k: int) -> RigidMotion:
        return RigidMotion(self.w_offset + k * self.w_rate,
                           self.b_offset + k * self.b_rate)


@dataclass
class SequenceSpec:
    """Recipe for a synthetic sequence with a piecewise-rigid diverging part.

    ``pattern_labels`` partitions the cells; ``rules`` gives one motion
    schedule per label.  ``noise_modes`` are ``(amplitude, frequency vector,
    phase, component)`` smooth waves scaled by ``noise_amp(k)``; fresh
    coefficients are drawn per ``k`` from ``noise_seed``.
    """

    domain: Domain
    K: int
    base_values: Optional[np.ndarray] = None
    base_facets: tuple = ()
    base_sampler: Optional[Callable] = None
    base_curvature: float = 0.0
    pattern_labels: Optional[np.ndarray] = None
    rules: tuple = ()
    noise_amp0: float = 0.0
    noise_decay: float = 2.0
    noise_seed: int = 0
    noise_mode_count: int = 3
    energy_mode: str = "gbd"
    p: float = 2.0
    energy_bound: Optional[float] = None

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be positive")
        if self.energy_mode not in ("gbd", "gsbdp"):
            raise ValueError("energy_mode must be 'gbd' or 'gsbdp'")
        if self.pattern_labels is not None:
            self._pattern = CaccioppoliPartition(self.domain, self.pattern_labels)
            if len(self.rules) != self._pattern.piece_count:
                raise ValueError("need one rule per pattern label")
        else:
            self._pattern = None
            if self.rules:
                raise ValueError("rules given without pattern labels")

    @property
    def pattern(self) -> Optional[CaccioppoliPartition]:
        return self._pattern

    def noise_amp(self, k: int) -> float:
        if self.noise_amp0 == 0.0:
            return 0.0
        return self.noise_amp0 * float(k) ** (-self.noise_decay)

    def noise_sup(self, k: int) -> float:
        """Analytic sup bound for the noise field at index ``k``."""
        return self.noise_amp(k) * self.noise_mode_count

    def motions(self, k: int) -> Optional[PiecewiseRigidMotion]:
        if self._pattern is None:
            return None
        return PiecewiseRigidMotion(
            self._pattern, [r.motion(k) for r in self.rules])

    def interpolation_bound(self) -> float:
        """Sup bound for the multilinear sampling error of the base field."""
        h = self.domain.h
        return self.domain.d * h * h / 8.0 * self.base_curvature


def _noise_values(spec: SequenceSpec, k: int) -> np.ndarray:
    dom = spec.domain
    amp = spec.noise_amp(k)
    if amp == 0.0:
        return np.zeros(dom.shape + (dom.d,))
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=spec.noise_seed, spawn_key=(k,)))
    centers = dom.centers()
    out = np.zeros(dom.shape + (dom.d,))
    for _ in range(spec.noise_mode_count):
        comp = int(rng.integers(0, dom.d))
        freq = rng.integers(1, 3, size=dom.d).astype(float)
        phase = float(rng.random()) * 2.0 * math.pi
        coeff = float(rng.random() * 2.0 - 1.0)
        wave = np.sin(2.0 * math.pi * np.einsum("...d,d->...", centers, freq) + phase)
        out[..., comp] += amp * coeff * wave
    return out


def _interface_facets(spec: SequenceSpec, k: int) -> list:
    """Exact jump facets along the pattern interfaces at index ``k``.

    One facet per interface cell face, with the motion difference evaluated
    at the face center; coplanar runs with equal jump vectors are merged.
    """
    pattern = spec.pattern
    if pattern is None:
        return []
    dom = spec.domain
    d = dom.d
    h = dom.h
    motions = [r.motion(k) for r in spec.rules]
    raw = []
    for axis, idx in pattern.interface_faces():
        lower = pattern.labels[idx]
        upper_idx = list(idx)
        upper_idx[axis] += 1
        upper = pattern.labels[tuple(upper_idx)]
        center = np.array([
            dom.lo[a] + (idx[a] + 0.5) * h if a != axis else dom.lo[a] + (idx[a] + 1) * h
            for a in range(d)
        ])
        jump = motions[upper - 1](center[None, :])[0] - motions[lower - 1](center[None, :])[0]
        coord = dom.lo[axis] + (idx[axis] + 1) * h
        raw.append((axis, coord, idx, jump))
    raw.sort(key=lambda r: (r[0], r[1], r[2]))
    facets = []
    i = 0
    while i < len(raw):
        axis, coord, idx, jump = raw[i]
        run = [raw[i]]
        j = i + 1
        # merge along the last tangential axis when jumps agree
        tangent = [a for a in range(d) if a != axis][-1]
        while j < len(raw):
            axis2, coord2, idx2, jump2 = raw[j]
            prev_idx = run[-1][2]
            contiguous = (
                axis2 == axis
                and abs(coord2 - coord) <= 1e-12
                and all(idx2[a] == prev_idx[a] for a in range(d) if a != tangent)
                and idx2[tangent] == prev_idx[tangent] + 1
                and np.max(np.abs(jump2 - jump)) <= 1e-12 * max(1.0, float(np.max(np.abs(jump))))
            )
            if not contiguous:
                break
            run.append(raw[j])
            j += 1
        i = j
        lo_idx = run[0][2]
        hi_idx = run[-1][2]
        if d == 2:
            other = 1 - axis
            ext = (dom.lo[other] + lo_idx[other] * h,
                   dom.lo[other] + (hi_idx[other] + 1) * h)
            facets.append(axis_facet(axis, coord, ext, jump, d=2))
        else:
            others = [a for a in range(3) if a != axis]
            ext = [
                (dom.lo[a] + lo_idx[a] * h, dom.lo[a] + (hi_idx[a] + 1) * h)
                for a in others
            ]
            facets.append(axis_facet(axis, coord, ext, jump, d=3))
    return [f for f in facets if f.jump_norm > 0.0]


def generate_sequence(spec: SequenceSpec, k: int) -> DisplacementField:
    """Element ``u_k`` of the synthetic sequence.

    Values are base plus the per-label motion plus noise; the facet list is
    the base facets plus the pattern interfaces carrying the exact motion
    differences.  When ``energy_bound`` is set the declared budget is
    checked after generation.
    """
    if not (1 <= k <= spec.K):
        raise ValueError(f"k must lie in 1..{spec.K}")
    dom = spec.domain
    values = np.zeros(dom.shape + (dom.d,))
    if spec.base_values is not None:
        values = values + np.asarray(spec.base_values, dtype=float)
    motions = spec.motions(k)
    if motions is not None:
        values = values + motions.at_centers()
    values = values + _noise_values(spec, k)
    facets = list(spec.base_facets) + _interface_facets(spec, k)
    field = DisplacementField(dom, values, facets)
    if spec.energy_bound is not None:
        if spec.energy_mode == "gbd":
            total = dominating_measure(field)
        else:
            rep = energy_report(field, spec.p)
            total = rep.p_energy + rep.jump_area
        if total > spec.energy_bound:
            raise SequenceSpecError(
                f"element k={k} exceeds the energy bound: {total:.6g} > "
                f"{spec.energy_bound:.6g}"
            )
    return field


@dataclass
class CauchyReport:
    sigma: float
    level: int
    lhs: np.ndarray
    bound: float
    eta_j: float
    big_constant: float
    delta_j: float
    pairwise: np.ndarray
    pair_bound: np.ndarray
    holds: bool


def cauchy_check(fields: Sequence[DisplacementField], result: PartitionResult,
                 e, sigma: float, level: int) -> CauchyReport:
    """Truncated comparison against the cube-level piecewise fits.

    Verifies ``int |t_sigma(e.(u_k - v_k)) - t_sigma(e.w_k^j)| <= sigma
    eta_j + C delta_j`` for every ``k``, with ``C`` assembled from measured
    energies, and reports the pairwise L1 matrix of the truncated fields
    with its triangle-inequality bound.
    """
    dom = fields[0].domain
    if level >= len(result.classifications):
        raise DependencyError(f"no fits at scale {level}")
    e = np.asarray(e, dtype=float)
    e = e / np.linalg.norm(e)
    K = len(fields)
    cls = result.classifications[level]
    b_mask = result.b_masks[level]
    scale_fits = {key[1]: seq for key, seq in result.fits.items() if key[0] == level}
    if not scale_fits:
        raise DependencyError(f"no fits at scale {level}")
    c = result.report["constant"]
    delta_j = cls.delta
    eta_j = result.eta_js[level]
    cell_vol = dom.cell_volume

    u_trunc = []
    w_trunc = []
    for k in range(K):
        v_k = result.motions[k].at_centers()
        diff = np.einsum("...d,d->...", fields[k].values - v_k, e)
        u_trunc.append(truncate(diff, sigma))
        w = np.zeros(dom.shape)
        for ci, seq in scale_fits.items():
            sl = cls.grid.cell_slices(ci)
            fit = seq[k]
            block = np.stack(
                np.meshgrid(*[dom.axes[a][sl[a]] for a in range(dom.d)], indexing="ij"),
                axis=-1,
            )
            pts = block.reshape(-1, dom.d)
            aq = fit.affine(pts).reshape(block.shape)
            w[sl] = np.einsum("...d,d->...", aq - v_k[sl], e)
        w[b_mask] = 0.0
        w_trunc.append(truncate(w, sigma))

    mu_off_sup = max(_sup_mu_off(result, fields, i) for i in range(K))
    big_c = c * mu_off_sup
    lhs = np.array([
        float(np.abs(u_trunc[k] - w_trunc[k]).sum()) * cell_vol for k in range(K)
    ])
    bound = sigma * eta_j + big_c * delta_j
    pairwise = np.zeros((K, K))
    pair_bound = np.zeros((K, K))
    for k in range(K):
        for l in range(k + 1, K):
            m = float(np.abs(u_trunc[k] - u_trunc[l]).sum()) * cell_vol
            drift = float(np.abs(w_trunc[k] - w_trunc[l]).sum()) * cell_vol
            pairwise[k, l] = pairwise[l, k] = m
            pair_bound[k, l] = pair_bound[l, k] = 2.0 * bound + drift
    slack = 1e-9 * max(1.0, bound)
    holds = bool(np.all(lhs <= bound + slack)
                 and np.all(pairwise <= pair_bound + slack))
    return CauchyReport(
        sigma=sigma, level=level, lhs=lhs, bound=bound, eta_j=eta_j,
        big_constant=big_c, delta_j=delta_j, pairwise=pairwise,
        pair_bound=pair_bound, holds=holds,
    )


def _sup_mu_off(result: PartitionResult, fields, i: int) -> float:
    cache = result.report.setdefault("_mu_off_cache", {})
    if i not in cache:
        cache[i] = dominating_measure(fields[i], exclude_large=True)
    return cache[i]


@dataclass
class ConvergenceReport:
    limit: np.ndarray
    quantiles: np.ndarray  # rows: k, cols: (50, 90, 99, 100) percentiles
    truncated_l1: np.ndarray
    cauchy: np.ndarray
    escape_mask: np.ndarray
    escape_volume: float
    escape_bound: Optional[float]
    holds: Optional[bool]


def convergence_check(fields: Sequence[DisplacementField],
                      motions: Sequence[PiecewiseRigidMotion],
                      eta_js: Optional[Sequence[float]] = None) -> ConvergenceReport:
    """Tail-median limit estimate and deviation statistics.

    The limit is the cellwise median of ``u_k - a_k`` over the last third of
    the sequence.  The escape set collects cells whose deviations still grow
    at the end; with ``eta_js`` given its volume is checked against
    ``min_j eta_j`` plus one percent of the domain.
    """
    if len(fields) != len(motions):
        raise ValueError("need one motion per sequence element")
    dom = fields[0].domain
    K = len(fields)
    devs = np.stack([
        fields[k].values - motions[k].at_centers() for k in range(K)
    ])
    tail = max(1, math.ceil(K / 3))
    limit = np.median(devs[K - tail:], axis=0)
    diff = devs - limit[None]
    mag = np.linalg.norm(diff, axis=-1)
    flat = mag.reshape(K, -1)
    quantiles = np.percentile(flat, [50, 90, 99, 100], axis=1).T
    cell_vol = dom.cell_volume
    truncated_l1 = np.array([
        float(truncate(flat[k], 1.0).sum()) * cell_vol for k in range(K)
    ])
    cauchy = np.zeros((K, K))
    for k in range(K):
        for l in range(k + 1, K):
            m = float(truncate(
                np.linalg.norm(devs[k] - devs[l], axis=-1).ravel(), 1.0
            ).sum()) * cell_vol
            cauchy[k, l] = cauchy[l, k] = m
    mid = max(0, K - max(1, math.ceil(K / 2)))
    floor = max(1e-9, 10.0 * float(np.percentile(flat[K - tail:], 25)))
    escape = (flat[-1] >= floor) & (flat[-1] >= 2.0 * flat[mid] - 1e-15)
    escape_mask = escape.reshape(dom.shape)
    escape_volume = float(escape.sum()) * cell_vol
    bound = None
    holds = None
    if eta_js is not None and len(eta_js):
        bound = float(min(eta_js)) + 0.01 * dom.volume
        holds = escape_volume <= bound
    return ConvergenceReport(
        limit=limit, quantiles=quantiles, truncated_l1=truncated_l1,
        cauchy=cauchy, escape_mask=escape_mask, escape_volume=escape_volume,
        escape_bound=bound, holds=holds,
    )


@dataclass
class LscLedger:
    mode: str
    lhs: float
    rhs: float
    slack: float
    holds: bool
    rows: list  # per (sigma, k) jump areas in gbd mode; per k in gsbdp mode
    sigmas: tuple
    tail_start: int


def lsc_check(fields: Sequence[DisplacementField],
              partition: CaccioppoliPartition,
              limit_field: Optional[DisplacementField] = None,
              sigmas: Sequence[float] = (2.0, 4.0, 8.0, 16.0, 32.0),
              mode: str = "gbd",
              tail_fraction: float = 0.2,
              slack: float = 0.05) -> LscLedger:
    """Lower-semicontinuity audit of the partition perimeter.

    In ``gbd`` mode the perimeter is compared against the smallest tail
    minimum over the thresholded jump areas, the threshold list standing in
    for the outer limit (use thresholds the tail amplitudes actually reach;
    the per-threshold rows keep the trend auditable).  In ``gsbdp`` mode the
    union of the partition boundary and the limit's jump set is compared
    against the tail minimum of the full jump areas.
    """
    if mode not in ("gbd", "gsbdp"):
        raise ValueError("mode must be 'gbd' or 'gsbdp'")
    K = len(fields)
    tail = max(1, math.ceil(K * tail_fraction))
    tail_start = K - tail
    rows = []
    if mode == "gbd":
        sig_sorted = tuple(sorted(float(s) for s in sigmas))
        per_sigma_min = {}
        for s in sig_sorted:
            areas = [jump_surface_measure(f, s) for f in fields]
            for k, a in enumerate(areas):
                rows.append(dict(sigma=s, k=k + 1, area=a))
            per_sigma_min[s] = min(areas[tail_start:])
        rhs = min(per_sigma_min.values())
        lhs = partition.perimeter
    else:
        areas = [jump_surface_measure(f, 0.0) for f in fields]
        for k, a in enumerate(areas):
            rows.append(dict(sigma=0.0, k=k + 1, area=a))
        rhs = min(areas[tail_start:])
        lhs = _boundary_union_area(partition, limit_field)
        sig_sorted = (0.0,)
    holds = lhs <= rhs * (1.0 + slack) + 1e-12
    return LscLedger(mode=mode, lhs=lhs, rhs=rhs, slack=slack, holds=holds,
                     rows=rows, sigmas=sig_sorted, tail_start=tail_start + 1)


def _boundary_union_area(partition: CaccioppoliPartition,
                         limit_field: Optional[DisplacementField]) -> float:
    """Area of the partition boundary united with the limit's jump set.

    Cell faces are deduplicated exactly; facets that do not sit on cell
    faces contribute their full area on top.
    """
    dom = partition.domain
    h = dom.h
    faces = set(partition.interface_faces())
    extra = 0.0
    if limit_field is not None:
        for f in limit_field.jumps:
            if f.jump_norm <= 0:
                continue
            decomposed = _facet_faces(dom, f)
            if decomposed is None:
                extra += f.area
            else:
                faces.update(decomposed)
    return len(faces) * h ** (dom.d - 1) + extra


def _facet_faces(dom: Domain, facet: JumpFacet):
    """Cell faces covered by a snapped axis-aligned facet, else ``None``."""
    if facet.axis is None:
        return None
    a = facet.axis
    h = dom.h
    coord = facet.offset / facet.normal[a]
    gi = (coord - dom.lo[a]) / h
    if abs(gi - round(gi)) > 1e-9 or not (1 <= round(gi) <= dom.shape[a] - 1):
        return None
    plane = int(round(gi)) - 1  # index of the lower cell layer
    spans = []
    for b in range(dom.d):
        if b == a:
            continue
        lo = (facet.bbox_lo[b] - dom.lo[b]) / h
        hi = (facet.bbox_hi[b] - dom.lo[b]) / h
        if abs(lo - round(lo)) > 1e-9 or abs(hi - round(hi)) > 1e-9:
            return None
        spans.append((b, int(round(lo)), int(round(hi))))
    faces = set()
    if dom.d == 2:
        b, lo, hi = spans[0]
        for i in range(lo, hi):
            idx = [0, 0]
            idx[a] = plane
            idx[b] = i
            faces.add((a, tuple(idx)))
    else:
        (b1, lo1, hi1), (b2, lo2, hi2) = spans
        for i in range(lo1, hi1):
            for j in range(lo2, hi2):
                idx = [0, 0, 0]
                idx[a] = plane
                idx[b1] = i
                idx[b2] = j
                faces.add((a, tuple(idx)))
    return faces


@dataclass
class EnergyReport:
    mu_total: float
    p_energy: float
    jump_area: float
    p: float
    excluded_cells: int
    convention: str = "frobenius"


def energy_report(field: DisplacementField, p: float = 2.0,
                  directions=None,
                  measures: Optional[SliceMeasures] = None) -> EnergyReport:
    """Dominating measure, p-power symmetric-gradient energy and jump area.

    The symmetric gradient comes from centered differences of the cell
    values, falling back to one-sided differences at the box boundary and
    across facets; cells whose both-sided stencils cross a facet are
    excluded from the integral.
    """
    if p < 1:
        raise ValueError("p must be at least 1")
    dom = field.domain
    d = dom.d
    h = dom.h
    vals = field.values
    grad = np.zeros(dom.shape + (d, d))
    excluded = np.zeros(dom.shape, dtype=bool)
    centers = dom.centers()
    for a in range(d):
        fwd_ok = np.zeros(dom.shape, dtype=bool)
        bwd_ok = np.zeros(dom.shape, dtype=bool)
        sl_in = [slice(None)] * d
        sl_in[a] = slice(None, -1)
        fwd_ok[tuple(sl_in)] = True
        sl_in2 = [slice(None)] * d
        sl_in2[a] = slice(1, None)
        bwd_ok[tuple(sl_in2)] = True
        if field.jumps:
            flat_centers = centers.reshape(-1, d)
            step = np.zeros(d)
            step[a] = h
            for f in field.jumps:
                fc = f.segments_cross(flat_centers, flat_centers + step,
                                      closed=True).reshape(dom.shape)
                bc = f.segments_cross(flat_centers, flat_centers - step,
                                      closed=True).reshape(dom.shape)
                fwd_ok &= ~fc
                bwd_ok &= ~bc
        both = fwd_ok & bwd_ok
        fwd_only = fwd_ok & ~bwd_ok
        bwd_only = bwd_ok & ~fwd_ok
        excluded |= ~(fwd_ok | bwd_ok)
        up = np.roll(vals, -1, axis=a)
        down = np.roll(vals, 1, axis=a)
        da = np.zeros_like(vals)
        da[both] = (up[both] - down[both]) / (2.0 * h)
        da[fwd_only] = (up[fwd_only] - vals[fwd_only]) / h
        da[bwd_only] = (vals[bwd_only] - down[bwd_only]) / h
        grad[..., :, a] = da
    e_sym = 0.5 * (grad + np.swapaxes(grad, -1, -2))
    mag = np.linalg.norm(e_sym.reshape(dom.shape + (d * d,)), axis=-1)
    mag[excluded] = 0.0
    p_energy = float((mag ** p).sum()) * dom.cell_volume
    mu_total = dominating_measure(field, directions=directions, measures=measures)
    return EnergyReport(
        mu_total=mu_total, p_energy=p_energy,
        jump_area=jump_surface_measure(field, 0.0), p=p,
        excluded_cells=int(excluded.sum()),
    )
