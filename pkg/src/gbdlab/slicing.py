"""One-dimensional restrictions of a field and their variation measures.

A slice pins a direction ``xi`` and an offset ``y`` in the hyperplane
orthogonal to ``xi`` and studies the scalar function ``t -> u(y + t xi) . xi``.
Per-line measures combine the absolutely continuous variation with jump
contributions capped at one; integrating over a lattice of offsets gives the
directional measure, and maximizing over directions cell by cell gives a
computable lower bound for the smallest dominating measure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np

from .errors import EmptySliceError
from .fields import DisplacementField, Domain, GEOM_TOL

#: directions standing in for "every unit vector": uniform angles in 2D,
#: normalized face/edge/corner neighbors in 3D
DEFAULT_DIRECTION_COUNT_2D = 16


def default_directions(d: int, count: Optional[int] = None) -> np.ndarray:
    if d == 2:
        n = DEFAULT_DIRECTION_COUNT_2D if count is None else int(count)
        angles = 2.0 * math.pi * np.arange(n) / n
        return np.stack([np.cos(angles), np.sin(angles)], axis=1)
    if d == 3:
        dirs = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    if dx == dy == dz == 0:
                        continue
                    dirs.append((dx, dy, dz))
        out = np.asarray(dirs, dtype=float)
        out /= np.linalg.norm(out, axis=1)[:, None]
        if count is not None and count < len(out):
            out = out[:count]
        return out
    raise ValueError("only d in {2, 3}")


def _unit(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    n = np.linalg.norm(xi)
    if abs(n - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    return xi / n


def _plane_basis(xi: np.ndarray) -> np.ndarray:
    """Deterministic orthonormal basis of the hyperplane ``y . xi = 0``."""
    d = xi.shape[0]
    if d == 2:
        return np.array([[-xi[1], xi[0]]])
    a = int(np.argmin(np.abs(xi)))
    e = np.zeros(3)
    e[a] = 1.0
    b1 = e - (e @ xi) * xi
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(xi, b1)
    return np.stack([b1, b2])


class SliceFamily:
    """Lattice of parallel lines ``y + t xi`` covering the domain.

    Offsets sit at half-integer multiples of ``h_slice`` in the orthogonal
    hyperplane (midpoint quadrature with weight ``h_slice^(d-1)``), which
    keeps lines off the cell-boundary planes where axis-aligned facets live.
    """

    def __init__(self, domain: Domain, xi, h_slice: Optional[float] = None):
        xi = _unit(xi)
        h_slice = domain.h if h_slice is None else float(h_slice)
        if h_slice <= 0:
            raise ValueError("h_slice must be positive")
        self.domain = domain
        self.xi = xi
        self.h_slice = h_slice
        self.weight = h_slice ** (domain.d - 1)
        basis = _plane_basis(xi)
        corners = np.array(
            [
                [domain.box[a][i] for a, i in enumerate(bits)]
                for bits in np.ndindex(*(2,) * domain.d)
            ]
        )
        proj = corners @ basis.T
        offsets = []
        ranges = []
        for k in range(basis.shape[0]):
            smin, smax = proj[:, k].min(), proj[:, k].max()
            m0 = int(math.floor(smin / h_slice - 0.5))
            m1 = int(math.ceil(smax / h_slice + 0.5))
            ranges.append(np.arange(m0, m1 + 1))
        grids = np.meshgrid(*ranges, indexing="ij")
        coords = (np.stack([g.ravel() for g in grids], axis=1) + 0.5) * h_slice
        Y = coords @ basis
        t0, t1, keep = self._clip(Y)
        self.offsets = Y[keep]
        self.t0 = t0[keep]
        self.t1 = t1[keep]

    def _clip(self, Y: np.ndarray):
        dom = self.domain
        n = Y.shape[0]
        t0 = np.full(n, -np.inf)
        t1 = np.full(n, np.inf)
        keep = np.ones(n, dtype=bool)
        for a in range(dom.d):
            xa = self.xi[a]
            if abs(xa) < 1e-14:
                keep &= (Y[:, a] >= dom.lo[a]) & (Y[:, a] <= dom.hi[a])
                continue
            ta = (dom.lo[a] - Y[:, a]) / xa
            tb = (dom.hi[a] - Y[:, a]) / xa
            lohi = np.minimum(ta, tb), np.maximum(ta, tb)
            t0 = np.maximum(t0, lohi[0])
            t1 = np.minimum(t1, lohi[1])
        keep &= (t1 - t0) > max(1e-12, 1e-9 * dom.h)
        return t0, t1, keep

    def __len__(self):
        return self.offsets.shape[0]

    def coverage_fraction(self) -> float:
        """Quadrature mass of the lines relative to the domain volume."""
        total = float(np.sum(self.t1 - self.t0) * self.weight)
        return total / self.domain.volume


@dataclass(frozen=True)
class SliceFunction:
    """Scalar restriction of a field to one line, with its jump list.

    ``segments`` are ``(t_lo, t_hi, i_start, i_stop)`` index ranges into the
    sample arrays; jumps are the exact facet crossings, signed by the
    direction/normal orientation.  ``jump_norms`` carries the Euclidean norm
    of the parent facet's jump vector per crossing.
    """

    xi: np.ndarray
    y: np.ndarray
    t: np.ndarray
    v: np.ndarray
    jumps: tuple
    segments: tuple
    jump_norms: tuple = ()

    @property
    def jump_times(self):
        return tuple(t for t, _ in self.jumps)

    @property
    def jump_amplitudes(self):
        return tuple(a for _, a in self.jumps)


def _line_crossings(field: DisplacementField, xi, y, t0, t1):
    """Sorted facet crossings of one clipped line.

    Returns a list of ``(t, amplitude, facet_jump_norm)``.  The slice
    amplitude is ``sign(xi . n) (jump . xi)`` so the jump is traversed in the
    direction of increasing ``t``.
    """
    out = []
    guard = max(1e-12, 1e-9 * field.domain.h)
    for f in field.jumps:
        t = f.line_crossing(y, xi)
        if t is None:
            continue
        if t <= t0 + guard or t >= t1 - guard:
            continue
        dn = float(xi @ f.normal)
        amp = math.copysign(1.0, dn) * float(f.jump @ xi)
        out.append((t, amp, f.jump_norm))
    out.sort(key=lambda r: r[0])
    return out


def extract_slice(field: DisplacementField, xi, y) -> SliceFunction:
    """Slice the field along ``{y + t xi}`` with exact jump bookkeeping.

    Samples are laid out per maximal facet-free segment at spacing at most
    ``h`` and never straddle a crossing.
    """
    xi = _unit(xi)
    y = np.asarray(y, dtype=float)
    if abs(float(y @ xi)) > 1e-9 * max(1.0, float(np.max(np.abs(y)))):
        raise ValueError("offset y must lie in the hyperplane orthogonal to xi")
    dom = field.domain
    fam = SliceFamily.__new__(SliceFamily)  # reuse the clipper only
    fam.domain = dom
    fam.xi = xi
    t0a, t1a, keep = SliceFamily._clip(fam, y[None, :])
    if not keep[0]:
        raise EmptySliceError("line misses the domain")
    t0, t1 = float(t0a[0]), float(t1a[0])
    crossings = _line_crossings(field, xi, y, t0, t1)
    h = dom.h
    bounds = [t0] + [c[0] for c in crossings] + [t1]
    t_all = []
    v_all = []
    segments = []
    for sidx in range(len(bounds) - 1):
        a, b = bounds[sidx], bounds[sidx + 1]
        eps = min(1e-9 * max(1.0, abs(a), abs(b)), 0.45 * (b - a))
        aa = a + (eps if sidx > 0 else 0.0)
        bb = b - (eps if sidx < len(bounds) - 2 else 0.0)
        if bb <= aa:
            continue
        n_s = max(2, int(math.ceil((bb - aa) / h)) + 1)
        ts = np.linspace(aa, bb, n_s)
        i_start = len(t_all)
        t_all.extend(ts.tolist())
        segments.append((a, b, i_start, i_start + n_s))
    pts = y[None, :] + np.asarray(t_all)[:, None] * xi[None, :]
    vals = field.evaluate_many(pts) @ xi
    return SliceFunction(
        xi=xi,
        y=y,
        t=np.asarray(t_all),
        v=vals,
        jumps=tuple((c[0], c[1]) for c in crossings),
        segments=tuple(segments),
        jump_norms=tuple(c[2] for c in crossings),
    )


def _normalize_intervals(intervals):
    if intervals is None:
        return None
    ivs = sorted((float(a), float(b)) for a, b in intervals if b > a)
    merged = []
    for a, b in ivs:
        if merged and a <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], b))
        else:
            merged.append((a, b))
    return merged


def _overlap(a: float, b: float, intervals) -> float:
    if intervals is None:
        return b - a
    tot = 0.0
    for lo, hi in intervals:
        tot += max(0.0, min(b, hi) - max(a, lo))
    return tot


def _point_in(t: float, intervals) -> bool:
    if intervals is None:
        return True
    return any(lo <= t <= hi for lo, hi in intervals)


def line_measure(sf: SliceFunction, intervals=None, *,
                 exclude_jump_norm_ge: Optional[float] = None,
                 big_jump_threshold: float = 1.0) -> float:
    """Per-line measure: AC variation plus jump contributions capped at one.

    Jumps of slice amplitude at least ``big_jump_threshold`` count 1 each;
    smaller ones contribute their amplitude.  ``intervals`` restricts to a
    finite union of parameter intervals.  ``exclude_jump_norm_ge`` drops
    crossings whose parent facet jump-vector norm reaches the threshold
    (used to measure the complement of the large-jump set).
    """
    intervals = _normalize_intervals(intervals)
    total = 0.0
    for (a, b, i0, i1) in sf.segments:
        tseg = sf.t[i0:i1]
        vseg = sf.v[i0:i1]
        if i1 - i0 < 2:
            continue
        dv = np.abs(np.diff(vseg))
        if intervals is None:
            total += float(dv.sum())
        else:
            for k in range(len(dv)):
                w = _overlap(tseg[k], tseg[k + 1], intervals)
                if w > 0:
                    total += dv[k] * w / (tseg[k + 1] - tseg[k])
    norms = sf.jump_norms if sf.jump_norms else (0.0,) * len(sf.jumps)
    for (t, amp), jn in zip(sf.jumps, norms):
        if exclude_jump_norm_ge is not None and jn >= exclude_jump_norm_ge:
            continue
        if not _point_in(t, intervals):
            continue
        a = abs(amp)
        total += a if a < big_jump_threshold else 1.0
    return total


def slice_total_variation(sf: SliceFunction, t_lo: float, t_hi: float) -> float:
    """Uncapped total variation of the slice over ``[t_lo, t_hi]``."""
    total = 0.0
    for (a, b, i0, i1) in sf.segments:
        tseg = sf.t[i0:i1]
        vseg = sf.v[i0:i1]
        dv = np.abs(np.diff(vseg))
        for k in range(len(dv)):
            w = max(0.0, min(tseg[k + 1], t_hi) - max(tseg[k], t_lo))
            if w > 0:
                total += dv[k] * w / (tseg[k + 1] - tseg[k])
    for t, amp in sf.jumps:
        if t_lo <= t <= t_hi:
            total += abs(amp)
    return total


def small_jump_variation_of_slice(sf: SliceFunction, sigma: float) -> float:
    if sigma <= 1.0:
        raise ValueError("sigma must exceed 1")
    total = 0.0
    for (a, b, i0, i1) in sf.segments:
        total += float(np.abs(np.diff(sf.v[i0:i1])).sum())
    for t, amp in sf.jumps:
        if abs(amp) < sigma:
            total += abs(amp)
    return total


def small_jump_variation(field: DisplacementField, xi, y, sigma: float) -> float:
    """Slice variation with jumps of amplitude at least ``sigma`` removed.

    Jumps below the threshold contribute their full amplitude; the AC part
    is always included.  Requires ``sigma > 1``.
    """
    if sigma <= 1.0:
        raise ValueError("sigma must exceed 1")
    sf = extract_slice(field, xi, y)
    return small_jump_variation_of_slice(sf, sigma)


class SliceMeasures:
    """Per-cell directional measure arrays for a fixed direction set.

    For every direction the per-line measures are attributed to cells: AC
    contributions at sample-interval midpoints, jump contributions split
    evenly between the two cells the line traverses around the crossing.
    ``off_large`` repeats the bookkeeping with crossings of facets whose
    jump-vector norm is >= ``large_threshold`` removed, which measures the
    complement of the large-jump set.
    """

    def __init__(self, field: DisplacementField, directions=None,
                 h_slice: Optional[float] = None, large_threshold: float = 1.0,
                 collect_lines: bool = False):
        dom = field.domain
        if directions is None:
            directions = default_directions(dom.d)
        directions = np.atleast_2d(np.asarray(directions, dtype=float))
        self.field = field
        self.directions = directions
        self.h_slice = dom.h if h_slice is None else float(h_slice)
        self.large_threshold = float(large_threshold)
        k = directions.shape[0]
        self.cell_full = np.zeros((k,) + dom.shape)
        self.cell_off_large = np.zeros((k,) + dom.shape)
        self.line_records = [] if collect_lines else None
        for i in range(k):
            self._accumulate(i, collect_lines)
        self.cell_full.flags.writeable = False
        self.cell_off_large.flags.writeable = False
        self._max_full = None
        self._max_off = None

    def _max(self, exclude_large: bool) -> np.ndarray:
        if exclude_large:
            if self._max_off is None:
                self._max_off = self.cell_off_large.max(axis=0)
            return self._max_off
        if self._max_full is None:
            self._max_full = self.cell_full.max(axis=0)
        return self._max_full

    def block_sum(self, slices, exclude_large: bool = False) -> float:
        """Cellwise-max measure of the cell block given by per-axis slices."""
        sub = self._max(exclude_large)[slices]
        return float(sub.sum())

    def _accumulate(self, i: int, collect: bool):
        field = self.field
        dom = field.domain
        xi = _unit(self.directions[i])
        fam = SliceFamily(dom, xi, self.h_slice)
        w = fam.weight
        h = dom.h
        # crossings per line, vectorized per facet
        n_lines = len(fam)
        crossings = [[] for _ in range(n_lines)]
        guard = max(1e-12, 1e-9 * h)
        for f in field.jumps:
            t, valid = f.lines_crossings(fam.offsets, xi)
            valid &= (t > fam.t0 + guard) & (t < fam.t1 - guard)
            if not valid.any():
                continue
            dn = float(xi @ f.normal)
            amp = math.copysign(1.0, dn) * float(f.jump @ xi)
            for j in np.nonzero(valid)[0]:
                crossings[j].append((float(t[j]), amp, f.jump_norm))
        # sample layout for all lines of this direction in one evaluation
        all_pts = []
        line_plan = []
        for j in range(n_lines):
            crossings[j].sort(key=lambda r: r[0])
            bounds = [fam.t0[j]] + [c[0] for c in crossings[j]] + [fam.t1[j]]
            seg_plan = []
            for sidx in range(len(bounds) - 1):
                a, b = bounds[sidx], bounds[sidx + 1]
                eps = min(1e-9 * max(1.0, abs(a), abs(b)), 0.45 * (b - a))
                aa = a + (eps if sidx > 0 else 0.0)
                bb = b - (eps if sidx < len(bounds) - 2 else 0.0)
                if bb <= aa:
                    continue
                n_s = max(2, int(math.ceil((bb - aa) / h)) + 1)
                ts = np.linspace(aa, bb, n_s)
                start = sum(len(p) for p in all_pts)
                all_pts.append(fam.offsets[j][None, :] + ts[:, None] * xi[None, :])
                seg_plan.append((ts, start))
            line_plan.append(seg_plan)
        if all_pts:
            vals = field.evaluate_many(np.concatenate(all_pts, axis=0)) @ xi
        else:
            vals = np.zeros(0)
        cf = self.cell_full[i]
        co = self.cell_off_large[i]
        ac_pts = []
        ac_wts = []
        jump_pts = []
        jump_wts = []
        jump_small = []
        for j in range(n_lines):
            y = fam.offsets[j]
            ac = 0.0
            for ts, start in line_plan[j]:
                vseg = vals[start:start + len(ts)]
                dv = np.abs(np.diff(vseg))
                if dv.size:
                    mid = y[None, :] + (0.5 * (ts[:-1] + ts[1:]))[:, None] * xi[None, :]
                    ac_pts.append(mid)
                    ac_wts.append(w * dv)
                    ac += float(dv.sum())
            n_big = 0
            mu_line = ac
            for (t, amp, jn) in crossings[j]:
                contrib = min(abs(amp), 1.0)
                mu_line += contrib
                if abs(amp) >= 1.0:
                    n_big += 1
                eps = 0.25 * h
                jump_pts.append(y + (t - eps) * xi)
                jump_pts.append(y + (t + eps) * xi)
                jump_wts.extend((0.5 * w * contrib, 0.5 * w * contrib))
                small = jn < self.large_threshold
                jump_small.extend((small, small))
            if self.line_records is not None:
                self.line_records.append(
                    dict(
                        direction=i,
                        y=y.copy(),
                        mu_line=mu_line,
                        ac=ac,
                        jump_count=len(crossings[j]),
                        big_jump_count=n_big,
                        crossings=tuple(crossings[j]),
                        weight=w,
                    )
                )
        if ac_pts:
            idx = dom.cell_at(np.concatenate(ac_pts, axis=0))
            wts = np.concatenate(ac_wts)
            np.add.at(cf, idx, wts)
            np.add.at(co, idx, wts)
        if jump_pts:
            idx = dom.cell_at(np.asarray(jump_pts))
            wts = np.asarray(jump_wts)
            small = np.asarray(jump_small)
            np.add.at(cf, idx, wts)
            if small.any():
                np.add.at(co, tuple(q[small] for q in idx), wts[small])

    def directional(self, i: int, mask=None, exclude_large: bool = False) -> float:
        arr = self.cell_off_large[i] if exclude_large else self.cell_full[i]
        if mask is None:
            return float(arr.sum())
        return float(arr[mask].sum())

    def cellwise_max(self, mask=None, exclude_large: bool = False) -> float:
        best = self._max(exclude_large)
        if mask is None:
            return float(best.sum())
        return float(best[mask].sum())


def directional_measure(field: DisplacementField, xi, mask=None,
                        h_slice: Optional[float] = None) -> float:
    """Directional slice measure: offset-weighted sum of line measures."""
    m = SliceMeasures(field, np.asarray(xi, dtype=float)[None, :], h_slice=h_slice)
    return m.directional(0, mask=mask)


def dominating_measure(field: DisplacementField, directions=None, mask=None,
                       measures: Optional[SliceMeasures] = None,
                       exclude_large: bool = False) -> float:
    """Lower bound for the smallest measure dominating every direction.

    Each cell is assigned the direction maximizing its directional measure
    density; the result is monotone in the direction set and additive over
    disjoint cell masks.
    """
    if measures is None:
        measures = SliceMeasures(field, directions)
    return measures.cellwise_max(mask=mask, exclude_large=exclude_large)


def jump_surface_measure(field: DisplacementField, sigma: float) -> float:
    """Total area of facets with jump-vector norm at least ``sigma``.

    ``sigma = 0`` measures the whole jump set (facets with nonzero jump).
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    floor = sigma if sigma > 0 else GEOM_TOL
    return float(sum(f.area for f in field.jumps if f.jump_norm >= floor))


@dataclass
class GradientIdentityReport:
    max_error: float
    mean_error: float
    l1: float
    n_samples: int


def gradient_identity_check(field: DisplacementField, xi,
                            h_slice: Optional[float] = None) -> GradientIdentityReport:
    """Compare slice derivatives with the symmetric-gradient quadratic form.

    The slice side uses first differences within facet-free segments; the
    field side evaluates ``xi^T e(u) xi`` from centered differences of the
    full field at the same points.  Points whose difference stencil leaves
    the box or crosses a facet are skipped.
    """
    xi = _unit(xi)
    dom = field.domain
    fam = SliceFamily(dom, xi, h_slice)
    h = dom.h
    errs = []
    weights = []
    for j in range(len(fam)):
        y = fam.offsets[j]
        try:
            sf = extract_slice(field, xi, y)
        except EmptySliceError:
            continue
        for (a, b, i0, i1) in sf.segments:
            ts = sf.t[i0:i1]
            vs = sf.v[i0:i1]
            if len(ts) < 2:
                continue
            lhs = np.diff(vs) / np.diff(ts)
            base = y[None, :] + ts[:-1][:, None] * xi[None, :]
            ok = np.ones(base.shape[0], dtype=bool)
            stencil = []
            for axis in range(dom.d):
                e = np.zeros(dom.d)
                e[axis] = h
                pp, pm = base + e, base - e
                ok &= dom.contains(pp) & dom.contains(pm)
                stencil.append((pp, pm))
            for f in field.jumps:
                for pp, pm in stencil:
                    ok &= ~f.segments_cross(pm, pp, closed=True)
            if not ok.any():
                continue
            grad = np.empty((int(ok.sum()), dom.d, dom.d))
            for axis, (pp, pm) in enumerate(stencil):
                vp = field.evaluate_many(pp[ok])
                vm = field.evaluate_many(pm[ok])
                grad[:, :, axis] = (vp - vm) / (2.0 * h)
            e_sym = 0.5 * (grad + np.transpose(grad, (0, 2, 1)))
            rhs = np.einsum("i,nij,j->n", xi, e_sym, xi)
            err = np.abs(lhs[ok] - rhs)
            errs.append(err)
            weights.append(np.diff(ts)[ok] * fam.weight)
    if not errs:
        return GradientIdentityReport(0.0, 0.0, 0.0, 0)
    err = np.concatenate(errs)
    wts = np.concatenate(weights)
    return GradientIdentityReport(
        max_error=float(err.max()),
        mean_error=float(err.mean()),
        l1=float((err * wts).sum()),
        n_samples=int(err.size),
    )
