"""Multiscale good/bad cube classification and piecewise-rigid partitions.

Cubes whose large-jump area density exceeds a threshold are "bad"; the rest
get rigid-motion fits per sequence index.  Fitted motion sequences are
grouped into classes: pairs whose closed-form distance stays below a bound
for every index are linked, nested and face-adjacent cubes whose fits agree
in integral are forced together, and everything across classes must diverge.
The classes assembled over scales give a cell-label partition together with
one representative motion sequence per piece.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field as dc_field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    ClusteringAmbiguityError,
    PartitionConstructionError,
    SelectionFailureError,
)
from .fields import (
    CaccioppoliPartition,
    DisplacementField,
    Domain,
    DyadicGrid,
    PiecewiseRigidMotion,
    RigidMotion,
    dyadic_cubes,
)
from .rigidity import (
    DEFAULT_FIT_CONSTANT,
    CubeFit,
    derive_seed,
    early_exit_density,
    pk_fit,
)
from .slicing import SliceMeasures, default_directions

logger = logging.getLogger(__name__)


@dataclass
class ScaleClassification:
    """Good/bad cube split at one scale.

    ``excluded_mask`` covers the uncovered boundary band plus the bad cubes
    of this scale; multiscale accumulation happens in ``build_partition``.
    """

    level: int
    delta: float
    eta: float
    grid: DyadicGrid
    jump_areas: np.ndarray
    bad: np.ndarray
    band_mask: np.ndarray
    excluded_mask: np.ndarray
    stable: Optional[bool] = None
    k_stable: Optional[int] = None
    warning: Optional[str] = None

    @property
    def good_indices(self):
        return np.nonzero(~self.bad)[0]

    @property
    def bad_indices(self):
        return np.nonzero(self.bad)[0]

    @property
    def bad_volume(self) -> float:
        return float(self.bad.sum()) * self.delta ** self.grid.domain.d

    def bad_volume_bound(self, total_large_jump_area: float) -> float:
        return self.delta / self.eta * total_large_jump_area


def _facet_cube_areas(field: DisplacementField, grid: DyadicGrid) -> np.ndarray:
    """Large-jump area inside every cube, half-open so areas tile exactly.

    Axis-aligned rectangular facets are spread over their single cube column
    arithmetically; general facets fall back to polygon clipping against the
    cubes meeting their bounding box.
    """
    dom = field.domain
    d = dom.d
    delta = grid.delta
    counts = grid.counts
    areas = np.zeros(len(grid))
    if not len(grid):
        return areas
    strides = [int(np.prod(counts[a + 1:])) for a in range(d)]

    def cube_pos(m):
        return sum(mi * st for mi, st in zip(m, strides))

    tol = 1e-9
    for f in field.j1_facets():
        if f.axis is not None and f._rect:
            a = f.axis
            c = f.offset / f.normal[a]
            rel = (c - dom.lo[a]) / delta
            col = int(math.ceil(rel - tol)) - 1
            if not (0 <= col < counts[a]):
                continue
            others = [b for b in range(d) if b != a]
            ranges = []
            for b in others:
                lo = f.bbox_lo[b] - dom.lo[b]
                hi = f.bbox_hi[b] - dom.lo[b]
                j0 = max(0, int(math.floor(lo / delta + tol)))
                j1_ = min(counts[b] - 1, int(math.ceil(hi / delta - tol)) - 1)
                ranges.append((b, lo, hi, j0, j1_))
            if d == 2:
                b, lo, hi, j0, j1_ = ranges[0]
                for j in range(j0, j1_ + 1):
                    ov = min(hi, (j + 1) * delta) - max(lo, j * delta)
                    if ov > 0:
                        m = [0, 0]
                        m[a], m[b] = col, j
                        areas[cube_pos(m)] += ov
            else:
                (b1, lo1, hi1, j0a, j1a), (b2, lo2, hi2, j0b, j1b) = ranges
                for j in range(j0a, j1a + 1):
                    ov1 = min(hi1, (j + 1) * delta) - max(lo1, j * delta)
                    if ov1 <= 0:
                        continue
                    for l in range(j0b, j1b + 1):
                        ov2 = min(hi2, (l + 1) * delta) - max(lo2, l * delta)
                        if ov2 <= 0:
                            continue
                        m = [0, 0, 0]
                        m[f.axis], m[b1], m[b2] = col, j, l
                        areas[cube_pos(m)] += ov1 * ov2
        else:
            los = [max(0, int(math.floor((f.bbox_lo[a] - dom.lo[a]) / delta - tol)))
                   for a in range(d)]
            his = [min(counts[a] - 1,
                       int(math.ceil((f.bbox_hi[a] - dom.lo[a]) / delta + tol)))
                   for a in range(d)]
            for m in itertools.product(*[range(lo, hi + 1) for lo, hi in zip(los, his)]):
                pos = cube_pos(m)
                box = grid.cube_box(pos)
                areas[pos] += f.clip_area(box[:, 0], box[:, 1])
    return areas


def classify_cubes(field: DisplacementField, delta: float, eta: float,
                   grid: Optional[DyadicGrid] = None) -> ScaleClassification:
    """Single-scale classification by exact large-jump area accounting.

    A cube is bad when the area of large-jump facets inside it (half-open
    boxes, so areas tile exactly) exceeds ``eta * delta^(d-1)``.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    dom = field.domain
    if grid is None:
        grid = dyadic_cubes(dom, delta, 0)
    areas = _facet_cube_areas(field, grid)
    bad = areas > eta * grid.delta ** (dom.d - 1)
    band = ~grid.covered_mask()
    excluded = band.copy()
    for i in np.nonzero(bad)[0]:
        excluded[grid.cell_slices(int(i))] = True
    return ScaleClassification(
        level=grid.level, delta=grid.delta, eta=eta, grid=grid,
        jump_areas=areas, bad=bad, band_mask=band, excluded_mask=excluded,
    )


def stabilize_classification(fields: Sequence[DisplacementField], delta: float,
                             eta: float) -> ScaleClassification:
    """Classification shared by the tail of a sequence.

    Returns the classification of the latest index once it repeats verbatim
    from some ``k`` on (recorded as ``k_stable``, 1-based).  If even the last
    two indices disagree the union of all bad sets is used and a warning flag
    is set.
    """
    if len(fields) < 2:
        raise ValueError("need at least two sequence elements")
    dom = fields[0].domain
    grid = dyadic_cubes(dom, delta, 0)
    per_k = [classify_cubes(f, delta, eta, grid=grid) for f in fields]
    K = len(per_k)
    bad_sets = [tuple(np.nonzero(c.bad)[0].tolist()) for c in per_k]
    k_stable = K - 1
    while k_stable > 0 and bad_sets[k_stable - 1] == bad_sets[-1]:
        k_stable -= 1
    if k_stable <= K - 2:
        out = per_k[-1]
        out.stable = True
        out.k_stable = k_stable + 1
        return out
    union_bad = np.zeros(len(grid), dtype=bool)
    areas = np.zeros(len(grid))
    for c in per_k:
        union_bad |= c.bad
        areas = np.maximum(areas, c.jump_areas)
    band = ~grid.covered_mask()
    excluded = band.copy()
    for i in np.nonzero(union_bad)[0]:
        excluded[grid.cell_slices(int(i))] = True
    return ScaleClassification(
        level=grid.level, delta=grid.delta, eta=eta, grid=grid,
        jump_areas=areas, bad=union_bad, band_mask=band, excluded_mask=excluded,
        stable=False, k_stable=None,
        warning="classification did not stabilize; using union of bad cubes",
    )


@dataclass
class MotionSequenceClass:
    """One equivalence class of motion sequences across cubes."""

    index: int
    members: tuple
    representative: tuple
    motions: tuple  # representative RigidMotion per sequence index


@dataclass
class PairVerdict:
    key_a: tuple
    key_b: tuple
    max_distance: float
    last_distance: float
    monotone_tail: bool
    verdict: str  # bounded | diverging | forced | indeterminate


def _motion_features(fits: Dict[tuple, Sequence[CubeFit]]):
    keys = sorted(fits.keys())
    K = len(fits[keys[0]])
    d = fits[keys[0]][0].motion.d
    iu = np.triu_indices(d, k=1)
    W = np.empty((len(keys), K, len(iu[0])))
    B = np.empty((len(keys), K, d))
    for i, key in enumerate(keys):
        if len(fits[key]) != K:
            raise ValueError("every cube needs a fit for every sequence index")
        for k, fit in enumerate(fits[key]):
            W[i, k] = fit.motion.w[iu]
            B[i, k] = fit.motion.b
    return keys, W, B


def cluster_motions(fits: Dict[tuple, Sequence[CubeFit]],
                    tau_bound: Optional[float] = None,
                    tau_div: Optional[float] = None,
                    forced_pairs: Sequence[Tuple[tuple, tuple]] = (),
                    require_determinate: bool = True):
    """Group motion sequences into bounded classes.

    ``fits`` maps a hashable cube key to the per-index fits of that cube.
    The pairwise distance at index ``k`` is the closed-form sup over the
    unit ball of the affine difference.  A pair is bounded when the distance
    never exceeds ``tau_bound``; it diverges when the final distance reaches
    ``tau_div`` and the profile is nondecreasing over the last half of the
    indices.  Classes are connected components of the bounded relation plus
    any ``forced_pairs``; pairs landing in different components must diverge
    or a :class:`ClusteringAmbiguityError` is raised.
    """
    keys, W, B = _motion_features(fits)
    n, K = W.shape[0], W.shape[1]
    if tau_bound is None or tau_div is None:
        per_cell = []
        for seq in fits.values():
            for fit in seq:
                if fit.early_exit:
                    continue
                live = fit.cell_count - len(fit.omega_cells)
                if live > 0:
                    d = fit.motion.d
                    per_cell.append(fit.residual / (live * fit.delta ** d /
                                                    fit.cell_count))
        med = float(np.median(per_cell)) if per_cell else 0.0
        if tau_bound is None:
            tau_bound = 10.0 * med
        if tau_div is None:
            tau_div = 100.0 * tau_bound
    tol = 1e-12
    max_d = np.zeros((n, n))
    last_d = np.zeros((n, n))
    mono = np.ones((n, n), dtype=bool)
    tail_start = K - max(1, math.ceil(K / 2))
    prev = None
    for k in range(K):
        dw = np.linalg.norm(W[:, k][:, None, :] - W[:, k][None, :, :], axis=2)
        db = np.linalg.norm(B[:, k][:, None, :] - B[:, k][None, :, :], axis=2)
        dk = dw + db
        np.maximum(max_d, dk, out=max_d)
        if k >= tail_start and prev is not None and k > tail_start:
            mono &= dk >= prev - max(tol, 1e-9 * np.max(prev))
        if k >= tail_start:
            prev = dk
        if k == K - 1:
            last_d = dk
    bounded = max_d <= tau_bound + tol
    diverging = (last_d >= tau_div - tol) & mono
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    for i, j in np.argwhere(np.triu(bounded, k=1)):
        union(int(i), int(j))
    key_index = {k: i for i, k in enumerate(keys)}
    for ka, kb in forced_pairs:
        if ka in key_index and kb in key_index:
            union(key_index[ka], key_index[kb])
    roots = np.array([find(i) for i in range(n)])
    ambiguous = []
    if require_determinate:
        cross = roots[:, None] != roots[None, :]
        cross &= np.triu(np.ones((n, n), dtype=bool), k=1)
        for i, j in np.argwhere(cross & ~diverging):
            ambiguous.append(
                PairVerdict(
                    keys[i], keys[j], float(max_d[i, j]),
                    float(last_d[i, j]), bool(mono[i, j]),
                    "indeterminate",
                )
            )
        if ambiguous:
            raise ClusteringAmbiguityError(
                f"{len(ambiguous)} cube pair(s) neither bounded nor diverging "
                f"(tau_bound={tau_bound:.3e}, tau_div={tau_div:.3e}); "
                f"first: {ambiguous[0].key_a} vs {ambiguous[0].key_b} with "
                f"max distance {ambiguous[0].max_distance:.3e}",
                pairs=ambiguous,
            )
    by_root: Dict[int, list] = {}
    for i, r in enumerate(roots):
        by_root.setdefault(r, []).append(i)
    classes = []
    ordered = sorted(by_root.values(), key=lambda idxs: min(keys[i] for i in idxs))
    for ci, idxs in enumerate(ordered, start=1):
        members = tuple(sorted(keys[i] for i in idxs))
        rep = members[0]
        classes.append(
            MotionSequenceClass(
                index=ci, members=members, representative=rep,
                motions=tuple(fit.motion for fit in fits[rep]),
            )
        )
    report = dict(tau_bound=tau_bound, tau_div=tau_div, n_members=n,
                  n_classes=len(classes))
    return classes, report


@dataclass
class PartitionResult:
    partition: CaccioppoliPartition
    motions: tuple  # one PiecewiseRigidMotion per sequence index
    classes: tuple
    classifications: tuple
    b_masks: tuple  # cumulative excluded cell masks per scale
    eta_js: tuple
    fits: dict  # (level, cube index) -> tuple of CubeFit per sequence index
    report: dict


def _force_certificate(fit_a: Sequence[CubeFit], fit_b: Sequence[CubeFit],
                       region_cells: np.ndarray, centers_flat: np.ndarray,
                       cell_volume: float, delta: float, constant: float,
                       slack: float) -> bool:
    """Integral agreement test forcing two cubes into one class.

    Compares the fitted affine maps over the given cells (minus both shadow
    sets) against ``slack * constant * delta * mu`` for every sequence index.
    """
    shadows_empty = all(
        len(fa.omega_cells) == 0 and len(fb.omega_cells) == 0
        for fa, fb in zip(fit_a, fit_b)
    )
    if shadows_empty:
        pts = centers_flat[region_cells]
        dg = np.stack([fa.affine_gradient - fb.affine_gradient
                       for fa, fb in zip(fit_a, fit_b)])
        do = np.stack([fa.affine_offset - fb.affine_offset
                       for fa, fb in zip(fit_a, fit_b)])
        diff = np.einsum("nd,ked->kne", pts, dg) + do[:, None, :]
        lhs = np.sqrt((diff * diff).sum(axis=2)).sum(axis=1) * cell_volume
        mu = np.array([max(fa.mu_off_large, fb.mu_off_large)
                       for fa, fb in zip(fit_a, fit_b)])
        rhs = slack * constant * delta * mu + 1e-12 * np.maximum(1.0, lhs)
        return bool(np.all(lhs <= rhs))
    for fa, fb in zip(fit_a, fit_b):
        cells = np.setdiff1d(region_cells,
                             np.concatenate([fa.omega_cells, fb.omega_cells]),
                             assume_unique=False)
        if cells.size == 0:
            continue
        pts = centers_flat[cells]
        diff = (pts @ fa.affine_gradient.T + fa.affine_offset) - (
            pts @ fb.affine_gradient.T + fb.affine_offset
        )
        lhs = float(np.linalg.norm(diff, axis=1).sum()) * cell_volume
        mu = max(fa.mu_off_large, fb.mu_off_large)
        rhs = slack * constant * delta * mu + 1e-12 * max(1.0, lhs)
        if lhs > rhs:
            return False
    return True


def build_partition(fields: Sequence[DisplacementField], *,
                    delta0: Optional[float] = None,
                    j_max: Optional[int] = None,
                    eta: Optional[float] = None,
                    seed: int = 0,
                    directions=None,
                    budget: int = 256,
                    fit_constant: Optional[float] = None,
                    tau_bound: Optional[float] = None,
                    tau_div: Optional[float] = None,
                    force_slack: float = 2.0,
                    measures: Optional[Sequence[SliceMeasures]] = None) -> PartitionResult:
    """Assemble the cell-label partition and per-index rigid motions.

    Runs the stabilized classification and the cube fitter at every scale,
    clusters the fitted motion sequences (bounded pairs linked, nested and
    face-adjacent certified pairs forced together), assembles piece labels
    coarsest-first, assigns leftover cells to the nearest good cube whose
    center is visible without crossing a large jump, and returns the
    partition with one representative motion sequence per piece.
    """
    if not fields:
        raise ValueError("need at least one sequence element")
    dom = fields[0].domain
    for f in fields:
        if f.domain != dom:
            raise ValueError("all sequence elements must share one domain")
    d = dom.d
    K = len(fields)
    c = DEFAULT_FIT_CONSTANT if fit_constant is None else float(fit_constant)
    if delta0 is None:
        delta0 = float(np.min(dom.hi - dom.lo)) / 4.0
    if j_max is None:
        j_max = max(0, int(math.floor(math.log2(delta0 / (4.0 * dom.h)) + 1e-9)))
    if delta0 * 2.0 ** (-j_max) < 4.0 * dom.h - 1e-12:
        raise ValueError("finest scale must keep cubes of at least 4 cells per axis")
    if eta is None:
        eta = min(0.05, 2.0 ** (-d) / (8.0 * c), early_exit_density(d))
    if not eta < 2.0 ** (-d) / (4.0 * c):
        raise ValueError("eta must be below 2^-d / (4c)")
    if directions is None:
        directions = default_directions(d)
    warnings: List[str] = []
    if measures is None:
        measures = [SliceMeasures(f, directions) for f in fields]

    classifications = []
    for j in range(j_max + 1):
        cls = stabilize_classification(fields, delta0 * 2.0 ** (-j), eta)
        if cls.warning:
            warnings.append(f"scale {j}: {cls.warning}")
        classifications.append(cls)

    # fits on good cubes, one seed per cube so the base simplex is shared
    # across the sequence
    fits: Dict[tuple, list] = {}
    effective_bad: Dict[int, set] = {j: set() for j in range(j_max + 1)}
    for j, cls in enumerate(classifications):
        for ci in cls.good_indices:
            key = (j, int(ci))
            box = cls.grid.cube_box(int(ci))
            cube_seeds = [
                int(derive_seed(seed, j, int(ci), attempt).generate_state(1)[0])
                for attempt in (0, 1)
            ]
            seq = []
            failed = False
            for k, f in enumerate(fields):
                fit = None
                for attempt, extra in enumerate((budget, budget * 4)):
                    try:
                        fit = pk_fit(
                            f, box, budget=extra, seed=cube_seeds[attempt],
                            measures=measures[k],
                        )
                        break
                    except SelectionFailureError:
                        continue
                if fit is None:
                    failed = True
                    break
                if fit.early_exit:
                    raise ValueError(
                        "good cube hit the early-exit density; decrease eta "
                        f"below {early_exit_density(d):.4g}"
                    )
                seq.append(fit)
            if failed:
                effective_bad[j].add(int(ci))
                warnings.append(
                    f"scale {j} cube {int(ci)}: fitter budget exhausted; "
                    "treating as bad"
                )
                continue
            fits[key] = seq

    # cumulative excluded masks: band at scale j plus bad cubes at scales >= j
    bad_cell_masks = []
    for j, cls in enumerate(classifications):
        m = np.zeros(dom.shape, dtype=bool)
        for ci in cls.bad_indices:
            m[cls.grid.cell_slices(int(ci))] = True
        for ci in effective_bad[j]:
            m[cls.grid.cell_slices(int(ci))] = True
        bad_cell_masks.append(m)
    b_masks = []
    for j in range(j_max + 1):
        m = ~classifications[j].grid.covered_mask()
        for l in range(j, j_max + 1):
            m |= bad_cell_masks[l]
        b_masks.append(m)

    # forcing certificates between nested and face-adjacent good cubes
    centers_flat = dom.centers().reshape(-1, d)
    forced = []
    for j in range(j_max + 1):
        grid = classifications[j].grid
        if j + 1 <= j_max:
            finer = classifications[j + 1].grid
            for key in list(fits.keys()):
                if key[0] != j + 1:
                    continue
                pi = grid.parent_index(finer, key[1])
                if pi is None or (j, pi) not in fits:
                    continue
                region = _flat_cells(dom, finer.cell_slices(key[1]))
                if _force_certificate(fits[(j, pi)], fits[key], region,
                                      centers_flat, dom.cell_volume,
                                      grid.delta, c, force_slack):
                    forced.append(((j, pi), key))
        # same-scale face neighbors
        index_of = {m: i for i, m in enumerate(grid.index)}
        for key in list(fits.keys()):
            if key[0] != j:
                continue
            m = grid.index[key[1]]
            for a in range(d):
                nb = list(m)
                nb[a] += 1
                ni = index_of.get(tuple(nb))
                if ni is None or (j, ni) not in fits:
                    continue
                region = np.concatenate([
                    _flat_cells(dom, grid.cell_slices(key[1])),
                    _flat_cells(dom, grid.cell_slices(ni)),
                ])
                if _force_certificate(fits[key], fits[(j, ni)], region,
                                      centers_flat, dom.cell_volume,
                                      grid.delta, c, force_slack):
                    forced.append((key, (j, ni)))

    if not fits:
        raise PartitionConstructionError("no good cube could be fitted at any scale")
    classes, cluster_report = cluster_motions(
        fits, tau_bound=tau_bound, tau_div=tau_div, forced_pairs=forced)
    class_of = {}
    for cl in classes:
        for member in cl.members:
            class_of[member] = cl.index

    # per-scale label grids, then coarsest-first assembly with nesting checks
    scale_labels = []
    for j in range(j_max + 1):
        lab = np.zeros(dom.shape, dtype=np.int32)
        grid = classifications[j].grid
        for key, cl_idx in class_of.items():
            if key[0] != j:
                continue
            lab[grid.cell_slices(key[1])] = cl_idx
        lab[b_masks[j]] = 0
        scale_labels.append(lab)
    for j in range(j_max):
        cur, nxt = scale_labels[j], scale_labels[j + 1]
        both = (cur > 0) & (nxt > 0)
        if np.any(cur[both] != nxt[both]):
            bad_cell = np.argwhere((cur != nxt) & both)[0]
            raise PartitionConstructionError(
                f"piece nesting violated between scales {j} and {j + 1} at "
                f"cell {tuple(int(x) for x in bad_cell)}; cluster thresholds "
                "are inconsistent"
            )
    labels = np.zeros(dom.shape, dtype=np.int32)
    for j in range(j_max + 1):
        take = (labels == 0) & (scale_labels[j] > 0)
        labels[take] = scale_labels[j][take]

    # leftover cells: nearest good cube whose center is visible through the
    # large-jump set of the last sequence element
    leftover = np.argwhere(labels == 0)
    if leftover.size:
        cube_centers = []
        cube_class = []
        cube_order = []
        for key in sorted(fits.keys()):
            grid = classifications[key[0]].grid
            cube_centers.append(grid.cube_center(key[1]))
            cube_class.append(class_of[key])
            cube_order.append(key)
        cube_centers = np.asarray(cube_centers)
        cube_class = np.asarray(cube_class)
        j1 = fields[-1].j1_facets()
        def _visible(p, q):
            for f in j1:
                if f.segments_cross(p[None, :], q[None, :], closed=True)[0]:
                    return False
            return True

        for cell in leftover:
            p = np.array([dom.axes[a][cell[a]] for a in range(d)])
            dist = np.linalg.norm(cube_centers - p[None, :], axis=1)
            order = np.argsort(dist, kind="stable")
            chosen = None
            for oi in order:
                if not _visible(p, cube_centers[oi]):
                    continue
                ties = [
                    int(ti) for ti in order
                    if abs(dist[ti] - dist[oi]) <= 1e-12
                    and _visible(p, cube_centers[ti])
                ]
                chosen = int(np.min(cube_class[ties]))
                break
            if chosen is None:
                oi = order[0]
                ties = order[np.abs(dist[order] - dist[oi]) <= 1e-12]
                chosen = int(np.min(cube_class[ties]))
            labels[tuple(cell)] = chosen

    partition = CaccioppoliPartition.from_labels(dom, labels)
    # map compacted labels back to classes
    compact_of_class = {}
    flat_old = labels.ravel()
    flat_new = partition.labels.ravel()
    for old, new in zip(flat_old, flat_new):
        compact_of_class.setdefault(int(old), int(new))
    motions_per_k = []
    rep_fits = {cl.index: fits[cl.representative] for cl in classes}
    for k in range(K):
        per_label = [None] * partition.piece_count
        for cl in classes:
            new = compact_of_class.get(cl.index)
            if new is None:
                continue
            per_label[new - 1] = rep_fits[cl.index][k].motion
        for i, m in enumerate(per_label):
            if m is None:
                per_label[i] = RigidMotion.zero(d)
        motions_per_k.append(PiecewiseRigidMotion(partition, per_label))

    sup_j1 = max(
        sum(f.area for f in fld.j1_facets()) for fld in fields
    )
    eta_js = tuple(
        float(b_masks[j].sum()) * dom.cell_volume
        + c * classifications[j].delta * sup_j1
        for j in range(j_max + 1)
    )
    report = dict(
        delta0=delta0, j_max=j_max, eta=eta, seed=seed, constant=c,
        cluster=cluster_report, warnings=tuple(warnings),
        n_pieces=partition.piece_count,
        scale_stats=tuple(
            dict(level=j, delta=classifications[j].delta,
                 n_good=int((~classifications[j].bad).sum()),
                 n_bad=int(classifications[j].bad.sum()),
                 b_volume=float(b_masks[j].sum()) * dom.cell_volume,
                 eta_j=eta_js[j])
            for j in range(j_max + 1)
        ),
    )
    return PartitionResult(
        partition=partition, motions=tuple(motions_per_k),
        classes=tuple(classes), classifications=tuple(classifications),
        b_masks=tuple(b_masks), eta_js=eta_js, fits=fits, report=report,
    )


def _flat_cells(dom: Domain, slices) -> np.ndarray:
    grids = np.meshgrid(*[np.arange(s.start, s.stop) for s in slices], indexing="ij")
    return np.ravel_multi_index(tuple(g.ravel() for g in grids), dom.shape)


@dataclass
class DivergenceReport:
    rows: list
    flagged: list
    min_final_growth: float

    @property
    def all_pass(self) -> bool:
        return not self.flagged


def verify_divergence(motions: Sequence[PiecewiseRigidMotion], xi_samples,
                      x_samples, tau_div: float = 1.0) -> DivergenceReport:
    """Sampled pairwise divergence check of the representative motions.

    For every piece pair, sample point and direction, reports the growth of
    the pointwise difference and of its projection on the direction; sampled
    combinations whose directional profile stays below ``tau_div`` are
    flagged (they witness the expected null set of exceptional directions).
    """
    if not motions:
        raise ValueError("need motions")
    N = motions[0].partition.piece_count
    if N < 2:
        raise ValueError("need at least two pieces")
    xi_samples = np.atleast_2d(np.asarray(xi_samples, dtype=float))
    x_samples = np.atleast_2d(np.asarray(x_samples, dtype=float))
    K = len(motions)
    rows = []
    flagged = []
    min_growth = math.inf
    for n1 in range(1, N + 1):
        for n2 in range(n1 + 1, N + 1):
            for x in x_samples:
                diffs = np.array([
                    m.motions[n1 - 1](x[None, :])[0] - m.motions[n2 - 1](x[None, :])[0]
                    for m in motions
                ])
                mag = np.linalg.norm(diffs, axis=1)
                min_growth = min(min_growth, float(mag[-1]))
                for xi in xi_samples:
                    proj = np.abs(diffs @ xi)
                    ok = bool(proj[-1] >= tau_div)
                    row = dict(pair=(n1, n2), x=tuple(x), xi=tuple(xi),
                               final_magnitude=float(mag[-1]),
                               final_directional=float(proj[-1]),
                               passes=ok)
                    rows.append(row)
                    if not ok:
                        flagged.append(row)
    return DivergenceReport(rows=rows, flagged=flagged,
                            min_final_growth=min_growth)
