"""Constructive rigid-motion fitting on cubes.

Given a field restricted to a cube, the fitter picks a simplex of base
points by rejection sampling, interpolates an affine map through the field
values there, shadows out the cells whose connecting rays cross large jumps,
and reports the L1 residual against the fitted map.  The residual divided by
``delta`` times the measure of the cube off the large-jump set is the
dimensionless quantity the companion inequality bounds by a constant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    FacetAmbiguityError,
    ResolutionError,
    SelectionFailureError,
)
from .fields import DisplacementField, RigidMotion
from .slicing import SliceMeasures, default_directions

#: calibrated constant for the residual inequality: twice the empirical max
#: ratio over the seeded verification suite (see ``calibrate_fit_constant``)
DEFAULT_FIT_CONSTANT = 6.0

DEFAULT_BUDGET = 256


def early_exit_density(d: int) -> float:
    """Rescaled large-jump area above which fitting degenerates to zero."""
    return 1.0 / (32.0 * d ** 3)


def variation_budget_factor(d: int) -> float:
    """Admissibility factor for the summed edge variations of the simplex."""
    return 4.0 * math.sqrt(2.0) * (d + 1) ** 2


def shadow_volume_factor(d: int) -> float:
    """Admissibility factor for the blocked-ray volume criterion."""
    return 32.0 * d ** 3


def derive_seed(master: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(master), spawn_key=tuple(int(k) for k in key))


@dataclass
class CubeFit:
    """Result of fitting one cube.

    ``motion`` is the skew part of the fitted affine map, shifted to agree
    with it at the cube center; ``omega_cells`` are flat indices (into the
    domain cell grid) of the shadowed exceptional set.
    """

    box: np.ndarray
    delta: float
    motion: RigidMotion
    affine_gradient: np.ndarray
    affine_offset: np.ndarray
    omega_cells: np.ndarray
    omega_volume: float
    residual: float
    jump_density: float
    early_exit: bool
    mu_off_large: float
    z0: Optional[np.ndarray] = None
    t_star: Optional[float] = None
    f_value: Optional[float] = None
    h_value: Optional[float] = None
    candidates_tried: int = 0
    cell_count: int = 0

    def affine(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return pts @ self.affine_gradient.T + self.affine_offset

    @property
    def residual_ratio(self) -> float:
        denom = self.delta * self.mu_off_large
        if denom <= 1e-14:
            return 0.0 if self.residual <= 1e-10 else math.inf
        return self.residual / denom


@dataclass
class VerifyResult:
    holds: bool
    ratio: float
    constant: float


def _cube_cells(field: DisplacementField, box: np.ndarray):
    """Per-axis slices of the cells whose centers lie in the half-open cube."""
    dom = field.domain
    sl = []
    for a in range(dom.d):
        lo, hi = box[a]
        start = int(np.searchsorted(dom.axes[a], lo + 1e-12, side="left"))
        stop = int(np.searchsorted(dom.axes[a], hi + 1e-12, side="left"))
        sl.append(slice(start, stop))
    return tuple(sl)


def _j1_bboxes(field: DisplacementField):
    """Cached bounding boxes of the large-jump facets of a field."""
    cache = field.__dict__.get("_j1_bbox_cache")
    if cache is None:
        facets = field.j1_facets()
        d = field.domain.d
        lo = np.array([f.bbox_lo for f in facets]).reshape(len(facets), d)
        hi = np.array([f.bbox_hi for f in facets]).reshape(len(facets), d)
        cache = (lo, hi, facets)
        field.__dict__["_j1_bbox_cache"] = cache
    return cache


def _cube_block(dom, cells):
    """Cached centers and flat indices of a cell block (domains are immutable)."""
    cache = dom.__dict__.setdefault("_cube_block_cache", {})
    key = tuple((s.start, s.stop) for s in cells)
    hit = cache.get(key)
    if hit is None:
        centers_block = np.stack(
            np.meshgrid(*[dom.axes[a][cells[a]] for a in range(dom.d)],
                        indexing="ij"),
            axis=-1,
        ).reshape(-1, dom.d)
        flat_index = np.ravel_multi_index(
            tuple(g.ravel() for g in np.meshgrid(
                *[np.arange(s.start, s.stop) for s in cells], indexing="ij")),
            dom.shape,
        )
        hit = (centers_block, flat_index)
        cache[key] = hit
    return hit


def _cube_mask(field: DisplacementField, box: np.ndarray) -> np.ndarray:
    mask = np.zeros(field.domain.shape, dtype=bool)
    mask[_cube_cells(field, box)] = True
    return mask


def blocked(field: DisplacementField, x, xi, t: float, box=None) -> bool:
    """Whether the closed segment ``[x, x + t xi]`` meets a large-jump facet.

    Large means facet jump-vector norm at least 1.  Both endpoints must lie
    in ``box`` (the domain box by default).
    """
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    box = field.domain.box if box is None else np.asarray(box, dtype=float)
    end = x + t * xi
    tol = 1e-9 * max(1.0, float(np.max(box[:, 1] - box[:, 0])))
    for p in (x, end):
        if np.any(p < box[:, 0] - tol) or np.any(p > box[:, 1] + tol):
            from .errors import OutsideDomainError

            raise OutsideDomainError(f"segment endpoint {p.tolist()} outside the cube")
    for f in field.j1_facets():
        if f.segments_cross(x[None, :], end[None, :], closed=True)[0]:
            return True
    return False


def _edges_tv(field: DisplacementField, zs: np.ndarray, pairs, h: float) -> float:
    """Summed sampled total variation of ``u . xi`` over the simplex edges.

    Jumps are picked up by sample differences straddling the crossing; the
    one-sided evaluation keeps each sample on its own side.  All edges are
    evaluated in one batch.
    """
    plans = []
    pts = []
    total_pts = 0
    for i, j in pairs:
        p, q = zs[i], zs[j]
        e = q - p
        length = math.sqrt(float(e @ e))
        if length <= 0:
            continue
        xi = e / length
        n_s = max(2, int(math.ceil(length / h)) + 1)
        ts = np.arange(n_s) * (length / (n_s - 1))
        pts.append(p[None, :] + ts[:, None] * xi[None, :])
        plans.append((total_pts, n_s, xi))
        total_pts += n_s
    if not pts:
        return 0.0
    batch = np.concatenate(pts, axis=0)
    try:
        vals = field.evaluate_many(batch)
    except FacetAmbiguityError:
        shift = np.zeros_like(batch)
        pos = 0
        for start, n_s, xi in plans:
            shift[start:start + n_s] = (h * 1e-6) * xi
            pos += n_s
        vals = field.evaluate_many(batch + shift)
    total = 0.0
    for start, n_s, xi in plans:
        v = vals[start:start + n_s] @ xi
        total += float(np.abs(np.diff(v)).sum())
    return total


def pk_fit(field: DisplacementField, box=None, *, budget: int = DEFAULT_BUDGET,
           seed: int = 0, measures: Optional[SliceMeasures] = None,
           directions=None, collect_h: bool = False,
           omega_factor: Optional[float] = None) -> CubeFit:
    """Fit an infinitesimal rigid motion to the field on a cube.

    The procedure works in units rescaled to the unit cube.  If the
    large-jump density exceeds ``1/(32 d^3)`` it exits early with a zero
    motion and the whole cube as exceptional set.  Otherwise base points
    ``z_0`` (uniform in the concentric half-side cube) and ``t_*`` (uniform
    in ``(delta/2, delta)``) are drawn until the simplex ``z_i = z_0 + t_*
    e_i`` stays inside the cube, its edges avoid large jumps, the summed edge
    variations pass the admissibility bound, and the blocked-ray shadow
    volume stays proportional to the large-jump area.  The affine map
    interpolating the field at the accepted simplex is returned along with
    the shadow set and the L1 residual off it.

    Raises :class:`SelectionFailureError` with best-candidate diagnostics
    when the budget is exhausted.
    """
    dom = field.domain
    d = dom.d
    box = dom.box if box is None else np.asarray(box, dtype=float)
    sides = box[:, 1] - box[:, 0]
    delta = float(sides[0])
    if np.max(np.abs(sides - delta)) > 1e-9 * delta:
        raise ValueError("fitting box must be a cube")
    cells = _cube_cells(field, box)
    counts = [s.stop - s.start for s in cells]
    if any(c < 4 for c in counts):
        raise ResolutionError(
            f"cube must contain at least 4^{d} cells, got {counts} per axis"
        )
    n_cells = int(np.prod(counts))
    h = dom.h
    j1_lo, j1_hi, j1_all = _j1_bboxes(field)
    # rays and edges stay inside the cube: only facets meeting it matter
    near = np.nonzero(
        np.all(j1_lo <= box[None, :, 1] + 1e-12, axis=1)
        & np.all(j1_hi >= box[None, :, 0] - 1e-12, axis=1)
    )[0]
    j1 = tuple(j1_all[i] for i in near)
    jd = sum(f.clip_area(box[:, 0], box[:, 1]) for f in j1)
    jd_rescaled = jd / delta ** (d - 1)

    centers_block, flat_index = _cube_block(dom, cells)

    if jd_rescaled > early_exit_density(d):
        return CubeFit(
            box=box, delta=delta, motion=RigidMotion.zero(d),
            affine_gradient=np.zeros((d, d)), affine_offset=np.zeros(d),
            omega_cells=flat_index.copy(), omega_volume=n_cells * dom.cell_volume,
            residual=0.0, jump_density=jd_rescaled, early_exit=True,
            mu_off_large=0.0, cell_count=n_cells,
        )

    if measures is None:
        measures = SliceMeasures(field, default_directions(d) if directions is None
                                 else directions)
    mu_off = measures.block_sum(cells, exclude_large=True)
    mu_off_rescaled = mu_off / delta ** (d - 1)

    rng = np.random.default_rng(int(seed))
    q_lo = box[:, 0] + 0.25 * delta
    f_budget = variation_budget_factor(d) * mu_off_rescaled + 1e-9 * (
        1.0 + field.value_scale
    )
    om_factor = shadow_volume_factor(d) if omega_factor is None else float(omega_factor)
    shadow_budget = om_factor * delta * jd + 1e-12
    box_lo, box_hi = box[:, 0], box[:, 1]
    best = None
    reject = {"geometry": 0, "edge_jump": 0, "variation": 0, "shadow": 0}
    budget = int(budget)
    z0s = q_lo[None, :] + rng.random((budget, d)) * (0.5 * delta)
    t_stars = delta * (0.5 + 0.5 * rng.random(budget))
    # the simplex must stay inside the cube: only the upper bounds can fail
    geom_ok = np.all(z0s + t_stars[:, None] <= box_hi[None, :] + 1e-12, axis=1)
    reject["geometry"] = int(budget - geom_ok.sum())
    eye = np.eye(d)
    pairs = [(i, j) for i in range(d + 1) for j in range(i + 1, d + 1)]
    tried = 0
    for cand in np.nonzero(geom_ok)[0]:
        tried = int(cand) + 1
        z0 = z0s[cand]
        t_star = float(t_stars[cand])
        zs = np.concatenate([z0[None, :], z0[None, :] + t_star * eye], axis=0)
        hit = False
        for i, j in pairs:
            for f in j1:
                if f.segments_cross(zs[i][None, :], zs[j][None, :], closed=True)[0]:
                    hit = True
                    break
            if hit:
                break
        if hit:
            reject["edge_jump"] += 1
            continue
        f_val = _edges_tv(field, zs, pairs, h)
        if f_val > f_budget:
            reject["variation"] += 1
            if best is None or f_val < best.get("f_value", math.inf):
                best = dict(z0=z0, t_star=t_star, f_value=f_val, stage="variation")
            continue
        omega_mask = np.zeros(n_cells, dtype=bool)
        if j1:
            for i in range(d + 1):
                starts = np.broadcast_to(zs[i], centers_block.shape)
                for f in j1:
                    omega_mask |= f.segments_cross(starts, centers_block, closed=True)
        omega_vol = float(omega_mask.sum()) * dom.cell_volume
        if omega_vol > shadow_budget:
            reject["shadow"] += 1
            if best is None or best.get("stage") == "variation":
                best = dict(z0=z0, t_star=t_star, f_value=f_val,
                            omega_volume=omega_vol, stage="shadow")
            continue
        # accepted
        try:
            uz = field.evaluate_many(zs)
        except FacetAmbiguityError:
            reject["geometry"] += 1
            continue
        grad = (uz[1:] - uz[0]).T / t_star
        offset = uz[0] - grad @ z0
        center = 0.5 * (box_lo + box_hi)
        w = 0.5 * (grad - grad.T)
        b = grad @ center + offset - w @ center
        motion = RigidMotion(w, b)
        sel = ~omega_mask
        diff = field.values.reshape(-1, d)[flat_index[sel]] - (
            centers_block[sel] @ grad.T + offset
        )
        residual = float(np.linalg.norm(diff, axis=1).sum()) * dom.cell_volume
        h_val = None
        if collect_h:
            h_val = _collect_h(field, zs, centers_block[sel], grad, offset, h)
        return CubeFit(
            box=box, delta=delta, motion=motion, affine_gradient=grad,
            affine_offset=offset, omega_cells=flat_index[omega_mask].copy(),
            omega_volume=omega_vol, residual=residual,
            jump_density=jd_rescaled, early_exit=False, mu_off_large=mu_off,
            z0=z0, t_star=t_star, f_value=f_val, h_value=h_val,
            candidates_tried=tried, cell_count=n_cells,
        )
    diag = dict(best or {})
    diag["rejections"] = reject
    diag["budget"] = int(budget)
    diag["jump_density"] = jd_rescaled
    diag["mu_off_large"] = mu_off
    raise SelectionFailureError(
        f"no admissible base simplex within {budget} candidates "
        f"(rejections: {reject})",
        diagnostics=diag,
    )


def _collect_h(field: DisplacementField, zs: np.ndarray, targets: np.ndarray,
               grad: np.ndarray, offset: np.ndarray, h: float) -> float:
    """Sampled ray-variation diagnostic of the residual field ``u - a``."""
    if targets.size == 0:
        return 0.0
    d = field.domain.d
    total = 0.0
    n_s = max(3, int(math.ceil(float(np.max(np.linalg.norm(
        targets[None, 0] - zs, axis=1))) / h)) + 1)
    svals = np.linspace(0.0, 1.0, n_s)
    for i in range(d + 1):
        seg = targets - zs[i]
        lengths = np.linalg.norm(seg, axis=1)
        ok = lengths > 1e-12
        if not ok.any():
            continue
        dirs = np.zeros_like(seg)
        dirs[ok] = seg[ok] / lengths[ok, None]
        pts = zs[i][None, None, :] + svals[:, None, None] * seg[None, :, :]
        flat = pts.reshape(-1, d)
        try:
            uvals = field.evaluate_many(flat)
        except FacetAmbiguityError:
            flat = flat + h * 1e-6
            uvals = field.evaluate_many(flat)
        wvals = uvals - (flat @ grad.T + offset)
        proj = (wvals.reshape(n_s, -1, d) * dirs[None, :, :]).sum(axis=2)
        total += float(np.abs(np.diff(proj, axis=0)).sum() * field.domain.cell_volume)
    return total


def pk_verify(fit: CubeFit, field: DisplacementField,
              constant: Optional[float] = None) -> VerifyResult:
    """Check the residual inequality for a completed fit.

    The ratio is ``residual / (delta * mu)`` with ``mu`` the dominating
    measure of the cube off the large-jump set; when that measure vanishes
    the check degenerates to ``residual <= 1e-10``.  Early-exit fits hold
    vacuously (the integration domain is empty).
    """
    c = DEFAULT_FIT_CONSTANT if constant is None else float(constant)
    if fit.early_exit:
        return VerifyResult(holds=True, ratio=0.0, constant=c)
    denom = fit.delta * fit.mu_off_large
    if denom <= 1e-14 * max(1.0, field.value_scale):
        holds = fit.residual <= 1e-10
        ratio = 0.0 if holds else math.inf
        return VerifyResult(holds=holds, ratio=ratio, constant=c)
    ratio = fit.residual / denom
    return VerifyResult(holds=ratio <= c, ratio=ratio, constant=c)


@dataclass
class CalibrationResult:
    max_residual_ratio: float
    max_omega_ratio: float
    constant: float
    rows: list


def calibrate_fit_constant(fields: Sequence[DisplacementField], *,
                           budget: int = DEFAULT_BUDGET, seed: int = 0,
                           directions=None, safety: float = 2.0) -> CalibrationResult:
    """Empirical constant for the residual and shadow-volume inequalities.

    Fits every supplied field on its full (cubical) domain and returns twice
    the largest observed ratio, floored at one.
    """
    rows = []
    max_ratio = 0.0
    max_omega = 0.0
    for k, f in enumerate(fields):
        fit = pk_fit(f, budget=budget, seed=seed + k, directions=directions)
        ratio = fit.residual_ratio
        if math.isfinite(ratio):
            max_ratio = max(max_ratio, ratio)
        jd = fit.jump_density * fit.delta ** (f.domain.d - 1)
        if jd > 1e-14 and not fit.early_exit:
            max_omega = max(max_omega, fit.omega_volume / (fit.delta * jd))
        rows.append(
            dict(index=k, ratio=ratio, residual=fit.residual,
                 mu_off_large=fit.mu_off_large, omega_volume=fit.omega_volume,
                 jump_density=fit.jump_density, early_exit=fit.early_exit)
        )
    constant = max(1.0, safety * max(max_ratio, max_omega))
    return CalibrationResult(
        max_residual_ratio=max_ratio, max_omega_ratio=max_omega,
        constant=constant, rows=rows,
    )
