"""Grid-backed displacement fields with explicit jump facets.

The discrete objects here stand in for vector fields on a box domain whose
discontinuity set is known exactly: values are sampled at cell centers and
the jump set is an explicit list of oriented planar facets.  Everything is
immutable after construction and safe to share between workers.
"""
from __future__ import annotations

import itertools
import math
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    FacetAmbiguityError,
    OutsideDomainError,
    ResolutionError,
)

GEOM_TOL = 1e-12


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


class Domain:
    """Axis-aligned box domain with a uniform cell-center lattice.

    Parameters
    ----------
    box : (d, 2) array-like
        Per-axis lower/upper bounds.  Each side must be an integer multiple
        of ``h``.
    h : float
        Grid spacing; cell centers sit at ``lo + (i + 1/2) h``.
    """

    def __init__(self, box, h: float):
        box = np.asarray(box, dtype=float)
        if box.ndim != 2 or box.shape[1] != 2:
            raise ValueError("box must have shape (d, 2)")
        d = box.shape[0]
        if d not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {d}")
        if not h > 0:
            raise ValueError("grid spacing h must be positive")
        sides = box[:, 1] - box[:, 0]
        if np.any(sides <= 0):
            raise ValueError("box sides must have positive length")
        counts = sides / h
        rounded = np.rint(counts)
        if np.any(np.abs(counts - rounded) > 1e-9 * np.maximum(1.0, counts)):
            raise ValueError("each box side must be an integer multiple of h")
        if np.any(rounded < 1):
            raise ValueError("each axis needs at least one cell")
        self.d = d
        self.h = float(h)
        self.box = _freeze(box)
        self.shape = tuple(int(n) for n in rounded)
        self.lo = _freeze(box[:, 0])
        self.hi = _freeze(box[:, 1])
        self.axes = tuple(
            _freeze(self.lo[a] + (np.arange(self.shape[a]) + 0.5) * self.h)
            for a in range(d)
        )

    @property
    def cell_count(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return self.h ** self.d

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def centers(self) -> np.ndarray:
        """All cell centers as an ``(*shape, d)`` array."""
        grids = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(grids, axis=-1)

    def contains(self, pts: np.ndarray, tol: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(pts)
        ok = np.ones(pts.shape[0], dtype=bool)
        for a in range(self.d):
            ok &= (pts[:, a] >= self.lo[a] - tol) & (pts[:, a] <= self.hi[a] + tol)
        return ok

    def cell_at(self, pts: np.ndarray):
        """Multi-index of the cell containing each point (clipped at edges)."""
        pts = np.atleast_2d(pts)
        idx = []
        for a in range(self.d):
            ia = np.floor((pts[:, a] - self.lo[a]) / self.h).astype(np.intp)
            np.maximum(ia, 0, out=ia)
            np.minimum(ia, self.shape[a] - 1, out=ia)
            idx.append(ia)
        return tuple(idx)

    def __eq__(self, other):
        return (
            isinstance(other, Domain)
            and self.shape == other.shape
            and abs(self.h - other.h) <= 1e-15
            and np.array_equal(self.box, other.box)
        )

    def __hash__(self):
        return hash((self.shape, self.h, self.box.tobytes()))

    def __repr__(self):
        return f"Domain(box={self.box.tolist()}, h={self.h}, shape={self.shape})"


class JumpFacet:
    """Oriented planar facet carrying a jump vector.

    ``vertices`` is an ``(m, d)`` array: a segment in 2D (m = 2) or a planar
    convex polygon in 3D (m >= 3, ordered).  ``normal`` fixes the plus side;
    ``jump`` is the trace difference plus-minus across the facet.
    """

    def __init__(self, vertices, jump, normal=None):
        V = np.asarray(vertices, dtype=float)
        if V.ndim != 2:
            raise ValueError("vertices must be an (m, d) array")
        m, d = V.shape
        jump = np.asarray(jump, dtype=float)
        if jump.shape != (d,):
            raise ValueError("jump vector dimension mismatch")
        if d == 2:
            if m != 2:
                raise ValueError("2D facets are segments with two vertices")
            edge = V[1] - V[0]
            length = np.linalg.norm(edge)
            if length <= GEOM_TOL:
                raise ValueError("facet must have positive area")
            auto_n = np.array([edge[1], -edge[0]]) / length
            self._area = float(length)
        elif d == 3:
            if m < 3:
                raise ValueError("3D facets need at least three vertices")
            cross = np.zeros(3)
            for i in range(1, m - 1):
                cross += np.cross(V[i] - V[0], V[i + 1] - V[0])
            nrm = np.linalg.norm(cross)
            if nrm <= GEOM_TOL:
                raise ValueError("facet must have positive area")
            auto_n = cross / nrm
            self._area = float(0.5 * nrm)
        else:
            raise ValueError("only 2D and 3D facets are supported")
        if normal is None:
            n = auto_n
        else:
            n = np.asarray(normal, dtype=float)
            nn = np.linalg.norm(n)
            if abs(nn - 1.0) > 1e-9:
                raise ValueError("normal must have unit length")
            n = n / nn
            if abs(abs(float(n @ auto_n)) - 1.0) > 1e-9:
                raise ValueError("normal must be orthogonal to the facet plane")
        # verify planarity
        off = (V - V[0]) @ n
        if np.max(np.abs(off)) > 1e-9 * max(1.0, float(np.max(np.abs(V)))):
            raise ValueError("facet vertices are not coplanar")
        self.vertices = _freeze(V)
        self.normal = _freeze(n)
        self.jump = _freeze(jump)
        self.offset = float(n @ V[0])
        self.jump_norm = float(np.linalg.norm(jump))
        self.bbox_lo = _freeze(V.min(axis=0))
        self.bbox_hi = _freeze(V.max(axis=0))
        axis = int(np.argmax(np.abs(n)))
        self.axis = axis if abs(abs(n[axis]) - 1.0) <= 1e-12 else None
        # axis-aligned facets whose polygon is its own bounding rectangle get
        # exact half-open extent tests so abutting facets tile a plane cleanly
        self._rect = False
        if self.axis is not None:
            span = [a for a in range(d) if a != self.axis]
            ext = np.prod([self.bbox_hi[a] - self.bbox_lo[a] for a in span])
            self._rect = abs(ext - self._area) <= 1e-9 * max(self._area, 1.0)

    @property
    def area(self) -> float:
        return self._area

    @property
    def d(self) -> int:
        return self.vertices.shape[1]

    def __repr__(self):
        return (
            f"JumpFacet(area={self._area:.6g}, |jump|={self.jump_norm:.6g}, "
            f"normal={self.normal.tolist()})"
        )

    # -- membership -------------------------------------------------------

    def _contains_on_plane(self, q: np.ndarray) -> np.ndarray:
        """Membership of on-plane points; half-open extents for rectangles."""
        q = np.atleast_2d(q)
        d = self.d
        if self._rect:
            ok = np.ones(q.shape[0], dtype=bool)
            for a in range(d):
                if a == self.axis:
                    continue
                ok &= (q[:, a] >= self.bbox_lo[a] - GEOM_TOL) & (
                    q[:, a] < self.bbox_hi[a] - GEOM_TOL
                )
            return ok
        if d == 2:
            edge = self.vertices[1] - self.vertices[0]
            L2 = float(edge @ edge)
            s = (q - self.vertices[0]) @ edge / L2
            return (s >= -GEOM_TOL) & (s < 1.0 - GEOM_TOL)
        # convex polygon: inside all edge half-planes
        V = self.vertices
        m = V.shape[0]
        ok = np.ones(q.shape[0], dtype=bool)
        for i in range(m):
            a, b = V[i], V[(i + 1) % m]
            inward = np.cross(self.normal, b - a)
            ok &= (q - a) @ inward >= -1e-9 * max(1.0, self._area)
        return ok

    def points_on(self, pts: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        pts = np.atleast_2d(pts)
        dist = pts @ self.normal - self.offset
        near = np.abs(dist) <= tol
        if not near.any():
            return near
        out = np.zeros(pts.shape[0], dtype=bool)
        out[near] = self._contains_on_plane(pts[near])
        return out

    # -- intersections ----------------------------------------------------

    def line_crossing(self, y: np.ndarray, xi: np.ndarray):
        """Crossing parameter of the line ``y + t xi`` or ``None``."""
        dn = float(xi @ self.normal)
        if abs(dn) < 1e-14:
            return None
        t = (self.offset - float(y @ self.normal)) / dn
        q = y + t * xi
        if self._contains_on_plane(q[None, :])[0]:
            return t
        return None

    def lines_crossings(self, Y: np.ndarray, xi: np.ndarray):
        """Vectorized ``line_crossing`` over many line offsets.

        Returns ``(t, valid)`` arrays; ``t`` is meaningless where ``valid``
        is False.
        """
        dn = float(xi @ self.normal)
        n_lines = Y.shape[0]
        if abs(dn) < 1e-14:
            return np.zeros(n_lines), np.zeros(n_lines, dtype=bool)
        t = (self.offset - Y @ self.normal) / dn
        q = Y + t[:, None] * xi[None, :]
        return t, self._contains_on_plane(q)

    def segments_cross(self, P: np.ndarray, Q: np.ndarray, closed: bool = False) -> np.ndarray:
        """Whether segments ``[P_i, Q_i]`` cross the facet."""
        P = np.atleast_2d(P)
        Q = np.atleast_2d(Q)
        fp = P @ self.normal - self.offset
        fq = Q @ self.normal - self.offset
        if closed:
            straddle = fp * fq <= 0.0
        else:
            straddle = fp * fq < 0.0
        if not straddle.any():
            return straddle
        out = np.zeros(P.shape[0], dtype=bool)
        idx = np.nonzero(straddle)[0]
        denom = fp[idx] - fq[idx]
        safe = np.abs(denom) > GEOM_TOL
        s = np.where(safe, fp[idx] / np.where(safe, denom, 1.0), 0.0)
        pts = P[idx] + s[:, None] * (Q[idx] - P[idx])
        out[idx] = self._contains_on_plane(pts)
        return out

    # -- clipping ---------------------------------------------------------

    def clip_area(self, lo, hi, half_open: bool = True) -> float:
        """Area of the facet portion inside the box ``(lo, hi]``.

        With ``half_open=True``, an axis-aligned facet lying exactly on the
        upper box boundary of its normal axis counts as inside (and on the
        lower one as outside), so areas tile exactly across abutting boxes.
        """
        lo = np.array(lo, dtype=float)
        hi = np.array(hi, dtype=float)
        if self.axis is not None:
            a = self.axis
            c = self.offset / self.normal[a]
            tol = 1e-9 * max(1.0, abs(c))
            if half_open:
                if not (c - lo[a] > tol and c - hi[a] <= tol):
                    return 0.0
            else:
                if c < lo[a] - tol or c > hi[a] + tol:
                    return 0.0
            # membership along the normal axis is decided; widen the slab so
            # polygon clipping only acts tangentially
            lo[a] = c - 1.0
            hi[a] = c + 1.0
        poly = self._clip_polygon(lo, hi)
        if poly is None:
            return 0.0
        return self._polygon_area(poly)

    def _clip_polygon(self, lo, hi):
        V = self.vertices.copy()
        d = self.d
        if d == 2:
            p, q = V[0], V[1]
            t0, t1 = 0.0, 1.0
            e = q - p
            for a in range(2):
                if abs(e[a]) < GEOM_TOL:
                    if p[a] < lo[a] - GEOM_TOL or p[a] > hi[a] + GEOM_TOL:
                        return None
                    continue
                ta = (lo[a] - p[a]) / e[a]
                tb = (hi[a] - p[a]) / e[a]
                ta, tb = min(ta, tb), max(ta, tb)
                t0, t1 = max(t0, ta), min(t1, tb)
            if t1 - t0 <= GEOM_TOL:
                return None
            return np.array([p + t0 * e, p + t1 * e])
        poly = [V[i] for i in range(V.shape[0])]
        for a in range(3):
            for sign, bound in ((1.0, lo[a]), (-1.0, -hi[a])):
                if not poly:
                    return None
                nxt = []
                vals = [sign * p[a] - bound for p in poly]
                m = len(poly)
                for i in range(m):
                    cur, nxtv = poly[i], poly[(i + 1) % m]
                    c, n = vals[i], vals[(i + 1) % m]
                    if c >= -GEOM_TOL:
                        nxt.append(cur)
                    if (c >= -GEOM_TOL) != (n >= -GEOM_TOL) and abs(c - n) > GEOM_TOL:
                        s = c / (c - n)
                        nxt.append(cur + s * (nxtv - cur))
                poly = nxt
        if len(poly) < 3:
            return None
        return np.array(poly)

    def _polygon_area(self, poly: np.ndarray) -> float:
        if self.d == 2:
            return float(np.linalg.norm(poly[1] - poly[0]))
        cross = np.zeros(3)
        for i in range(1, len(poly) - 1):
            cross += np.cross(poly[i] - poly[0], poly[i + 1] - poly[0])
        return float(0.5 * np.linalg.norm(cross))

    def overlaps(self, other: "JumpFacet") -> bool:
        """Positive-area overlap with a coplanar facet."""
        if abs(abs(float(self.normal @ other.normal)) - 1.0) > 1e-9:
            return False
        if abs(self.offset - float(self.normal @ other.vertices[0])) > 1e-9:
            return False
        if self.d == 2:
            e = self.vertices[1] - self.vertices[0]
            L2 = float(e @ e)
            s = (other.vertices - self.vertices[0]) @ e / L2
            a, b = min(s), max(s)
            return min(1.0, b) - max(0.0, a) > 1e-9
        lo = np.maximum(self.bbox_lo, other.bbox_lo)
        hi = np.minimum(self.bbox_hi, other.bbox_hi)
        if np.any(hi - lo < -1e-12):
            return False
        inflate = 1e-9
        return other.clip_area(lo - inflate, hi + inflate, half_open=False) > 1e-9


def axis_facet(axis: int, coord: float, extent, jump, d: int = 2) -> JumpFacet:
    """Convenience builder for an axis-aligned facet with normal ``+e_axis``.

    ``extent`` gives per-tangential-axis (lo, hi) bounds: a pair in 2D, two
    pairs in 3D.
    """
    jump = np.asarray(jump, dtype=float)
    if d == 2:
        a0, a1 = np.asarray(extent, dtype=float).reshape(-1)[:2]
        other = 1 - axis
        v = np.zeros((2, 2))
        v[:, axis] = coord
        v[0, other], v[1, other] = a0, a1
        n = np.zeros(2)
        n[axis] = 1.0
        return JumpFacet(v, jump, normal=n)
    ext = np.asarray(extent, dtype=float).reshape(2, 2)
    others = [a for a in range(3) if a != axis]
    v = np.zeros((4, 3))
    v[:, axis] = coord
    corners = [(0, 0), (1, 0), (1, 1), (0, 1)]
    for k, (i, j) in enumerate(corners):
        v[k, others[0]] = ext[0, i]
        v[k, others[1]] = ext[1, j]
    n = np.zeros(3)
    n[axis] = 1.0
    return JumpFacet(v, jump, normal=n)


class RigidMotion:
    """Affine map ``x -> W x + b`` with exactly skew-symmetric ``W``."""

    def __init__(self, w, b):
        W = np.asarray(w, dtype=float)
        b = np.asarray(b, dtype=float)
        d = b.shape[0]
        if W.shape != (d, d):
            raise ValueError("gradient matrix shape mismatch")
        scale = max(1.0, float(np.max(np.abs(W))))
        if np.max(np.abs(W + W.T)) > 1e-8 * scale:
            raise ValueError("gradient must be skew-symmetric")
        self.w = _freeze(0.5 * (W - W.T))
        self.b = _freeze(b)
        self.d = d

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return pts @ self.w.T + self.b

    @property
    def spin_norm(self) -> float:
        """Operator norm of the skew part (valid for d <= 3)."""
        iu = np.triu_indices(self.d, k=1)
        return float(np.linalg.norm(self.w[iu]))

    def distance(self, other: "RigidMotion") -> float:
        """sup over the unit ball of the pointwise difference, in closed form."""
        iu = np.triu_indices(self.d, k=1)
        dw = float(np.linalg.norm(self.w[iu] - other.w[iu]))
        db = float(np.linalg.norm(self.b - other.b))
        return dw + db

    @staticmethod
    def zero(d: int) -> "RigidMotion":
        return RigidMotion(np.zeros((d, d)), np.zeros(d))

    def __repr__(self):
        return f"RigidMotion(w={self.w.tolist()}, b={self.b.tolist()})"


class DisplacementField:
    """Sampled vector field plus an explicit jump-facet list.

    ``values`` holds one d-vector per cell center, sampled from the full
    (discontinuous) field.  Point evaluation interpolates multilinearly but
    never across a facet: corners on the far side of a facet are dropped and
    the remaining weights renormalized, so queries are one-sided.  An
    optional ``sampler`` (vectorized ``(n, d) -> (n, d)``) short-circuits
    interpolation for analytic fields.
    """

    def __init__(self, domain: Domain, values, jumps: Sequence[JumpFacet] = (),
                 sampler: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                 validate: bool = True):
        self.domain = domain
        values = np.asarray(values, dtype=float)
        want = domain.shape + (domain.d,)
        if values.shape != want:
            raise ValueError(f"values shape {values.shape} != {want}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        self.values = _freeze(values)
        self.jumps = tuple(jumps)
        self.sampler = sampler
        self._scale = max(1.0, float(np.max(np.abs(values))))
        if validate:
            self._validate_facets()
        if sampler is not None and validate:
            centers = self.domain.centers().reshape(-1, domain.d)
            probe = np.asarray(sampler(centers), dtype=float)
            err = np.max(np.abs(probe - self.values.reshape(-1, domain.d)))
            if err > 1e-9 * self._scale:
                raise ValueError(
                    f"sampler disagrees with cell values (max err {err:.3e})"
                )

    def _validate_facets(self):
        d = self.domain.d
        for f in self.jumps:
            if f.d != d:
                raise ValueError("facet dimension mismatch")
            if np.any(f.bbox_lo < self.domain.lo - 1e-9) or np.any(
                f.bbox_hi > self.domain.hi + 1e-9
            ):
                raise ValueError("facet lies outside the domain box")
        n = len(self.jumps)
        for i in range(n):
            for j in range(i + 1, n):
                if self.jumps[i].overlaps(self.jumps[j]):
                    raise ValueError(f"facets {i} and {j} overlap")

    # -- evaluation -------------------------------------------------------

    def evaluate_many(self, pts: np.ndarray, check: bool = True) -> np.ndarray:
        """Field values at arbitrary points (vectorized).

        Raises :class:`OutsideDomainError` for points off the closed box and
        :class:`FacetAmbiguityError` for points on a facet.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        dom = self.domain
        if check:
            tol = 1e-9 * max(1.0, float(np.max(dom.hi - dom.lo)))
            ok = dom.contains(pts, tol=tol)
            if not ok.all():
                bad = pts[~ok][0]
                raise OutsideDomainError(f"point {bad.tolist()} outside domain box")
            on_tol = 1e-12 * max(1.0, float(np.max(np.abs(dom.hi))))
            for axis, rep, members, glo, ghi in self._plane_groups:
                near = np.abs(pts @ rep.normal - rep.offset) <= on_tol
                if not near.any():
                    continue
                sub = np.nonzero(near)[0]
                for f in members:
                    hit = f._contains_on_plane(pts[sub])
                    if hit.any():
                        p = pts[sub[hit][0]]
                        raise FacetAmbiguityError(
                            f"point {p.tolist()} lies on a jump facet; query "
                            "one-sided by offsetting along the facet normal"
                        )
        if self.sampler is not None:
            out = np.asarray(self.sampler(pts), dtype=float)
            if out.shape != pts.shape:
                raise ValueError("sampler returned wrong shape")
            return out
        return self._interpolate(pts)

    def _interpolate(self, pts: np.ndarray) -> np.ndarray:
        dom = self.domain
        d = dom.d
        n = pts.shape[0]
        i0 = np.empty((n, d), dtype=np.intp)
        s = np.empty((n, d))
        for a in range(d):
            g = (pts[:, a] - dom.lo[a]) / dom.h - 0.5
            ia = np.floor(g).astype(np.intp)
            np.maximum(ia, 0, out=ia)
            np.minimum(ia, max(dom.shape[a] - 2, 0), out=ia)
            i0[:, a] = ia
            s[:, a] = g - ia
        ncorner = 1 << d
        weights = np.empty((ncorner, n))
        corner_vals = np.empty((ncorner, n, d))
        corner_pos = np.empty((ncorner, n, d)) if self.jumps else None
        for c in range(ncorner):
            w = np.ones(n)
            idx = []
            for a in range(d):
                bit = (c >> a) & 1
                ia = i0[:, a] + bit
                idx.append(ia)
                w = w * (s[:, a] if bit else (1.0 - s[:, a]))
                if corner_pos is not None:
                    corner_pos[c, :, a] = dom.lo[a] + (ia + 0.5) * dom.h
            weights[c] = w
            corner_vals[c] = self.values[tuple(idx)]
        blocked = None
        if self.jumps:
            reach = dom.h * (1.5 * math.sqrt(d))
            for axis, rep, members, glo, ghi in self._plane_groups:
                dist = pts @ rep.normal - rep.offset
                cand = np.abs(dist) <= reach
                for a in range(d):
                    cand &= (pts[:, a] >= glo[a] - reach) & (
                        pts[:, a] <= ghi[a] + reach
                    )
                if not cand.any():
                    continue
                sub = np.nonzero(cand)[0]
                P = pts[sub]
                for f in members:
                    for c in range(ncorner):
                        crossed = f.segments_cross(P, corner_pos[c, sub])
                        if crossed.any():
                            if blocked is None:
                                blocked = np.zeros((ncorner, n), dtype=bool)
                            blocked[c, sub[crossed]] = True
        if blocked is None:
            return np.einsum("cn,cnd->nd", weights, corner_vals)
        affected = blocked.any(axis=0)
        out = np.einsum("cn,cnd->nd", weights, corner_vals)
        sub = np.nonzero(affected)[0]
        # one-sided: drop blocked corners; clamp any extrapolation weights
        s_c = np.clip(s[sub], 0.0, 1.0)
        w_sub = np.empty((ncorner, sub.size))
        for c in range(ncorner):
            w = np.ones(sub.size)
            for a in range(d):
                bit = (c >> a) & 1
                w = w * (s_c[:, a] if bit else (1.0 - s_c[:, a]))
            w_sub[c] = w
        w_sub[blocked[:, sub]] = 0.0
        tot = w_sub.sum(axis=0)
        dead = tot <= GEOM_TOL
        if dead.any():
            p = pts[sub[dead][0]]
            raise FacetAmbiguityError(
                f"no same-side interpolation stencil at {p.tolist()}; "
                "facets isolate the point from all neighboring cell centers"
            )
        vals_sub = np.einsum("cn,cnd->nd", w_sub, corner_vals[:, sub]) / tot[:, None]
        out[sub] = vals_sub
        return out

    @property
    def value_scale(self) -> float:
        return self._scale

    def j1_facets(self, threshold: float = 1.0):
        """Facets whose jump vector has norm at least ``threshold``."""
        return tuple(f for f in self.jumps if f.jump_norm >= threshold)

    @property
    def _plane_groups(self):
        """Facets grouped by their carrying plane for cheap prefiltering."""
        groups = self.__dict__.get("_plane_groups_cache")
        if groups is None:
            bins = {}
            for f in self.jumps:
                if f.axis is not None:
                    key = (f.axis, round(f.offset / f.normal[f.axis], 12))
                else:
                    key = (None, id(f))
                bins.setdefault(key, []).append(f)
            groups = []
            for (axis, _), members in bins.items():
                lo = np.min([m.bbox_lo for m in members], axis=0)
                hi = np.max([m.bbox_hi for m in members], axis=0)
                groups.append((axis, members[0], tuple(members), lo, hi))
            self.__dict__["_plane_groups_cache"] = groups
        return groups

    def __repr__(self):
        return (
            f"DisplacementField(shape={self.domain.shape}, "
            f"facets={len(self.jumps)})"
        )


def evaluate(field: DisplacementField, x) -> np.ndarray:
    """Field value at one point; one-sided with respect to the facet list."""
    return field.evaluate_many(np.asarray(x, dtype=float)[None, :])[0]


class CaccioppoliPartition:
    """Cell-label partition with facet-counting perimeter.

    Labels run from 1 to ``piece_count`` and every label occurs.  The
    perimeter is ``h^(d-1)`` times the number of interior cell faces whose
    two cells carry different labels.
    """

    def __init__(self, domain: Domain, labels):
        labels = np.asarray(labels)
        if labels.shape != domain.shape:
            raise ValueError("label grid shape mismatch")
        if not np.issubdtype(labels.dtype, np.integer):
            raise ValueError("labels must be integers")
        lab = labels.astype(np.int32)
        n = int(lab.max()) if lab.size else 0
        if lab.min() < 1:
            raise ValueError("labels must start at 1")
        used = np.unique(lab)
        if used.size != n:
            raise ValueError("every label in 1..N must be used")
        self.domain = domain
        self.labels = lab
        self.labels.flags.writeable = False
        self.piece_count = n
        self._perimeter = None

    @property
    def perimeter(self) -> float:
        if self._perimeter is None:
            d = self.domain.d
            count = 0
            for a in range(d):
                lo = [slice(None)] * d
                hi = [slice(None)] * d
                lo[a] = slice(None, -1)
                hi[a] = slice(1, None)
                count += int(np.count_nonzero(self.labels[tuple(lo)] != self.labels[tuple(hi)]))
            self._perimeter = count * self.domain.h ** (d - 1)
        return self._perimeter

    def interface_faces(self):
        """Interior faces with distinct labels as (axis, index tuple) pairs.

        The index tuple addresses the lower cell of the face.
        """
        d = self.domain.d
        faces = []
        for a in range(d):
            lo = [slice(None)] * d
            hi = [slice(None)] * d
            lo[a] = slice(None, -1)
            hi[a] = slice(1, None)
            diff = self.labels[tuple(lo)] != self.labels[tuple(hi)]
            for idx in zip(*np.nonzero(diff)):
                faces.append((a, idx))
        return faces

    @staticmethod
    def from_labels(domain: Domain, raw_labels) -> "CaccioppoliPartition":
        """Compact arbitrary integer labels to 1..N preserving first-seen order."""
        raw = np.asarray(raw_labels)
        flat = raw.ravel()
        order = {}
        out = np.empty(flat.shape, dtype=np.int32)
        for i, v in enumerate(flat):
            k = order.setdefault(int(v), len(order) + 1)
            out[i] = k
        return CaccioppoliPartition(domain, out.reshape(raw.shape))


def perimeter(p: CaccioppoliPartition) -> float:
    """Facet-counting perimeter of a partition."""
    return p.perimeter


class PiecewiseRigidMotion:
    """Label-indexed family of rigid motions over a partition."""

    def __init__(self, partition: CaccioppoliPartition, motions: Sequence[RigidMotion]):
        if len(motions) != partition.piece_count:
            raise ValueError("need exactly one motion per partition label")
        self.partition = partition
        self.motions = tuple(motions)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        idx = self.partition.domain.cell_at(pts)
        lab = self.partition.labels[idx]
        out = np.empty_like(pts)
        for n, motion in enumerate(self.motions, start=1):
            mask = lab == n
            if mask.any():
                out[mask] = motion(pts[mask])
        return out

    def at_centers(self) -> np.ndarray:
        """Values at all cell centers as an ``(*shape, d)`` array."""
        dom = self.partition.domain
        centers = dom.centers().reshape(-1, dom.d)
        vals = self(centers)
        return vals.reshape(dom.shape + (dom.d,))


class DyadicGrid:
    """Disjoint half-open cubes of side ``delta0 * 2^-level`` tiling the box.

    Cubes are anchored at the domain corner: cube ``m`` covers
    ``lo + (m*delta, (m+1)*delta]`` per axis, kept when the open cube lies in
    the open box.  Anchoring at the corner makes level ``j+1`` an exact
    refinement of level ``j`` and matches cell boundaries whenever ``delta``
    is a multiple of ``h``.
    """

    def __init__(self, domain: Domain, delta0: float, level: int):
        if delta0 <= 0:
            raise ValueError("delta0 must be positive")
        if level < 0:
            raise ValueError("level must be nonnegative")
        delta = delta0 * 2.0 ** (-level)
        if delta < 2.0 * domain.h - 1e-12 * domain.h:
            raise ResolutionError(
                f"cube side {delta:.3e} below twice the grid spacing {domain.h:.3e}"
            )
        self.domain = domain
        self.delta0 = float(delta0)
        self.level = int(level)
        self.delta = float(delta)
        sides = domain.hi - domain.lo
        counts = np.floor(sides / delta + 1e-12).astype(int)
        self.counts = tuple(int(c) for c in counts)
        cubes = []
        if all(c > 0 for c in self.counts):
            ranges = [range(c) for c in self.counts]
            for m in itertools.product(*ranges):
                lo = domain.lo + np.array(m) * delta
                cubes.append((tuple(m), lo))
        self.index = tuple(m for m, _ in cubes)
        self._lo = np.array([lo for _, lo in cubes]).reshape(len(cubes), domain.d)

    def __len__(self):
        return len(self.index)

    def cube_box(self, i: int) -> np.ndarray:
        lo = self._lo[i]
        return np.stack([lo, lo + self.delta], axis=1)

    def cube_center(self, i: int) -> np.ndarray:
        return self._lo[i] + 0.5 * self.delta

    def cell_slices(self, i: int):
        """Per-axis slices of cells whose centers lie in the half-open cube."""
        dom = self.domain
        lo = self._lo[i]
        sl = []
        for a in range(dom.d):
            start = int(np.searchsorted(dom.axes[a], lo[a] + GEOM_TOL, side="left"))
            stop = int(
                np.searchsorted(dom.axes[a], lo[a] + self.delta + GEOM_TOL, side="left")
            )
            sl.append(slice(start, stop))
        return tuple(sl)

    def covered_mask(self) -> np.ndarray:
        """Boolean cell mask of the region covered by the cubes."""
        mask = np.zeros(self.domain.shape, dtype=bool)
        for i in range(len(self.index)):
            mask[self.cell_slices(i)] = True
        return mask

    def parent_index(self, finer: "DyadicGrid", i: int):
        """Index in this grid of the cube containing cube ``i`` of ``finer``."""
        if abs(2.0 * finer.delta - self.delta) > 1e-12 * self.delta:
            raise ValueError("expected the next refinement level of the same grid")
        m = finer.index[i]
        coarse = tuple(mi // 2 for mi in m)
        try:
            return self.index.index(coarse)
        except ValueError:
            return None


def dyadic_cubes(domain: Domain, delta0: float, level: int) -> DyadicGrid:
    """Dyadic cube grid at refinement ``level`` (lexicographic order)."""
    return DyadicGrid(domain, delta0, level)
