"""Composite midpoint rules on space-time boxes, their faces and slices."""

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import NonFiniteError, ShapeError

INTERIOR, SPATIAL, INITIAL, INTERFACE = "interior", "spatial-boundary", "initial", "interface"


def _ro(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class QuadratureSet:
    """Points (rows are full space-time coordinates, time last) and weights.

    Spatial-boundary sets also carry ``twin`` (index of the matching point on
    the opposite face), ``face_axis`` and ``side`` (0 low, 1 high).
    """

    points: np.ndarray
    weights: np.ndarray
    measure: float
    kind: str
    resolution: tuple
    twin: Optional[np.ndarray] = None
    face_axis: Optional[np.ndarray] = None
    side: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "points", _ro(self.points))
        object.__setattr__(self, "weights", _ro(self.weights))
        for name in ("twin", "face_axis", "side"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, _ro(v, int))
        if self.points.ndim != 2 or len(self.points) != len(self.weights):
            raise ShapeError("points must be (M, D) with one weight per point")
        if np.any(self.weights <= 0):
            raise ValueError("quadrature weights must be positive")

    @property
    def M(self):
        return len(self.weights)

    @property
    def dim(self):
        return self.points.shape[1]


def _check_box(box):
    box = [(float(lo), float(hi)) for lo, hi in box]
    for k, (lo, hi) in enumerate(box):
        if not hi > lo:
            raise ValueError(f"degenerate box: axis {k} is [{lo}, {hi}]")
    return box


def _res(res, n):
    if np.isscalar(res):
        res = (int(res),) * n
    res = tuple(int(r) for r in res)
    if len(res) != n:
        raise ShapeError(f"need {n} per-axis resolutions, got {res}")
    if min(res) < 1:
        raise ValueError(f"resolutions must be >= 1, got {res}")
    return res


def midpoint_rule(box, res):
    """Cell midpoints and the common cell volume of a uniform tensor grid."""
    box = _check_box(box)
    res = _res(res, len(box))
    axes = [lo + (np.arange(r) + 0.5) * (hi - lo) / r for (lo, hi), r in zip(box, res)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1) if axes else np.zeros((1, 0))
    vol = math.prod((hi - lo) / r for (lo, hi), r in zip(box, res))
    return pts, np.full(len(pts), vol), math.prod(hi - lo for lo, hi in box), res


def midpoint_interior(space_box, T, res) -> QuadratureSet:
    """Midpoint rule on D x [0, T]; ``res`` lists counts for x_1..x_d then t."""
    box = list(space_box) + [(0.0, T)]
    pts, w, meas, res = midpoint_rule(box, res)
    return QuadratureSet(pts, w, meas, INTERIOR, res)


def midpoint_box(box, res, kind=INTERIOR) -> QuadratureSet:
    pts, w, meas, res = midpoint_rule(box, res)
    return QuadratureSet(pts, w, meas, kind, res)


class Interface(NamedTuple):
    """Axis-aligned slice x_axis = value; ``res`` covers the other spatial axes then t."""

    axis: int
    value: float
    res: tuple


class BoundarySets(NamedTuple):
    spatial: QuadratureSet
    initial: QuadratureSet
    interface: Optional[QuadratureSet]


def _slice(space_box, T, axis, value, res):
    """Midpoint points on {x_axis = value} x [0, T], embedded in full coordinates."""
    d = len(space_box)
    sub = [space_box[j] for j in range(d) if j != axis] + [(0.0, T)]
    pts, w, meas, res = midpoint_rule(sub, res)
    full = np.insert(pts, axis, value, axis=1)
    return full, w, meas, res


def boundary_sets(space_box, T, res, initial_res=None, interface: Interface = None) -> BoundarySets:
    """Spatial faces over dD x [0,T], the initial slice D x {0}, optional interface.

    ``res`` gives counts for x_1..x_d then t; each face uses the counts of the
    axes it spans. Faces come low then high per axis, both with the same point
    layout, so point k on a low face has its periodic twin at a fixed offset.
    """
    space_box = _check_box(space_box)
    d = len(space_box)
    res = _res(res, d + 1)
    pts, ws, twin, axis_of, side = [], [], [], [], []
    measure, count = 0.0, 0
    for i in range(d):
        face_res = tuple(res[j] for j in range(d) if j != i) + (res[d],)
        lo_pts, w, meas, _ = _slice(space_box, T, i, space_box[i][0], face_res)
        hi_pts = lo_pts.copy()
        hi_pts[:, i] = space_box[i][1]
        m = len(lo_pts)
        pts += [lo_pts, hi_pts]
        ws += [w, w]
        twin += [np.arange(count + m, count + 2 * m), np.arange(count, count + m)]
        axis_of.append(np.full(2 * m, i))
        side += [np.zeros(m, int), np.ones(m, int)]
        measure += 2 * meas
        count += 2 * m
    spatial = QuadratureSet(np.concatenate(pts), np.concatenate(ws), measure, SPATIAL, res,
                            twin=np.concatenate(twin), face_axis=np.concatenate(axis_of),
                            side=np.concatenate(side),
                            meta={"box": tuple(space_box), "T": float(T)})

    init_res = _res(initial_res if initial_res is not None else res[:d], d)
    ipts, iw, imeas, _ = midpoint_rule(space_box, init_res)
    initial = QuadratureSet(np.concatenate([ipts, np.zeros((len(ipts), 1))], axis=1), iw, imeas,
                            INITIAL, init_res)

    iface = None
    if interface is not None:
        ax, val = int(interface.axis), float(interface.value)
        lo, hi = space_box[ax]
        if not lo < val < hi:
            raise ValueError(f"interface x_{ax} = {val} is not inside ({lo}, {hi})")
        fpts, fw, fmeas, fres = _slice(space_box, T, ax, val, _res(interface.res, d))
        iface = QuadratureSet(fpts, fw, fmeas, INTERFACE, fres, meta={"axis": ax, "value": val})
    return BoundarySets(spatial, initial, iface)


def integrate_values(qset: QuadratureSet, values, name="integrand"):
    values = np.asarray(values, dtype=float)
    if values.shape[:1] != (qset.M,):
        raise ShapeError(f"{name}: expected {qset.M} values, got shape {values.shape}")
    bad = ~np.isfinite(values.reshape(qset.M, -1)).all(axis=1)
    if bad.any():
        k = int(np.argmax(bad))
        raise NonFiniteError(f"{name} is not finite at point {qset.points[k].tolist()} "
                             f"(index {k} of the {qset.kind} set)", [name], qset.points[k])
    return np.tensordot(qset.weights, values, axes=(0, 0))


def integrate(qset: QuadratureSet, f, name="integrand"):
    """Weighted midpoint sum of ``f`` (vectorised over the point rows)."""
    return integrate_values(qset, f(qset.points), name)


def quad_bound(c2_norm, M, dim, measure):
    """Midpoint error bound C_f M^{-2/dim} with C_f = (dim/24) |L|^{1+2/dim} c2_norm."""
    if M < 1:
        raise ValueError("need at least one point")
    cf = dim / 24.0 * measure ** (1.0 + 2.0 / dim) * c2_norm
    return cf * M ** (-2.0 / dim)
