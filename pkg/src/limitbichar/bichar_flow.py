"""Arc-length parametrized bicharacteristics.

For homogeneous symbols the curve lives on the unit cosphere: the Hamilton
field is stripped of its radial fiber component (the radial field is tangent
to ``p = 0`` by Euler's identity) and then normalized. For local models with
``homogeneity_degree = None`` the field is ``H_p / |H_p|`` directly.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy.interpolate import CubicHermiteSpline

from .errors import ContractViolation, DegenerateHamiltonField
from .symbol_model import PhasePoint, SymbolModel, _as_vector, eval_principal, hamilton_field

K_MAX = 4
TOL_P = 1e-8

# Dormand-Prince 5(4) tableau
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


@dataclass
class Bicharacteristic:
    samples: np.ndarray  # (N, 2n)
    arc_params: np.ndarray
    orientation: int = 1
    family_index: int = 0
    truncated: bool = False
    dim: int = 2
    model_name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        self.arc_params = np.asarray(self.arc_params, dtype=float)
        if self.samples.shape[0] != self.arc_params.size:
            raise ContractViolation("one arc-length value per sample is required")
        if self.arc_params.size > 1 and np.any(np.diff(self.arc_params) <= 0):
            raise ContractViolation("arc-length values must be strictly increasing")

    @property
    def length(self) -> float:
        return float(self.arc_params[-1] - self.arc_params[0])

    @property
    def points(self) -> List[PhasePoint]:
        return [PhasePoint.from_array(w) for w in self.samples]

    def __len__(self):
        return self.arc_params.size

    def to_csv(self, model: Optional[SymbolModel] = None) -> str:
        return curves_to_csv([self], model)


def curves_to_csv(curves: Sequence[Bicharacteristic], model=None) -> str:
    """CSV with columns ``j, s, t, x1.., tau, xi1.., p, abs_Hp``.

    ``model`` may be a single model or one model per curve.
    """
    if not curves:
        return ""
    n = curves[0].dim
    head = ["j", "s", "t"] + [f"x{i}" for i in range(1, n)] + ["tau"]
    head += [f"xi{i}" for i in range(1, n)] + ["p", "abs_Hp"]
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(head)
    models = model if isinstance(model, (list, tuple)) else [model] * len(curves)
    for c, m in zip(curves, models):
        for s, w in zip(c.arc_params, c.samples):
            pv = eval_principal(m, w) if m is not None else float("nan")
            hv = float(np.linalg.norm(hamilton_field(m, w))) if m is not None else float("nan")
            wr.writerow([c.family_index] + [f"{v:.17g}" for v in (s, *w, pv, hv)])
    return buf.getvalue()


def is_conic(model: SymbolModel) -> bool:
    return model.homogeneity_degree is not None


def flow_field(model: SymbolModel, w: np.ndarray, threshold: Optional[float] = None) -> np.ndarray:
    """Unit tangent of the (cosphere-projected) bicharacteristic through ``w``."""
    n = model.dim
    thr = model.degeneracy_threshold if threshold is None else threshold
    h = hamilton_field(model, w)
    hn = float(np.linalg.norm(h))
    if hn < thr:
        raise DegenerateHamiltonField(f"|H_p| = {hn:.3e} below threshold", point=w, norm=hn)
    if is_conic(model):
        fib = w[n:]
        r2 = float(np.dot(fib, fib))
        h = h.copy()
        h[n:] -= (np.dot(h[n:], fib) / r2) * fib
        vn = float(np.linalg.norm(h))
        if vn < thr * max(1.0, hn):
            raise DegenerateHamiltonField("Hamilton field is radial", point=w, norm=vn)
        return h / vn
    return h / hn


def project(model: SymbolModel, w: np.ndarray, level: float = 0.0) -> np.ndarray:
    """One Newton step onto ``p = level`` followed by radial projection (conic models)."""
    g = model.gradient(w)
    g2 = float(np.dot(g, g))
    if g2 > 0:
        w = w - (eval_principal(model, w) - level) * g / g2
    if is_conic(model):
        n = model.dim
        r = np.linalg.norm(w[n:])
        if r > 0:
            w = w.copy()
            w[n:] /= r
    return w


def _dopri_step(f, y, h, k1):
    ks = [k1]
    for i in range(1, 7):
        yi = y + h * sum(a * k for a, k in zip(_A[i], ks))
        ks.append(f(yi))
    y5 = y + h * sum(b * k for b, k in zip(_B5, ks) if b)
    err = h * sum((b5 - b4) * k for b5, b4, k in zip(_B5, _B4, ks))
    return y5, err, ks[-1]


def _integrate(f, y0, length, rtol, atol, max_step, post=None, h0=None):
    """Adaptive DOPRI5 from 0 to ``length``; returns (ss, ys, truncated, exc)."""
    ss, ys = [0.0], [y0.copy()]
    s, y = 0.0, y0.copy()
    try:
        k1 = f(y)
    except DegenerateHamiltonField as e:
        return np.array(ss), np.array(ys), True, e
    h = min(max_step, length, h0 or 0.01 * max(length, 1e-3))
    while length - s > 1e-14 * max(1.0, length):
        h = min(h, length - s)
        try:
            y5, err, k7 = _dopri_step(f, y, h, k1)
        except DegenerateHamiltonField as e:
            if h < 1e-10 * max(length, 1.0):
                return np.array(ss), np.array(ys), True, e
            h *= 0.25
            continue
        sc = atol + rtol * np.maximum(np.abs(y), np.abs(y5))
        en = float(np.sqrt(np.mean((err / sc) ** 2)))
        if en <= 1.0:
            s += h
            y = post(y5) if post is not None else y5
            ss.append(s)
            ys.append(y.copy())
            try:
                k1 = f(y) if post is not None else k7
            except DegenerateHamiltonField as e:
                return np.array(ss), np.array(ys), True, e
            fac = 0.9 * en ** -0.2 if en > 0 else 5.0
            h = min(max_step, h * min(5.0, max(0.2, fac)))
        else:
            h *= max(0.1, 0.9 * en ** -0.2)
            if h < 1e-14 * max(length, 1.0):
                raise ContractViolation("step size underflow in bicharacteristic integration")
    if ss[-1] != length and abs(ss[-1] - length) < 1e-12 * max(1.0, length):
        ss[-1] = length
    return np.array(ss), np.array(ys), False, None


def _check_start(model, w):
    pv = eval_principal(model, w)
    g = np.linalg.norm(model.gradient(w))
    if abs(pv) > 1e-6 * max(1.0, g):
        raise ContractViolation(f"start point is off the characteristic set: p = {pv:.3e}")
    if is_conic(model):
        if np.linalg.norm(w[model.dim :]) == 0:
            raise ContractViolation("start point has zero fiber")
    for _ in range(3):
        w = project(model, w)
    return w


def integrate_bicharacteristic(
    model: SymbolModel,
    start,
    length: float,
    step_control=(1e-10, 1e-10),
    orientation: int = 1,
    family_index: int = 0,
    max_step: Optional[float] = None,
) -> Bicharacteristic:
    """Integrate ``dgamma/ds = orientation * H_p~`` for arc length ``length``.

    ``step_control`` is ``(atol, rtol)``. Each accepted step is followed by one
    Newton correction onto ``p = 0`` and, for conic models, onto ``|(tau, xi)| = 1``.
    A curve hitting ``|H_p| < threshold`` is returned truncated with ``truncated=True``.
    """
    if orientation not in (1, -1):
        raise ContractViolation("orientation must be +1 or -1")
    if not length > 0:
        raise ContractViolation("length must be positive")
    w0 = start.as_array() if isinstance(start, PhasePoint) else _as_vector(start, model.dim)
    w0 = _check_start(model, w0.astype(float))
    h = np.linalg.norm(hamilton_field(model, w0))
    if h < model.degeneracy_threshold:
        raise DegenerateHamiltonField("start point is in the double characteristics", point=w0, norm=h)
    atol, rtol = step_control
    ms = max_step if max_step is not None else min(0.02, length / 16)

    def f(w):
        return orientation * flow_field(model, w)

    ss, ys, trunc, exc = _integrate(f, w0, length, rtol, atol, ms, post=lambda w: project(model, w))
    meta = {}
    if trunc and exc is not None:
        meta["truncation_reason"] = str(exc)
    return Bicharacteristic(ys, ss, orientation, family_index, trunc, model.dim, model.name, meta)


def flow_point(model: SymbolModel, w, ds: float, orientation: int = 1, tol: float = 1e-12) -> np.ndarray:
    """Point reached from ``w`` after arc length ``ds`` (no sampling)."""
    w = np.asarray(w, dtype=float)
    if ds == 0:
        return w.copy()
    o = orientation if ds > 0 else -orientation
    _, ys, trunc, exc = _integrate(
        lambda v: o * flow_field(model, v), w, abs(ds), tol, tol, abs(ds), post=lambda v: project(model, v)
    )
    if trunc:
        raise exc
    return ys[-1]


def reparametrize(
    curve: Bicharacteristic, grid, model: Optional[SymbolModel] = None, project_back: bool = True
) -> Bicharacteristic:
    """Cubic Hermite resampling at arc-length values ``grid``.

    With a model the derivative data is the flow field and the resampled points
    are projected back onto ``p = 0`` (and the cosphere). Without one, the
    derivative is taken from finite differences of the samples.
    """
    grid = np.asarray(grid, dtype=float)
    s = curve.arc_params
    span = max(1.0, abs(s[-1]))
    if grid.size == 0 or grid.min() < s[0] - 1e-12 * span or grid.max() > s[-1] + 1e-12 * span:
        raise ContractViolation("resampling grid outside the curve's arc-length range")
    grid = np.clip(grid, s[0], s[-1])
    if len(curve) < 2:
        raise ContractViolation("cannot resample a single-point curve")
    if model is not None:
        d = np.array([curve.orientation * flow_field(model, w) for w in curve.samples])
    else:
        d = np.gradient(curve.samples, s, axis=0)
    spl = CubicHermiteSpline(s, curve.samples, d, axis=0)
    new = spl(grid)
    # keep exact samples where the grid hits a sample
    idx = np.searchsorted(s, grid)
    for k, (g, i) in enumerate(zip(grid, idx)):
        for j in (i - 1, i):
            if 0 <= j < s.size and g == s[j]:
                new[k] = curve.samples[j]
                break
        else:
            if model is not None and project_back:
                new[k] = project(model, new[k])
    return Bicharacteristic(new, grid, curve.orientation, curve.family_index, curve.truncated, curve.dim,
                            curve.model_name, dict(curve.meta))


def unit_normal(model: SymbolModel) -> Callable[[np.ndarray], np.ndarray]:
    """``grad p~ = grad p / |grad p|`` on ``p = 0``."""

    def q(w):
        g = model.gradient(w)
        return g / np.linalg.norm(g)

    return q


def _chop(coef: np.ndarray, tol: float) -> np.ndarray:
    """Drop the trailing Chebyshev coefficients below ``tol`` times the largest one."""
    mag = np.max(np.abs(coef.reshape(coef.shape[0], -1)), axis=1)
    big = mag.max()
    if big == 0:
        return coef[:1]
    keep = np.nonzero(mag > tol * big)[0]
    last = int(keep[-1]) if keep.size else 0
    return coef[: last + 1]


def flow_series(model: SymbolModel, curve: Bicharacteristic, quantity, nodes: int = 48, chop_tol: float = 1e-11):
    """Chopped Chebyshev series in arc length of ``quantity`` along ``curve``.

    The curve is re-evaluated at Chebyshev points (each by a short
    high-accuracy integration from the nearest sample). Returns
    ``(coef, (s0, s1), shape)`` with ``coef`` of shape ``(deg + 1, m)``.
    """
    if len(curve) < 2 or curve.length <= 0:
        raise ContractViolation("curve too short for differentiation")
    s0, s1 = curve.arc_params[0], curve.arc_params[-1]
    xs = np.cos(np.pi * np.arange(nodes)[::-1] / (nodes - 1))
    sn = s0 + (xs + 1) * (s1 - s0) / 2
    idx = np.clip(np.searchsorted(curve.arc_params, sn) - 1, 0, len(curve) - 1)
    pts = []
    for sv, i in zip(sn, idx):
        ds = sv - curve.arc_params[i]
        pts.append(flow_point(model, curve.samples[i], ds, curve.orientation) if ds > 0 else curve.samples[i])
    vals = np.array([np.asarray(quantity(w), dtype=float) for w in pts])
    shape = vals.shape[1:]
    coef = _chop(C.chebfit(xs, vals.reshape(nodes, -1), nodes - 1), chop_tol)
    return coef, (s0, s1), shape


def eval_series_derivative(series, k: int, at) -> np.ndarray:
    coef, (s0, s1), shape = series
    d = C.chebder(coef, k, scl=2.0 / (s1 - s0)) if k else coef
    if d.shape[0] == 0:
        d = np.zeros((1, coef.shape[1]))
    at = np.asarray(at, dtype=float)
    res = C.chebval(2 * (at - s0) / (s1 - s0) - 1, d)
    return np.moveaxis(np.atleast_2d(res), -1, 0).reshape((at.size,) + shape)


def derivative_along_flow(
    model: SymbolModel,
    curve: Bicharacteristic,
    quantity: Callable[[np.ndarray], np.ndarray],
    k: int,
    k_max: int = K_MAX,
    nodes: int = 48,
    chop_tol: float = 1e-11,
    at=None,
    series=None,
) -> np.ndarray:
    """``H_p~^k`` applied to ``quantity`` along ``curve``.

    The quantity is expanded in a chopped Chebyshev series in arc length (see
    ``flow_series``) which is differentiated ``k`` times. Returns values at the
    curve samples, or at arc lengths ``at``. A precomputed ``series`` may be passed.
    """
    if not 0 <= k <= k_max:
        raise ContractViolation(f"order {k} outside 0..{k_max}")
    if len(curve) < 2 or curve.length <= 0:
        raise ContractViolation("curve too short for differentiation")
    if len(curve) < k + 2:
        raise ContractViolation(f"curve has {len(curve)} samples, too few for order {k}")
    out_s = curve.arc_params if at is None else np.asarray(at, dtype=float)
    if k == 0 and at is None:
        return np.array([np.asarray(quantity(w), dtype=float) for w in curve.samples])
    if series is None:
        series = flow_series(model, curve, quantity, nodes, chop_tol)
    return eval_series_derivative(series, k, out_s)
