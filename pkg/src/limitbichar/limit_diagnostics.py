"""Diagnostics on families of bicharacteristics approaching the double characteristics."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import cumulative_simpson

from .bichar_flow import K_MAX, Bicharacteristic, derivative_along_flow, flow_series, unit_normal
from .errors import ContractViolation, NormalizationDegenerate
from .symbol_model import SymbolModel, eval_subprincipal, hamilton_field

NOISE_FLOOR = 1e-12
MIN_SLOPE = 0.2
C_FACTOR = 10.0


class Direction(str, Enum):
    MINUS_TO_PLUS = "MinusToPlus"
    PLUS_TO_MINUS = "PlusToMinus"


class Verdict(str, Enum):
    WITNESS = "NonSolvabilityWitness"
    NO_WITNESS = "NoWitness"


@dataclass
class SignChange:
    s: float
    direction: Direction
    point: Optional[List[float]] = None


@dataclass
class FamilyDiagnostics:
    j: int
    kappa: float
    ck_bounds: List[float]
    curvature_bound: Optional[float]
    cond2_value: float
    start_point: List[float]
    sign_change: Optional[SignChange]
    lam: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        if self.sign_change is not None:
            d["sign_change"]["direction"] = self.sign_change.direction.value
        return d


@dataclass
class FamilyReport:
    diagnostics: List[FamilyDiagnostics]
    verdict: Verdict
    eps: float
    reasons: List[str] = field(default_factory=list)
    thresholds: dict = field(default_factory=dict)
    cond2_slope: float = float("nan")

    def to_json(self) -> str:
        out = {
            "verdict": self.verdict.value,
            "eps": self.eps,
            "cond2_slope": self.cond2_slope,
            "reasons": self.reasons,
            "thresholds": self.thresholds,
            "curves": [d.to_dict() for d in self.diagnostics],
        }
        return json.dumps(out, indent=2, sort_keys=True, default=_jsonable)

    def to_csv(self) -> str:
        kmax = max((len(d.ck_bounds) for d in self.diagnostics), default=0)
        head = ["j", "kappa", "lambda", "cond2_value", "curvature_bound"]
        head += [f"ck{k}" for k in range(1, kmax + 1)] + ["sign_change_s", "sign_change_direction"]
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(head)
        for d in self.diagnostics:
            sc = d.sign_change
            row = [d.j, _g(d.kappa), _g(d.lam), _g(d.cond2_value), _g(d.curvature_bound)]
            row += [_g(v) for v in d.ck_bounds] + ["" if sc is None else _g(sc.s), "" if sc is None else sc.direction.value]
            wr.writerow(row)
        return buf.getvalue()


def _g(v):
    return "" if v is None else f"{v:.17g}"


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Enum):
        return o.value
    raise TypeError(type(o))


def _hp_norms(model, curve):
    return np.array([np.linalg.norm(hamilton_field(model, w)) for w in curve.samples])


def kappa_min(model: SymbolModel, curve: Bicharacteristic) -> float:
    """Minimum of ``|H_p|`` over the curve, refined by a parabola through the discrete argmin."""
    h = _hp_norms(model, curve)
    i = int(np.argmin(h))
    best = float(h[i])
    if 0 < i < h.size - 1:
        s = curve.arc_params[i - 1 : i + 2]
        a, b, c = np.polyfit(s - s[1], h[i - 1 : i + 2], 2)
        if a > 0:
            sv = -b / (2 * a)
            if s[0] - s[1] <= sv <= s[2] - s[1]:
                best = min(best, max(float(c - b * b / (4 * a)), 0.0))
    return best


def _is_closed(curve: Bicharacteristic) -> bool:
    w = curve.samples
    scale = max(1.0, float(np.abs(w).max()))
    return len(curve) > 2 and curve.length > 0 and np.abs(w[-1] - w[0]).max() <= 1e-8 * scale


def running_integral(model: SymbolModel, curve: Bicharacteristic) -> np.ndarray:
    """``J(s) = int_0^s Im p0 / |H_p| ds'`` along the curve (composite Simpson)."""
    f = np.array([eval_subprincipal(model, w).imag for w in curve.samples]) / _hp_norms(model, curve)
    if len(curve) < 3:
        return np.concatenate([[0.0], np.cumsum(np.diff(curve.arc_params) * (f[1:] + f[:-1]) / 2)])
    return cumulative_simpson(f, x=curve.arc_params, initial=0.0)


def cond2_integral(
    model: SymbolModel,
    curve: Bicharacteristic,
    start_policy: str = "ArgminRunningIntegral",
    kappa: Optional[float] = None,
) -> Tuple[float, np.ndarray]:
    """Normalized growth functional and the start point ``w_j``.

    With ``J`` the running integral and ``s*`` its minimizer, the integrals from
    ``w_j = gamma(s*)`` to the two endpoints are ``J(s0) - J(s*)`` and
    ``J(s1) - J(s*)``; the value is the smaller one over ``|log kappa|``.
    ``start_policy="Start"`` integrates from the first sample instead.
    """
    if _is_closed(curve):
        raise ContractViolation("closed curves have no boundary; the endpoint minimum is undefined")
    k = kappa_min(model, curve) if kappa is None else float(kappa)
    if not k > 0:
        raise NormalizationDegenerate("kappa must be positive")
    lk = abs(np.log(k))
    if lk < 1e-6:
        raise NormalizationDegenerate(f"|log kappa| = {lk:.2e} is too small to normalize by")
    J = running_integral(model, curve)
    if start_policy == "ArgminRunningIntegral":
        i = int(np.argmin(J))
    elif start_policy == "Start":
        i = 0
    else:
        raise ContractViolation(f"unknown start policy {start_policy!r}")
    vals = (J[0] - J[i], J[-1] - J[i])
    if i == 0:
        vals = (J[-1] - J[i],)
    elif i == len(J) - 1:
        vals = (J[0] - J[i],)
    return float(min(vals)) / lk, curve.samples[i].copy()


def sign_change_detect(
    model: SymbolModel,
    curve: Bicharacteristic,
    floor: float = NOISE_FLOOR,
    values: Optional[np.ndarray] = None,
) -> Optional[SignChange]:
    """First robust sign change of ``Im p0`` along the curve, if any."""
    v = values if values is not None else np.array([eval_subprincipal(model, w).imag for w in curve.samples])
    sig = np.nonzero(np.abs(v) > floor)[0]
    for a, b in zip(sig[:-1], sig[1:]):
        if np.sign(v[a]) != np.sign(v[b]):
            sa, sb = curve.arc_params[a], curve.arc_params[b]
            s0 = sa + (sb - sa) * v[a] / (v[a] - v[b])
            d = Direction.MINUS_TO_PLUS if v[a] < 0 else Direction.PLUS_TO_MINUS
            wa, wb = curve.samples[a], curve.samples[b]
            pt = wa + (wb - wa) * (s0 - sa) / (sb - sa)
            return SignChange(float(s0), d, pt.tolist())
    return None


SectionLike = Union[Sequence[np.ndarray], Callable[[np.ndarray], np.ndarray]]


def _section_bases(section, curve) -> List[np.ndarray]:
    if section is None:
        raise ContractViolation("curvature bound needs a Lagrangean section")
    if callable(section):
        return [np.asarray(section(w), dtype=float) for w in curve.samples]
    if hasattr(section, "bases"):
        section = section.bases
    bases = [np.asarray(b, dtype=float) for b in section]
    if len(bases) != len(curve):
        raise ContractViolation(f"section has {len(bases)} planes for {len(curve)} samples")
    return bases


def curvature_bound(model: SymbolModel, curve: Bicharacteristic, section: SectionLike) -> float:
    """``max_s ||Pi Hess p|_L|| / |grad p|`` with ``Pi`` the projection orthogonal to ``grad p``.

    ``section`` supplies a ``2n x m`` spanning matrix of ``L_j(w)`` per sample,
    either as a sequence, an object with ``.bases`` or a callable of ``w``.
    """
    best = 0.0
    for w, basis in zip(curve.samples, _section_bases(section, curve)):
        q, _ = np.linalg.qr(basis)
        g = model.gradient(w)
        gn = np.linalg.norm(g)
        u = g / gn
        m = model.hessian(w) @ q
        m = m - np.outer(u, u @ m)
        best = max(best, float(np.linalg.norm(m, 2)) / gn)
    return best


def ck_bounds(model: SymbolModel, curve: Bicharacteristic, k_max: int = K_MAX) -> List[float]:
    q = unit_normal(model)
    ser = flow_series(model, curve, q)
    return [
        float(np.max(np.linalg.norm(derivative_along_flow(model, curve, q, k, k_max=k_max, series=ser), axis=1)))
        for k in range(1, k_max + 1)
    ]


def lambda_of_kappa(kappa: float, eps: float) -> float:
    return float(kappa ** (-1.0 / eps))


def diagnose_curve(model, curve, eps, section=None, k_max=K_MAX, kappa_override=None) -> FamilyDiagnostics:
    kap = kappa_min(model, curve)
    kn = kap if kappa_override is None else kappa_override
    val, w = cond2_integral(model, curve, kappa=kn)
    return FamilyDiagnostics(
        j=curve.family_index,
        kappa=kap,
        ck_bounds=ck_bounds(model, curve, k_max),
        curvature_bound=None if section is None else curvature_bound(model, curve, section),
        cond2_value=val,
        start_point=w.tolist(),
        sign_change=sign_change_detect(model, curve),
        lam=lambda_of_kappa(kn, eps),
    )


def tail_slope(j, values) -> float:
    """Least-squares slope of ``values`` against ``j`` over the last half of the family."""
    j = np.asarray(j, dtype=float)
    v = np.asarray(values, dtype=float)
    h = max(2, (j.size + 1) // 2)
    return float(np.polyfit(j[-h:], v[-h:], 1)[0])


def family_report(
    models: Union[SymbolModel, Sequence[SymbolModel]],
    curves: Sequence[Bicharacteristic],
    eps: float,
    sections: Optional[Sequence[SectionLike]] = None,
    c_bound: Optional[float] = None,
    c_factor: float = C_FACTOR,
    min_slope: float = MIN_SLOPE,
    k_max: int = K_MAX,
    kappa_overrides: Optional[Sequence[float]] = None,
    workers: int = 1,
) -> FamilyReport:
    """Per-curve diagnostics and the witness verdict for a family ``{Gamma_j}``.

    ``models`` is one model for all curves or one per curve (families of symbols).
    Boundedness uses ``c_bound`` if given, otherwise ``c_factor`` times the
    first curve's value (with an absolute floor of 1).
    """
    if not curves:
        raise ContractViolation("empty family")
    ms = list(models) if isinstance(models, (list, tuple)) else [models] * len(curves)
    if len(ms) != len(curves):
        raise ContractViolation("need one model per curve")
    secs = list(sections) if sections is not None else [None] * len(curves)
    kos = list(kappa_overrides) if kappa_overrides is not None else [None] * len(curves)

    def one(i):
        return diagnose_curve(ms[i], curves[i], eps, secs[i], k_max, kos[i])

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as ex:
            diags = list(ex.map(one, range(len(curves))))
    else:
        diags = [one(i) for i in range(len(curves))]

    reasons = []
    kap = np.array([d.kappa for d in diags])
    if kap.size < 2 or np.any(np.diff(kap) >= 0):
        reasons.append("kappa_j is not strictly decreasing")
    ck = np.array([d.ck_bounds for d in diags])
    first = ck[0]
    lim = np.full_like(first, c_bound) if c_bound is not None else c_factor * np.maximum(first, 1.0)
    for k in range(ck.shape[1]):
        if np.any(ck[:, k] > lim[k]):
            jbad = int(np.argmax(ck[:, k] > lim[k]))
            reasons.append(f"C^k bound violated at order {k + 1} from j={diags[jbad].j} ({ck[jbad, k]:.3e} > {lim[k]:.3e})")
    thresholds = {"ck": lim.tolist(), "min_slope": min_slope}
    if diags[0].curvature_bound is not None:
        cv = np.array([d.curvature_bound for d in diags])
        clim = c_bound if c_bound is not None else c_factor * max(cv[0], 1.0)
        thresholds["curvature"] = clim
        if np.any(cv > clim):
            reasons.append(f"curvature bound exceeds {clim:.3e}")
    jj = [d.j for d in diags]
    slope = tail_slope(jj, [d.cond2_value for d in diags]) if len(diags) >= 2 else float("nan")
    if not slope >= min_slope:
        reasons.append(f"cond2 tail slope {slope:.3g} below {min_slope}")
    verdict = Verdict.WITNESS if not reasons else Verdict.NO_WITNESS
    return FamilyReport(diags, verdict, eps, reasons, thresholds, slope)
