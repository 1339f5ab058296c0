"""Sturm-Liouville expressions and the (u, pu') first-order system.

tau u = (1/r)(-(p u')' + q u) acts on a half line [a, b) with a regular and
b possibly infinite. Trajectories carry dense output so that zeros, sign
flips and Wronskians can be evaluated anywhere in the sweep range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import expressions as ex
from . import kernels as kn
from .errors import (IntervalMismatch, IoError, NonPositiveSolution,
                     WeightMismatch)
from .integrate import ATOL, RTOL, VANISH_TOL, WRONSKIAN_DRIFT_TOL, SystemDef, integrate

TOL_PERIODICITY = 1e-9
X_MAX_DEFAULT = 1.0e6


class Coefficient:
    """One coefficient: an expression tree evaluable on scalars and arrays."""

    def __init__(self, expr: ex.Expr):
        self.expr = expr

    @classmethod
    def from_text(cls, text: str, params: dict | None = None) -> "Coefficient":
        e = ex.parse(text)
        if params:
            e = ex.subst(e, params)
        return cls(e)

    @classmethod
    def from_grid(cls, xs, ys, period: float | None = None) -> "Coefficient":
        return cls(ex.interp(ex.InterpTable(xs, ys, period)))

    @classmethod
    def constant(cls, v: float) -> "Coefficient":
        return cls(ex.const(v))

    def __call__(self, x):
        return ex.evaluate(self.expr, x)

    def derivative(self) -> "Coefficient":
        return Coefficient(ex.diff(self.expr))

    def is_zero(self) -> bool:
        e = self.expr
        return e.op == "const" and e.val == 0.0


def as_coefficient(v) -> Coefficient:
    if isinstance(v, Coefficient):
        return v
    if isinstance(v, ex.Expr):
        return Coefficient(v)
    if isinstance(v, str):
        return Coefficient.from_text(v)
    if isinstance(v, (int, float)):
        return Coefficient.constant(float(v))
    raise TypeError(f"cannot interpret {v!r} as a coefficient")


@dataclass
class CoefficientSet:
    """(p, q, r) with interval and periodicity metadata. Immutable by convention."""

    p: Coefficient
    q: Coefficient
    r: Coefficient
    interval: tuple  # (a, b), b may be math.inf
    period: float | None = None
    label: str = ""
    limit_point_at_b: bool = True  # recorded assumption, not verified

    def __post_init__(self):
        self.p = as_coefficient(self.p)
        self.q = as_coefficient(self.q)
        self.r = as_coefficient(self.r)
        a, b = self.interval
        if not math.isfinite(a):
            raise IntervalMismatch("left endpoint must be finite (regular)")
        if b <= a:
            raise IntervalMismatch("interval must satisfy a < b")

    def validate(self, n_check: int = 64) -> None:
        """Positivity of p, r on a probe grid plus periodicity if declared."""
        a, b = self.interval
        hi = min(b, max(a + 1.0, 100.0 * (abs(a) + 1.0)))
        xs = np.linspace(a + 1e-9 * (hi - a) + 1e-12, hi, n_check)
        pv = self.p(xs)
        rv = self.r(xs)
        from .errors import NonIntegrableCoefficient
        if not np.all(pv > 0.0) or not np.all(rv > 0.0):
            raise NonIntegrableCoefficient(f"p or r not positive on probe grid of {self.label or 'coefficients'}")
        if self.period:
            ell = self.period
            xs = np.linspace(a, a + ell, 17)
            for f in (self.p, self.q, self.r):
                dev = np.max(np.abs(f(xs + ell) - f(xs)))
                if dev > TOL_PERIODICITY * (1.0 + np.max(np.abs(f(xs)))):
                    raise IntervalMismatch(f"declared period {ell} violated (drift {dev:.2e})")

    def shifted(self, dx: float) -> "CoefficientSet":
        """Coefficients of x -> x + dx (base-point change)."""
        a, b = self.interval
        return CoefficientSet(
            Coefficient(ex.shift_x(self.p.expr, dx)),
            Coefficient(ex.shift_x(self.q.expr, dx)),
            Coefficient(ex.shift_x(self.r.expr, dx)),
            (a - dx, b - dx if math.isfinite(b) else b),
            self.period, self.label, self.limit_point_at_b)


def free_coefficients(interval=(0.0, math.inf), label="free") -> CoefficientSet:
    return CoefficientSet(Coefficient.constant(1.0), Coefficient.constant(0.0),
                          Coefficient.constant(1.0), interval, label=label)


@dataclass
class DeltaCoefficients:
    """Delta p = 1/p0 - 1/p1 and Delta q = q1 - q0 of a perturbation pair."""

    delta_p: Coefficient
    delta_q: Coefficient

    def dp_is_zero(self) -> bool:
        if self.delta_p.is_zero():
            return True
        xs = np.linspace(1.0, 64.0, 33)
        try:
            return float(np.max(np.abs(self.delta_p(xs)))) == 0.0
        except Exception:
            return False


class SolutionTrajectory:
    """A solution (u, pu') with dense output over one sweep range."""

    def __init__(self, coeffs: CoefficientSet, lam: float, init, x0: float, x1: float,
                 u_fn, w_fn, samples: np.ndarray, base=None):
        self.coeffs = coeffs
        self.lam = lam
        self.init = (float(init[0]), float(init[1]))
        self.x0 = float(x0)
        self.x1 = float(x1)
        self._u = u_fn
        self._w = w_fn
        self.samples = samples  # rows (x, u, pu')
        self.base = base        # underlying Solution, when available

    def u(self, x):
        return self._u(x)

    def pu(self, x):
        return self._w(x)

    @property
    def range(self):
        return (min(self.x0, self.x1), max(self.x0, self.x1))

    def __repr__(self):
        return (f"SolutionTrajectory(lam={self.lam}, init={self.init}, "
                f"range=[{self.x0:.6g}, {self.x1:.6g}], steps={self.samples.shape[0] - 1})")


class CallableTrajectory:
    """A solution known in closed form; same interface as SolutionTrajectory."""

    def __init__(self, coeffs: CoefficientSet, lam: float, u_fn, w_fn, rng,
                 label: str = "analytic"):
        self.coeffs = coeffs
        self.lam = float(lam)
        self._u = u_fn
        self._w = w_fn
        self.x0, self.x1 = float(rng[0]), float(rng[1])
        self.label = label
        self.base = None

    @classmethod
    def from_expr(cls, coeffs: CoefficientSet, lam: float, u_expr, rng,
                  w_expr=None, label: str = "analytic") -> "CallableTrajectory":
        """Build from an expression for u; p u' is derived symbolically if absent."""
        ue = as_coefficient(u_expr).expr
        we = as_coefficient(w_expr).expr if w_expr is not None else ex.mul(coeffs.p.expr, ex.diff(ue))
        return cls(coeffs, lam, lambda x: ex.evaluate(ue, x),
                   lambda x: ex.evaluate(we, x), rng, label)

    def u(self, x):
        return self._u(x)

    def pu(self, x):
        return self._w(x)

    @property
    def range(self):
        return (min(self.x0, self.x1), max(self.x0, self.x1))

    def residual(self, xs, h: float = 1e-5) -> float:
        """max |(pu')' - (q - lam r) u| by centered differences; sanity probe."""
        xs = np.asarray(xs, dtype=float)
        dw = (self.pu(xs + h) - self.pu(xs - h)) / (2.0 * h)
        rhs = (self.coeffs.q(xs) - self.lam * self.coeffs.r(xs)) * self.u(xs)
        return float(np.max(np.abs(dw - rhs)))

    def __repr__(self):
        return (f"CallableTrajectory({self.label}, lam={self.lam}, "
                f"range=[{self.x0:.6g}, {self.x1:.6g}])")


def _system_for(coeffs: CoefficientSet, lam: float, kind: int, extra=None,
                params_extra=None) -> SystemDef:
    exprs = [coeffs.p.expr, coeffs.q.expr, coeffs.r.expr]
    if extra:
        exprs.extend(extra)
    params = [lam] + list(params_extra or [])
    return SystemDef(kind, exprs, params)


def integrate_sl(coeffs: CoefficientSet, lam: float, init, x0: float, x1: float,
                 tol: float = RTOL, *, atol: float = ATOL,
                 x_eval=None, max_step: float = math.inf) -> SolutionTrajectory:
    """Integrate tau u = lam u as the system u' = w/p, w' = (q - lam r) u."""
    u0, w0 = float(init[0]), float(init[1])
    if math.hypot(u0, w0) <= VANISH_TOL:
        raise ValueError("init must be a nontrivial state")
    sysd = _system_for(coeffs, lam, kn.K_SL)
    sol = integrate(sysd, [u0, w0], x0, x1, rtol=tol, atol=atol,
                    x_eval=x_eval, max_step=max_step)
    samples = np.column_stack([sol.xs, sol.ys[:, 0], sol.ys[:, 1]])
    return SolutionTrajectory(coeffs, lam, init, x0, x1,
                              lambda x: sol.eval(x, 0), lambda x: sol.eval(x, 1),
                              samples, base=sol)


def dalembert_second_solution(coeffs: CoefficientSet, u0: SolutionTrajectory,
                              a0: float, tol: float = RTOL) -> SolutionTrajectory:
    """v0 = u0 * int_{a0}^x dt/(p u0^2); requires u0 > 0 past a0.

    The quadrature rides along as a third state component so the step
    controller sees it. Returns the principal-normalized companion with
    W(u0, v0) = 1.
    """
    x1 = u0.x1
    ua, wa = float(u0.u(a0)), float(u0.pu(a0))
    sysd = _system_for(coeffs, u0.lam, kn.K_SL_DAL)
    sol = integrate(sysd, [ua, wa, 0.0], a0, x1, rtol=tol, atol=ATOL)
    if np.any(sol.ys[:, 0] <= 0.0):
        raise NonPositiveSolution("u0 is not strictly positive on [a0, x1]")

    def v(x):
        y = np.asarray(sol.eval(x))
        return y[..., 0] * y[..., 2]

    def wv(x):
        # pv' = pu' * I + 1/u0
        y = np.asarray(sol.eval(x))
        return y[..., 1] * y[..., 2] + 1.0 / y[..., 0]

    samples = np.column_stack([sol.xs, sol.ys[:, 0] * sol.ys[:, 2],
                               sol.ys[:, 1] * sol.ys[:, 2] + 1.0 / sol.ys[:, 0]])
    init = (samples[0, 1], samples[0, 2])
    return SolutionTrajectory(coeffs, u0.lam, init, a0, x1, v, wv, samples, base=sol)


def rofe_beketov_second_solution(coeffs: CoefficientSet, u0: SolutionTrajectory,
                                 E: float, tol: float = RTOL) -> SolutionTrajectory:
    """Second solution regular through zeros of u0.

    v0 = u0 * I - w0/(u0^2 + w0^2) with
    I(x) = int (q + 1/p - E r)(u0^2 - w0^2)/(u0^2 + w0^2)^2 dt, and the
    quasi-derivative pv0' = w0 * I + u0/(u0^2 + w0^2), which gives
    W(u0, v0) = 1 identically.
    """
    x0, x1 = u0.x0, u0.x1
    ua, wa = float(u0.u(x0)), float(u0.pu(x0))
    sysd = _system_for(coeffs, E, kn.K_SL_ROFE)
    sol = integrate(sysd, [ua, wa, 0.0], x0, x1, rtol=tol, atol=ATOL)

    def v(x):
        y = np.asarray(sol.eval(x))
        n = y[..., 0] ** 2 + y[..., 1] ** 2
        return y[..., 0] * y[..., 2] - y[..., 1] / n

    def wv(x):
        y = np.asarray(sol.eval(x))
        n = y[..., 0] ** 2 + y[..., 1] ** 2
        return y[..., 1] * y[..., 2] + y[..., 0] / n

    nrm = sol.ys[:, 0] ** 2 + sol.ys[:, 1] ** 2
    samples = np.column_stack([sol.xs, sol.ys[:, 0] * sol.ys[:, 2] - sol.ys[:, 1] / nrm,
                               sol.ys[:, 1] * sol.ys[:, 2] + sol.ys[:, 0] / nrm])
    init = (samples[0, 1], samples[0, 2])
    return SolutionTrajectory(coeffs, E, init, x0, x1, v, wv, samples, base=sol)


def make_delta(c0: CoefficientSet, c1: CoefficientSet,
               r_tol: float = 1e-9) -> DeltaCoefficients:
    """Delta coefficients of the pair; both sets must share interval and r."""
    if c0.interval != c1.interval:
        raise IntervalMismatch(f"{c0.interval} vs {c1.interval}")
    a, b = c0.interval
    hi = min(b, max(a + 1.0, 1e3))
    xs = np.linspace(a + 1e-9 + 1e-9 * abs(a), hi, 48)
    r0, r1 = c0.r(xs), c1.r(xs)
    if np.max(np.abs(r0 - r1)) > r_tol * (1.0 + np.max(np.abs(r0))):
        raise WeightMismatch("weights r differ; the comparison fixes one r")
    dq = ex.sub(c1.q.expr, c0.q.expr)
    dp = ex.sub(ex.div(ex.const(1.0), c0.p.expr), ex.div(ex.const(1.0), c1.p.expr))
    return DeltaCoefficients(Coefficient(dp), Coefficient(dq))


def essential_gap_precheck(c0: CoefficientSet, c1: CoefficientSet,
                           x_max: float = X_MAX_DEFAULT, tol: float = 1e-3) -> bool:
    """Necessary condition for shared essential spectrum / gap preservation.

    Checks (q0 - q1)/r -> 0 and p1/p0 -> 1 along a geometric tail grid.
    """
    a, _ = c0.interval
    lo = max(a + 1.0, 1.0)
    xs = np.geomspace(lo, x_max, 40)
    h1 = np.abs((c0.q(xs) - c1.q(xs)) / c0.r(xs))
    h2 = np.abs(c1.p(xs) / c0.p(xs) - 1.0)
    tail1 = h1[-5:]
    tail2 = h2[-5:]
    head1 = np.max(h1[:5]) if np.max(h1[:5]) > 0 else 1.0
    going_down = np.max(tail1) <= max(tol, 0.5 * head1)
    return bool(going_down and np.max(tail1) < tol * 10 and np.max(tail2) < tol)


def wronskian_drift(t1: SolutionTrajectory, t2: SolutionTrajectory,
                    n_probe: int = 200) -> float:
    """Max relative drift of W(t1, t2) over the shared range (same coeffs, same lam)."""
    lo = max(min(t1.x0, t1.x1), min(t2.x0, t2.x1))
    hi = min(max(t1.x0, t1.x1), max(t2.x0, t2.x1))
    xs = np.linspace(lo, hi, n_probe)
    w = t1.u(xs) * t2.pu(xs) - t1.pu(xs) * t2.u(xs)
    w0 = w[0]
    return float(np.max(np.abs(w - w0)) / (1.0 + abs(w0)))


def dump_trajectory(traj: SolutionTrajectory, path, n: int = 1000) -> None:
    """CSV dump with header x,u,pu on an even grid over the sweep range."""
    lo, hi = traj.range
    xs = np.linspace(lo, hi, n)
    us = traj.u(xs)
    ws = traj.pu(xs)
    try:
        with open(path, "w", newline="\n") as f:
            f.write("x,u,pu\n")
            for row in zip(xs, us, ws):
                f.write(",".join(format(v, ".17g") for v in row) + "\n")
    except OSError as e:
        raise IoError(str(e)) from e
