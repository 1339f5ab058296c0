"""Boundedness of averaged phase equations.

Every relative oscillation question handled downstream reduces to a scalar
angle equation

    phi'(x) = rho(x) (A(x) sin^2 phi + sin phi cos phi + B(x) cos^2 phi) + o(rho)

with rho sign-definite and not integrable near the right endpoint. For
asymptotically constant coefficients the dichotomy is sharp: all solutions
stay bounded when 4AB < 1, and all solutions wind without bound when
4AB > 1, at the universal rate sgn(A) sqrt(4AB - 1) / 2 per unit of the
stretched variable s = int rho. This module classifies instances of that
equation, checks the verdict by direct integration, and provides the
moving-average calculus (regularity condition on rho, averaged coefficients)
used to bring raw angle equations into the canonical form above.

Coefficients may be expression trees, grid-backed coefficients, plain
numbers or Python callables; bare callables are sampled onto a monotone
cubic table when a compiled right-hand side is required.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import expressions as ex
from . import kernels as kn
from .errors import ConfigError, HypothesisViolated, IoError
from .integrate import SystemDef, Solution, integrate

DIVERGENCE_FLOOR = 30.0   # int rho proxy below which divergence is not attested
CRITICAL_BAND = 0.05      # abstain when |4AB - 1| falls inside this band
CONDRHO_TOL = 0.05        # tail value of the rho regularity profile
QUARTER_MARGIN = 0.02     # half-width of the guard band around -1/4

_GL_NODES, _GL_WTS = np.polynomial.legendre.leggauss(8)
_T01 = 0.5 * (_GL_NODES + 1.0)
_W01 = 0.5 * _GL_WTS


def _panel_nodes(n_panels: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss nodes/weights on [0, 1], weights summing to 1."""
    edges = np.linspace(0.0, 1.0, n_panels + 1)
    h = 1.0 / n_panels
    t = (edges[:-1, None] + h * _T01[None, :]).ravel()
    w = np.tile(h * _W01, n_panels)
    return t, w


def _grid(lo: float, hi: float, n: int) -> np.ndarray:
    # geometric spacing once the range spans decades, linear otherwise
    if lo > 0.0 and hi / lo >= 100.0:
        return np.geomspace(lo, hi, n)
    return np.linspace(lo, hi, n)


def _tail_grid(lo: float, hi: float, n: int) -> np.ndarray:
    if lo > 0.0 and hi / lo >= 100.0:
        return np.geomspace(hi / 10.0, hi, n)
    return np.linspace(hi - 0.2 * (hi - lo), hi, n)


def _callable_of(f):
    if isinstance(f, ex.Expr):
        return f
    if isinstance(f, (int, float)):
        v = float(f)
        return lambda x: np.full(np.shape(x), v) if np.ndim(x) else v
    if hasattr(f, "expr") and isinstance(getattr(f, "expr"), ex.Expr):
        return f.expr
    if callable(f):
        return f
    raise TypeError(f"cannot interpret {f!r} as a coefficient function")


def _call(fn, xs):
    """Evaluate fn on an array, tolerating scalar-only callables."""
    xs = np.asarray(xs, dtype=float)
    try:
        v = np.asarray(fn(xs), dtype=float)
        if v.shape == xs.shape:
            return v
    except Exception:
        pass
    return np.array([float(fn(float(t))) for t in xs.ravel()]).reshape(xs.shape)


def as_expr(f, rng: tuple | None = None, *, pad: float = 0.0, n: int = 2049) -> ex.Expr:
    """Expression view of a coefficient; bare callables get sampled onto a table."""
    if isinstance(f, ex.Expr):
        return f
    if isinstance(f, (int, float)):
        return ex.const(float(f))
    if hasattr(f, "expr") and isinstance(getattr(f, "expr"), ex.Expr):
        return f.expr
    if callable(f):
        if rng is None:
            raise TypeError("sampling a bare callable requires a range")
        lo, hi = rng
        xs = _grid(lo, hi + pad, n)
        return ex.interp(ex.InterpTable(xs, _call(f, xs)))
    raise TypeError(f"cannot interpret {f!r} as a coefficient function")


@dataclass
class AveragedOde:
    """phi' = rho (A sin^2 + sin cos + B cos^2) + remainder on a truncated range.

    remainder is the actual signed o(rho) term unless remainder_is_bound is
    set, in which case it is a nonnegative magnitude bound (produced by
    average_phase_ode) and is dropped from direct integrations.

    The non-integrability of rho near the right endpoint is attested only
    through the proxy int rho >= DIVERGENCE_FLOOR; shorter ranges are still
    classified but the shortfall is recorded in the result notes, since a
    finite truncation cannot prove divergence either way.
    """

    rho: object
    A: object
    B: object
    remainder: object = 0.0
    range: tuple = (1.0, 1.0e6)
    remainder_is_bound: bool = False
    _fns: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        lo, hi = self.range
        if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
            raise ConfigError(f"range must be a finite interval, got {self.range}")

    @classmethod
    def from_criterion(cls, rho, B, remainder=0.0, rng: tuple = (1.0, 1.0e6),
                       remainder_is_bound: bool = False) -> "AveragedOde":
        """Build from the comparison form phi' = rho (sin^2 + sin cos - B cos^2).

        The criteria deliver the cos^2 coefficient with a leading minus sign
        (so that B lines up with the quantity compared against -1/4). Stored
        here in the symmetric form, i.e. A = 1 and the field B = -(input B).
        """
        b = _callable_of(B)
        if isinstance(b, ex.Expr):
            stored = ex.neg(b)
        elif isinstance(B, (int, float)):
            stored = -float(B)
        else:
            stored = lambda x, _b=b: -np.asarray(_b(x)) if np.ndim(x) else -float(_b(x))
        return cls(rho, 1.0, stored, remainder, rng, remainder_is_bound)

    @property
    def x_lo(self) -> float:
        return float(self.range[0])

    @property
    def x_hi(self) -> float:
        return float(self.range[1])

    def fn(self, which: str):
        if which not in self._fns:
            self._fns[which] = _callable_of(getattr(self, which))
        return self._fns[which]

    def exprs(self, *, pad: float = 0.0, n: int = 2049) -> list:
        """[rho, A, B, rem] expressions; a bound-type remainder integrates as 0."""
        rem = 0.0 if self.remainder_is_bound else self.remainder
        rng = (self.x_lo, self.x_hi)
        return [as_expr(self.rho, rng, pad=pad, n=n),
                as_expr(self.A, rng, pad=pad, n=n),
                as_expr(self.B, rng, pad=pad, n=n),
                as_expr(rem, rng, pad=pad, n=n)]

    def rho_mass(self, n_panels: int = 96) -> float:
        """|int rho| over the range (composite Gauss on the probe grid)."""
        if "mass" not in self._fns:
            edges = _grid(self.x_lo, self.x_hi, n_panels + 1)
            rf = self.fn("rho")
            total = 0.0
            for a, b in zip(edges[:-1], edges[1:]):
                xs = a + (b - a) * _T01
                total += (b - a) * float(np.dot(_W01, _call(rf, xs)))
            self._fns["mass"] = abs(total)
        return self._fns["mass"]

    def rho_sign(self, n_probe: int = 257) -> int:
        """+1 / -1 if rho is sign-definite on the probe grid, else 0."""
        vals = _call(self.fn("rho"), _grid(self.x_lo, self.x_hi, n_probe))
        if np.all(vals > 0.0):
            return 1
        if np.all(vals < 0.0):
            return -1
        return 0


@dataclass
class BoundednessResult:
    label: str                        # Unbounded | Bounded | Critical
    a_value: float
    b_value: float
    four_ab: float
    slope_predicted: float | None
    slope_measured: float | None
    rho_mass: float
    phi_range: tuple | None
    notes: list

    def row(self) -> str:
        return ",".join([_f17(self.a_value), _f17(self.b_value), _f17(self.four_ab),
                         self.label, _f17(self.slope_measured), _f17(self.slope_predicted)])


@dataclass
class BelowResult:
    label: str                        # TendsToInfinity | BoundedBelow | Inconclusive
    b_low: float                      # tail range of the comparison coefficient
    b_high: float
    phi_final: float | None
    phi_min: float | None
    notes: list


def _f17(v) -> str:
    return "" if v is None else format(float(v), ".17g")


def integrate_phase(ode: AveragedOde, *, phi0: float = 0.0, x1: float | None = None,
                    pad: float = 0.0, x_eval=None, rtol: float = 1e-10,
                    atol: float = 1e-12) -> Solution:
    """Integrate the angle equation; winding-safe (step-capped at pi/2)."""
    sysd = SystemDef(kn.K_ANGLE_AB, ode.exprs(pad=pad))
    hi = ode.x_hi + pad if x1 is None else x1
    return integrate(sysd, [phi0, 0.0], ode.x_lo, hi, rtol=rtol, atol=atol,
                     angle_idx=0, angle_cap=math.pi / 2, x_eval=x_eval)


def _fit_slope(s: np.ndarray, phi: np.ndarray) -> float | None:
    """Least-squares rate of phi against the stretched variable, trailing half."""
    s_end = s[-1]
    if abs(s_end) < 1.0:
        return None
    mask = np.abs(s) >= 0.5 * abs(s_end)
    if np.count_nonzero(mask) < 8:
        mask = np.zeros_like(mask)
        mask[-8:] = True
    return float(np.polyfit(s[mask], phi[mask], 1)[0])


def classify_bounded(ode: AveragedOde, *, margin: float = CRITICAL_BAND,
                     divergence_floor: float = DIVERGENCE_FLOOR,
                     verify: bool = True, phi0: float = 0.0,
                     n_tail: int = 65) -> BoundednessResult:
    """Trichotomy of the angle equation by the sign of 4AB - 1.

    Tail values of A, B decide the verdict; when they are not asymptotically
    constant the one-sided extremes of 4AB over the tail are used instead
    (comparison bounds), and the critical band is widened accordingly. With
    verify the equation is also integrated and the empirical winding rate is
    compared against sgn(A) sqrt(4AB - 1) / 2.
    """
    notes: list = []
    xs_t = _tail_grid(ode.x_lo, ode.x_hi, n_tail)
    av = _call(ode.fn("A"), xs_t)
    bv = _call(ode.fn("B"), xs_t)
    four = 4.0 * av * bv
    f_lo, f_hi = float(np.min(four)), float(np.max(four))
    f_mid = float(np.mean(four))
    a_mid, b_mid = float(np.mean(av)), float(np.mean(bv))
    if f_hi - f_lo > margin:
        notes.append(f"tail 4AB varies by {f_hi - f_lo:.3g}; one-sided bounds used")

    mass = ode.rho_mass()
    if mass < divergence_floor:
        notes.append(f"int rho = {mass:.3g} over the range, below the "
                     f"divergence proxy {divergence_floor:g}")
    if ode.rho_sign() == 0:
        notes.append("rho changes sign on the probe grid; classification unreliable")

    slope_p = None
    if f_lo > 1.0 + margin:
        label = "Unbounded"
        slope_p = 0.5 * math.copysign(1.0, a_mid) * math.sqrt(max(f_mid - 1.0, 0.0))
    elif f_hi < 1.0 - margin:
        label = "Bounded"
    else:
        label = "Critical"

    slope_m = None
    phi_rng = None
    if verify:
        sol = integrate_phase(ode, phi0=phi0)
        phi = sol.ys[:, 0]
        s = sol.ys[:, 1]
        phi_rng = (float(np.min(phi)), float(np.max(phi)))
        slope_m = _fit_slope(s, phi)
        if label == "Unbounded" and slope_m is not None:
            s_end = abs(s[-1])
            tol = max(0.1 * abs(slope_p), 4.0 * math.pi / max(0.5 * s_end, 1e-9))
            if abs(slope_m - slope_p) > tol:
                notes.append(f"empirical rate {slope_m:.4g} vs predicted "
                             f"{slope_p:.4g} beyond tolerance {tol:.2g}")
            else:
                notes.append(f"empirical rate {slope_m:.4g} matches predicted {slope_p:.4g}")
        elif label == "Bounded":
            width = phi_rng[1] - phi_rng[0]
            if width > math.pi + 0.5:
                notes.append(f"phase range {width:.3g} exceeds pi; verdict suspect")
            else:
                notes.append(f"phase confined to a range of {width:.3g}")
    return BoundednessResult(label, a_mid, b_mid, f_mid, slope_p, slope_m,
                             mass, phi_rng, notes)


def classify_bounded_below(ode: AveragedOde, *, margin: float = QUARTER_MARGIN,
                           verify: bool = True, phi0: float = 0.0,
                           n_tail: int = 65) -> BelowResult:
    """One-sided verdict for the comparison form phi' = rho (sin^2 + sc - B cos^2).

    The comparison coefficient is the negative of the stored cos^2 field
    (see from_criterion). Tail estimates: all of B below -1/4 by the guard
    margin forces the phase to +infinity; all of B above -1/4 keeps it
    bounded from below; straddling values are inconclusive.
    """
    notes: list = []
    xs_t = _tail_grid(ode.x_lo, ode.x_hi, n_tail)
    av = _call(ode.fn("A"), xs_t)
    if float(np.max(np.abs(av - 1.0))) > 1e-8:
        return BelowResult("Inconclusive", math.nan, math.nan, None, None,
                           ["comparison form requires A = 1"])
    b_cor = -_call(ode.fn("B"), xs_t)
    b_lo, b_hi = float(np.min(b_cor)), float(np.max(b_cor))
    if b_hi < -0.25 - margin:
        label = "TendsToInfinity"
    elif b_lo > -0.25 + margin:
        label = "BoundedBelow"
    else:
        label = "Inconclusive"
        notes.append(f"tail comparison coefficient spans [{b_lo:.4g}, {b_hi:.4g}] "
                     "across -1/4")

    phi_final = None
    phi_min = None
    if verify and label != "Inconclusive":
        sol = integrate_phase(ode, phi0=phi0)
        phi = sol.ys[:, 0]
        phi_final = float(phi[-1])
        phi_min = float(np.min(phi))
        if label == "TendsToInfinity" and phi_final < phi0 + 2.0 * math.pi:
            notes.append(f"phase climbed only {phi_final - phi0:.3g} over the range")
        if label == "BoundedBelow" and phi_min < phi0 - math.pi - 0.5:
            notes.append(f"phase dipped to {phi_min:.3g}; verdict suspect")
    return BelowResult(label, b_lo, b_hi, phi_final, phi_min, notes)


def check_condrho(rho, ell: float, rng: tuple, *, n_grid: int = 33,
                  n_panels: int = 4, tol: float = CONDRHO_TOL) -> tuple:
    """Regularity of rho under averaging: (1/ell) int_0^ell |rho(x+t) - rho(x)| dt.

    Returns (holds, profile) where profile is an (n, 2) array of x and the
    ratio of that mean deviation to |rho(x)|. Holds iff the ratio trends
    downward across the grid and ends below tol (flat-at-zero profiles count
    as holding).
    """
    rf = _callable_of(rho)
    lo, hi = rng
    xs = _grid(lo, hi, n_grid)
    t01, w01 = _panel_nodes(n_panels)
    prof = np.empty(n_grid)
    for i, x in enumerate(xs):
        base = float(_call(rf, np.array([x]))[0])
        vals = _call(rf, x + ell * t01)
        dev = float(np.dot(w01, np.abs(vals - base)))
        prof[i] = dev / max(abs(base), 1e-300)
    trending_down = bool(np.all(prof[1:] <= prof[:-1] * 1.25 + 1e-12))
    holds = prof[-1] < tol and (trending_down or float(np.max(prof)) < tol)
    return bool(holds), np.column_stack([xs, prof])


def moving_average(g, ell: float, *, n_panels: int = 4):
    """gbar(x) = (1/ell) int_x^{x+ell} g(t) dt as a vectorized callable."""
    gf = _callable_of(g)
    t01, w01 = _panel_nodes(n_panels)

    def gbar(x):
        xv = np.atleast_1d(np.asarray(x, dtype=float))
        pts = xv[:, None] + ell * t01[None, :]
        vals = _call(gf, pts.ravel()).reshape(xv.size, t01.size)
        out = vals @ w01
        return float(out[0]) if np.ndim(x) == 0 else out

    return gbar


def average_phase_ode(ode: AveragedOde, ell: float, *, tol: float = CONDRHO_TOL,
                      n_table: int = 1025, verify: bool = True) -> AveragedOde:
    """Replace A, B by their moving averages over windows of length ell.

    Valid when rho is small and varies slowly relative to the window, which
    is checked through check_condrho; the angle then tracks the averaged
    equation up to an o(rho) error. The returned instance carries the same
    rho, table-backed averaged coefficients, and a nonnegative remainder
    bound assembled from the sampled regularity profile (a conservative
    working bound, not a certified constant). The Lipschitz-dependent half
    of the averaging argument is only ever applied to the sin/cos
    combinations of the angle equation, where the constant is explicit.

    With verify the moving average of the integrated raw angle is compared
    against the integrated averaged equation; the tail gap (should be <= pi)
    is stored on the result as empirical_gap, and the regularity profile as
    condrho_profile.
    """
    lo, hi = ode.range
    rf = ode.fn("rho")
    holds, prof = check_condrho(rf, ell, (lo, hi), tol=tol)
    if not holds:
        raise HypothesisViolated(
            f"rho fails the averaging regularity condition (profile tail "
            f"{prof[-1, 1]:.3g}, tol {tol:g})")
    head = np.max(np.abs(_call(rf, _grid(lo, min(hi, 10.0 * lo) if lo > 0 else lo + 0.1 * (hi - lo), 33))))
    tail_rho = abs(float(_call(rf, np.array([hi]))[0]))
    if tail_rho > 0.1 * head and tail_rho > 1e-2:
        raise HypothesisViolated(
            f"rho does not decay over the range (|rho| {head:.3g} -> {tail_rho:.3g})")

    xs = _grid(lo, hi, n_table)
    av = _call(ode.fn("A"), xs)
    bv = _call(ode.fn("B"), xs)
    if max(np.max(np.abs(av)), np.max(np.abs(bv))) > 1e8:
        raise HypothesisViolated("unbounded coefficients in the angle equation")
    abar = _call(moving_average(ode.fn("A"), ell), xs)
    bbar = _call(moving_average(ode.fn("B"), ell), xs)

    # working remainder bound: averaged |rem|, rho-variation term, curvature term
    rcond = np.interp(xs, prof[:, 0], prof[:, 1])
    coef_sup = 1.0 + float(np.max(np.abs(av))) + float(np.max(np.abs(bv)))
    rhov = np.abs(_call(rf, xs))
    rem_ma = _call(moving_average(lambda x: np.abs(_call(ode.fn("remainder"), x)), ell), xs)
    bound = rem_ma + rhov * rcond * coef_sup + (rhov * (1.0 + rcond)) ** 2 * ell * coef_sup ** 2

    out = AveragedOde(ode.rho,
                      ex.interp(ex.InterpTable(xs, abar)),
                      ex.interp(ex.InterpTable(xs, bbar)),
                      ex.interp(ex.InterpTable(xs, np.maximum(bound, 0.0))),
                      (lo, hi), remainder_is_bound=True)
    out.condrho_profile = prof
    if verify:
        raw = integrate_phase(ode, pad=ell)
        phi_ma = moving_average(lambda t: raw.eval(t, 0), ell)
        xt = _tail_grid(lo, hi, 9)
        phi0_bar = float(phi_ma(lo))
        avg_sol = integrate_phase(out, phi0=phi0_bar, x_eval=xt)
        gap = float(np.max(np.abs(avg_sol.y_eval[:, 0] - phi_ma(xt))))
        out.empirical_gap = gap
    return out


def classify_grid(cells, rho, rng: tuple, *, remainder=0.0, **kw) -> list:
    """classify_bounded over constant (A, B) cells; pure, order-preserving."""
    out = []
    for a, b in cells:
        ode = AveragedOde(rho, float(a), float(b), remainder, rng)
        out.append(classify_bounded(ode, **kw))
    return out


def grid_to_csv(results) -> str:
    lines = ["A,B,fourAB,verdict,slope_measured,slope_predicted"]
    lines.extend(r.row() for r in results)
    return "\n".join(lines) + "\n"


def write_grid_csv(path, results) -> None:
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(grid_to_csv(results))
    except OSError as e:
        raise IoError(f"cannot write classification grid to {path}: {e}") from e
