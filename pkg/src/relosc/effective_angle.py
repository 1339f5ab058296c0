"""Effective phase of a perturbation pair and its comparison transforms.

Tracking the phase difference of two individually winding solutions is
numerically wasteful when only their Wronskian matters. The effective angle
psi tracks the pair directly: with a basis u0, v0 of the background equation
normalized to W(u0, v0) = 1 and a solution u1 of the perturbed equation,

    W(u0, u1) = -R sin(psi),   W(v0, u1) = -R cos(psi),

and psi obeys a first-order phase equation driven only by the coefficient
differences. The cotangent substitution cot(psi) = beta1 cot(phi) + beta2
then straightens the rotating basis so that averaging applies to phi; the
arccot branch is pinned so that floor(psi/pi) survives the transform, which
is what keeps integer flip counts intact.
"""

from __future__ import annotations

import math

import numpy as np

from . import expressions as ex
from . import kernels as kn
from .averaging import QUARTER_MARGIN, as_expr, _grid
from .errors import (BasisNotNormalized, ConfigError, DomainBelowThreshold,
                     HypothesisViolated, IoError, PoleInWindow, RangeMismatch,
                     SignChangeInBeta1)
from .integrate import ATOL, RTOL, SystemDef, integrate
from .logscale_criteria import (THRESHOLD, CriterionVerdict, LogScale,
                                _decide, _window_scan, tail_windows)
from .sl_core import Coefficient, CoefficientSet, DeltaCoefficients
from .wronskian_pruefer import AngleTrack, FlipCount, flip_count_from_angles

BASIS_TOL = 1e-6       # |W(u0, v0) - 1| allowed on the probe grid
POLE_MARGIN = 0.05     # min distance of psi to pi/2 + k pi for the Riccati view
N_PROBE = 257


def _shared_range(u0, v0, rng=None):
    lo = max(u0.range[0], v0.range[0])
    hi = min(u0.range[1], v0.range[1])
    if rng is not None:
        lo, hi = max(lo, float(rng[0])), min(hi, float(rng[1]))
    if not lo < hi:
        raise RangeMismatch(f"basis ranges do not overlap: {u0.range} vs {v0.range}")
    return lo, hi


def _check_basis(u0, v0, lo, hi):
    if u0.lam != v0.lam:
        raise ConfigError(f"basis energies differ: {u0.lam} vs {v0.lam}")
    xs = np.linspace(lo, hi, 9)
    if (np.max(np.abs(u0.coeffs.p(xs) - v0.coeffs.p(xs))) > 1e-12
            or np.max(np.abs(u0.coeffs.q(xs) - v0.coeffs.q(xs))) > 1e-12):
        raise ConfigError("u0 and v0 must solve the same background equation")
    w = u0.u(xs) * v0.pu(xs) - u0.pu(xs) * v0.u(xs)
    err = float(np.max(np.abs(w - 1.0)))
    if err > BASIS_TOL:
        raise BasisNotNormalized(f"W(u0, v0) deviates from 1 by {err:.3g}")


class PsiState:
    """Wronskian phase and radius of a perturbation pair over one basis.

    The perturbed solution is not stored; it is reconstructed from the state:
    u1 = R (u0 cos psi - v0 sin psi) and p1 u1' = R (w0 cos psi - wv0 sin psi),
    which is the matrix form of the definition.
    """

    def __init__(self, psi: AngleTrack, logR_fn, u0, v0,
                 delta: DeltaCoefficients, source=None):
        self.psi = psi
        self._logR = logR_fn
        self.u0 = u0
        self.v0 = v0
        self.delta = delta
        self.source = source

    @property
    def range(self):
        return self.psi.range

    def R(self, x):
        return np.exp(self._logR(x))

    def angle(self, x):
        return self.psi.angle(x)

    def wronskians(self, x):
        """(W(u0, u1), W(v0, u1)) = (-R sin psi, -R cos psi)."""
        ps = np.asarray(self.psi.angle(x), dtype=float)
        r = np.asarray(self.R(x), dtype=float)
        return -r * np.sin(ps), -r * np.cos(ps)

    def reconstruct(self, x):
        """(u1, p1 u1') of the perturbed solution the state encodes."""
        ps = np.asarray(self.psi.angle(x), dtype=float)
        r = np.asarray(self.R(x), dtype=float)
        s, c = np.sin(ps), np.cos(ps)
        u1 = r * (self.u0.u(x) * c - self.v0.u(x) * s)
        w1 = r * (self.u0.pu(x) * c - self.v0.pu(x) * s)
        return u1, w1

    def count(self, c: float, d: float) -> FlipCount:
        """Weighted sign flips of W(u0, u1) on (c, d), read off psi alone."""
        if not self.psi.covers(c, d):
            raise RangeMismatch(f"state covers {self.range}, not [{c:.6g}, {d:.6g}]")
        return flip_count_from_angles(c, d, float(self.psi.angle(c)),
                                      float(self.psi.angle(d)))

    def __repr__(self):
        return f"PsiState(range=[{self.range[0]:.6g}, {self.range[1]:.6g}])"


def psi_anchor(u0, v0, u1, x: float):
    """(psi0, R0) consistent with an explicit perturbed solution at x."""
    w0 = float(u0.u(x) * u1.pu(x) - u0.pu(x) * u1.u(x))
    w1 = float(v0.u(x) * u1.pu(x) - v0.pu(x) * u1.u(x))
    r = math.hypot(w0, w1)
    if not r > 0.0:
        raise ConfigError("both Wronskians vanish at the anchor point")
    return math.atan2(-w0, -w1), r


def psi_phase_integrate(u0, v0, delta: DeltaCoefficients, psi0: float,
                        rng=None, *, R0: float = 1.0, tol: float = RTOL,
                        atol: float = ATOL, x_eval=None) -> PsiState:
    """Integrate the phase equation of the pair from a chosen anchor.

    psi' = -Delta_q (u0 cos psi - v0 sin psi)^2
           - Delta_p (p0 u0' cos psi - p0 v0' sin psi)^2,
    with the basis and log R riding along as state so the controller sees
    them. psi0 (with R0) selects which perturbed solution is tracked; the
    definition fixes psi only mod 2 pi.
    """
    lo, hi = _shared_range(u0, v0, rng)
    _check_basis(u0, v0, lo, hi)
    if not R0 > 0.0:
        raise ConfigError("R0 must be positive")
    c = u0.coeffs
    sysd = SystemDef(kn.K_PSI,
                     [c.p.expr, c.q.expr, c.r.expr,
                      delta.delta_q.expr, delta.delta_p.expr], [u0.lam])
    y0 = [float(u0.u(lo)), float(u0.pu(lo)), float(v0.u(lo)), float(v0.pu(lo)),
          float(psi0), math.log(R0)]
    sol = integrate(sysd, y0, lo, hi, rtol=tol, atol=atol,
                    angle_idx=4, angle_cap=0.5 * math.pi, x_eval=x_eval)
    grid = np.column_stack([sol.xs, sol.ys[:, 4]])
    track = AngleTrack("wronskian-psi", lambda x: sol.eval(x, 4), (lo, hi), grid,
                       source=sol)
    return PsiState(track, lambda x: sol.eval(x, 5), u0, v0, delta, source=sol)


# ------------------------------------------------------------ Riccati view --


def riccati_transform(state: PsiState, window, *,
                      pole_margin: float = POLE_MARGIN):
    """eta = tan(psi) as a checked callable on a pole-free window."""
    c, d = float(window[0]), float(window[1])
    if not state.psi.covers(c, d):
        raise RangeMismatch(f"state covers {state.range}, not [{c:.6g}, {d:.6g}]")
    xs = np.linspace(c, d, N_PROBE)
    ps = np.asarray(state.psi.angle(xs), dtype=float)
    frac = np.mod(ps - 0.5 * math.pi, math.pi)
    dist = float(np.min(np.minimum(frac, math.pi - frac)))
    if dist < pole_margin:
        raise PoleInWindow(
            f"psi comes within {dist:.3g} of pi/2 + k pi on [{c:.6g}, {d:.6g}]")

    def eta(x):
        q = np.asarray(x, dtype=float)
        if q.size and (float(np.min(q)) < c - 1e-12 or float(np.max(q)) > d + 1e-12):
            raise RangeMismatch(f"query outside the checked window [{c:.6g}, {d:.6g}]")
        return np.tan(state.psi.angle(x))

    eta.window = (c, d)
    return eta


def riccati_residual(state: PsiState, window, *, n_probe: int = 200,
                     h_rel: float = 1e-6) -> float:
    """Max residual of eta' = -Dq (u0 - v0 eta)^2 - Dp (w0 - wv0 eta)^2.

    eta' comes from centered differences of tan(psi), so this probes the
    integrated phase against the Riccati form it must satisfy.
    """
    eta = riccati_transform(state, window)
    c, d = eta.window
    h = h_rel * (1.0 + 0.5 * (abs(c) + abs(d)))
    xs = np.linspace(c + 2 * h, d - 2 * h, n_probe)
    ep = (eta(xs + h) - eta(xs - h)) / (2.0 * h)
    e = eta(xs)
    dq = state.delta.delta_q(xs)
    dp = state.delta.delta_p(xs)
    rhs = -dq * (state.u0.u(xs) - state.v0.u(xs) * e) ** 2 \
        - dp * (state.u0.pu(xs) - state.v0.pu(xs) * e) ** 2
    return float(np.max(np.abs(ep - rhs)))


def riccati_to_sl(u0, v0, delta: DeltaCoefficients, rng=None, *,
                  n_table: int = 2049) -> CoefficientSet:
    """Classical equation whose oscillation matches the relative one.

    For Delta_p = 0 and Delta_q > 0 the pair is equivalent to
    -(p~ u')' + q~ u = 0 with
        1/p~ = Delta_q v0^2 exp(+2 I),  q~ = -Delta_q u0^2 exp(-2 I),
        I(x) = int Delta_q u0 v0.
    The coefficients are returned on a dense grid; the weight is set to 1.
    """
    lo, hi = _shared_range(u0, v0, rng)
    if not delta.dp_is_zero():
        raise HypothesisViolated("the equivalence needs Delta_p = 0")
    xs = _grid(lo, hi, n_table)
    dq = np.asarray(delta.delta_q(xs), dtype=float)
    if np.any(dq <= 0.0):
        raise HypothesisViolated("the equivalence needs Delta_q > 0 throughout")

    # cumulative I by per-gap two-point Gauss; exact through cubics
    g1, g2 = 0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)
    a_, b_ = xs[:-1], xs[1:]
    n1 = a_ + (b_ - a_) * g1
    n2 = a_ + (b_ - a_) * g2

    def f(t):
        return np.asarray(delta.delta_q(t) * u0.u(t) * v0.u(t), dtype=float)

    gaps = 0.5 * (b_ - a_) * (f(n1) + f(n2))
    big_i = np.concatenate([[0.0], np.cumsum(gaps)])

    p_inv = dq * np.asarray(v0.u(xs), dtype=float) ** 2 * np.exp(2.0 * big_i)
    q_new = -dq * np.asarray(u0.u(xs), dtype=float) ** 2 * np.exp(-2.0 * big_i)
    if np.any(p_inv <= 0.0) or not np.all(np.isfinite(p_inv)):
        raise HypothesisViolated("transformed 1/p is not positive and finite")
    return CoefficientSet(Coefficient.from_grid(xs, 1.0 / p_inv),
                          Coefficient.from_grid(xs, q_new),
                          Coefficient.constant(1.0),
                          interval=(lo, hi), label="associated")


# -------------------------------------------------------- Kepler transform --


class KeplerAngles:
    """Comparison angle of the cotangent substitution, floor-tied to psi.

    sgn(beta1) * varphi is again a phase whose pi-floors match psi's, so flip
    counts can be read from either angle.
    """

    def __init__(self, beta1_fn, beta2_fn, varphi: AngleTrack, sign: int,
                 psi: AngleTrack | None = None, source=None):
        self.beta1 = beta1_fn
        self.beta2 = beta2_fn
        self.varphi = varphi
        self.sign = int(sign)
        self.psi = psi
        self.source = source

    @property
    def range(self):
        return self.varphi.range

    def angle(self, x):
        return self.varphi.angle(x)

    def count(self, c: float, d: float) -> FlipCount:
        """Weighted sign flips on (c, d) read from sgn(beta1) * varphi."""
        if not self.varphi.covers(c, d):
            raise RangeMismatch(f"track covers {self.range}, not [{c:.6g}, {d:.6g}]")
        return flip_count_from_angles(c, d,
                                      self.sign * float(self.varphi.angle(c)),
                                      self.sign * float(self.varphi.angle(d)))

    def floor_gap(self, xs) -> int:
        """Max |floor(psi/pi) - floor(sgn(beta1) varphi/pi)| on probe points."""
        if self.psi is None:
            raise ConfigError("no psi track attached to compare against")
        fp = np.floor(np.asarray(self.psi.angle(xs), dtype=float) / math.pi)
        fq = np.floor(self.sign * np.asarray(self.varphi.angle(xs), dtype=float)
                      / math.pi)
        return int(np.max(np.abs(fp - fq)))

    def __repr__(self):
        return (f"KeplerAngles(sign={self.sign:+d}, "
                f"range=[{self.range[0]:.6g}, {self.range[1]:.6g}])")


def _callable_of(f, rng):
    e = as_expr(f, rng)
    return (lambda x: ex.evaluate(e, x)), e


def _beta1_sign(b1_fn, lo, hi):
    xs = _grid(lo, hi, N_PROBE)
    b = np.asarray(b1_fn(xs), dtype=float)
    if not np.all(np.isfinite(b)):
        raise SignChangeInBeta1("beta1 is not finite on the range")
    if np.min(b) > 0.0:
        return 1
    if np.max(b) < 0.0:
        return -1
    raise SignChangeInBeta1("beta1 changes sign (or vanishes) on the range")


def _kepler_angle_values(psi_vals, b1, b2):
    """Branch-resolved varphi from psi: cot psi = beta1 cot varphi + beta2.

    On psi in (n pi, (n+1) pi) the continuous choice is
    varphi = arccot((cot psi - beta2)/beta1) + n pi          for beta1 > 0,
    varphi = arccot((cot psi - beta2)/beta1) - (n+1) pi      for beta1 < 0,
    with arccot mapping into (0, pi); at psi = n pi exactly,
    varphi = sgn(beta1) n pi.
    """
    ps = np.asarray(psi_vals, dtype=float)
    b1 = np.asarray(b1, dtype=float)
    b2 = np.asarray(b2, dtype=float)
    n = np.floor(ps / math.pi)
    on_grid = np.abs(ps - np.round(ps / math.pi) * math.pi) \
        < 1e-12 * (1.0 + np.abs(ps))
    frac = ps - n * math.pi
    frac = np.where(on_grid, 0.5 * math.pi, frac)   # placeholder, masked later
    cot = np.cos(frac) / np.sin(frac)
    carg = (cot - b2) / b1
    acot = np.arctan2(1.0, carg)
    shift = np.where(b1 > 0.0, n * math.pi, -(n + 1.0) * math.pi)
    out = acot + shift
    exact = np.sign(b1) * np.round(ps / math.pi) * math.pi
    return np.where(on_grid, exact, out)


def kepler_transform(state: PsiState, beta1, beta2, rng=None) -> KeplerAngles:
    """Pointwise Kepler angle of an integrated psi state."""
    lo, hi = state.range
    if rng is not None:
        lo, hi = max(lo, float(rng[0])), min(hi, float(rng[1]))
        if not lo < hi:
            raise RangeMismatch("requested range does not meet the state range")
    b1_fn, _ = _callable_of(beta1, (lo, hi))
    b2_fn, _ = _callable_of(beta2, (lo, hi))
    sign = _beta1_sign(b1_fn, lo, hi)

    def phi(x):
        return _kepler_angle_values(state.psi.angle(x), b1_fn(x), b2_fn(x))

    gx = state.psi.grid[:, 0]
    keep = (gx >= lo) & (gx <= hi)
    gx = gx[keep] if np.any(keep) else np.linspace(lo, hi, 65)
    grid = np.column_stack([gx, phi(gx)])
    track = AngleTrack("kepler-phi", phi, (lo, hi), grid)
    return KeplerAngles(b1_fn, b2_fn, track, sign, psi=state.psi, source=state)


def varphi_phase_integrate(u0, v0, delta: DeltaCoefficients, beta1, beta2,
                           varphi0: float, rng=None, *, tol: float = RTOL,
                           atol: float = ATOL, x_eval=None) -> KeplerAngles:
    """Integrate the transformed phase equation directly.

    varphi' = (beta1'/beta1) sin varphi cos varphi + (beta2'/beta1) sin^2 varphi
              - (Dq/beta1) (beta1 u0 cos varphi - (v0 - beta2 u0) sin varphi)^2
              - (Dp/beta1) (beta1 w0 cos varphi - (wv0 - beta2 w0) sin varphi)^2.
    The beta derivatives are taken symbolically (table-backed coefficients
    differentiate through their interpolant). With beta1 = beta2 = beta this
    reduces to the single-beta comparison form without any special casing.
    """
    lo, hi = _shared_range(u0, v0, rng)
    _check_basis(u0, v0, lo, hi)
    b1e = as_expr(beta1, (lo, hi))
    b2e = as_expr(beta2, (lo, hi))
    b1_fn = lambda x: ex.evaluate(b1e, x)
    b2_fn = lambda x: ex.evaluate(b2e, x)
    sign = _beta1_sign(b1_fn, lo, hi)
    c = u0.coeffs
    sysd = SystemDef(kn.K_PHI,
                     [c.p.expr, c.q.expr, c.r.expr,
                      delta.delta_q.expr, delta.delta_p.expr,
                      b1e, ex.diff(b1e), b2e, ex.diff(b2e)], [u0.lam])
    y0 = [float(u0.u(lo)), float(u0.pu(lo)), float(v0.u(lo)), float(v0.pu(lo)),
          float(varphi0)]
    sol = integrate(sysd, y0, lo, hi, rtol=tol, atol=atol,
                    angle_idx=4, angle_cap=0.5 * math.pi, x_eval=x_eval)
    grid = np.column_stack([sol.xs, sol.ys[:, 4]])
    track = AngleTrack("kepler-phi", lambda x: sol.eval(x, 4), (lo, hi), grid,
                       source=sol)
    return KeplerAngles(b1_fn, b2_fn, track, sign, psi=None, source=sol)


# --------------------------------------------------- boundedness classifier --


def classify_ode_boundedness_scale(Q, beta, n: int, rng, *, remainder=None,
                                   margin: float = QUARTER_MARGIN,
                                   k: int = 5, n_per: int = 129,
                                   verify: bool = True, phi0: float = 0.0,
                                   tol: float = 1e-10) -> CriterionVerdict:
    """Boundedness of varphi' = rho (sin^2 + sin cos - beta^2 Q cos^2) + o(.).

    Decides through the scaled estimate L_n(beta)^2 (Q - Q_n(beta)) against
    -1/4 on trailing windows, then (optionally) integrates the angle itself
    and checks that it diverges or stays put as claimed. Hypothesis failures
    and verification mismatches downgrade to Inconclusive rather than raise;
    this op reports, it does not referee inputs.
    """
    lo, hi = float(rng[0]), float(rng[1])
    notes = []
    scale = LogScale(int(n))
    Qe = as_expr(Q, (lo, hi))
    be = as_expr(beta, (lo, hi))
    bpe = ex.diff(be)
    q_fn = lambda x: ex.evaluate(Qe, x)
    b_fn = lambda x: ex.evaluate(be, x)
    bp_fn = lambda x: ex.evaluate(bpe, x)

    def inconclusive(note):
        notes.append(note)
        return CriterionVerdict("Inconclusive", float("nan"), float(margin),
                                (lo, hi, 0.0), evidence={"notes": notes},
                                criterion="ode-bound-scale", n=int(n))

    xs = _grid(lo, hi, N_PROBE)
    b = np.asarray(b_fn(xs), dtype=float)
    bp = np.asarray(bp_fn(xs), dtype=float)
    if not (np.all(np.isfinite(b)) and np.all(np.isfinite(bp))):
        return inconclusive("beta or beta' not finite on the range")
    babs = np.abs(b)
    if not babs[-1] >= 1.5 * babs[0]:
        return inconclusive("|beta| does not grow along the range")
    rho = bp / b
    if np.any(rho <= 0.0):
        return inconclusive("rho = beta'/beta is not positive on the range")
    clear = babs > scale.threshold * 1.2 + 0.5
    if not np.any(clear):
        return inconclusive(f"|beta| never clears the depth-{n} scale threshold")
    clear_x = float(xs[np.argmax(clear)])
    w_lo = max(hi / 10.0, clear_x)
    if not w_lo < hi:
        return inconclusive("no usable tail window once the threshold clears")

    def value(x):
        bb = np.abs(np.asarray(b_fn(x), dtype=float))
        ln = scale.L(scale.n, bb)
        return ln ** 2 * (np.asarray(q_fn(x), dtype=float) - scale.Q(bb))

    try:
        mids, sups, infs = _window_scan(value, tail_windows(hi, x_lo=w_lo, k=k),
                                        n_per)
    except (HypothesisViolated, DomainBelowThreshold) as e:
        return inconclusive(f"estimate not evaluable on the tail: {e}")
    verdict, estimate = _decide(float(sups[-1]), float(infs[-1]), margin)

    if remainder is not None:
        rem_e = as_expr(remainder, (lo, hi))
        xs_t = _grid(max(w_lo, hi / 100.0), hi, 129)
        bb = np.abs(np.asarray(b_fn(xs_t), dtype=float))
        ln2 = scale.L(scale.n, bb) ** 2
        rr = np.asarray(bp_fn(xs_t), dtype=float) / np.asarray(b_fn(xs_t), float)
        ratio = np.abs(ex.evaluate(rem_e, xs_t)) * ln2 / (rr * bb ** 2)
        m = [float(np.max(chunk)) for chunk in np.array_split(ratio, 4)]
        if not (m[-1] < 1e-10 or m[-1] <= 0.9 * m[0] + 1e-12):
            notes.append(f"remainder envelope does not vanish against "
                         f"rho beta^2 / L_n(beta)^2 ({m[0]:.3g} -> {m[-1]:.3g})")
            verdict = "Inconclusive"
    else:
        rem_e = ex.const(0.0)

    evidence = {"window_mids": mids, "sups": sups, "infs": infs, "notes": notes,
                "window_lo": w_lo}

    if verify and verdict != "Inconclusive":
        sysd = SystemDef(kn.K_ANGLE_AB,
                         [ex.div(bpe, be), ex.const(1.0),
                          ex.neg(ex.mul(ex.mul(be, be), Qe)), rem_e])
        v_lo = max(clear_x, lo, hi / 1000.0)
        x_eval = _grid(v_lo, hi, 513)
        sol = integrate(sysd, [float(phi0), 0.0], lo, hi, rtol=tol, atol=1e-12,
                        angle_idx=0, angle_cap=0.5 * math.pi, x_eval=x_eval)
        phi = np.asarray(sol.eval(x_eval, 0), dtype=float)
        bb = np.asarray(b_fn(x_eval), dtype=float)
        four_ab = -4.0 * bb ** 2 * np.asarray(q_fn(x_eval), dtype=float)
        rr = np.asarray(bp_fn(x_eval), dtype=float) / bb
        drift = 0.5 * np.sqrt(np.maximum(four_ab - 1.0, 0.0)) * rr
        predicted = float(np.trapz(drift, x_eval))
        climb = float(phi[-1] - phi[0])
        width = float(np.max(phi[len(phi) // 2:]) - np.min(phi[len(phi) // 2:]))
        evidence["verify"] = {"predicted_climb": predicted, "climb": climb,
                              "tail_width": width, "span": (v_lo, hi)}
        if verdict == "Oscillatory":
            # Below one full winding the secular drift is swamped by cycle
            # phase, but supercritical fields have no rest points: the angle
            # must then be monotone increasing, which is checkable.
            if predicted >= math.pi:
                if climb < 0.4 * predicted:
                    notes.append(f"angle climbed {climb:.3g} against a "
                                 f"predicted {predicted:.3g}; divergence "
                                 f"not confirmed")
                    verdict = "Inconclusive"
            elif climb > 0.0 and float(np.min(np.diff(phi))) > -1e-6:
                notes.append("slow-scale divergence: monotone increase "
                             "confirmed, full winding lies beyond the range")
            else:
                notes.append("estimate says divergent but the angle neither "
                             "winds nor increases monotonically")
                verdict = "Inconclusive"
        else:
            if width > math.pi + 0.5:
                notes.append(f"angle keeps moving (tail width {width:.3g}) "
                             f"although the estimate says bounded")
                verdict = "Inconclusive"

    return CriterionVerdict(verdict, float(estimate), float(margin),
                            (w_lo, hi, 0.0), evidence=evidence,
                            criterion="ode-bound-scale", n=int(n))


# ------------------------------------------------------------------ export --


def track_to_csv(track: AngleTrack) -> str:
    """CSV `x,angle` of the accepted integrator samples."""
    lines = ["x,angle"]
    for xv, av in track.grid:
        lines.append(f"{format(float(xv), '.17g')},{format(float(av), '.17g')}")
    return "\n".join(lines) + "\n"


def write_track_csv(path, track: AngleTrack) -> None:
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(track_to_csv(track))
    except OSError as e:
        raise IoError(f"cannot write angle track to {path}: {e}") from e
