"""Pruefer angles, modified Wronskians, and weighted sign-flip counting.

Relative oscillation between two operators is read off the difference of two
continuous phase functions: each zero of the modified Wronskian W_x(u0, u1)
is a sign flip, and the flip count over a window is an exact integer formula
in the phase difference at the window ends. Angles are obtained by
integrating the phase equation, never by unwrapping sampled atan2 values;
winding must be exact for the counts to be integers one can trust.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels as kn
from . import sl_core
from .errors import ConfigError, DegenerateState, IntervalMismatch, IoError, RangeMismatch
from .integrate import ATOL, RTOL, SystemDef, integrate
from .logscale_criteria import CriterionVerdict
from .sl_core import CoefficientSet, DeltaCoefficients

ANCHOR_TOL = 1e-6      # theta0 must match atan2(u, pu') at the anchor, mod 2pi
SNAP_TOL = 1e-9        # snap phase differences sitting on a multiple of pi
SLOPE_TOL = 0.05       # counts-per-log-d slope separating growth from noise
K_LAST = 5             # trailing windows used for the trend fit
RANGE_TOL = 1e-9


class AngleTrack:
    """A continuous phase function over one sweep range.

    kind names the convention: "classical-theta" tracks a single solution
    (u = rho sin theta, pu' = rho cos theta), "wronskian-psi" tracks a
    Wronskian pair, "kepler-phi" is the comparison angle of the cotangent
    substitution. grid holds the accepted integrator samples (x, angle);
    winding_safe records that no accepted step turned by pi/2 or more.
    """

    KINDS = ("classical-theta", "wronskian-psi", "kepler-phi")

    def __init__(self, kind: str, angle_fn, rng, grid, logrho_fn=None, source=None):
        if kind not in self.KINDS:
            raise ConfigError(f"unknown angle kind {kind!r}; expected one of {self.KINDS}")
        self.kind = kind
        self._angle = angle_fn
        self.x0, self.x1 = float(rng[0]), float(rng[1])
        self.grid = np.asarray(grid, dtype=float)
        if self.grid.ndim != 2 or self.grid.shape[1] != 2:
            raise ConfigError("grid must be (n, 2) rows of (x, angle)")
        steps = np.diff(self.grid[:, 1])
        self.winding_safe = bool(steps.size == 0 or np.max(np.abs(steps)) < 0.5 * math.pi)
        self._logrho = logrho_fn
        self.source = source

    @classmethod
    def from_callable(cls, kind: str, fn, rng, n: int = 1025) -> "AngleTrack":
        """Wrap a closed-form angle; the winding flag reflects the sample grid."""
        lo, hi = float(rng[0]), float(rng[1])
        xs = np.linspace(lo, hi, n)
        grid = np.column_stack([xs, np.asarray(fn(xs), dtype=float)])
        return cls(kind, fn, rng, grid)

    @property
    def range(self):
        return (min(self.x0, self.x1), max(self.x0, self.x1))

    def covers(self, c: float, d: float) -> bool:
        lo, hi = self.range
        tol = RANGE_TOL * (1.0 + abs(lo) + abs(hi))
        return lo - tol <= c and d <= hi + tol

    def angle(self, x):
        return self._angle(x)

    def rho(self, x):
        if self._logrho is None:
            raise ConfigError("this track does not carry a radius")
        return np.exp(self._logrho(x))

    def reconstruct(self, x):
        """(u, pu') = (rho sin theta, rho cos theta); classical tracks only."""
        th = np.asarray(self.angle(x), dtype=float)
        r = np.asarray(self.rho(x), dtype=float)
        return r * np.sin(th), r * np.cos(th)

    def pi_crossings(self, c: float, d: float) -> int:
        """Signed number of multiples of pi crossed on [c, d].

        At a zero of the tracked solution theta' = cos^2/p > 0, so crossings
        are transversal and the floor difference counts them exactly.
        """
        if not self.covers(c, d):
            raise RangeMismatch(f"track covers {self.range}, not [{c:.6g}, {d:.6g}]")
        return int(math.floor(float(self.angle(d)) / math.pi)
                   - math.floor(float(self.angle(c)) / math.pi))

    def __repr__(self):
        return (f"AngleTrack({self.kind}, range=[{self.x0:.6g}, {self.x1:.6g}], "
                f"samples={self.grid.shape[0]}, winding_safe={self.winding_safe})")


@dataclass(frozen=True)
class FlipCount:
    """Weighted sign flips of W_x(u0, u1) on (c, d).

    delta_at_c/d are the continuous phase difference theta1 - theta0 at the
    window ends, shifted by a common multiple of pi so delta_at_c lies in
    [0, pi); the shift cancels in the count.
    """

    c: float
    d: float
    count: int
    delta_at_c: float
    delta_at_d: float

    def identity_holds(self) -> bool:
        return self.count == (math.ceil(self.delta_at_d / math.pi)
                              - math.floor(self.delta_at_c / math.pi) - 1)


# ------------------------------------------------------------ angle tracks --


def _theta_solution(coeffs: CoefficientSet, lam: float, theta0: float, logrho0: float,
                    x0: float, x1: float, tol: float, atol: float, x_eval=None):
    sysd = SystemDef(kn.K_THETA,
                     [coeffs.p.expr, coeffs.q.expr, coeffs.r.expr], [lam])
    return integrate(sysd, [theta0, logrho0], x0, x1, rtol=tol, atol=atol,
                     angle_idx=0, angle_cap=0.5 * math.pi, x_eval=x_eval)


def pruefer_angle(traj, theta0: float, *, tol: float = RTOL, atol: float = ATOL,
                  x_eval=None) -> AngleTrack:
    """Continuous Pruefer angle of a trajectory, anchored at theta0.

    Integrates theta' = cos^2(theta)/p + (lam r - q) sin^2(theta) alongside
    the log-radius, starting from the trajectory's own sweep start. theta0
    must agree with atan2(u, pu') there modulo 2pi; the branch it picks fixes
    the whole track.
    """
    a, b = traj.x0, traj.x1
    ua, wa = float(traj.u(a)), float(traj.pu(a))
    scale = math.hypot(ua, wa)
    if not scale > 1e-300:
        raise DegenerateState(f"(u, pu') vanishes at the anchor x={a:.6g}")
    raw = math.atan2(ua, wa)
    mismatch = (theta0 - raw + math.pi) % (2.0 * math.pi) - math.pi
    if abs(mismatch) > ANCHOR_TOL:
        raise ConfigError(
            f"theta0={theta0:.6g} does not equal atan2(u, pu')={raw:.6g} mod 2pi "
            f"at x={a:.6g} (off by {mismatch:.3g})")
    sol = _theta_solution(traj.coeffs, traj.lam, float(theta0), math.log(scale),
                          a, b, tol, atol, x_eval)
    grid = np.column_stack([sol.xs, sol.ys[:, 0]])
    return AngleTrack("classical-theta", lambda x: sol.eval(x, 0), (a, b), grid,
                      logrho_fn=lambda x: sol.eval(x, 1), source=sol)


def dirichlet_angle(coeffs: CoefficientSet, lam: float, x0: float, x1: float, *,
                    branch: int = 0, tol: float = RTOL, atol: float = ATOL,
                    x_eval=None) -> AngleTrack:
    """Angle of the solution with u(x0) = 0, pu'(x0) = 1, without building it.

    branch shifts the anchor by branch*pi, which relabels the track but not
    any count difference. x0 > x1 sweeps backward and anchors on the right.
    """
    sol = _theta_solution(coeffs, lam, branch * math.pi, 0.0, float(x0), float(x1),
                          tol, atol, x_eval)
    grid = np.column_stack([sol.xs, sol.ys[:, 0]])
    return AngleTrack("classical-theta", lambda x: sol.eval(x, 0), (x0, x1), grid,
                      logrho_fn=lambda x: sol.eval(x, 1), source=sol)


# ------------------------------------------------------ modified Wronskian --


def modified_wronskian(u0, u1):
    """W_x(u0, u1) = u0 * (p1 u1') - (p0 u0') * u1 as a checked callable."""
    lo = max(u0.range[0], u1.range[0])
    hi = min(u0.range[1], u1.range[1])
    if not lo < hi:
        raise RangeMismatch(
            f"trajectories do not overlap: {u0.range} vs {u1.range}")
    tol = RANGE_TOL * (1.0 + abs(lo) + abs(hi))

    def wronskian(x):
        xs = np.asarray(x, dtype=float)
        if xs.size and (float(np.min(xs)) < lo - tol or float(np.max(xs)) > hi + tol):
            raise RangeMismatch(
                f"query outside shared range [{lo:.6g}, {hi:.6g}]")
        return u0.u(x) * u1.pu(x) - u0.pu(x) * u1.u(x)

    wronskian.range = (lo, hi)
    return wronskian


def wronskian_derivative_check(u0, u1, delta: DeltaCoefficients, *,
                               n_probe: int = 400, h_rel: float = 1e-5) -> float:
    """Max residual of W' = (q~1 - q~0) u0 u1 + Delta_p w0 w1 on a probe grid.

    W' comes from centered differences of the dense output, so this is an
    independent consistency probe, not a restatement of the two ODEs. The
    lambda shift enters through q~j = q_j - lam_j r, which covers pairs taken
    from one operator at two spectral points.
    """
    lo = max(u0.range[0], u1.range[0])
    hi = min(u0.range[1], u1.range[1])
    if not lo < hi:
        raise RangeMismatch(f"trajectories do not overlap: {u0.range} vs {u1.range}")
    h_hi = h_rel * (1.0 + abs(lo) + abs(hi))
    xs = np.linspace(lo + 2 * h_hi, hi - 2 * h_hi, n_probe)
    h = h_rel * (1.0 + np.abs(xs))

    def w_of(x):
        return u0.u(x) * u1.pu(x) - u0.pu(x) * u1.u(x)

    wp = (w_of(xs + h) - w_of(xs - h)) / (2.0 * h)
    r = u0.coeffs.r(xs)
    dq_eff = delta.delta_q(xs) - (u1.lam - u0.lam) * r
    rhs = dq_eff * u0.u(xs) * u1.u(xs) + delta.delta_p(xs) * u0.pu(xs) * u1.pu(xs)
    return float(np.max(np.abs(wp - rhs)))


# ------------------------------------------------------------- flip counts --


def _snap_pi(v: float) -> float:
    k = round(v / math.pi)
    if abs(v - k * math.pi) < SNAP_TOL * (1.0 + abs(v)):
        return k * math.pi
    return v


def flip_count_from_angles(c: float, d: float, delta_c: float,
                           delta_d: float) -> FlipCount:
    """count = ceil(Delta(d)/pi) - floor(Delta(c)/pi) - 1 from raw phase values.

    Values within SNAP_TOL of a multiple of pi are snapped there, and both
    ends are shifted by the common multiple that puts Delta(c) in [0, pi);
    the shift cancels in the count but makes the reported values
    reproducible.
    """
    if not c < d:
        raise ConfigError(f"need c < d, got [{c:.6g}, {d:.6g}]")
    dc = _snap_pi(float(delta_c))
    dd = _snap_pi(float(delta_d))
    k = math.floor(dc / math.pi)
    dc -= k * math.pi
    dd -= k * math.pi
    count = math.ceil(dd / math.pi) - math.floor(dc / math.pi) - 1
    return FlipCount(float(c), float(d), int(count), dc, dd)


def weighted_sign_flips(theta0: AngleTrack, theta1: AngleTrack,
                        c: float, d: float) -> FlipCount:
    """Weighted count of sign flips of the Wronskian on (c, d).

    Delta = theta1 - theta0 continuous; mixed-sign flips need no separate
    bookkeeping, the angle formula is the definition.
    """
    for t in (theta0, theta1):
        if not t.covers(c, d):
            raise RangeMismatch(
                f"track covers {t.range}, not [{c:.6g}, {d:.6g}]")
    return flip_count_from_angles(
        c, d,
        float(theta1.angle(c)) - float(theta0.angle(c)),
        float(theta1.angle(d)) - float(theta0.angle(d)))


# -------------------------------------------------------------- classifier --


def default_window_schedule(a: float, x_max: float, n: int = 12):
    """Geometric d-schedule from just past the anchor up to x_max."""
    lo = max(10.0 * max(a, 0.1), a + 1.0)
    if not lo < x_max:
        raise ConfigError(f"x_max={x_max:.6g} leaves no room past a={a:.6g}")
    return [float(t) for t in np.geomspace(lo, x_max, n)]


def classify_relative_oscillation(c0: CoefficientSet, c1: CoefficientSet,
                                  lam: float, window_schedule=None, *,
                                  x_max: float = 1e6, slope_tol: float = SLOPE_TOL,
                                  k_last: int = K_LAST,
                                  tol: float = RTOL) -> CriterionVerdict:
    """Relative (non)oscillation of the pair at energy lam by direct counting.

    Tracks the Dirichlet angle of each operator from the shared regular left
    endpoint and fits the growth of the flip count over the schedule: slope
    of count against log d above slope_tol over the last k_last windows means
    the count diverges (Oscillatory); a flat slope with count range <= 2
    means it stabilizes (Nonoscillatory); anything else is Inconclusive.
    Critical-coupling problems grow their zero counts logarithmically, which
    is what the log-d axis linearizes.
    """
    if c0.interval[0] != c1.interval[0]:
        raise IntervalMismatch(
            f"left endpoints differ: {c0.interval[0]} vs {c1.interval[0]}")
    a = float(c0.interval[0])
    if not math.isfinite(a):
        raise ConfigError("the left endpoint must be regular (finite)")
    sched = list(window_schedule) if window_schedule is not None \
        else default_window_schedule(a, x_max)
    ds = np.asarray(sched, dtype=float)
    if ds.size < 2 or np.any(np.diff(ds) <= 0.0) or ds[0] <= a:
        raise ConfigError("window schedule must be increasing and start past a")
    x_eval = ds.copy()
    track0 = dirichlet_angle(c0, lam, a, float(ds[-1]), tol=tol, x_eval=x_eval)
    track1 = dirichlet_angle(c1, lam, a, float(ds[-1]), tol=tol, x_eval=x_eval)
    flips = [weighted_sign_flips(track0, track1, a, float(d)) for d in ds]
    counts = np.array([f.count for f in flips], dtype=float)

    kk = min(int(k_last), len(sched))
    slope = float(np.polyfit(np.log(ds[-kk:]), counts[-kk:], 1)[0]) if kk >= 2 else 0.0
    spread = float(np.max(counts[-kk:]) - np.min(counts[-kk:]))
    if slope > slope_tol:
        verdict = "Oscillatory"
    elif abs(slope) <= slope_tol and spread <= 2.0:
        verdict = "Nonoscillatory"
    else:
        verdict = "Inconclusive"
    evidence = {
        "d": [float(t) for t in ds],
        "count": [int(f.count) for f in flips],
        "slope": slope,
        "count_spread": spread,
        "k_last": kk,
        "anchor": a,
        "lam": float(lam),
        "winding_safe": bool(track0.winding_safe and track1.winding_safe),
    }
    return CriterionVerdict(verdict, slope, float(slope_tol),
                            (float(ds[-kk]), float(ds[-1]), 0.0),
                            evidence=evidence, criterion="relosc", n=None,
                            threshold=None)


def essential_gap_precheck(c0: CoefficientSet, c1: CoefficientSet, lam: float,
                           *, x_max: float = 1e6, tol: float = 1e-3) -> bool:
    """True when the perturbation preserves essential spectrum numerically.

    Checks (q0 - q1)/r -> 0 and p1/p0 -> 1 along a tail grid. Both operators
    shift by the same lam, so the spectral point drops out of the first
    ratio; it is kept in the signature because the conclusion (verdicts do
    not depend on where in the gap lam sits) is attached to a lam.
    """
    if not math.isfinite(float(lam)):
        raise ConfigError("lam must be finite")
    return sl_core.essential_gap_precheck(c0, c1, x_max=x_max, tol=tol)


# ------------------------------------------------------------------ export --


def counts_to_csv(flips) -> str:
    """CSV `d,count` for a sequence of FlipCount rows."""
    lines = ["d,count"]
    for f in flips:
        lines.append(f"{format(float(f.d), '.17g')},{int(f.count)}")
    return "\n".join(lines) + "\n"


def write_counts_csv(path, flips) -> None:
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(counts_to_csv(flips))
    except OSError as e:
        raise IoError(f"cannot write count table to {path}: {e}") from e


def classification_record(verdict: CriterionVerdict) -> dict:
    """JSON-compatible {verdict, slope, windows} record of a classifier run."""
    ev = verdict.evidence
    return {
        "verdict": verdict.verdict,
        "slope": float(ev.get("slope", verdict.estimate)),
        "windows": [[float(d), int(c)] for d, c in zip(ev.get("d", []),
                                                       ev.get("count", []))],
    }
