"""Iterated-logarithm scales and the -1/4 perturbation criteria.

The classical fact that q1 = mu/x^2 switches from nonoscillatory to
oscillatory exactly at mu = -1/4 admits a whole hierarchy of refinements:
replace x^2 by L_n(x)^2 = (x log x ... log_n x)^2 and recenter at the
critical background Q_n. The same -1/4 shows up for perturbations of an
arbitrary nonoscillatory background once the perturbation is weighed by the
square of a slowly varying solution ratio beta = v0/u0, and for band edges
of periodic operators after averaging over a window.

This module provides the scale arithmetic (log_k, L_n, Q_n with their
positivity thresholds) and one evaluator per criterion. Each evaluator
computes the relevant limsup/liminf proxy on sliding tail windows, checks
the accompanying smallness hypotheses on the same tail, and returns a
CriterionVerdict; hypothesis failures downgrade the verdict to Inconclusive
with a note instead of erroring whenever the main estimate is still
computable, since the underlying o(.)/O(.) assumptions are asymptotic
statements a finite window can contradict only softly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import expressions as ex
from .averaging import (QUARTER_MARGIN, _call, _grid, _tail_grid, as_expr,
                        check_condrho, moving_average)
from .errors import (ConfigError, DomainBelowThreshold, HypothesisViolated,
                     IoError, MinimalityViolated, NotAdmissible, NotIntegrable)

THRESHOLD = -0.25
K_WINDOWS = 5          # sliding windows across the last decade
N_PER_WINDOW = 129

_GL_NODES, _GL_WTS = np.polynomial.legendre.leggauss(8)
_T01 = 0.5 * (_GL_NODES + 1.0)
_W01 = 0.5 * _GL_WTS


# ---------------------------------------------------------------- scales --

_E_TABLE = [0.0, 1.0, math.e]


def e_threshold(n: int) -> float:
    """e_{-1} = -inf, e_0 = 0, e_n = e^{e_{n-1}}; log_n(x) > 0 iff x > e_n."""
    if n < 0:
        return -math.inf
    while len(_E_TABLE) <= n:
        prev = _E_TABLE[-1]
        _E_TABLE.append(math.exp(prev) if prev < 709.0 else math.inf)
    return _E_TABLE[n]


def log_iter(k: int, x):
    """log_k: k-fold log|.|; log_0 is the identity."""
    v = np.asarray(x, dtype=float)
    out = v.copy() if v.ndim else float(v)
    with np.errstate(divide="ignore", invalid="ignore"):
        for _ in range(int(k)):
            out = np.log(np.abs(out))
    return out


def L_value(n: int, x):
    """L_n = prod_{j<=n} log_j; L_{-1} = 1 by convention."""
    if n < 0:
        v = np.asarray(x, dtype=float)
        return np.ones_like(v) if v.ndim else 1.0
    out = np.asarray(x, dtype=float).copy()
    cur = np.asarray(x, dtype=float).copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        for _ in range(int(n)):
            cur = np.log(np.abs(cur))
            out = out * cur
    return out if out.ndim else float(out)


def Q_value(n: int, x):
    """Q_n = -(1/4) sum_{j=0}^{n-1} L_j^{-2}; the empty sum makes Q_0 = 0."""
    v = np.asarray(x, dtype=float)
    q = np.zeros_like(v) if v.ndim else 0.0
    if n <= 0:
        return q
    L = v.copy() if v.ndim else float(v)
    cur = v.copy() if v.ndim else float(v)
    with np.errstate(divide="ignore", invalid="ignore"):
        for _ in range(int(n)):
            q = q - 0.25 / (L * L)
            cur = np.log(np.abs(cur))
            L = L * cur
    return q if v.ndim else float(q)


def eval_logscale(n: int, x):
    """(log_n, L_n, Q_n) at x; demands x > e_n so every factor is positive."""
    thr = e_threshold(n)
    lo = float(np.min(np.asarray(x, dtype=float)))
    if not lo > thr:
        raise DomainBelowThreshold(
            f"scale of depth {n} needs x > {thr:.6g}, got x down to {lo:.6g}")
    return log_iter(n, x), L_value(n, x), Q_value(n, x)


@dataclass(frozen=True)
class LogScale:
    """Evaluators of one scale depth n, with thresholds and the derivative identity."""

    n: int

    def __post_init__(self):
        if self.n < 0:
            raise ConfigError("scale depth must be nonnegative")

    @property
    def threshold(self) -> float:
        return e_threshold(self.n)

    def e(self, k: int) -> float:
        return e_threshold(k)

    def log(self, k: int, x):
        if k > self.n + 1:
            raise ConfigError(f"depth-{self.n} scale exposes log_k only for k <= {self.n + 1}")
        return log_iter(k, x)

    def L(self, k: int, x):
        if k > self.n + 1:
            raise ConfigError(f"depth-{self.n} scale exposes L_k only for k <= {self.n + 1}")
        return L_value(k, x)

    def Q(self, x):
        return Q_value(self.n, x)

    def dL(self, x):
        # L_n' = L_n sum_{j=0}^{n} 1/L_j; the j = 0 term is required (L_0' = 1)
        v = np.asarray(x, dtype=float)
        acc = 1.0 / v
        for j in range(1, self.n + 1):
            acc = acc + 1.0 / L_value(j, v)
        out = L_value(self.n, v) * acc
        return out if v.ndim else float(out)


# ------------------------------------------------------------- verdicts --


@dataclass
class CriterionVerdict:
    """Outcome of one -1/4 comparison (or of a trend-style test).

    threshold is None for verdicts not anchored at a numeric comparison
    point (slope/count trends); the margin invariant applies only when a
    threshold is present.
    """

    verdict: str
    estimate: float
    margin: float
    window: tuple                 # (x_lo, x_hi, ell); ell 0.0 when pointwise
    evidence: dict = field(default_factory=dict)
    criterion: str = ""
    n: int | None = None
    threshold: float | None = THRESHOLD

    def __post_init__(self):
        if self.verdict not in ("Oscillatory", "Nonoscillatory", "Inconclusive"):
            raise ConfigError(f"unknown verdict {self.verdict!r}")
        if self.verdict != "Inconclusive" and self.threshold is not None:
            if not abs(self.estimate - self.threshold) > self.margin:
                raise ConfigError(
                    f"decided verdict needs |estimate - ({self.threshold:g})| > margin; "
                    f"got estimate {self.estimate:.6g}, margin {self.margin:g}")

    def row(self) -> str:
        ell = self.window[2] if len(self.window) > 2 else 0.0
        return ",".join([
            self.criterion,
            "" if self.n is None else str(self.n),
            "" if not ell else format(float(ell), ".17g"),
            format(float(self.estimate), ".17g"),
            format(float(self.margin), ".17g"),
            self.verdict,
        ])

    def to_record(self) -> dict:
        ev = {}
        for k, v in self.evidence.items():
            if isinstance(v, np.ndarray):
                ev[k] = [float(t) for t in np.ravel(v)]
            else:
                ev[k] = v
        return {"criterion": self.criterion, "n": self.n, "verdict": self.verdict,
                "estimate": float(self.estimate), "margin": float(self.margin),
                "threshold": self.threshold,
                "window": [float(t) for t in self.window], "evidence": ev}


def verdicts_to_csv(verdicts) -> str:
    lines = ["criterion,n,ell,estimate,margin,verdict"]
    lines.extend(v.row() for v in verdicts)
    return "\n".join(lines) + "\n"


def write_verdicts_csv(path, verdicts) -> None:
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(verdicts_to_csv(verdicts))
    except OSError as e:
        raise IoError(f"cannot write criterion table to {path}: {e}") from e


# ------------------------------------------------- window/tail machinery --


def tail_windows(x_hi: float, *, x_lo: float | None = None, k: int = K_WINDOWS):
    """k geometric windows covering [x_hi/10, x_hi] (or a supplied start)."""
    lo = x_hi / 10.0 if x_lo is None else x_lo
    if not 0.0 < lo < x_hi:
        raise ConfigError(f"bad window span [{lo:.6g}, {x_hi:.6g}]")
    edges = np.geomspace(lo, x_hi, k + 1)
    return list(zip(edges[:-1], edges[1:]))


def _window_scan(fn, windows, n_per: int = N_PER_WINDOW):
    """Per-window sup/inf of a vectorized value function."""
    sups, infs, mids = [], [], []
    for a, b in windows:
        xs = np.geomspace(a, b, n_per) if a > 0 else np.linspace(a, b, n_per)
        v = np.asarray(fn(xs), dtype=float)
        if not np.all(np.isfinite(v)):
            raise HypothesisViolated(
                f"criterion value not finite inside window [{a:.6g}, {b:.6g}]")
        sups.append(float(np.max(v)))
        infs.append(float(np.min(v)))
        mids.append(math.sqrt(a * b))
    return np.array(mids), np.array(sups), np.array(infs)


def _decide(sup_last: float, inf_last: float, margin: float):
    if sup_last < THRESHOLD - margin:
        return "Oscillatory", sup_last
    if inf_last > THRESHOLD + margin:
        return "Nonoscillatory", inf_last
    est = sup_last if abs(sup_last - THRESHOLD) <= abs(inf_last - THRESHOLD) else inf_last
    return "Inconclusive", est


def _fit_loglog_slope(xs: np.ndarray, vals: np.ndarray) -> float:
    m = np.isfinite(vals) & (np.abs(vals) > 0.0) & (xs > 0.0)
    if np.count_nonzero(m) < 4:
        return 0.0
    return float(np.polyfit(np.log(xs[m]), np.log(np.abs(vals[m])), 1)[0])


def _chunk_maxima(ratio: np.ndarray, n_chunks: int = 4) -> np.ndarray:
    r = np.abs(np.asarray(ratio, dtype=float))
    return np.array([float(np.max(c)) for c in np.array_split(r, n_chunks)])


def _envelope_small(xs: np.ndarray, ratio: np.ndarray, name: str, notes: list) -> bool:
    """o(.)-type check: chunked maxima of the ratio must trend down to zero.

    Chunk maxima (rather than a pointwise fit) so that oscillating but
    decaying ratios are not misread.
    """
    r = np.asarray(ratio, dtype=float)
    if not np.all(np.isfinite(r)):
        notes.append(f"{name}: envelope ratio not finite on the tail")
        return False
    m = _chunk_maxima(r)
    if m[-1] < 1e-10:
        return True
    ok = m[-1] <= 0.9 * m[0] + 1e-12
    if not ok:
        notes.append(f"{name}: envelope ratio not decreasing "
                     f"(chunk maxima {m[0]:.3g} -> {m[-1]:.3g})")
    return ok


def _envelope_bounded(xs: np.ndarray, ratio: np.ndarray, name: str, notes: list) -> bool:
    """O(.)-type check: chunked maxima of the ratio must not grow along the tail."""
    r = np.asarray(ratio, dtype=float)
    if not np.all(np.isfinite(r)):
        notes.append(f"{name}: envelope ratio not finite on the tail")
        return False
    m = _chunk_maxima(r)
    if m[-1] < 1e-10:
        return True
    if m[-1] > 1.5 * m[0] + 1e-12:
        notes.append(f"{name}: envelope ratio grows "
                     f"(chunk maxima {m[0]:.3g} -> {m[-1]:.3g})")
        return False
    return True


def _integral(fn, a: float, b: float, n_panels: int = 64) -> float:
    edges = _grid(a, b, n_panels + 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        xs = lo + (hi - lo) * _T01
        total += (hi - lo) * float(np.dot(_W01, _call(fn, xs)))
    return total


# ---------------------------------------------------- admissible edges ----


@dataclass
class AdmissibleEdgeData:
    """Background data at one energy E: a normalized solution pair plus scales.

    u0 and v0 are trajectories with W(u0, v0) = 1 (checked on a probe grid).
    alpha bounds the size of u0 and its quasi-derivative; beta measures how
    much faster v0 grows than u0 on average and must be sign-definite with
    rho = beta'/beta > 0 and small. For positive backgrounds (bottom of the
    spectrum) beta defaults to v0/u0 and rho to 1/(p0 u0 v0), which agree
    since W(u0, v0) = 1.
    """

    E: float
    u0: object
    v0: object
    alpha: object = 1.0
    beta: object = None
    rho: object = None
    label: str = ""

    def __post_init__(self):
        lo0, hi0 = self.u0.range
        lo1, hi1 = self.v0.range
        self._rng = (max(lo0, lo1), min(hi0, hi1))
        if self._rng[0] >= self._rng[1]:
            raise NotAdmissible("u0 and v0 ranges do not overlap")
        xs = _grid(max(self._rng[0], self._rng[0] + 1e-9), self._rng[1], 9)
        w = self.u0.u(xs) * self.v0.pu(xs) - self.u0.pu(xs) * self.v0.u(xs)
        res = float(np.max(np.abs(w - 1.0)))
        if res > 1e-6:
            raise NotAdmissible(f"W(u0, v0) deviates from 1 by {res:.3g}")

    @property
    def range(self) -> tuple:
        return self._rng

    @property
    def p0(self):
        return self.u0.coeffs.p

    def alpha_fn(self):
        return _coef_fn(self.alpha)

    def beta_fn(self):
        if self.beta is not None:
            return _coef_fn(self.beta)
        return lambda x: self.v0.u(x) / self.u0.u(x)

    def rho_fn(self):
        if self.rho is not None:
            return _coef_fn(self.rho)
        return lambda x: 1.0 / (self.p0(x) * self.u0.u(x) * self.v0.u(x))

    def beta_prime_fn(self):
        # beta' = rho beta; equals 1/(p0 u0^2) when beta = v0/u0 and W = 1
        if self.rho is not None or self.beta is not None:
            rf, bf = self.rho_fn(), self.beta_fn()
            return lambda x: rf(x) * bf(x)
        return lambda x: 1.0 / (self.p0(x) * self.u0.u(x) ** 2)

    def check_admissible(self, ell: float | None = None, *, n_grid: int = 129,
                         derivatives: bool = True) -> dict:
        """Tail diagnostics for the growth/regularity requirements."""
        lo, hi = self._rng
        xs = _tail_grid(lo, hi, n_grid)
        a = _call(self.alpha_fn(), xs)
        b = _call(self.beta_fn(), xs)
        rho = _call(self.rho_fn(), xs)
        u, w = self.u0.u(xs), self.u0.pu(xs)
        v, wv = self.v0.u(xs), self.v0.pu(xs)
        out: dict = {}
        out["C_u"] = float(np.max(np.abs(u) / a))
        out["C_w"] = float(np.max(np.abs(w) / a)) if derivatives else None
        eps = np.abs(v - b * u) / (a * np.abs(b))
        out["eps_tail"] = float(eps[-1])
        out["eps_decreasing"] = bool(_fit_loglog_slope(xs, np.maximum(eps, 1e-300)) < 0.02)
        if derivatives:
            epw = np.abs(wv - b * w) / (a * np.abs(b))
            out["eps_w_tail"] = float(epw[-1])
            out["eps_w_decreasing"] = bool(_fit_loglog_slope(xs, np.maximum(epw, 1e-300)) < 0.02)
        out["beta_sign_definite"] = bool(np.all(b > 0) or np.all(b < 0))
        out["rho_positive"] = bool(np.all(rho > 0))
        out["rho_tail"] = float(rho[-1])
        out["rho_small"] = bool(rho[-1] < 0.1 and rho[-1] <= rho[0])
        if ell is not None:
            holds, prof = check_condrho(self.rho_fn(), ell, (max(lo, hi / 100.0), hi - ell))
            out["condrho"] = bool(holds)
            out["condrho_tail"] = float(prof[-1, 1])
        keys = ["beta_sign_definite", "rho_positive", "rho_small", "eps_decreasing"]
        if derivatives:
            keys.append("eps_w_decreasing")
        if ell is not None:
            keys.append("condrho")
        out["admissible"] = bool(all(out[k] for k in keys))
        return out


def _coef_fn(f):
    if isinstance(f, (int, float)):
        v = float(f)
        return lambda x: np.full(np.shape(x), v) if np.ndim(x) else v
    if isinstance(f, ex.Expr):
        return f
    if hasattr(f, "expr") and isinstance(getattr(f, "expr"), ex.Expr):
        return f
    if callable(f):
        return f
    raise TypeError(f"cannot interpret {f!r} as a function of x")


def _edge_states(edge):
    u0, v0 = edge.u0, edge.v0
    p0 = edge.p0
    return (lambda xs: u0.u(xs)), (lambda xs: u0.pu(xs)), \
           (lambda xs: v0.u(xs)), (lambda xs: v0.pu(xs)), (lambda xs: p0(xs))


def _resolve_window(edge, x_window, shrink: float = 1.0):
    lo, hi = edge.range
    if x_window is not None:
        return float(x_window[0]), float(x_window[1])
    hi = hi * shrink if shrink != 1.0 else hi
    return hi / 10.0, hi


# ------------------------------------------------------------- criteria --


def criterion_gu(edge: AdmissibleEdgeData, delta, *, construct_minimal: bool = False,
                 margin: float = QUARTER_MARGIN, x_window=None,
                 k: int = K_WINDOWS, n_per: int = N_PER_WINDOW) -> CriterionVerdict:
    """Pointwise -1/4 test against a positive background solution pair.

    Evaluates p0 v0^2 (u0^2 dq + (p0 u0')^2 dp) on tail windows: below -1/4
    in the limsup sense means oscillatory, above in the liminf sense means
    nonoscillatory. Requires u0 positive and minimal; minimality is probed
    through the divergence of int dt/(p0 u0^2) over trailing decades, and
    with construct_minimal a failing u0 is replaced by the decaying solution
    u0(x) int_x^b dt/(p0 u0^2) (the old u0 then serves as the companion).
    With dp != 0 the additional limits p0 v0 p0 u0' dp -> 0 and p0 dp -> 0
    are checked as envelopes; failures downgrade to Inconclusive.
    """
    notes: list = []
    uf, wf, vf, wvf, pf = _edge_states(edge)
    lo, hi = _resolve_window(edge, x_window)

    xs_probe = np.geomspace(max(edge.range[0], hi / 1000.0), hi, 65)
    if not np.all(uf(xs_probe) > 0.0):
        raise MinimalityViolated("u0 must be positive on the evaluation tail")

    # minimality: decade increments of int dt/(p0 u0^2) must not shrink away
    g = lambda t: 1.0 / (pf(t) * uf(t) ** 2)
    a3 = max(edge.range[0], hi / 1000.0)
    cuts = np.geomspace(a3, hi, 4)
    incr = [_integral(g, a, b) for a, b in zip(cuts[:-1], cuts[1:])]
    minimal = incr[1] >= 0.2 * incr[0] and incr[2] >= 0.2 * incr[1]
    if not minimal:
        if not construct_minimal:
            raise MinimalityViolated(
                f"int dt/(p0 u0^2) increments shrink ({incr[0]:.3g}, {incr[1]:.3g}, "
                f"{incr[2]:.3g}); u0 is not minimal")
        # tail of the integral, estimated from the local power of the integrand
        xs_fit = np.geomspace(hi / 3.0, hi, 33)
        gamma = _fit_loglog_slope(xs_fit, _call(g, xs_fit))
        if gamma >= -1.2:
            raise MinimalityViolated(
                f"cannot estimate the tail of int dt/(p0 u0^2) (local power {gamma:.3g})")
        tail = float(_call(g, np.array([hi]))[0]) * hi / (-1.0 - gamma)
        knots = np.geomspace(max(edge.range[0], hi / 1000.0), hi, 1025)
        pieces = np.array([_integral(g, a, b, n_panels=4)
                           for a, b in zip(knots[:-1], knots[1:])])
        K = np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]]) + tail
        Ktab = ex.interp(ex.InterpTable(knots, K))
        uf0, wf0 = uf, wf
        uf = lambda t: uf0(t) * ex.evaluate(Ktab, t)
        wf = lambda t: wf0(t) * ex.evaluate(Ktab, t) - 1.0 / uf0(t)
        vf, wvf = uf0, wf0
        hi = hi / 2.0
        lo = min(lo, hi / 10.0)
        notes.append("u0 replaced by the decaying companion; windows pulled "
                     "back from the truncation edge")

    dq, dp = delta.delta_q, delta.delta_p

    def value(t):
        u, w, v = uf(t), wf(t), vf(t)
        return pf(t) * v * v * (u * u * dq(t) + w * w * dp(t))

    ok = True
    if not delta.dp_is_zero():
        xs_t = np.geomspace(lo, hi, 65)
        pv = pf(xs_t)
        h1 = pv * vf(xs_t) * wf(xs_t) * dp(xs_t)
        h2 = pv * dp(xs_t)
        ok &= _envelope_small(xs_t, h1, "p0 v0 p0u0' dp", notes)
        ok &= _envelope_small(xs_t, h2, "p0 dp", notes)

    mids, sups, infs = _window_scan(value, tail_windows(hi, x_lo=lo, k=k), n_per)
    verdict, est = _decide(sups[-1], infs[-1], margin)
    if not ok and verdict != "Inconclusive":
        notes.append("hypothesis envelope failed; verdict downgraded")
        verdict = "Inconclusive"
    return CriterionVerdict(verdict, est, margin, (lo, hi, 0.0),
                            {"x": mids, "sup": sups, "inf": infs, "notes": notes},
                            criterion="gu")


def criterion_gu_scale(edge: AdmissibleEdgeData, delta, n: int, *,
                       margin: float = QUARTER_MARGIN, x_window=None,
                       k: int = K_WINDOWS, n_per: int = N_PER_WINDOW) -> CriterionVerdict:
    """Depth-n refinement of criterion_gu on the beta = v0/u0 scale.

    Evaluates L_n(beta)^2 (p0 u0^2 (u0^2 dq + (p0 u0')^2 dp) - Q_n(beta));
    at n = 0 this reduces to criterion_gu exactly. The dp envelopes must be
    o(beta^2 / L_n(beta)^2).
    """
    notes: list = []
    uf, wf, vf, wvf, pf = _edge_states(edge)
    lo, hi = _resolve_window(edge, x_window)
    dq, dp = delta.delta_q, delta.delta_p
    bf = edge.beta_fn()

    thr = e_threshold(n)
    xs_t = np.geomspace(lo, hi, 129)
    bv = np.abs(_call(bf, xs_t))
    valid = bv > thr * 1.0000001 if math.isfinite(thr) else bv > -math.inf
    if not np.any(valid):
        raise HypothesisViolated(
            f"v0/u0 stays below the depth-{n} threshold {thr:.6g} on the tail")
    if not np.all(valid):
        lo = float(xs_t[np.argmax(valid)])
        notes.append(f"window start raised to {lo:.6g} (scale threshold)")

    def value(t):
        u, w = uf(t), wf(t)
        b = np.abs(_call(bf, t))
        core = pf(t) * u * u * (u * u * dq(t) + w * w * dp(t))
        return L_value(n, b) ** 2 * (core - Q_value(n, b))

    ok = True
    if not delta.dp_is_zero():
        xs_e = np.geomspace(lo, hi, 65)
        b = np.abs(_call(bf, xs_e))
        env = b ** 2 / L_value(n, b) ** 2
        pv = pf(xs_e)
        ok &= _envelope_small(xs_e, pv * vf(xs_e) * wf(xs_e) * dp(xs_e) / env,
                              "p0 v0 p0u0' dp vs beta^2/L_n^2", notes)
        ok &= _envelope_small(xs_e, pv * dp(xs_e) / env, "p0 dp vs beta^2/L_n^2", notes)

    mids, sups, infs = _window_scan(value, tail_windows(hi, x_lo=lo, k=k), n_per)
    verdict, est = _decide(sups[-1], infs[-1], margin)
    if not ok and verdict != "Inconclusive":
        notes.append("hypothesis envelope failed; verdict downgraded")
        verdict = "Inconclusive"
    return CriterionVerdict(verdict, est, margin, (lo, hi, 0.0),
                            {"x": mids, "sup": sups, "inf": infs, "notes": notes},
                            criterion="gu_scale", n=n)


def criterion_khwh(n: int, c1, *, margin: float = QUARTER_MARGIN, x_window=None,
                   k: int = K_WINDOWS, n_per: int = N_PER_WINDOW) -> CriterionVerdict:
    """Explicit depth-n test for tau_1 u = -(p1 u')' + q1 u against q0 = Q_n.

    Evaluates L_n(x)^2 (q1 - Q_n + delta_n/(4x^2) (1 - 1/p1)) where delta_0
    is 0 and delta_n = 1 for n >= 1; requires weight 1 and p1 = 1 + o(x/L_n).
    """
    notes: list = []
    a, b = c1.interval
    hi = min(b, 1.0e6) if x_window is None else float(x_window[1])
    lo = max(hi / 10.0, e_threshold(n) * 1.2 + 0.5) if x_window is None else float(x_window[0])
    if lo >= hi:
        raise HypothesisViolated(f"no room above the depth-{n} threshold in [{a:.3g}, {hi:.3g}]")

    xs_p = np.geomspace(max(a + 1e-9, lo / 10.0), hi, 33)
    if float(np.max(np.abs(c1.r(xs_p) - 1.0))) > 1e-9:
        raise HypothesisViolated("this test is stated for weight r = 1")

    delta_n = 0.0 if n == 0 else 1.0

    def value(t):
        dq = c1.q(t) - Q_value(n, t)
        dp = 1.0 - 1.0 / c1.p(t)
        return L_value(n, t) ** 2 * (dq + delta_n / (4.0 * t * t) * dp)

    xs_e = np.geomspace(lo, hi, 65)
    ok = _envelope_small(xs_e, (c1.p(xs_e) - 1.0) * L_value(n, xs_e) / xs_e,
                         "p1 - 1 vs x/L_n", notes)

    mids, sups, infs = _window_scan(value, tail_windows(hi, x_lo=lo, k=k), n_per)
    verdict, est = _decide(sups[-1], infs[-1], margin)
    if not ok and verdict != "Inconclusive":
        notes.append("hypothesis envelope failed; verdict downgraded")
        verdict = "Inconclusive"
    return CriterionVerdict(verdict, est, margin, (lo, hi, 0.0),
                            {"x": mids, "sup": sups, "inf": infs, "notes": notes},
                            criterion="khwh", n=n)


def _averaged_verdict(edge, n, ells, g_fn, scale_beta, *, margin, x_window, k,
                      n_per, notes, criterion_name, n_field=None, pre_notes_ok=True):
    """Shared window sweep for the averaged criteria.

    g_fn(t) is the integrand; the x-sweep evaluates
    L_n(beta(x))^2 / beta(x)^2 ((1/ell) int_x^{x+ell} g - beta(x)^2 Q_n(beta(x)))
    and the ell-sweep takes inf over ell of the limsup proxy and sup over
    ell of the liminf proxy.
    """
    bf = scale_beta
    lo, hi = x_window
    per_ell = []
    for ell in ells:
        bar = moving_average(g_fn, ell, n_panels=max(4, min(32, int(math.ceil(ell)))))

        def value(t, _bar=bar):
            b = np.abs(_call(bf, t))
            return L_value(n, b) ** 2 / b ** 2 * (_bar(t) - b ** 2 * Q_value(n, b))

        mids, sups, infs = _window_scan(value, tail_windows(hi, x_lo=lo, k=k), n_per)
        per_ell.append((float(ell), sups, infs, mids))

    sup_over_ell = min(row[1][-1] for row in per_ell)   # inf_ell of limsup proxy
    inf_over_ell = max(row[2][-1] for row in per_ell)   # sup_ell of liminf proxy
    verdict, est = _decide(sup_over_ell, inf_over_ell, margin)
    if not pre_notes_ok and verdict != "Inconclusive":
        notes.append("hypothesis envelope failed; verdict downgraded")
        verdict = "Inconclusive"
    best = per_ell[int(np.argmin([row[1][-1] for row in per_ell]))] \
        if verdict == "Oscillatory" else \
        per_ell[int(np.argmax([row[2][-1] for row in per_ell]))]
    evidence = {"x": best[3], "sup": best[1], "inf": best[2], "notes": notes,
                "ell_grid": [row[0] for row in per_ell],
                "sup_by_ell": [row[1][-1] for row in per_ell],
                "inf_by_ell": [row[2][-1] for row in per_ell]}
    return CriterionVerdict(verdict, est, margin, (lo, hi, best[0]), evidence,
                            criterion=criterion_name, n=n_field)


def criterion_gu_averaged(edge: AdmissibleEdgeData, delta, n: int, ell: float, *,
                          ell_grid=None, margin: float = QUARTER_MARGIN,
                          x_window=None, k: int = K_WINDOWS,
                          n_per: int = N_PER_WINDOW) -> CriterionVerdict:
    """Averaged depth-n test for positive backgrounds whose companion has zeros.

    Averages beta^2 Q with Q = p0 u0^2 (u0^2 dq + (p0 u0')^2 dp) over
    [x, x+ell] before the scale wrap, so pointwise sign changes of v0 do not
    spoil the estimate. Hypotheses (beta^2 Q bounded, rho = 1/(p0 u0 v0)
    small with a regular average, dp envelopes o(beta^2/L_n(beta))) are
    checked on the tail; failures downgrade.
    """
    notes: list = []
    uf, wf, vf, wvf, pf = _edge_states(edge)
    dq, dp = delta.delta_q, delta.delta_p
    bf = edge.beta_fn()
    rf = edge.rho_fn()
    ells = list(ell_grid) if ell_grid is not None else [float(ell)]
    lo, hi = _resolve_window(edge, x_window)
    hi = min(hi, edge.range[1] - max(ells))
    if hi <= lo:
        raise HypothesisViolated("window does not fit below the trajectory end")

    def g(t):
        u, w = uf(t), wf(t)
        b = _call(bf, t)
        return b * b * pf(t) * u * u * (u * u * dq(t) + w * w * dp(t))

    ok = True
    xs_e = np.geomspace(lo, hi, 65)
    ok &= _envelope_bounded(xs_e, g(xs_e), "beta^2 Q", notes)
    rho_v = np.abs(_call(rf, xs_e))
    ok &= _envelope_small(xs_e, rho_v, "rho", notes)
    holds, prof = check_condrho(rf, max(ells), (lo, hi))
    if not holds:
        ok = False
        notes.append(f"rho average-regularity fails (tail ratio {prof[-1, 1]:.3g})")
    if not delta.dp_is_zero():
        b = np.abs(_call(bf, xs_e))
        env = b ** 2 / L_value(n, b)
        pv = pf(xs_e)
        ok &= _envelope_small(xs_e, pv * vf(xs_e) * wf(xs_e) * dp(xs_e) / env,
                              "p0 v0 p0u0' dp vs beta^2/L_n", notes)
        ok &= _envelope_small(xs_e, pv * dp(xs_e) / env, "p0 dp vs beta^2/L_n", notes)

    return _averaged_verdict(edge, n, ells, g, bf, margin=margin, x_window=(lo, hi),
                             k=k, n_per=n_per, notes=notes,
                             criterion_name="gu_averaged", n_field=n, pre_notes_ok=ok)


def criterion_main(edge: AdmissibleEdgeData, delta, ell: float | None = None, *,
                   ell_grid=None, margin: float = QUARTER_MARGIN, x_window=None,
                   k: int = K_WINDOWS, n_per: int = N_PER_WINDOW) -> CriterionVerdict:
    """Averaged -1/4 test at an admissible energy inside or at a gap edge.

    Evaluates (1/ell) int_x^{x+ell} (beta^2/beta') (u0^2 dq + (p0 u0')^2 dp)
    over tail windows. For periodic backgrounds ell defaults to the period.
    Perturbations must obey dq, dp = O(beta'/(alpha^2 beta^2)); the
    derivative-growth half of the admissibility diagnostics is skipped when
    dp = 0.
    """
    notes: list = []
    uf, wf, vf, wvf, pf = _edge_states(edge)
    dq, dp = delta.delta_q, delta.delta_p
    if ell is None and ell_grid is None:
        ell = edge.u0.coeffs.period
        if ell is None:
            raise ConfigError("ell is required for non-periodic backgrounds")
    ells = list(ell_grid) if ell_grid is not None else [float(ell)]

    if edge.beta is None:
        xs_p = _tail_grid(*edge.range, 33)
        if not np.all(edge.u0.u(xs_p) > 0.0):
            raise NotAdmissible("no beta supplied and u0 is not positive; "
                                "cannot form the growth ratio")
    bf = edge.beta_fn()
    bpf = edge.beta_prime_fn()
    af = edge.alpha_fn()
    lo, hi = _resolve_window(edge, x_window)
    hi = min(hi, edge.range[1] - max(ells))
    if hi <= lo:
        raise HypothesisViolated("window does not fit below the trajectory end")
    xs_e = np.geomspace(lo, hi, 65)
    bv = _call(bf, xs_e)
    if not (np.all(bv > 0.0) or np.all(bv < 0.0)):
        raise NotAdmissible("beta changes sign on the tail")

    dp_zero = delta.dp_is_zero()
    diag = edge.check_admissible(derivatives=not dp_zero)
    ok = True
    if not diag["admissible"]:
        ok = False
        notes.append("admissibility diagnostics failed: " +
                     ", ".join(k_ for k_ in diag if diag[k_] is False))

    def g(t):
        u, w = uf(t), wf(t)
        b = _call(bf, t)
        return b * b / _call(bpf, t) * (u * u * dq(t) + w * w * dp(t))

    env = _call(bpf, xs_e) / (_call(af, xs_e) ** 2 * bv ** 2)
    ok &= _envelope_bounded(xs_e, dq(xs_e) / env, "dq vs beta'/(alpha^2 beta^2)", notes)
    if not dp_zero:
        ok &= _envelope_bounded(xs_e, dp(xs_e) / env, "dp vs beta'/(alpha^2 beta^2)", notes)

    return _averaged_verdict(edge, 0, ells, g, bf, margin=margin, x_window=(lo, hi),
                             k=k, n_per=n_per, notes=notes,
                             criterion_name="main", n_field=None, pre_notes_ok=ok)


def criterion_main_scale(edge: AdmissibleEdgeData, delta, n: int,
                         ell: float | None = None, *, ell_grid=None,
                         margin: float = QUARTER_MARGIN, x_window=None,
                         k: int = K_WINDOWS, n_per: int = N_PER_WINDOW) -> CriterionVerdict:
    """Depth-n refinement of criterion_main; needs |beta| -> infinity.

    Same averaged integrand divided by beta^2, wrapped in the L_n/Q_n scale
    of beta: (L_n(beta(x))^2/beta(x)^2) ((1/ell) int beta^2 Q - beta^2 Q_n(beta))
    with Q = (1/beta') (u0^2 dq + (p0 u0')^2 dp). At n = 0 this is
    criterion_main exactly.
    """
    notes: list = []
    uf, wf, vf, wvf, pf = _edge_states(edge)
    dq, dp = delta.delta_q, delta.delta_p
    if ell is None and ell_grid is None:
        ell = edge.u0.coeffs.period
        if ell is None:
            raise ConfigError("ell is required for non-periodic backgrounds")
    ells = list(ell_grid) if ell_grid is not None else [float(ell)]
    bf = edge.beta_fn()
    bpf = edge.beta_prime_fn()
    af = edge.alpha_fn()
    lo, hi = _resolve_window(edge, x_window)
    hi = min(hi, edge.range[1] - max(ells))
    if hi <= lo:
        raise HypothesisViolated("window does not fit below the trajectory end")

    xs_e = np.geomspace(lo, hi, 65)
    bv = _call(bf, xs_e)
    if not (np.all(bv > 0.0) or np.all(bv < 0.0)):
        raise NotAdmissible("beta changes sign on the tail")
    babs = np.abs(bv)
    thr = e_threshold(n)
    if not babs[-1] >= 1.5 * babs[0]:
        raise HypothesisViolated("beta does not grow along the tail")
    if math.isfinite(thr) and not babs[-1] > 3.0 * max(thr, 1e-300):
        raise HypothesisViolated(
            f"|beta| = {babs[-1]:.4g} has not cleared the depth-{n} threshold {thr:.4g}")
    if math.isfinite(thr):
        valid = babs > thr * 1.0000001
        if not np.all(valid):
            lo = float(xs_e[np.argmax(valid)])
            notes.append(f"window start raised to {lo:.6g} (scale threshold)")

    def g(t):
        u, w = uf(t), wf(t)
        b = _call(bf, t)
        return b * b / _call(bpf, t) * (u * u * dq(t) + w * w * dp(t))

    env = _call(bpf, xs_e) / (_call(af, xs_e) ** 2 * bv ** 2)
    ok = _envelope_bounded(xs_e, dq(xs_e) / env, "dq vs beta'/(alpha^2 beta^2)", notes)
    if not delta.dp_is_zero():
        ok &= _envelope_bounded(xs_e, dp(xs_e) / env, "dp vs beta'/(alpha^2 beta^2)", notes)

    return _averaged_verdict(edge, n, ells, g, bf, margin=margin, x_window=(lo, hi),
                             k=k, n_per=n_per, notes=notes,
                             criterion_name="main_scale", n_field=n, pre_notes_ok=ok)


def criterion_hille_wintner(c1, *, margin: float = QUARTER_MARGIN, x_window=None,
                            k: int = K_WINDOWS, tail_factor: float = 100.0) -> CriterionVerdict:
    """limsup/liminf of x int_x^inf q1 against -1/4 (q1 must be integrable).

    The tail integral is truncated at tail_factor * x_hi; integrability is
    probed through decade increments of |q1| (they must shrink geometrically)
    and the cut-off remainder is recovered from the measured decay ratio.
    """
    notes: list = []
    a, b = c1.interval
    hi = min(b, 1.0e6) if x_window is None else float(x_window[1])
    lo = hi / 10.0 if x_window is None else float(x_window[0])
    xs_p = np.geomspace(max(a + 1e-9, 1.0), hi, 33)
    if float(np.max(np.abs(c1.p(xs_p) - 1.0))) > 1e-9 or \
       float(np.max(np.abs(c1.r(xs_p) - 1.0))) > 1e-9:
        raise HypothesisViolated("this test is stated for p = r = 1")

    X_T = tail_factor * hi
    absq = lambda t: np.abs(c1.q(t))
    d1 = _integral(absq, hi, math.sqrt(hi * X_T), n_panels=96)
    d2 = _integral(absq, math.sqrt(hi * X_T), X_T, n_panels=96)
    if d1 > 1e-300 and d2 > 0.7 * d1:
        raise NotIntegrable(
            f"|q1| mass per half-decade does not shrink ({d1:.3g} -> {d2:.3g})")
    s1 = _integral(c1.q, hi, math.sqrt(hi * X_T), n_panels=96)
    s2 = _integral(c1.q, math.sqrt(hi * X_T), X_T, n_panels=96)
    if abs(s1) > 1e-300 and 0.0 < s2 / s1 < 0.95:
        rem = s2 * (s2 / s1) / (1.0 - s2 / s1)
    else:
        rem = 0.0
        if d2 > 1e-14 * max(d1, 1.0):
            notes.append("tail remainder beyond the cut-off not extrapolated")

    knots = np.geomspace(lo, X_T, 1537)
    pieces = np.array([_integral(c1.q, u, v, n_panels=2)
                       for u, v in zip(knots[:-1], knots[1:])])
    suffix = np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]]) + rem
    vals = knots * suffix
    m_in = knots <= hi

    windows = tail_windows(hi, x_lo=lo, k=k)
    mids, sups, infs = [], [], []
    for wa, wb in windows:
        sel = (knots >= wa) & (knots <= wb) & m_in
        mids.append(math.sqrt(wa * wb))
        sups.append(float(np.max(vals[sel])))
        infs.append(float(np.min(vals[sel])))
    verdict, est = _decide(sups[-1], infs[-1], margin)
    return CriterionVerdict(verdict, est, margin, (lo, hi, 0.0),
                            {"x": np.array(mids), "sup": np.array(sups),
                             "inf": np.array(infs), "notes": notes},
                            criterion="hille_wintner")
