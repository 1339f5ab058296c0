"""Periodic backgrounds: monodromy, discriminant, band edges, critical coupling.

For an operator with ell-periodic coefficients everything spectral is read
off the period map M(z): bands are where the discriminant D = tr M satisfies
|D| <= 2, gaps where |D| > 2. At the edge E of an open gap the (anti)periodic
solution u and its companion s with W(u, s) = 1 grow like alpha = 1 and
beta ~ x, which is exactly the normalized pair the -1/4 criteria consume.
The derivative of the discriminant at the edge fixes the critical coupling
mu_c = -ell^2 / |D|'(E): a perturbation mu_c * mu / L_n(x)^2 on top of the
iterated-log ladder inserts infinitely many eigenvalues into the gap iff
mu < -1/4, and finitely many iff mu > -1/4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import expressions as ex
from . import kernels as kn
from .errors import (ConfigError, DegenerateBasePoint, IoError, NoBracket,
                     QuadratureFailure)
from .integrate import ATOL, RTOL, SystemDef, integrate
from .logscale_criteria import AdmissibleEdgeData, _integral
from .sl_core import CallableTrajectory, Coefficient, CoefficientSet

DET_TOL = 1e-9         # allowed unimodularity drift, scaled by ||M||_F^2
ROOT_TOL = 1e-10       # default bisection tolerance for |D| = 2
BASEPOINT_TOL = 1e-8   # s(z, ell) below this (relative) forces a base shift
EDGE_RESIDUAL = 1e-6   # quasi-periodicity defect allowed at a located edge
CQ_TOL = 1e-5          # relative gap allowed between the two C_q routes
EDGE_SHIFTS = (0.25, 0.5, 0.75)   # base-point retries, in fractions of ell


def _require_periodic(coeffs: CoefficientSet) -> tuple:
    if not coeffs.period:
        raise ConfigError("coefficients must declare a period")
    a = float(coeffs.interval[0])
    if not math.isfinite(a):
        raise ConfigError("periodic background needs a finite left endpoint")
    return a, float(coeffs.period)


def _sl2_pass(coeffs: CoefficientSet, z: float, x0: float, a_coeffs=(0.0, 0.0, 0.0),
              *, tol: float = RTOL, atol: float = ATOL, spans: float = 1.0):
    """One sweep of the normalized basis c, s over spans periods.

    State is (c, pc', s, ps', J) with J' = r (a0 c^2 + a1 c s + a2 s^2);
    the quadrature rides along so the step controller sees it.
    """
    a0, a1, a2 = (float(v) for v in a_coeffs)
    sysd = SystemDef(kn.K_SL2_QUAD,
                     [coeffs.p.expr, coeffs.q.expr, coeffs.r.expr],
                     [float(z), a0, a1, a2])
    return integrate(sysd, [1.0, 0.0, 0.0, 1.0, 0.0], float(x0),
                     float(x0) + spans * coeffs.period, rtol=tol, atol=atol)


def _period_matrix(coeffs: CoefficientSet, z: float, x0: float,
                   tol: float = RTOL, atol: float = ATOL) -> np.ndarray:
    """M(z) over [x0, x0 + ell], with the unimodularity gate applied."""
    sol = _sl2_pass(coeffs, z, x0, tol=tol, atol=atol)
    yf = sol.y_final
    M = np.array([[yf[0], yf[2]], [yf[1], yf[3]]], dtype=float)
    det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    scale = max(1.0, float(np.sum(M * M)))   # cond(M) = ||M||^2 for det 1
    if abs(det - 1.0) > DET_TOL * scale:
        raise QuadratureFailure(
            f"period map determinant drifted to {det:.17g} at z={z:.17g}")
    return M


def _multipliers(D: float) -> tuple:
    """Roots of rho^2 - D rho + 1 = 0 ordered so |rho_plus| <= 1.

    Inside a band the pair is conjugate on the unit circle and rho_plus is
    the one in the upper half plane; on a gap both roots are real and
    rho_plus is the contracting one.
    """
    if abs(D) <= 2.0:
        im = math.sqrt(max(4.0 - D * D, 0.0)) / 2.0
        return complex(D / 2.0, im), complex(D / 2.0, -im)
    s = math.sqrt(D * D - 4.0)
    lo, hi = (D - s) / 2.0, (D + s) / 2.0
    if abs(lo) <= abs(hi):
        return complex(lo), complex(hi)
    return complex(hi), complex(lo)


@dataclass
class FloquetData:
    """Period map at one energy: matrix, discriminant, multipliers, m-values.

    rho_plus is the multiplier of modulus <= 1 (the decaying direction on a
    gap); m_plus/m_minus are the Weyl slopes (rho - c(ell)) / s(ell) and are
    NaN when s(z, ell) vanishes at this base point.
    """

    period: float
    z: float
    monodromy: np.ndarray
    discriminant: float
    rho_plus: complex
    rho_minus: complex
    m_plus: complex
    m_minus: complex
    base_point: float = 0.0

    @property
    def s_at_ell(self) -> float:
        return float(self.monodromy[0, 1])

    def in_spectrum(self) -> bool:
        return abs(self.discriminant) <= 2.0


def monodromy(coeffs: CoefficientSet, z: float, *, base_point=None,
              tol: float = RTOL, atol: float = ATOL) -> FloquetData:
    """Period map M(z) with columns (c, pc') and (s, ps') after one period.

    The basis is normalized at the base point: c = 1, pc' = 0 and s = 0,
    ps' = 1. Unimodularity is enforced as an accuracy gate; everything else
    (discriminant, multipliers, Weyl values) is algebra on the entries.
    """
    a, ell = _require_periodic(coeffs)
    x0 = a if base_point is None else float(base_point)
    if x0 < a:
        raise ConfigError(f"base point {x0} lies left of the interval start {a}")
    M = _period_matrix(coeffs, z, x0, tol, atol)
    D = float(M[0, 0] + M[1, 1])
    rho_p, rho_m = _multipliers(D)
    s_ell = float(M[0, 1])
    if abs(s_ell) > 1e-300:
        m_p = (rho_p - M[0, 0]) / s_ell
        m_m = (rho_m - M[0, 0]) / s_ell
    else:
        m_p = m_m = complex(float("nan"), float("nan"))
    return FloquetData(ell, float(z), M, D, rho_p, rho_m, m_p, m_m, x0)


def discriminant_curve(coeffs: CoefficientSet, z_grid, *, base_point=None,
                       tol: float = RTOL) -> np.ndarray:
    """Rows (z, D(z)) over the grid; |D| <= 2 marks the essential spectrum."""
    a, ell = _require_periodic(coeffs)
    x0 = a if base_point is None else float(base_point)
    zs = np.asarray(z_grid, dtype=float).ravel()
    if zs.size == 0 or not np.all(np.isfinite(zs)):
        raise ConfigError("z grid must be finite and nonempty")
    out = np.empty((zs.size, 2))
    for i, z in enumerate(zs):
        M = _period_matrix(coeffs, float(z), x0, tol)
        out[i, 0] = z
        out[i, 1] = M[0, 0] + M[1, 1]
    return out


def _fd_discriminant_slope(coeffs, z, x0, h, tol) -> float:
    # five-point stencil; truncation h^4, roundoff ~ |D| tol / h
    zs = (z - 2 * h, z - h, z + h, z + 2 * h)
    d = [float(np.trace(_period_matrix(coeffs, t, x0, tol))) for t in zs]
    return (d[0] - 8.0 * d[1] + 8.0 * d[2] - d[3]) / (12.0 * h)


def dotD_via_lemma(coeffs: CoefficientSet, z: float, *, base_point=None,
                   tol: float = RTOL, atol: float = ATOL,
                   basepoint_tol: float = BASEPOINT_TOL,
                   fd_check: bool = True, fd_step=None) -> float:
    """dD/dz as the weighted product quadrature of the two Floquet solutions.

    dD(z) = -s(z, ell) * int_0^ell u_+ u_- r dt. The product expands over
    the normalized basis as c^2 + (m_+ + m_-) c s + m_+ m_- s^2 whose
    symmetric coefficients are real rational in the monodromy entries, so a
    single extra sweep with the riding quadrature gives the integral even
    where the multipliers are complex. When s(z, ell) is too small the base
    point is shifted by quarters of a period; if every shift is degenerate
    the point is reported instead of computed. A five-point finite
    difference of D cross-checks the value unless fd_check is off.
    """
    a, ell = _require_periodic(coeffs)
    candidates = [a if base_point is None else float(base_point)]
    if base_point is None:
        candidates += [a + f * ell for f in EDGE_SHIFTS]
    x0 = s_ell = M = None
    for cand in candidates:
        Mc = _period_matrix(coeffs, z, cand, tol, atol)
        scale = 1.0 + float(np.abs(Mc).max())
        if abs(Mc[0, 1]) >= basepoint_tol * scale:
            x0, s_ell, M = cand, float(Mc[0, 1]), Mc
            break
    if x0 is None:
        raise DegenerateBasePoint(
            f"s(z, ell) vanishes at z={z:.17g} for every base-point shift")
    D = float(M[0, 0] + M[1, 1])
    m_sum = (M[1, 1] - M[0, 0]) / s_ell
    m_prod = (1.0 - D * M[0, 0] + M[0, 0] ** 2) / s_ell ** 2
    sol = _sl2_pass(coeffs, z, x0, (1.0, m_sum, m_prod), tol=tol, atol=atol)
    dot_d = -s_ell * float(sol.y_final[4])
    if fd_check:
        h = float(fd_step) if fd_step else 1e-3 * (1.0 + abs(z))
        fd = _fd_discriminant_slope(coeffs, z, x0, h, tol)
        if abs(fd - dot_d) > 1e-6 * max(1.0, abs(dot_d)):
            raise QuadratureFailure(
                f"dD mismatch at z={z:.17g}: quadrature {dot_d:.12g} vs "
                f"finite difference {fd:.12g}")
    return dot_d


def weyl_m(coeffs: CoefficientSet, z: float, *, base_point=None,
           tol: float = RTOL, atol: float = ATOL,
           basepoint_tol: float = BASEPOINT_TOL) -> tuple:
    """Weyl values m_plus, m_minus = (rho_plus/minus - c(z, ell)) / s(z, ell).

    u_plus/minus = c + m_plus/minus s are the Floquet solutions; their
    Wronskian is m_plus - m_minus, the branch of sqrt(D^2 - 4) / s(z, ell)
    singled out by |rho_plus| <= 1. Inside a band the pair is conjugate.
    """
    fd = monodromy(coeffs, z, base_point=base_point, tol=tol, atol=atol)
    scale = 1.0 + float(np.abs(fd.monodromy).max())
    if abs(fd.s_at_ell) < basepoint_tol * scale:
        raise DegenerateBasePoint(
            f"s(z, ell) = {fd.s_at_ell:.3g} at z={z:.17g}; shift the base point")
    return fd.m_plus, fd.m_minus


@dataclass
class BandEdge:
    """One endpoint of a spectral band.

    kind is "lower-edge" when the band lies above E_n (gap below) and
    "upper-edge" when the band lies below (gap above). sigma_n is the sign
    of D at the edge, i.e. the (anti)periodic multiplier. The edge data,
    C_q, and mu_c stay None until edge_admissible_data fills them in;
    mu_c is only meaningful for unit weight, which unit_weight records.
    """

    E_n: float
    kind: str
    sigma_n: int
    s_at_ell: float
    n: int = 0
    base_point: float = 0.0
    edge_data: AdmissibleEdgeData | None = None
    C_q: float | None = None
    mu_c: float | None = None
    dotD: float | None = None
    unit_weight: bool = True

    def gap_side(self) -> str:
        return "below" if self.kind == "lower-edge" else "above"


def find_band_edges(coeffs: CoefficientSet, z_range, root_tol: float = ROOT_TOL,
                    *, n_scan: int = 601, base_point=None,
                    tol: float = RTOL) -> list:
    """Locate open-gap band edges as simple crossings of D through +/-2.

    A scan grid brackets sign changes of D - 2 and D + 2 and each bracket
    is polished by Brent's method to root_tol. Tangencies of |D| with 2
    produce no sign change and are deliberately left out: a touching point
    is a closed gap, and the edge construction needs the gap to be open.
    """
    a, ell = _require_periodic(coeffs)
    x0 = a if base_point is None else float(base_point)
    z_lo, z_hi = float(z_range[0]), float(z_range[1])
    if not (z_hi > z_lo) or not (math.isfinite(z_lo) and math.isfinite(z_hi)):
        raise ConfigError(f"z range ({z_lo}, {z_hi}) is not a finite bracket")
    if n_scan < 3:
        raise ConfigError("scan grid needs at least 3 points")
    zs = np.linspace(z_lo, z_hi, int(n_scan))
    ds = discriminant_curve(coeffs, zs, base_point=x0, tol=tol)[:, 1]

    def dval(z):
        M = _period_matrix(coeffs, float(z), x0, tol)
        return float(M[0, 0] + M[1, 1])

    roots = []
    for sigma, level in ((1, 2.0), (-1, -2.0)):
        g = ds - level
        for i in np.flatnonzero(g[:-1] * g[1:] < 0.0):
            root = brentq(lambda t: dval(t) - level, zs[i], zs[i + 1],
                          xtol=root_tol, rtol=8.9e-16)
            roots.append((float(root), sigma))
        # a scan point sitting exactly on the level is a root the bracket
        # products miss (0 * anything is not < 0)
        for i in np.flatnonzero(g == 0.0):
            roots.append((float(zs[i]), sigma))
    if not roots:
        raise NoBracket(
            f"no crossings of |D| = 2 found in ({z_lo}, {z_hi}) with {n_scan} scan points")
    roots.sort()
    merged = [roots[0]]
    for E, sigma in roots[1:]:
        if sigma == merged[-1][1] and E - merged[-1][0] <= max(root_tol, 1e-11 * (1.0 + abs(E))):
            continue
        merged.append((E, sigma))
    roots = merged

    edges = []
    span = z_hi - z_lo
    for n, (E, sigma) in enumerate(roots):
        delta = max(1e3 * root_tol, 1e-9 * (1.0 + abs(E)), 1e-7 * span)
        kind = None
        for _ in range(3):
            above = abs(dval(E + delta)) < 2.0
            below = abs(dval(E - delta)) < 2.0
            if above != below:
                kind = "lower-edge" if above else "upper-edge"
                break
            delta *= 10.0   # crossing flatter than the probe offset
        if kind is None:
            raise QuadratureFailure(f"cannot orient the band around the edge at {E:.12g}")
        M = _period_matrix(coeffs, E, x0, tol)
        edges.append(BandEdge(E, kind, sigma, float(M[0, 1]), n=n, base_point=x0))
    return edges


def edge_admissible_data(coeffs: CoefficientSet, edge: BandEdge, *, x_max=None,
                         tol: float = RTOL, atol: float = ATOL,
                         basepoint_tol: float = BASEPOINT_TOL) -> AdmissibleEdgeData:
    """Normalized solution pair at an open-gap edge, extended to [x0, x_max].

    u0 = sqrt(|s_ell| / ell) u and v0 = sqrt(ell / |s_ell|) s, where u is
    the (anti)periodic solution at E_n and s its companion with W(u, s) = 1.
    One sweep over two periods provides the dense basis; the pair is then
    extended by the recursions u(x + ell) = sigma u(x) and
    s(x + ell) = sigma s(x) + s_ell u(x), which hold exactly, so the
    extension does not lose accuracy with x. Growth scales are alpha = 1,
    beta = sgn(D s_ell) x and rho = beta'/beta = 1/x.

    Fills edge.edge_data, edge.C_q, edge.mu_c, edge.dotD in place. C_q is
    the period average of u0^2 r and must match |dD(E_n)| / ell^2; the
    critical coupling mu_c = -ell^2 / (sigma dD(E_n)) assumes unit weight,
    so edge.unit_weight is set from a probe of r.
    """
    a, ell = _require_periodic(coeffs)
    E = float(edge.E_n)
    hi = a + 1e4 * ell if x_max is None else float(x_max)
    if not hi > a + 2 * ell:
        raise ConfigError("x_max must leave room past the first two periods")

    candidates = [float(edge.base_point)]
    candidates += [a + f * ell for f in EDGE_SHIFTS if abs(a + f * ell - candidates[0]) > 1e-12 * ell]
    x0 = s_ell = M = None
    for cand in candidates:
        Mc = _period_matrix(coeffs, E, cand, tol, atol)
        scale = 1.0 + float(np.abs(Mc).max())
        if abs(Mc[0, 1]) >= basepoint_tol * scale:
            x0, s_ell, M = cand, float(Mc[0, 1]), Mc
            break
    if x0 is None:
        raise DegenerateBasePoint(
            f"s(E, ell) vanishes at E={E:.12g} for every base-point shift; "
            "the gap at this energy is closed")
    D = float(M[0, 0] + M[1, 1])
    if abs(abs(D) - 2.0) > 1e-6:
        raise ConfigError(f"E={E:.12g} is not a band edge: |D| = {abs(D):.12g}")
    sigma = float(edge.sigma_n)
    if sigma * D <= 0.0:
        raise ConfigError(f"edge sign {edge.sigma_n} contradicts D(E) = {D:.12g}")
    m_slope = (sigma - M[0, 0]) / s_ell

    sol = _sl2_pass(coeffs, E, x0, tol=tol, atol=atol, spans=2.0)
    xs = np.linspace(x0, x0 + ell, 129)
    c_x, s_x = sol.eval(xs, 0), sol.eval(xs, 2)
    c_x1, s_x1 = sol.eval(xs + ell, 0), sol.eval(xs + ell, 2)
    u_x, u_x1 = c_x + m_slope * s_x, c_x1 + m_slope * s_x1
    scale_u = max(1.0, float(np.abs(u_x).max()))
    res_u = float(np.abs(u_x1 - sigma * u_x).max()) / scale_u
    scale_s = max(1.0, float(np.abs(s_x).max()))
    res_s = float(np.abs(s_x1 - sigma * s_x - s_ell * u_x).max()) / scale_s
    if res_u > EDGE_RESIDUAL or res_s > EDGE_RESIDUAL:
        raise ConfigError(
            f"E={E:.12g} carries no Floquet solution: periodicity residuals "
            f"{res_u:.3g} (u), {res_s:.3g} (s)")

    nu = math.sqrt(abs(s_ell) / ell)
    sgn_pow = (lambda k: np.where(np.mod(k, 2.0) < 0.5, 1.0, -1.0)) if sigma < 0 \
        else (lambda k: np.ones_like(k))

    def _extended(x, comp_pair, companion: bool):
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        k = np.floor((flat - x0) / ell)
        t = flat - k * ell
        base = np.asarray(sol.eval(t, comp_pair[0])) \
            + m_slope * np.asarray(sol.eval(t, comp_pair[1]))
        sk = sgn_pow(k)
        if not companion:
            out = sk * base
        else:
            comp = np.asarray(sol.eval(t, comp_pair[1]))
            out = sk * comp + k * (sk * sigma) * s_ell * base
        out = out.reshape(x.shape)
        return out if out.ndim else float(out)

    # component pairs (c-like, s-like): values are (0, 2), quasi-derivatives (1, 3)
    u0_fn = lambda x: nu * _extended(x, (0, 2), False)
    w0_fn = lambda x: nu * _extended(x, (1, 3), False)
    v0_fn = lambda x: _extended(x, (0, 2), True) / nu
    wv0_fn = lambda x: _extended(x, (1, 3), True) / nu

    b_sign = sigma * math.copysign(1.0, s_ell)
    if (b_sign > 0.0) != (edge.kind == "lower-edge"):
        raise ConfigError(
            f"edge kind {edge.kind!r} contradicts the Wronskian growth "
            f"direction sgn(D s_ell) = {b_sign:+.0f}")

    u0 = CallableTrajectory(coeffs, E, u0_fn, w0_fn, (x0, hi), label="edge-u0")
    v0 = CallableTrajectory(coeffs, E, v0_fn, wv0_fn, (x0, hi), label="edge-v0")
    data = AdmissibleEdgeData(
        E=E, u0=u0, v0=v0, alpha=1.0,
        beta=ex.mul(ex.const(b_sign), ex.parse("x")),
        rho=ex.parse("(div 1 x)"),
        label=f"{coeffs.label or 'periodic'} edge {edge.n} ({edge.kind})")

    r = coeffs.r
    c_q = _integral(lambda t: u0.u(t) ** 2 * r(t), x0, x0 + ell, 64) / ell
    dot_d = dotD_via_lemma(coeffs, E, base_point=x0, tol=tol, atol=atol,
                           basepoint_tol=basepoint_tol)
    c_q_dot = abs(dot_d) / ell ** 2
    if abs(c_q - c_q_dot) > CQ_TOL * max(abs(c_q), abs(c_q_dot)):
        raise QuadratureFailure(
            f"period average of u0^2 r is {c_q:.12g} but |dD|/ell^2 gives "
            f"{c_q_dot:.12g} at E={E:.12g}")

    probe = np.linspace(x0, x0 + ell, 33)
    edge.unit_weight = bool(float(np.abs(np.asarray(r(probe)) - 1.0).max()) <= 1e-9)
    edge.base_point = x0
    edge.s_at_ell = s_ell
    edge.edge_data = data
    edge.C_q = float(c_q)
    edge.dotD = float(dot_d)
    edge.mu_c = float(-ell ** 2 / (sigma * dot_d))
    return data


def free_periodic(ell: float = math.pi, interval=(0.0, math.inf)) -> CoefficientSet:
    """The constant background p = r = 1, q = 0 viewed as ell-periodic."""
    if not ell > 0:
        raise ConfigError("period must be positive")
    return CoefficientSet(Coefficient.constant(1.0), Coefficient.constant(0.0),
                          Coefficient.constant(1.0), interval, float(ell),
                          "free-periodic")


def band_table_to_csv(edges) -> str:
    """CSV `n,E_n,kind,sigma,s_ell,C_q,mu_c`; unfilled data prints as nan."""
    lines = ["n,E_n,kind,sigma,s_ell,C_q,mu_c"]
    for e in edges:
        cq = "nan" if e.C_q is None else format(float(e.C_q), ".17g")
        mc = "nan" if e.mu_c is None else format(float(e.mu_c), ".17g")
        lines.append(f"{int(e.n)},{format(float(e.E_n), '.17g')},{e.kind},"
                     f"{int(e.sigma_n)},{format(float(e.s_at_ell), '.17g')},{cq},{mc}")
    return "\n".join(lines) + "\n"


def write_band_table(path, edges) -> None:
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(band_table_to_csv(edges))
    except OSError as e:
        raise IoError(f"cannot write band table to {path}: {e}") from e


def discriminant_to_csv(curve) -> str:
    """CSV `z,D` for the sampled discriminant."""
    curve = np.asarray(curve, dtype=float)
    lines = ["z,D"]
    for z, d in curve:
        lines.append(f"{format(z, '.17g')},{format(d, '.17g')}")
    return "\n".join(lines) + "\n"


def write_discriminant_csv(path, curve) -> None:
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(discriminant_to_csv(curve))
    except OSError as e:
        raise IoError(f"cannot write discriminant curve to {path}: {e}") from e
