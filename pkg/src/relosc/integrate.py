"""High-level driver around the Runge-Kutta kernel.

Systems are described by a kind tag plus compiled coefficient programs; the
kernel integrates adaptively with embedded 5(4) error control and returns a
continuous (dense-output) solution. Quadratures ride along as extra state
components so that a single error control covers them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels as kn
from .errors import NonIntegrableCoefficient, StepUnderflow
from .expressions import Expr, ProgramSet

# default tolerances used across the package
RTOL = 1e-10
ATOL = 1e-12
VANISH_TOL = 1e-13
WRONSKIAN_DRIFT_TOL = 1e-7

_NSTATE = {
    kn.K_SL: 2, kn.K_SL_DAL: 3, kn.K_SL_ROFE: 3, kn.K_THETA: 2,
    kn.K_PSI: 6, kn.K_PHI: 5, kn.K_ANGLE_AB: 2, kn.K_SL_QUAD: 3,
    kn.K_SL2_QUAD: 5, kn.K_BASIS_QUAD: 5,
}


class SystemDef:
    """Compiled right-hand side: kind tag, programs, numeric parameters."""

    def __init__(self, kind: int, exprs: list[Expr], params: list[float] | None = None):
        self.kind = kind
        self.progs = ProgramSet(exprs)
        self.params = np.asarray(params if params is not None else [0.0], dtype=float)
        if kind == kn.K_QUAD:
            self.nstate = len(exprs)
        else:
            self.nstate = _NSTATE[kind]


@dataclass
class Solution:
    """Dense-output solution of one adaptive sweep."""

    x0: float
    x1: float
    xs: np.ndarray            # step boundaries, monotone in sweep direction
    ys: np.ndarray            # states at the boundaries
    dens: np.ndarray          # (nsteps, 5, n) dense coefficients (may be empty)
    y_eval: np.ndarray        # states at the requested eval points
    x_eval: np.ndarray
    y_final: np.ndarray
    nsteps: int

    @property
    def ascending(self) -> bool:
        return self.x1 >= self.x0

    def _locate(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        xs = self.xs
        if self.ascending:
            idx = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, self.nsteps - 1)
        else:
            idx = np.clip(np.searchsorted(-xs, -np.asarray(x), side="right") - 1, 0, self.nsteps - 1)
        h = xs[idx + 1] - xs[idx]
        th = (np.asarray(x, dtype=float) - xs[idx]) / h
        return idx, th

    def eval(self, x, component: int | None = None):
        """Dense evaluation at arbitrary points inside the sweep range."""
        if self.dens.size == 0:
            raise ValueError("solution stored without dense output")
        scalar = np.isscalar(x)
        xq = np.atleast_1d(np.asarray(x, dtype=float))
        idx, th = self._locate(xq)
        th = np.clip(th, 0.0, 1.0)
        om = 1.0 - th
        d = self.dens[idx]  # (m, 5, n)
        out = d[:, 0, :] + th[:, None] * (
            d[:, 1, :] + om[:, None] * (
                d[:, 2, :] + th[:, None] * (d[:, 3, :] + om[:, None] * d[:, 4, :])))
        if component is not None:
            out = out[:, component]
        if scalar:
            return out[0]
        return out

    def eval_derivative(self, x, component: int | None = None):
        """d/dx of the dense interpolant (one order lower accuracy)."""
        if self.dens.size == 0:
            raise ValueError("solution stored without dense output")
        scalar = np.isscalar(x)
        xq = np.atleast_1d(np.asarray(x, dtype=float))
        idx, th = self._locate(xq)
        th = np.clip(th, 0.0, 1.0)
        d = self.dens[idx]
        h = (self.xs[idx + 1] - self.xs[idx])[:, None]
        t = th[:, None]
        c1, c2, c3, c4 = d[:, 1, :], d[:, 2, :], d[:, 3, :], d[:, 4, :]
        # P = c0 + c1 t + c2 t(1-t) + c3 t^2(1-t) + c4 t^2(1-t)^2
        dp = (c1 + c2 * (1 - 2 * t) + c3 * (2 * t - 3 * t * t)
              + c4 * (2 * t * (1 - t) ** 2 - 2 * t * t * (1 - t))) / h
        if component is not None:
            dp = dp[:, component]
        if scalar:
            return dp[0]
        return dp


def integrate(system: SystemDef, y0, x0: float, x1: float, *,
              rtol: float = RTOL, atol: float = ATOL,
              max_step: float = math.inf, first_step: float = 0.0,
              angle_idx: int = -1, angle_cap: float = math.pi / 2,
              x_eval=None, store_dense: bool = True,
              cap_steps: int = 20_000_000) -> Solution:
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (system.nstate,):
        raise ValueError(f"state size {y0.shape} does not match system ({system.nstate},)")
    if x_eval is None:
        xev = np.zeros(0)
    else:
        xev = np.asarray(x_eval, dtype=float)
    p = system.progs
    status, status_x, nsteps, xs, ys, dens, y_eval, y_final = kn.integrate_raw(
        system.kind, p.code, p.arg, p.ofs, p.lens,
        p.tx, p.ty, p.td, p.tofs, p.tlen, p.tper,
        system.params, y0, float(x0), float(x1), rtol, atol,
        float(max_step), float(first_step), angle_idx, angle_cap,
        xev, True, store_dense, cap_steps)
    if status == kn.STATUS_BAD_COEFF:
        raise NonIntegrableCoefficient(
            f"coefficient failed (p<=0, r<=0 or NaN) near x = {status_x:.6g}")
    if status == kn.STATUS_UNDERFLOW:
        raise StepUnderflow(f"step size underflow near x = {status_x:.6g}")
    if status == kn.STATUS_MAX_STEPS:
        raise StepUnderflow(f"step budget exhausted near x = {status_x:.6g}")
    return Solution(float(x0), float(x1), np.array(xs), np.array(ys),
                    np.array(dens), np.array(y_eval), xev.copy(),
                    np.array(y_final), int(nsteps))


def warmup() -> None:
    """Trigger kernel compilation on a tiny problem (useful before timing)."""
    from .expressions import const
    sysd = SystemDef(kn.K_SL, [const(1.0), const(0.0), const(1.0)], [0.0])
    integrate(sysd, [0.0, 1.0], 0.0, 0.5, rtol=1e-8, atol=1e-10)
