"""Hot numerical kernels: expression VM and adaptive Runge-Kutta integrator.

Every function here is written in scalar no-Python style so that numba can
compile it. When numba is unavailable, or RELOSC_NO_NUMBA is set to a truthy
value, the same functions run as plain Python over numpy scalars (slow but
bit-compatible up to floating-point reassociation).
"""

import math
import os

import numpy as np

__all__ = ["NUMBA_ENABLED", "integrate_raw", "eval_program_scalar"]


def _numba_disabled() -> bool:
    v = os.environ.get("RELOSC_NO_NUMBA", "").strip().lower()
    return v not in ("", "0", "false", "no")


NUMBA_ENABLED = False
if not _numba_disabled():
    try:
        from numba import njit as _njit

        NUMBA_ENABLED = True
    except ImportError:
        NUMBA_ENABLED = False

if NUMBA_ENABLED:
    def _jit(func):
        return _njit(cache=True, nogil=True, fastmath=False)(func)
else:
    def _jit(func):
        return func


# --- expression opcodes (postfix programs) ---

OP_CONST = 0
OP_X = 1
OP_ADD = 2
OP_SUB = 3
OP_MUL = 4
OP_DIV = 5
OP_POW = 6
OP_NEG = 7
OP_LOG = 8       # log|t|
OP_EXP = 9
OP_SIN = 10
OP_COS = 11
OP_SQRT = 12
OP_ABS = 13
OP_SIGN = 14
OP_LOGK = 15     # iterated log, k in immediate
OP_LK = 16       # product x log x ... log_k x, k in immediate
OP_QN = 17       # -(1/4) sum_{j<n} L_j^-2, n in immediate
OP_INTERP = 18   # monotone-cubic table lookup, table index in immediate
OP_INTERPD = 19  # derivative of the table interpolant

# system kinds understood by the RHS dispatcher
K_SL = 1          # (u, w);        programs [p, q, r], params [lam]
K_SL_DAL = 2      # (u, w, I)      I' = 1/(p u^2)
K_SL_ROFE = 3     # (u, w, I)      I' = (q + 1/p - lam r)(u^2-w^2)/(u^2+w^2)^2
K_THETA = 4       # (theta, logrho)
K_PSI = 5         # (u, w, v, wv, psi, logR); programs [p0, q0, r, dq, dp]
K_PHI = 6         # (u, w, v, wv, phi); programs [p0,q0,r,dq,dp,b1,b1p,b2,b2p]
K_ANGLE_AB = 7    # (phi, Irho);   programs [rho, A, B, rem]
K_QUAD = 8        # (I_0..I_{m-1}) I_k' = g_k(x); programs [g_0..g_{m-1}]
K_SL_QUAD = 9     # (u, w, I)      I' = f1 u^2 + f2 w^2; programs [p,q,r,f1,f2]
K_SL2_QUAD = 10   # (c, wc, s, ws, I) I' = r (A0 c^2 + A1 c s + A2 s^2)
K_BASIS_QUAD = 11 # (u, w, v, wv, I) I' = f1 (u v)^2 + f2 (v w)^2

STATUS_OK = 0
STATUS_BAD_COEFF = 1
STATUS_UNDERFLOW = 2
STATUS_MAX_STEPS = 3
STATUS_STACK = 4


@_jit
def eval_program_scalar(code, arg, o, m, x,
                        tx, ty, td, tofs, tlen, tper, stack):
    """Run one postfix program on scalar x. Returns the value (NaN on error)."""
    sp = 0
    for i in range(o, o + m):
        op = code[i]
        a = arg[i]
        if op == OP_CONST:
            stack[sp] = a
            sp += 1
        elif op == OP_X:
            stack[sp] = x
            sp += 1
        elif op == OP_ADD:
            sp -= 1
            stack[sp - 1] = stack[sp - 1] + stack[sp]
        elif op == OP_SUB:
            sp -= 1
            stack[sp - 1] = stack[sp - 1] - stack[sp]
        elif op == OP_MUL:
            sp -= 1
            stack[sp - 1] = stack[sp - 1] * stack[sp]
        elif op == OP_DIV:
            sp -= 1
            d = stack[sp]
            if d == 0.0:
                stack[sp - 1] = math.nan
            else:
                stack[sp - 1] = stack[sp - 1] / d
        elif op == OP_POW:
            sp -= 1
            b = stack[sp - 1]
            e = stack[sp]
            if b < 0.0:
                # allow integral exponents on negative bases
                ei = round(e)
                if abs(e - ei) < 1e-12:
                    v = abs(b) ** e
                    if int(ei) % 2 != 0:
                        v = -v
                    stack[sp - 1] = v
                else:
                    stack[sp - 1] = math.nan
            elif b == 0.0 and e < 0.0:
                stack[sp - 1] = math.nan
            else:
                stack[sp - 1] = b ** e
        elif op == OP_NEG:
            stack[sp - 1] = -stack[sp - 1]
        elif op == OP_LOG:
            t = abs(stack[sp - 1])
            stack[sp - 1] = math.log(t) if t > 0.0 else math.nan
        elif op == OP_EXP:
            stack[sp - 1] = math.exp(stack[sp - 1])
        elif op == OP_SIN:
            stack[sp - 1] = math.sin(stack[sp - 1])
        elif op == OP_COS:
            stack[sp - 1] = math.cos(stack[sp - 1])
        elif op == OP_SQRT:
            t = stack[sp - 1]
            stack[sp - 1] = math.sqrt(t) if t >= 0.0 else math.nan
        elif op == OP_ABS:
            stack[sp - 1] = abs(stack[sp - 1])
        elif op == OP_SIGN:
            t = stack[sp - 1]
            stack[sp - 1] = 0.0 if t == 0.0 else (1.0 if t > 0.0 else -1.0)
        elif op == OP_LOGK:
            k = int(a)
            v = stack[sp - 1]
            for _ in range(k):
                v = abs(v)
                v = math.log(v) if v > 0.0 else math.nan
            stack[sp - 1] = v
        elif op == OP_LK:
            k = int(a)
            v = stack[sp - 1]
            prod = v
            y = v
            for _ in range(k):
                y = abs(y)
                y = math.log(y) if y > 0.0 else math.nan
                prod *= y
            stack[sp - 1] = prod
        elif op == OP_QN:
            nq = int(a)
            v = stack[sp - 1]
            y = v
            L = v
            q = 0.0
            for j in range(nq):
                q -= 0.25 / (L * L)
                y = abs(y)
                y = math.log(y) if y > 0.0 else math.nan
                L = L * y
            stack[sp - 1] = q
        elif op == OP_INTERP or op == OP_INTERPD:
            k = int(a)
            off = tofs[k]
            npts = tlen[k]
            per = tper[k]
            t = stack[sp - 1]
            if per > 0.0:
                t = tx[off] + ((t - tx[off]) % per)
            # clamp to table range, then locate segment by bisection
            lo = off
            hi = off + npts - 1
            if t <= tx[lo]:
                seg = lo
            elif t >= tx[hi]:
                seg = hi - 1
            else:
                while hi - lo > 1:
                    mid = (lo + hi) // 2
                    if tx[mid] <= t:
                        lo = mid
                    else:
                        hi = mid
                seg = lo
            h = tx[seg + 1] - tx[seg]
            s = (t - tx[seg]) / h
            y0 = ty[seg]
            y1 = ty[seg + 1]
            d0 = td[seg]
            d1 = td[seg + 1]
            s2 = s * s
            s3 = s2 * s
            if op == OP_INTERP:
                h00 = 2.0 * s3 - 3.0 * s2 + 1.0
                h10 = s3 - 2.0 * s2 + s
                h01 = -2.0 * s3 + 3.0 * s2
                h11 = s3 - s2
                stack[sp - 1] = h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1
            else:
                g00 = (6.0 * s2 - 6.0 * s) / h
                g10 = 3.0 * s2 - 4.0 * s + 1.0
                g01 = (-6.0 * s2 + 6.0 * s) / h
                g11 = 3.0 * s2 - 2.0 * s
                stack[sp - 1] = g00 * y0 + g10 * d0 + g01 * y1 + g11 * d1
        else:
            return math.nan
    if sp != 1:
        return math.nan
    return stack[0]


@_jit
def _rhs(kind, x, y, dy, code, arg, ofs, lens,
         tx, ty, td, tofs, tlen, tper, params, stack):
    """Fill dy for the given system kind. Returns a STATUS_* code."""
    if kind == K_SL or kind == K_SL_DAL or kind == K_SL_ROFE or kind == K_SL_QUAD:
        p = eval_program_scalar(code, arg, ofs[0], lens[0], x, tx, ty, td, tofs, tlen, tper, stack)
        q = eval_program_scalar(code, arg, ofs[1], lens[1], x, tx, ty, td, tofs, tlen, tper, stack)
        r = eval_program_scalar(code, arg, ofs[2], lens[2], x, tx, ty, td, tofs, tlen, tper, stack)
        if not (p > 0.0) or not (r > 0.0):
            return STATUS_BAD_COEFF
        lam = params[0]
        u = y[0]
        w = y[1]
        dy[0] = w / p
        dy[1] = (q - lam * r) * u
        if kind == K_SL_DAL:
            dy[2] = 1.0 / (p * u * u)
        elif kind == K_SL_ROFE:
            nrm = u * u + w * w
            dy[2] = (q + 1.0 / p - lam * r) * (u * u - w * w) / (nrm * nrm)
        elif kind == K_SL_QUAD:
            f1 = eval_program_scalar(code, arg, ofs[3], lens[3], x, tx, ty, td, tofs, tlen, tper, stack)
            f2 = eval_program_scalar(code, arg, ofs[4], lens[4], x, tx, ty, td, tofs, tlen, tper, stack)
            dy[2] = f1 * u * u + f2 * w * w
        return STATUS_OK
    if kind == K_THETA:
        p = eval_program_scalar(code, arg, ofs[0], lens[0], x, tx, ty, td, tofs, tlen, tper, stack)
        q = eval_program_scalar(code, arg, ofs[1], lens[1], x, tx, ty, td, tofs, tlen, tper, stack)
        r = eval_program_scalar(code, arg, ofs[2], lens[2], x, tx, ty, td, tofs, tlen, tper, stack)
        if not (p > 0.0) or not (r > 0.0):
            return STATUS_BAD_COEFF
        lam = params[0]
        th = y[0]
        s = math.sin(th)
        c = math.cos(th)
        dy[0] = c * c / p + (lam * r - q) * s * s
        dy[1] = (1.0 / p + q - lam * r) * s * c
        return STATUS_OK
    if kind == K_PSI:
        p0 = eval_program_scalar(code, arg, ofs[0], lens[0], x, tx, ty, td, tofs, tlen, tper, stack)
        q0 = eval_program_scalar(code, arg, ofs[1], lens[1], x, tx, ty, td, tofs, tlen, tper, stack)
        r = eval_program_scalar(code, arg, ofs[2], lens[2], x, tx, ty, td, tofs, tlen, tper, stack)
        dq = eval_program_scalar(code, arg, ofs[3], lens[3], x, tx, ty, td, tofs, tlen, tper, stack)
        dp = eval_program_scalar(code, arg, ofs[4], lens[4], x, tx, ty, td, tofs, tlen, tper, stack)
        if not (p0 > 0.0) or not (r > 0.0):
            return STATUS_BAD_COEFF
        lam = params[0]
        u = y[0]
        w = y[1]
        v = y[2]
        wv = y[3]
        psi = y[4]
        s = math.sin(psi)
        c = math.cos(psi)
        dy[0] = w / p0
        dy[1] = (q0 - lam * r) * u
        dy[2] = wv / p0
        dy[3] = (q0 - lam * r) * v
        au = u * c - v * s
        aw = w * c - wv * s
        dy[4] = -dq * au * au - dp * aw * aw
        dy[5] = dq * (v * s - u * c) * (u * s + v * c) + dp * (wv * s - w * c) * (w * s + wv * c)
        return STATUS_OK
    if kind == K_PHI:
        p0 = eval_program_scalar(code, arg, ofs[0], lens[0], x, tx, ty, td, tofs, tlen, tper, stack)
        q0 = eval_program_scalar(code, arg, ofs[1], lens[1], x, tx, ty, td, tofs, tlen, tper, stack)
        r = eval_program_scalar(code, arg, ofs[2], lens[2], x, tx, ty, td, tofs, tlen, tper, stack)
        dq = eval_program_scalar(code, arg, ofs[3], lens[3], x, tx, ty, td, tofs, tlen, tper, stack)
        dp = eval_program_scalar(code, arg, ofs[4], lens[4], x, tx, ty, td, tofs, tlen, tper, stack)
        b1 = eval_program_scalar(code, arg, ofs[5], lens[5], x, tx, ty, td, tofs, tlen, tper, stack)
        b1p = eval_program_scalar(code, arg, ofs[6], lens[6], x, tx, ty, td, tofs, tlen, tper, stack)
        b2 = eval_program_scalar(code, arg, ofs[7], lens[7], x, tx, ty, td, tofs, tlen, tper, stack)
        b2p = eval_program_scalar(code, arg, ofs[8], lens[8], x, tx, ty, td, tofs, tlen, tper, stack)
        if not (p0 > 0.0) or not (r > 0.0) or b1 == 0.0:
            return STATUS_BAD_COEFF
        lam = params[0]
        u = y[0]
        w = y[1]
        v = y[2]
        wv = y[3]
        phi = y[4]
        s = math.sin(phi)
        c = math.cos(phi)
        dy[0] = w / p0
        dy[1] = (q0 - lam * r) * u
        dy[2] = wv / p0
        dy[3] = (q0 - lam * r) * v
        au = b1 * u * c - (v - b2 * u) * s
        aw = b1 * w * c - (wv - b2 * w) * s
        dy[4] = (b1p / b1) * s * c + (b2p / b1) * s * s \
            - (dq / b1) * au * au - (dp / b1) * aw * aw
        return STATUS_OK
    if kind == K_ANGLE_AB:
        rho = eval_program_scalar(code, arg, ofs[0], lens[0], x, tx, ty, td, tofs, tlen, tper, stack)
        A = eval_program_scalar(code, arg, ofs[1], lens[1], x, tx, ty, td, tofs, tlen, tper, stack)
        B = eval_program_scalar(code, arg, ofs[2], lens[2], x, tx, ty, td, tofs, tlen, tper, stack)
        rem = eval_program_scalar(code, arg, ofs[3], lens[3], x, tx, ty, td, tofs, tlen, tper, stack)
        phi = y[0]
        s = math.sin(phi)
        c = math.cos(phi)
        dy[0] = rho * (A * s * s + s * c + B * c * c) + rem
        dy[1] = rho
        return STATUS_OK
    if kind == K_QUAD:
        for j in range(y.shape[0]):
            dy[j] = eval_program_scalar(code, arg, ofs[j], lens[j], x, tx, ty, td, tofs, tlen, tper, stack)
        return STATUS_OK
    if kind == K_SL2_QUAD:
        p = eval_program_scalar(code, arg, ofs[0], lens[0], x, tx, ty, td, tofs, tlen, tper, stack)
        q = eval_program_scalar(code, arg, ofs[1], lens[1], x, tx, ty, td, tofs, tlen, tper, stack)
        r = eval_program_scalar(code, arg, ofs[2], lens[2], x, tx, ty, td, tofs, tlen, tper, stack)
        if not (p > 0.0) or not (r > 0.0):
            return STATUS_BAD_COEFF
        lam = params[0]
        a0 = params[1]
        a1 = params[2]
        a2 = params[3]
        u1 = y[0]
        w1 = y[1]
        u2 = y[2]
        w2 = y[3]
        dy[0] = w1 / p
        dy[1] = (q - lam * r) * u1
        dy[2] = w2 / p
        dy[3] = (q - lam * r) * u2
        dy[4] = r * (a0 * u1 * u1 + a1 * u1 * u2 + a2 * u2 * u2)
        return STATUS_OK
    if kind == K_BASIS_QUAD:
        p0 = eval_program_scalar(code, arg, ofs[0], lens[0], x, tx, ty, td, tofs, tlen, tper, stack)
        q0 = eval_program_scalar(code, arg, ofs[1], lens[1], x, tx, ty, td, tofs, tlen, tper, stack)
        r = eval_program_scalar(code, arg, ofs[2], lens[2], x, tx, ty, td, tofs, tlen, tper, stack)
        f1 = eval_program_scalar(code, arg, ofs[3], lens[3], x, tx, ty, td, tofs, tlen, tper, stack)
        f2 = eval_program_scalar(code, arg, ofs[4], lens[4], x, tx, ty, td, tofs, tlen, tper, stack)
        if not (p0 > 0.0) or not (r > 0.0):
            return STATUS_BAD_COEFF
        lam = params[0]
        u = y[0]
        w = y[1]
        v = y[2]
        wv = y[3]
        dy[0] = w / p0
        dy[1] = (q0 - lam * r) * u
        dy[2] = wv / p0
        dy[3] = (q0 - lam * r) * v
        uv = u * v
        vw = v * w
        dy[4] = f1 * uv * uv + f2 * vw * vw
        return STATUS_OK
    return STATUS_BAD_COEFF


# Dormand-Prince 5(4) tableau, FSAL form
_A21 = 1.0 / 5.0
_A31 = 3.0 / 40.0
_A32 = 9.0 / 40.0
_A41 = 44.0 / 45.0
_A42 = -56.0 / 15.0
_A43 = 32.0 / 9.0
_A51 = 19372.0 / 6561.0
_A52 = -25360.0 / 2187.0
_A53 = 64448.0 / 6561.0
_A54 = -212.0 / 729.0
_A61 = 9017.0 / 3168.0
_A62 = -355.0 / 33.0
_A63 = 46732.0 / 5247.0
_A64 = 49.0 / 176.0
_A65 = -5103.0 / 18656.0
_B1 = 35.0 / 384.0
_B3 = 500.0 / 1113.0
_B4 = 125.0 / 192.0
_B5 = -2187.0 / 6784.0
_B6 = 11.0 / 84.0
_E1 = 71.0 / 57600.0
_E3 = -71.0 / 16695.0
_E4 = 71.0 / 1920.0
_E5 = -17253.0 / 339200.0
_E6 = 22.0 / 525.0
_E7 = -1.0 / 40.0
_C2 = 1.0 / 5.0
_C3 = 3.0 / 10.0
_C4 = 4.0 / 5.0
_C5 = 8.0 / 9.0
# dense output weights
_D1 = -12715105075.0 / 11282082432.0
_D3 = 87487479700.0 / 32700410799.0
_D4 = -10690763975.0 / 1880347072.0
_D5 = 701980252875.0 / 199316789632.0
_D6 = -1453857185.0 / 822651844.0
_D7 = 69997945.0 / 29380423.0


@_jit
def integrate_raw(kind, code, arg, ofs, lens,
                  tx, ty, td, tofs, tlen, tper,
                  params, y0, x0, x1, rtol, atol,
                  max_step, first_step, angle_idx, angle_cap,
                  x_eval, store_steps, store_dense, cap_steps):
    """Adaptive Dormand-Prince 5(4) sweep from x0 to x1.

    Returns (status, status_x, nsteps, xs, ys, dens, y_eval, y_final).
    xs has nsteps+1 entries (step boundaries, including x0), ys the states at
    those boundaries, dens the per-step dense coefficients (nsteps, 5, n).
    y_eval holds dense-output states at the requested x_eval points.
    """
    n = y0.shape[0]
    nev = x_eval.shape[0]
    direction = 1.0 if x1 >= x0 else -1.0
    span = abs(x1 - x0)

    stack = np.empty(64)
    y = y0.copy()
    ynew = np.empty(n)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    k5 = np.empty(n)
    k6 = np.empty(n)
    k7 = np.empty(n)
    ytmp = np.empty(n)
    yerr = np.empty(n)

    capacity = 512
    xs = np.empty(capacity)
    ys = np.empty((capacity, n))
    if store_dense:
        dens = np.empty((capacity, 5, n))
    else:
        dens = np.empty((1, 5, n))
    y_eval = np.empty((nev, n))
    y_eval[:] = math.nan

    xs[0] = x0
    for j in range(n):
        ys[0, j] = y[j]

    x = x0
    st = _rhs(kind, x, y, k1, code, arg, ofs, lens, tx, ty, td, tofs, tlen, tper, params, stack)
    if st != STATUS_OK:
        return st, x, 0, xs[:1], ys[:1], dens[:0], y_eval, y

    # initial step size guess from the first derivative scale
    d0 = 0.0
    d1 = 0.0
    for j in range(n):
        sc = atol + rtol * abs(y[j])
        d0 = max(d0, abs(y[j]) / sc)
        d1 = max(d1, abs(k1[j]) / sc)
    if d1 > 0.0:
        h = 0.01 * d0 / d1 if d0 > 0.0 else 1e-6 * span
    else:
        h = 1e-6 * span
    if h <= 0.0 or h != h:
        h = 1e-6 * span
    if first_step > 0.0:
        h = first_step
    h = min(h, max_step, span)
    if h <= 0.0:
        h = 1e-12 if span == 0.0 else 1e-6 * span

    hmin = 1e-14 * max(abs(x0), abs(x1), 1.0)
    nsteps = 0
    jev = 0
    status = STATUS_OK
    status_x = x0

    while direction * (x1 - x) > 0.0:
        if nsteps >= cap_steps:
            status = STATUS_MAX_STEPS
            status_x = x
            break
        if h < hmin:
            status = STATUS_UNDERFLOW
            status_x = x
            break
        if direction * (x + direction * h - x1) > 0.0:
            h = abs(x1 - x)
        hd = direction * h

        bad = 0
        for j in range(n):
            ytmp[j] = y[j] + hd * _A21 * k1[j]
        bad |= _rhs(kind, x + _C2 * hd, ytmp, k2, code, arg, ofs, lens, tx, ty, td, tofs, tlen, tper, params, stack)
        for j in range(n):
            ytmp[j] = y[j] + hd * (_A31 * k1[j] + _A32 * k2[j])
        bad |= _rhs(kind, x + _C3 * hd, ytmp, k3, code, arg, ofs, lens, tx, ty, td, tofs, tlen, tper, params, stack)
        for j in range(n):
            ytmp[j] = y[j] + hd * (_A41 * k1[j] + _A42 * k2[j] + _A43 * k3[j])
        bad |= _rhs(kind, x + _C4 * hd, ytmp, k4, code, arg, ofs, lens, tx, ty, td, tofs, tlen, tper, params, stack)
        for j in range(n):
            ytmp[j] = y[j] + hd * (_A51 * k1[j] + _A52 * k2[j] + _A53 * k3[j] + _A54 * k4[j])
        bad |= _rhs(kind, x + _C5 * hd, ytmp, k5, code, arg, ofs, lens, tx, ty, td, tofs, tlen, tper, params, stack)
        for j in range(n):
            ytmp[j] = y[j] + hd * (_A61 * k1[j] + _A62 * k2[j] + _A63 * k3[j] + _A64 * k4[j] + _A65 * k5[j])
        bad |= _rhs(kind, x + hd, ytmp, k6, code, arg, ofs, lens, tx, ty, td, tofs, tlen, tper, params, stack)
        for j in range(n):
            ynew[j] = y[j] + hd * (_B1 * k1[j] + _B3 * k3[j] + _B4 * k4[j] + _B5 * k5[j] + _B6 * k6[j])
        bad |= _rhs(kind, x + hd, ynew, k7, code, arg, ofs, lens, tx, ty, td, tofs, tlen, tper, params, stack)

        if bad != 0:
            # a genuinely bad coefficient at the current point is fatal;
            # NaNs further into the step just shrink it
            st0 = _rhs(kind, x, y, ytmp, code, arg, ofs, lens, tx, ty, td, tofs, tlen, tper, params, stack)
            if st0 != STATUS_OK:
                status = st0
                status_x = x
                break
            h *= 0.5
            continue

        errnorm = 0.0
        ok = True
        for j in range(n):
            e = hd * (_E1 * k1[j] + _E3 * k3[j] + _E4 * k4[j] + _E5 * k5[j] + _E6 * k6[j] + _E7 * k7[j])
            if ynew[j] != ynew[j]:
                ok = False
                break
            sc = atol + rtol * max(abs(y[j]), abs(ynew[j]))
            q = e / sc
            errnorm += q * q
        if not ok:
            h *= 0.5
            continue
        errnorm = math.sqrt(errnorm / n)

        if errnorm > 1.0:
            fac = 0.9 * errnorm ** -0.2
            if fac < 0.2:
                fac = 0.2
            h *= fac
            continue

        if angle_idx >= 0:
            dang = abs(ynew[angle_idx] - y[angle_idx])
            if dang > angle_cap:
                h *= 0.5 * angle_cap / dang
                continue

        # accepted
        nsteps += 1
        if nsteps + 1 > capacity:
            newcap = capacity * 2
            xs2 = np.empty(newcap)
            ys2 = np.empty((newcap, n))
            xs2[:capacity] = xs
            ys2[:capacity] = ys
            xs = xs2
            ys = ys2
            if store_dense:
                dens2 = np.empty((newcap, 5, n))
                dens2[:capacity] = dens
                dens = dens2
            capacity = newcap

        need_dense = store_dense
        if jev < nev and direction * (x_eval[jev] - (x + hd)) <= 0.0:
            need_dense = True
        if need_dense:
            for j in range(n):
                ydiff = ynew[j] - y[j]
                bspl = hd * k1[j] - ydiff
                c0 = y[j]
                c1 = ydiff
                c2 = bspl
                c3 = ydiff - hd * k7[j] - bspl
                c4 = hd * (_D1 * k1[j] + _D3 * k3[j] + _D4 * k4[j] + _D5 * k5[j] + _D6 * k6[j] + _D7 * k7[j])
                if store_dense:
                    dens[nsteps - 1, 0, j] = c0
                    dens[nsteps - 1, 1, j] = c1
                    dens[nsteps - 1, 2, j] = c2
                    dens[nsteps - 1, 3, j] = c3
                    dens[nsteps - 1, 4, j] = c4
                else:
                    dens[0, 0, j] = c0
                    dens[0, 1, j] = c1
                    dens[0, 2, j] = c2
                    dens[0, 3, j] = c3
                    dens[0, 4, j] = c4
            drow = nsteps - 1 if store_dense else 0
            while jev < nev and direction * (x_eval[jev] - (x + hd)) <= 0.0:
                th = (x_eval[jev] - x) / hd
                if th < 0.0:
                    th = 0.0
                om = 1.0 - th
                for j in range(n):
                    y_eval[jev, j] = dens[drow, 0, j] + th * (
                        dens[drow, 1, j] + om * (
                            dens[drow, 2, j] + th * (
                                dens[drow, 3, j] + om * dens[drow, 4, j])))
                jev += 1

        x = x + hd
        xs[nsteps] = x
        for j in range(n):
            y[j] = ynew[j]
            ys[nsteps, j] = ynew[j]
            k1[j] = k7[j]

        if errnorm > 1e-30:
            fac = 0.9 * errnorm ** -0.2
        else:
            fac = 5.0
        if fac > 5.0:
            fac = 5.0
        h = min(h * fac, max_step)

    ndense = nsteps if store_dense else 0
    return status, status_x, nsteps, xs[:nsteps + 1], ys[:nsteps + 1], dens[:ndense], y_eval, y
