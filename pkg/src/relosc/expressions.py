"""Coefficient descriptors: tiny prefix-notation expression trees.

Closed-form coefficients are written as s-expressions, e.g.
``(div mu (pow x 2))`` for mu/x^2. Trees carry exact symbolic derivatives
within the same grammar and compile to flat postfix programs executed by the
integration kernels. Sampled-grid coefficients enter through monotone-cubic
interpolation tables and participate in the same algebra.

Grammar (all operators prefix, parentheses mandatory for calls):
    atoms       number | x | pi | e | <parameter name>
    arithmetic  (add a b ...) (sub a b) (mul a b ...) (div a b)
                (pow a b) (neg a)
    functions   (log a) (exp a) (sin a) (cos a) (sqrt a) (abs a) (sign a)
    iterated    (logk k a)   k-fold log, log |.| at each level
                (lk n a)     a * log a * ... * log_n a
                (qn n a)     -(1/4) sum_{j<n} lk(j, a)^-2
log is log|.| throughout, matching the iterated-log convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels as kn
from .errors import ConfigError

_UNARY = {"neg", "log", "exp", "sin", "cos", "sqrt", "abs", "sign"}
_BINARY = {"add", "sub", "mul", "div", "pow"}
_INDEXED = {"logk", "lk", "qn"}

_OPCODE = {
    "add": kn.OP_ADD, "sub": kn.OP_SUB, "mul": kn.OP_MUL, "div": kn.OP_DIV,
    "pow": kn.OP_POW, "neg": kn.OP_NEG, "log": kn.OP_LOG, "exp": kn.OP_EXP,
    "sin": kn.OP_SIN, "cos": kn.OP_COS, "sqrt": kn.OP_SQRT, "abs": kn.OP_ABS,
    "sign": kn.OP_SIGN, "logk": kn.OP_LOGK, "lk": kn.OP_LK, "qn": kn.OP_QN,
    "interp": kn.OP_INTERP, "interpd": kn.OP_INTERPD,
}


class InterpTable:
    """Knots, values and endpoint-safe monotone-cubic slopes of a sampled grid."""

    def __init__(self, xs, ys, period: float | None = None):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if xs.ndim != 1 or xs.shape != ys.shape or xs.size < 2:
            raise ConfigError("grid coefficient needs matching 1d knots/values")
        if np.any(np.diff(xs) <= 0):
            raise ConfigError("grid knots must be strictly increasing")
        from scipy.interpolate import PchipInterpolator

        self.xs = xs
        self.ys = ys
        self.ds = PchipInterpolator(xs, ys).derivative()(xs)
        self.period = float(period) if period else 0.0


@dataclass(eq=False)
class Expr:
    op: str
    args: tuple = ()
    val: float = 0.0
    name: str = ""
    k: int = 0
    table: InterpTable | None = field(default=None, repr=False)

    # -- construction helpers (fold the easy constants) --

    def __add__(self, other):
        return add(self, _as_expr(other))

    def __radd__(self, other):
        return add(_as_expr(other), self)

    def __sub__(self, other):
        return sub(self, _as_expr(other))

    def __rsub__(self, other):
        return sub(_as_expr(other), self)

    def __mul__(self, other):
        return mul(self, _as_expr(other))

    def __rmul__(self, other):
        return mul(_as_expr(other), self)

    def __truediv__(self, other):
        return div(self, _as_expr(other))

    def __rtruediv__(self, other):
        return div(_as_expr(other), self)

    def __pow__(self, other):
        return pow_(self, _as_expr(other))

    def __rpow__(self, other):
        return pow_(_as_expr(other), self)

    def __neg__(self):
        return neg(self)

    def __call__(self, x):
        return evaluate(self, x)

    def __str__(self):
        return to_prefix(self)


X = Expr("x")


def const(v: float) -> Expr:
    return Expr("const", val=float(v))


def param(name: str) -> Expr:
    return Expr("param", name=name)


def _as_expr(v) -> Expr:
    if isinstance(v, Expr):
        return v
    return const(v)


def _is_const(e: Expr, v=None) -> bool:
    if e.op != "const":
        return False
    return v is None or e.val == v


def add(a, b) -> Expr:
    a, b = _as_expr(a), _as_expr(b)
    if _is_const(a) and _is_const(b):
        return const(a.val + b.val)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Expr("add", (a, b))


def sub(a, b) -> Expr:
    a, b = _as_expr(a), _as_expr(b)
    if _is_const(a) and _is_const(b):
        return const(a.val - b.val)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    return Expr("sub", (a, b))


def mul(a, b) -> Expr:
    a, b = _as_expr(a), _as_expr(b)
    if _is_const(a) and _is_const(b):
        return const(a.val * b.val)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return const(0.0)
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return Expr("mul", (a, b))


def div(a, b) -> Expr:
    a, b = _as_expr(a), _as_expr(b)
    if _is_const(a) and _is_const(b) and b.val != 0.0:
        return const(a.val / b.val)
    if _is_const(a, 0.0):
        return const(0.0)
    if _is_const(b, 1.0):
        return a
    return Expr("div", (a, b))


def neg(a) -> Expr:
    a = _as_expr(a)
    if _is_const(a):
        return const(-a.val)
    return Expr("neg", (a,))


def pow_(a, b) -> Expr:
    a, b = _as_expr(a), _as_expr(b)
    if _is_const(a) and _is_const(b):
        return const(a.val ** b.val)
    if _is_const(b, 1.0):
        return a
    if _is_const(b, 0.0):
        return const(1.0)
    return Expr("pow", (a, b))


def fn(op: str, a) -> Expr:
    return Expr(op, (_as_expr(a),))


def logk(k: int, a) -> Expr:
    if k == 0:
        return _as_expr(a)
    return Expr("logk", (_as_expr(a),), k=int(k))


def lk(n: int, a) -> Expr:
    return Expr("lk", (_as_expr(a),), k=int(n))


def qn(n: int, a) -> Expr:
    if n == 0:
        return const(0.0)
    return Expr("qn", (_as_expr(a),), k=int(n))


def interp(table: InterpTable) -> Expr:
    return Expr("interp", table=table)


# -- parsing --

def _tokenize(text: str):
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch in "()":
            out.append(ch)
            i += 1
        else:
            j = i
            while j < len(text) and not text[j].isspace() and text[j] not in "()":
                j += 1
            out.append(text[i:j])
            i = j
    return out


def _atom(tok: str) -> Expr:
    if tok == "x":
        return X
    if tok == "pi":
        return const(math.pi)
    if tok == "e":
        return const(math.e)
    try:
        return const(float(tok))
    except ValueError:
        pass
    if tok.replace("_", "").isalnum() and tok[0].isalpha():
        return param(tok)
    raise ConfigError(f"unrecognized token {tok!r} in expression")


def parse(text: str) -> Expr:
    """Parse a prefix s-expression into a tree."""
    toks = _tokenize(text)
    pos = 0

    def walk() -> Expr:
        nonlocal pos
        if pos >= len(toks):
            raise ConfigError("unexpected end of expression")
        tok = toks[pos]
        pos += 1
        if tok != "(":
            if tok == ")":
                raise ConfigError("unexpected ')'")
            return _atom(tok)
        if pos >= len(toks):
            raise ConfigError("unexpected end of expression")
        head = toks[pos]
        pos += 1
        args = []
        while pos < len(toks) and toks[pos] != ")":
            args.append(walk())
        if pos >= len(toks):
            raise ConfigError("missing ')'")
        pos += 1
        return _apply(head, args)

    e = walk()
    if pos != len(toks):
        raise ConfigError("trailing tokens after expression")
    return e


def _apply(head: str, args: list) -> Expr:
    if head in _BINARY:
        if head in ("add", "mul") and len(args) > 2:
            out = args[0]
            f = add if head == "add" else mul
            for a in args[1:]:
                out = f(out, a)
            return out
        if len(args) != 2:
            raise ConfigError(f"{head} expects 2 arguments")
        return {"add": add, "sub": sub, "mul": mul, "div": div, "pow": pow_}[head](*args)
    if head in _UNARY:
        if len(args) != 1:
            raise ConfigError(f"{head} expects 1 argument")
        if head == "neg":
            return neg(args[0])
        return fn(head, args[0])
    if head in _INDEXED:
        if len(args) != 2 or args[0].op != "const" or args[0].val != int(args[0].val) or args[0].val < 0:
            raise ConfigError(f"{head} expects a nonnegative integer index and one argument")
        idx = int(args[0].val)
        return {"logk": logk, "lk": lk, "qn": qn}[head](idx, args[1])
    raise ConfigError(f"unknown operator {head!r}")


def to_prefix(e: Expr) -> str:
    if e.op == "const":
        return repr(e.val)
    if e.op == "x":
        return "x"
    if e.op == "param":
        return e.name
    if e.op in _INDEXED:
        return f"({e.op} {e.k} {to_prefix(e.args[0])})"
    if e.op in ("interp", "interpd"):
        return f"({e.op} <table>)"
    inner = " ".join(to_prefix(a) for a in e.args)
    return f"({e.op} {inner})"


# -- tree transforms --

def params_of(e: Expr) -> set:
    if e.op == "param":
        return {e.name}
    out = set()
    for a in e.args:
        out |= params_of(a)
    return out


def subst(e: Expr, mapping: dict) -> Expr:
    """Replace parameters by numeric values (or other expressions)."""
    if e.op == "param":
        if e.name in mapping:
            return _as_expr(mapping[e.name])
        return e
    if not e.args:
        return e
    args = tuple(subst(a, mapping) for a in e.args)
    return _rebuild(e, args)


def shift_x(e: Expr, dx: float) -> Expr:
    """Rewrite x -> x + dx (base-point change)."""
    if dx == 0.0:
        return e
    if e.op == "x":
        return add(X, const(dx))
    if not e.args:
        return e
    return _rebuild(e, tuple(shift_x(a, dx) for a in e.args))


def _rebuild(e: Expr, args: tuple) -> Expr:
    if e.op == "add":
        return add(*args)
    if e.op == "sub":
        return sub(*args)
    if e.op == "mul":
        return mul(*args)
    if e.op == "div":
        return div(*args)
    if e.op == "pow":
        return pow_(*args)
    if e.op == "neg":
        return neg(args[0])
    if e.op in _UNARY:
        return fn(e.op, args[0])
    if e.op == "logk":
        return logk(e.k, args[0])
    if e.op == "lk":
        return lk(e.k, args[0])
    if e.op == "qn":
        return qn(e.k, args[0])
    return Expr(e.op, args, e.val, e.name, e.k, e.table)


def diff(e: Expr) -> Expr:
    """Exact d/dx within the grammar.

    d logk(k, f) = f' / lk(k-1, f); d lk(n, f) = f' lk(n,f) sum_{j<=n} lk(j,f)^-1;
    d qn(n, f) follows by the chain rule from those two.
    """
    op = e.op
    if op in ("const", "param"):
        return const(0.0)
    if op == "x":
        return const(1.0)
    if op == "add":
        return add(diff(e.args[0]), diff(e.args[1]))
    if op == "sub":
        return sub(diff(e.args[0]), diff(e.args[1]))
    if op == "mul":
        f, g = e.args
        return add(mul(diff(f), g), mul(f, diff(g)))
    if op == "div":
        f, g = e.args
        return div(sub(mul(diff(f), g), mul(f, diff(g))), mul(g, g))
    if op == "pow":
        f, g = e.args
        if g.op == "const":
            return mul(mul(g, pow_(f, const(g.val - 1.0))), diff(f))
        # f^g = exp(g log f); valid for f > 0
        return mul(pow_(f, g), add(mul(diff(g), fn("log", f)), div(mul(g, diff(f)), f)))
    if op == "neg":
        return neg(diff(e.args[0]))
    if op == "log":
        f = e.args[0]
        return div(diff(f), f)
    if op == "exp":
        return mul(e, diff(e.args[0]))
    if op == "sin":
        return mul(fn("cos", e.args[0]), diff(e.args[0]))
    if op == "cos":
        return neg(mul(fn("sin", e.args[0]), diff(e.args[0])))
    if op == "sqrt":
        return div(diff(e.args[0]), mul(const(2.0), e))
    if op == "abs":
        return mul(fn("sign", e.args[0]), diff(e.args[0]))
    if op == "sign":
        return const(0.0)
    if op == "logk":
        f = e.args[0]
        return div(diff(f), lk(e.k - 1, f))
    if op == "lk":
        f = e.args[0]
        s = div(const(1.0), lk(0, f))
        for j in range(1, e.k + 1):
            s = add(s, div(const(1.0), lk(j, f)))
        return mul(mul(e, s), diff(f))
    if op == "qn":
        f = e.args[0]
        # d/dy L_j^-2 = -2 L_j^-2 sum_{i<=j} L_i^-1
        terms = const(0.0)
        for j in range(e.k):
            s = div(const(1.0), lk(0, f))
            for i in range(1, j + 1):
                s = add(s, div(const(1.0), lk(i, f)))
            terms = add(terms, mul(div(const(0.5), mul(lk(j, f), lk(j, f))), s))
        return mul(terms, diff(f))
    if op == "interp":
        return Expr("interpd", table=e.table)
    raise ConfigError(f"cannot differentiate operator {op!r}")


# -- compilation and evaluation --

def compile_postfix(e: Expr, tables: list) -> tuple[list, list]:
    """Append-to-lists postfix emission; tables collects InterpTable refs."""
    code: list = []
    arg: list = []

    def emit(node: Expr):
        op = node.op
        if op == "const":
            code.append(kn.OP_CONST)
            arg.append(node.val)
            return
        if op == "x":
            code.append(kn.OP_X)
            arg.append(0.0)
            return
        if op == "param":
            raise ConfigError(f"unbound parameter {node.name!r}; bind it before compiling")
        if op in ("interp", "interpd"):
            try:
                idx = tables.index(node.table)
            except ValueError:
                idx = len(tables)
                tables.append(node.table)
            # tables are leaves evaluated at the running x: push it first
            code.append(kn.OP_X)
            arg.append(0.0)
            code.append(_OPCODE[op])
            arg.append(float(idx))
            return
        for a in node.args:
            emit(a)
        code.append(_OPCODE[op])
        arg.append(float(node.k) if op in _INDEXED else 0.0)

    emit(e)
    return code, arg


class ProgramSet:
    """A bundle of compiled programs plus their shared interpolation tables."""

    def __init__(self, exprs: list[Expr]):
        tables: list[InterpTable] = []
        code: list = []
        arg: list = []
        ofs = []
        lens = []
        for e in exprs:
            c, a = compile_postfix(e, tables)
            ofs.append(len(code))
            lens.append(len(c))
            code.extend(c)
            arg.extend(a)
        self.code = np.asarray(code, dtype=np.int64)
        self.arg = np.asarray(arg, dtype=np.float64)
        self.ofs = np.asarray(ofs, dtype=np.int64)
        self.lens = np.asarray(lens, dtype=np.int64)
        if tables:
            self.tx = np.concatenate([t.xs for t in tables])
            self.ty = np.concatenate([t.ys for t in tables])
            self.td = np.concatenate([t.ds for t in tables])
            self.tofs = np.asarray(np.cumsum([0] + [t.xs.size for t in tables])[:-1], dtype=np.int64)
            self.tlen = np.asarray([t.xs.size for t in tables], dtype=np.int64)
            self.tper = np.asarray([t.period for t in tables], dtype=np.float64)
        else:
            self.tx = np.zeros(0)
            self.ty = np.zeros(0)
            self.td = np.zeros(0)
            self.tofs = np.zeros(0, dtype=np.int64)
            self.tlen = np.zeros(0, dtype=np.int64)
            self.tper = np.zeros(0)


def evaluate(e: Expr, x):
    """Vectorized numpy evaluation (independent of the kernel VM)."""
    scalar = np.isscalar(x) or (isinstance(x, np.ndarray) and x.ndim == 0)
    xa = np.asarray(x, dtype=float)
    out = _eval_vec(e, xa)
    if np.isscalar(out) or out.ndim == 0:
        out = np.broadcast_to(np.asarray(out), xa.shape).copy() if xa.ndim else np.asarray(out)
    if scalar:
        return float(out)
    return out


def _safe_log(v):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(np.abs(v))


def _eval_vec(e: Expr, x):
    op = e.op
    if op == "const":
        return np.full_like(x, e.val) if x.ndim else e.val
    if op == "x":
        return x.copy() if x.ndim else float(x)
    if op == "param":
        raise ConfigError(f"unbound parameter {e.name!r} in evaluation")
    if op == "add":
        return _eval_vec(e.args[0], x) + _eval_vec(e.args[1], x)
    if op == "sub":
        return _eval_vec(e.args[0], x) - _eval_vec(e.args[1], x)
    if op == "mul":
        return _eval_vec(e.args[0], x) * _eval_vec(e.args[1], x)
    if op == "div":
        with np.errstate(divide="ignore", invalid="ignore"):
            return _eval_vec(e.args[0], x) / _eval_vec(e.args[1], x)
    if op == "pow":
        b = _eval_vec(e.args[0], x)
        p = _eval_vec(e.args[1], x)
        with np.errstate(invalid="ignore"):
            return np.power(b, p)
    if op == "neg":
        return -_eval_vec(e.args[0], x)
    if op == "log":
        return _safe_log(_eval_vec(e.args[0], x))
    if op == "exp":
        return np.exp(_eval_vec(e.args[0], x))
    if op == "sin":
        return np.sin(_eval_vec(e.args[0], x))
    if op == "cos":
        return np.cos(_eval_vec(e.args[0], x))
    if op == "sqrt":
        with np.errstate(invalid="ignore"):
            return np.sqrt(_eval_vec(e.args[0], x))
    if op == "abs":
        return np.abs(_eval_vec(e.args[0], x))
    if op == "sign":
        return np.sign(_eval_vec(e.args[0], x))
    if op == "logk":
        v = _eval_vec(e.args[0], x)
        for _ in range(e.k):
            v = _safe_log(v)
        return v
    if op == "lk":
        v = _eval_vec(e.args[0], x)
        prod = np.array(v, dtype=float, copy=True)
        y = v
        for _ in range(e.k):
            y = _safe_log(y)
            prod = prod * y
        return prod
    if op == "qn":
        v = _eval_vec(e.args[0], x)
        y = np.array(v, dtype=float, copy=True)
        L = np.array(v, dtype=float, copy=True)
        q = np.zeros_like(L)
        for _ in range(e.k):
            q = q - 0.25 / (L * L)
            y = _safe_log(y)
            L = L * y
        return q
    if op in ("interp", "interpd"):
        t = e.table
        xq = np.asarray(x, dtype=float)
        if t.period > 0.0:
            xq = t.xs[0] + np.mod(xq - t.xs[0], t.period)
        xq = np.clip(xq, t.xs[0], t.xs[-1])
        seg = np.clip(np.searchsorted(t.xs, xq, side="right") - 1, 0, t.xs.size - 2)
        h = t.xs[seg + 1] - t.xs[seg]
        s = (xq - t.xs[seg]) / h
        y0, y1, d0, d1 = t.ys[seg], t.ys[seg + 1], t.ds[seg], t.ds[seg + 1]
        s2, s3 = s * s, s ** 3
        if op == "interp":
            return ((2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s) * h * d0
                    + (-2 * s3 + 3 * s2) * y1 + (s3 - s2) * h * d1)
        return ((6 * s2 - 6 * s) / h * y0 + (3 * s2 - 4 * s + 1) * d0
                + (-6 * s2 + 6 * s) / h * y1 + (3 * s2 - 2 * s) * d1)
    raise ConfigError(f"cannot evaluate operator {op!r}")
