"""Expression grammar: parsing, algebra, exact derivatives, VM parity."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relosc import expressions as ex
from relosc import kernels as kn
from relosc.errors import ConfigError

XS = np.linspace(0.3, 9.7, 57)


def _vm_eval(e: ex.Expr, x: float) -> float:
    ps = ex.ProgramSet([e])
    stack = np.zeros(64)
    return float(kn.eval_program_scalar(ps.code, ps.arg, ps.ofs[0], ps.lens[0],
                                        float(x), ps.tx, ps.ty, ps.td,
                                        ps.tofs, ps.tlen, ps.tper, stack))


def test_parse_evaluates_prefix_forms():
    cases = {
        "(add x 1)": XS + 1.0,
        "(div mu (mul x x))": None,  # has a parameter, handled below
        "(pow x 2.5)": XS ** 2.5,
        "(neg (sin (mul 2 x)))": -np.sin(2.0 * XS),
        "(sqrt (abs (sub x 3)))": np.sqrt(np.abs(XS - 3.0)),
        "(logk 2 (add x 20))": np.log(np.log(XS + 20.0)),
    }
    for text, want in cases.items():
        e = ex.parse(text)
        if want is None:
            assert ex.params_of(e) == {"mu"}
            continue
        np.testing.assert_allclose(ex.evaluate(e, XS), want, rtol=1e-14)


def test_parse_rejects_malformed_input():
    for bad in ("(add x)", "(frob x 1)", "x)", ""):
        with pytest.raises(ConfigError):
            ex.parse(bad)
    # n-ary add/mul fold left instead of erroring
    e = ex.parse("(add x 1 2)")
    assert ex.evaluate(e, 4.0) == 7.0


def test_to_prefix_round_trip():
    texts = ["(add (mul 2 x) (div 1 (log x)))",
             "(qn 2 x)", "(lk 1 x)", "(pow x (neg 0.5))"]
    for text in texts:
        e = ex.parse(text)
        again = ex.parse(ex.to_prefix(e))
        xs = np.linspace(20.0, 40.0, 11)
        np.testing.assert_allclose(ex.evaluate(again, xs), ex.evaluate(e, xs),
                                   rtol=1e-15)


def test_subst_binds_parameters():
    e = ex.parse("(div mu (mul x x))")
    bound = ex.subst(e, {"mu": ex.const(-0.25)})
    assert ex.params_of(bound) == set()
    np.testing.assert_allclose(ex.evaluate(bound, 2.0), -0.0625, rtol=1e-15)
    # unrelated substitutions leave the tree alone
    same = ex.subst(e, {"nu": ex.const(1.0)})
    assert ex.params_of(same) == {"mu"}


def test_shift_x_translates_argument():
    e = ex.parse("(mul x (sin x))")
    sh = ex.shift_x(e, 2.5)
    xs = np.linspace(0.0, 5.0, 23)
    np.testing.assert_allclose(ex.evaluate(sh, xs), ex.evaluate(e, xs + 2.5),
                               rtol=1e-14)


def test_diff_matches_finite_differences():
    texts = ["(mul x (sin x))",
             "(div 1 (mul x (log x)))",
             "(pow (add 1 (mul x x)) 1.5)",
             "(exp (neg (div x 10)))",
             "(logk 2 x)",
             "(lk 1 x)",
             "(qn 2 x)"]
    xs = np.linspace(16.0, 60.0, 41)
    h = 1e-6
    for text in texts:
        e = ex.parse(text)
        de = ex.diff(e)
        fd = (ex.evaluate(e, xs + h) - ex.evaluate(e, xs - h)) / (2.0 * h)
        np.testing.assert_allclose(ex.evaluate(de, xs), fd, rtol=5e-8,
                                   atol=1e-12, err_msg=text)


def test_diff_of_parameter_is_zero():
    e = ex.param("mu")
    assert ex.evaluate(ex.diff(e), 3.0) == 0.0


def test_vm_matches_numpy_evaluation():
    texts = ["(add (mul 2 x) 1)", "(qn 1 x)", "(lk 2 x)",
             "(div (sin x) (add 2 (cos x)))", "(logk 3 (mul x x))"]
    for text in texts:
        e = ex.parse(text)
        for x in (25.0, 100.0, 3000.0):
            assert _vm_eval(e, x) == pytest.approx(ex.evaluate(e, x), rel=1e-14)


def test_vm_interp_table_inside_expression():
    # the table leaf reads the running x, so it must compose with
    # surrounding arithmetic that also consumes x
    xs = np.linspace(1.0, 20.0, 4001)
    table = ex.InterpTable(xs, np.sin(xs))
    e = ex.mul(ex.parse("x"), ex.interp(table))
    for x in (2.0, 7.3, 19.0):
        # VM must agree with the tree walker exactly; the table itself only
        # approximates sin, so the analytic value gets a loose band
        assert _vm_eval(e, x) == pytest.approx(ex.evaluate(e, x), rel=1e-13)
        assert _vm_eval(e, x) == pytest.approx(x * math.sin(x), abs=1e-4)
    d = ex.diff(e)  # x sin(x) -> sin + x cos via the table derivative
    for x in (3.0, 11.0):
        want = math.sin(x) + x * math.cos(x)
        assert _vm_eval(d, x) == pytest.approx(ex.evaluate(d, x), rel=1e-13)
        assert _vm_eval(d, x) == pytest.approx(want, abs=5e-3)


def test_compile_rejects_unbound_parameter():
    with pytest.raises(ConfigError):
        ex.ProgramSet([ex.parse("(mul mu x)")])


@settings(max_examples=60, deadline=None)
@given(st.floats(min_value=0.5, max_value=50.0),
       st.floats(min_value=-3.0, max_value=3.0),
       st.floats(min_value=-3.0, max_value=3.0))
def test_vm_parity_on_random_rational_trees(x, a, b):
    e = ex.add(ex.mul(ex.const(a), ex.parse("(sin x)")),
               ex.div(ex.const(b), ex.add(ex.parse("(mul x x)"), ex.const(1.0))))
    assert _vm_eval(e, x) == pytest.approx(ex.evaluate(e, x), rel=1e-13, abs=1e-13)
