"""Acceptance gate: the eight shipping criteria, one pass/fail line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines as they
print. Criterion 7 drives the high-precision integrator from x=40 to 60
twice and takes a few minutes; everything else is seconds.
"""

import random
import time
from fractions import Fraction

import mpmath

from asympt import (FModel, Qi, ScalarExpr, asymptotic_solution, bound_expr,
                    build_lattice, decay_fit, derive_stage_plan, expand_with,
                    max_entry, nc_atom, ode_oracle, residual_matrix)
from asympt.ncalg import NCExpr, nc_term, sym_P, sym_S, sym_T, sym_V, sym_W
from asympt.scalar import EvalContext, QI_ONE


def _report(num: int, name: str, ok: bool, t0: float, cap: float) -> None:
    elapsed = time.monotonic() - t0
    print(f"criterion {num} ({name}): {'PASS' if ok else 'FAIL'} [{elapsed:.2f}s]")
    assert ok, f"criterion {num} ({name}) failed"
    assert elapsed < cap, f"criterion {num} exceeded its {cap:.0f}s budget ({elapsed:.1f}s)"


def test_criterion_1_template_reproduction():
    t0 = time.monotonic()
    lat = build_lattice([Fraction(1), Fraction(2)], Fraction(4))
    plan = derive_stage_plan(lat, 2)

    want_S2 = NCExpr([
        nc_term(1, (sym_V(lat, 1, 1), sym_P(lat, 1))),
        nc_term(1, (sym_T(lat, 1),)),
        nc_term(1, (sym_V(lat, 2, 1),)),
        nc_term(-1, (sym_W(lat, 1, 1),)),
    ])
    ok = plan.S_templates[2] == want_S2

    chained_S3 = (-nc_atom(sym_P(lat, 1))) * nc_atom(sym_S(lat, 2)) \
        + nc_atom(sym_V(lat, 2, 1)) * nc_atom(sym_P(lat, 1)) \
        + nc_atom(sym_T(lat, 2)) \
        - nc_atom(sym_W(lat, 1, 2)) \
        - nc_atom(sym_W(lat, 2, 1))
    expanded = expand_with({sym_S(lat, 2): plan.S_templates[2]}, chained_S3)
    ok = ok and expanded == plan.S_templates[3]
    _report(1, "template reproduction", ok, t0, 5.0)


def test_criterion_2_lattice_closed_forms():
    t0 = time.monotonic()
    ok = True
    for gamma in (Fraction(1), Fraction(1, 2), Fraction(2)):
        step = 1 + gamma
        lat = build_lattice([step], 4 * step)
        ok = ok and lat.sigmas == tuple(m * step for m in range(1, 5))
    lat = build_lattice([Fraction(1), Fraction(2)], Fraction(4))
    ok = ok and lat.sigmas == tuple(Fraction(m) for m in range(1, 5))
    _report(2, "lattice closed forms", ok, t0, 1.0)


def test_criterion_3_symbolic_invariants(run3):
    t0 = time.monotonic()
    lat = run3.scenario.lattice
    from asympt import FunMatrix
    D = FunMatrix.diagonal(run3.states[1].Dconst)
    ok = True
    for m in (1, 2, 3):
        st = run3.states[m]
        ok = ok and st.V[1].dg().is_zero()
        ok = ok and st.P.dg().is_zero()
        ok = ok and (st.P * D - D * st.P - st.V[1]).is_zero()
        for j, blk in st.V.items():
            floor = lat.sigma(m + j - 1)
            ok = ok and all(-a >= floor for row in blk.entries for e in row
                            for (a, _b, _c) in e.terms)
        for j, w in st.W.items():
            floor = lat.sigma(m + j)
            ok = ok and all(-a >= floor for row in w.entries for e in row
                            for (a, _b, _c) in e.terms)
    _report(3, "symbolic invariants through stage 3", ok, t0, 60.0)


def test_criterion_4_derivative_split(run3, run1):
    t0 = time.monotonic()
    ok = True
    for m, st in run3.states.items():
        sigma = run3.scenario.lattice.sigma(m)
        ok = ok and set(st.W) == {1, 2}
        ok = ok and st.W[1].min_order() == sigma + 1
        ok = ok and st.W[2].min_order() == sigma + 2
        ok = ok and not st.W[1].is_zero() and not st.W[2].is_zero()
    for m, st in run1.states.items():
        ok = ok and set(st.W) == {1}
        ok = ok and not st.W[1].is_zero()
    _report(4, "derivative remainder split", ok, t0, 10.0)


def test_criterion_5_bound_magnitude_and_soundness(run3):
    t0 = time.monotonic()
    rep = bound_expr(run3, 40)
    ok = Fraction(1, 10**7) <= rep.total <= Fraction(1, 10**4)
    with mpmath.workdps(40):
        total = mpmath.mpf(rep.total.numerator) / rep.total.denominator
        for x in (40, 60, 100):
            res = max_entry(residual_matrix(run3, x))
            ok = ok and res <= total
    _report(5, "bound magnitude and soundness", ok, t0, 300.0)


def test_criterion_6_residual_decay(run3):
    t0 = time.monotonic()
    xs = [40.0, 80.0, 160.0]
    ys = [float(max_entry(residual_matrix(run3, int(x)))) for x in xs]
    slope, _ = decay_fit(xs, ys)
    K = float(run3.scenario.K)
    ok = slope <= -(K - 0.3)
    _report(6, "residual decay certificate", ok, t0, 300.0)


def test_criterion_7_oracle_agreement(sc3, run3):
    t0 = time.monotonic()
    sol40 = asymptotic_solution(run3, 1, 40)
    sol60 = asymptotic_solution(run3, 1, 60)

    def max_rel_dev(endpoint):
        with mpmath.workdps(40):
            return max(abs(z - w) / abs(w) for z, w in zip(endpoint, sol60.vector))

    runA = ode_oracle(sc3, sol40.vector, 40, 60, tol=1e-15)
    devA = max_rel_dev(runA.endpoint)
    ok = devA <= mpmath.mpf("1e-3")

    runB = ode_oracle(sc3, sol40.vector, 40, 60, tol=1e-16)
    devB = max_rel_dev(runB.endpoint)
    ok = ok and abs(devB - devA) / devA < mpmath.mpf("0.1")

    sol60_hi = asymptotic_solution(run3, 1, 60, digits=40)
    with mpmath.workdps(50):
        shift = max(abs(z - w) / abs(w) for z, w in zip(sol60_hi.vector, sol60.vector))
    ok = ok and shift <= mpmath.mpf("1e-11")
    _report(7, "oracle agreement", ok, t0, 600.0)


def test_criterion_8_differentiation():
    t0 = time.monotonic()
    fm = FModel.two_plus_sin()
    rng = random.Random(20240815)
    h = Fraction(1, 10**6)
    mpmath.mp.dps = 30
    ok = True
    for _ in range(100):
        expr = ScalarExpr.zero()
        for _ in range(rng.randint(1, 4)):
            a = Fraction(rng.randint(-16, 8), 4)
            b = Fraction(rng.randint(-8, 8), 4)
            c = rng.randint(0, 2)
            if a == 0 and b == 0 and c == 0:
                a = Fraction(-1)
            q = Qi.of(Fraction(rng.randint(-9, 9), rng.randint(1, 4)),
                      Fraction(rng.randint(-9, 9), rng.randint(1, 4)))
            expr = expr + ScalarExpr.monomial(q if not q.is_zero() else QI_ONE, a, b, c)
        x = Fraction(rng.randint(10, 100))
        ctx = EvalContext(x, fm, 30)
        sym = expr.differentiate(fm).evaluate(ctx)
        plus = expr.evaluate(EvalContext(x + h, fm, 30))
        minus = expr.evaluate(EvalContext(x - h, fm, 30))
        fd = (plus - minus) / (2 * mpmath.mpf(10) ** -6)
        scale = max(abs(sym), abs(fd))
        if scale < mpmath.mpf("1e-25"):
            continue
        ok = ok and abs(sym - fd) / scale <= mpmath.mpf("1e-8")
    _report(8, "symbolic differentiation", ok, t0, 10.0)
