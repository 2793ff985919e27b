"""Numeric layer: asymptotic solutions, residuals, and a high-order ODE oracle.

Everything upstream is exact; this module is where numbers finally appear.
It provides:

  * back_transform      the accumulated change of variables A(x)
  * exponent_integral   rigorous-tolerance quadrature of the diagonal exponent
  * asymptotic_solution the k-th characteristic solution, normalized at X
  * residual_matrix     how far the transformed system is from its diagonal
  * decay_fit           log-log slope estimation for decay measurements
  * ode_oracle          an independent Verner 6(5) integrator for the original
                        system, used to cross-check the asymptotics

The oracle does its inner loop in gmpy2 (binary floats at a generous
precision) for speed, with an mpmath fallback selected by argument; both
use the same exact rational tableau.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import gmpy2
import mpmath

from .diagflow import FunMatrix, PipelineRun, Scenario, init_scenario
from .errors import InputError, RigorError
from .grading import as_exponent
from .scalar import EvalContext, ScalarExpr


def _mpf_of(fr: Fraction):
    return mpmath.mpf(fr.numerator) / fr.denominator


def _expr_eval_numeric(expr: ScalarExpr, x, fmodel):
    """Evaluate at an mpf point (quad nodes are not exact rationals)."""
    f = fmodel.f_value(x) if fmodel is not None else mpmath.mpf(1)
    fp = fmodel.fp_value(x) if fmodel is not None else mpmath.mpf(0)
    total = mpmath.mpc(0)
    for (a, b, c), q in sorted(expr.terms.items()):
        val = mpmath.power(x, _mpf_of(a))
        if b:
            val *= mpmath.power(f, _mpf_of(b))
        if c:
            val *= fp ** int(c)
        total += q.to_mpc() * val
    return total


def max_entry(mat) -> mpmath.mpf:
    best = mpmath.mpf(0)
    for i in range(mat.rows):
        for j in range(mat.cols):
            v = abs(mat[i, j])
            if v > best:
                best = v
    return best


def back_transform(run: PipelineRun, x, digits: int | None = None):
    """A(x) = (I+P_1)(x) ... (I+P_{M-1})(x) as an mpmath matrix."""
    digits = digits or run.scenario.digits
    ctx = EvalContext(x, run.scenario.fmodel, digits)
    with mpmath.workdps(digits):
        A = mpmath.eye(run.scenario.n)
        for m in sorted(run.states):
            A = A * (mpmath.eye(run.scenario.n) + run.states[m].P.evaluate(ctx))
        return A


def exponent_integral(scenario: Scenario, d_k, delta_kk: ScalarExpr, a, b,
                      digits: int) -> mpmath.mpc:
    """integral_a^b rho(t) (d_k + delta_kk(t)) dt with a checked error estimate.

    Raises RigorError if the quadrature cannot reach absolute error
    10^(5-digits) even after escalating its refinement depth."""
    af, bf = as_exponent(a), as_exponent(b)
    if af <= 0 or bf <= 0:
        raise InputError("integration endpoints must be positive")
    rho = scenario.rho()
    dk_c = d_k.to_mpc() if hasattr(d_k, "to_mpc") else mpmath.mpc(d_k)
    with mpmath.workdps(digits + 10):
        lo = mpmath.mpf(af.numerator) / af.denominator
        hi = mpmath.mpf(bf.numerator) / bf.denominator
        if lo == hi:
            return mpmath.mpc(0)

        def integrand(t):
            r = _expr_eval_numeric(rho, t, scenario.fmodel)
            return r * (dk_c + _expr_eval_numeric(delta_kk, t, scenario.fmodel))

        # Panels of a few units keep the oscillatory profile resolved.
        span = abs(hi - lo)
        pieces = max(1, int(mpmath.ceil(span / 5)))
        points = [lo + (hi - lo) * i / pieces for i in range(pieces + 1)]
        tol = mpmath.mpf(10) ** (5 - digits)
        err = None
        for maxdegree in (6, 8, 10):
            val, err = mpmath.quad(integrand, points, error=True, maxdegree=maxdegree)
            if err <= tol:
                return mpmath.mpc(val)
        raise RigorError(
            f"quadrature on [{af}, {bf}] stalled at estimated error {mpmath.nstr(err, 3)} "
            f"(target {mpmath.nstr(tol, 3)}); raise digits or shrink the interval")


@dataclass
class AsymSolution:
    """The k-th characteristic solution at one point, with its ingredients."""

    k: int
    x: Fraction
    vector: list
    column: list
    exp_factor: mpmath.mpc
    integral: mpmath.mpc

    def to_json(self, digits: int = 20) -> dict:
        def c(z):
            return {"re": mpmath.nstr(z.real, digits), "im": mpmath.nstr(z.imag, digits)}
        return {
            "k": self.k,
            "x": str(self.x),
            "vector": [c(z) for z in self.vector],
            "column": [c(z) for z in self.column],
            "exp_factor": c(self.exp_factor),
            "integral": c(self.integral),
        }


def asymptotic_solution(run: PipelineRun, k: int, x, digits: int | None = None) -> AsymSolution:
    """k-th characteristic solution (1-based), normalized to A(X) e_k at x = X.

    The diagonal stage M system decouples; undoing the transformation chain
    gives Z(x) = A(x) e_k * exp(integral_X^x rho (d_k + delta_kk))."""
    scenario = run.scenario
    if not 1 <= k <= scenario.n:
        raise InputError(f"solution index k must be in 1..{scenario.n}, got {k}")
    digits = digits or scenario.digits
    xf = as_exponent(x)
    idx = k - 1
    d_k = scenario.d_consts()[idx]
    delta_kk = run.Delta_final.entries[idx][idx]
    integral = exponent_integral(scenario, d_k, delta_kk, scenario.X, xf, digits)
    with mpmath.workdps(digits + 10):
        expf = mpmath.exp(integral)
        A = back_transform(run, xf, digits)
        column = [A[i, idx] for i in range(scenario.n)]
        vector = [expf * col for col in column]
    return AsymSolution(k=k, x=xf, vector=vector, column=column,
                        exp_factor=expf, integral=integral)


def residual_matrix(run: PipelineRun, x, digits: int | None = None):
    """E_M(x) recovered numerically: conjugate the original coefficient by the
    accumulated transformation and subtract the final diagonal."""
    scenario = run.scenario
    digits = digits or scenario.digits
    xf = as_exponent(x)
    ctx = EvalContext(xf, scenario.fmodel, digits + 10)
    with mpmath.workdps(digits + 10):
        n = scenario.n
        first = run.states[1]
        M1 = FunMatrix.diagonal(first.Dconst) + first.Delta
        for blk in first.V.values():
            M1 = M1 + blk
        M1v = M1.evaluate(ctx)

        factors = []
        dfactors = []
        for m in sorted(run.states):
            P = run.states[m].P
            factors.append(mpmath.eye(n) + P.evaluate(ctx))
            dfactors.append(P.diff(scenario.fmodel).evaluate(ctx))
        A = mpmath.eye(n)
        for F in factors:
            A = A * F
        Aprime = mpmath.zeros(n)
        for m in range(len(factors)):
            term = mpmath.eye(n)
            for r, F in enumerate(factors):
                term = term * (dfactors[r] if r == m else F)
            Aprime += term

        Ainv = mpmath.inverse(A)
        cond = max_entry(A) * max_entry(Ainv) * n
        if cond > mpmath.mpf(10) ** 8:
            raise RigorError(f"transformation is ill-conditioned at x = {xf} "
                             f"(condition proxy {mpmath.nstr(cond, 3)})")
        rho_inv = run.scenario.rho_inv().evaluate(ctx)
        DM = run.D_final.evaluate(ctx)
        return Ainv * (M1v * A - rho_inv * Aprime) - DM


def decay_fit(xs, ys) -> tuple[float, float]:
    """Least-squares slope and intercept of log y against log x."""
    if len(xs) != len(ys) or len(xs) < 2:
        raise InputError("need at least two (x, y) pairs")
    lx = [math.log(float(v)) for v in xs]
    ly = [math.log(float(v)) for v in ys]
    mx = sum(lx) / len(lx)
    my = sum(ly) / len(ly)
    sxx = sum((u - mx) ** 2 for u in lx)
    if sxx == 0:
        raise InputError("x values must be distinct")
    slope = sum((u - mx) * (v - my) for u, v in zip(lx, ly)) / sxx
    return slope, my - slope * mx


# --- Verner 6(5) embedded pair -------------------------------------------
# Exact rational tableau; the 9th stage equals the 6th-order result, so the
# pair is FSAL: an accepted step hands its last stage to the next step.

_C = [Fraction(0), Fraction(9, 50), Fraction(1, 6), Fraction(1, 4), Fraction(53, 100),
      Fraction(3, 5), Fraction(4, 5), Fraction(1), Fraction(1)]

_A = [
    [],
    [Fraction(9, 50)],
    [Fraction(29, 324), Fraction(25, 324)],
    [Fraction(1, 16), Fraction(0), Fraction(3, 16)],
    [Fraction(79129, 250000), Fraction(0), Fraction(-261237, 250000), Fraction(19663, 15625)],
    [Fraction(1336883, 4909125), Fraction(0), Fraction(-25476, 30875),
     Fraction(194159, 185250), Fraction(8225, 78546)],
    [Fraction(-2459386, 14727375), Fraction(0), Fraction(19504, 30875),
     Fraction(2377474, 13615875), Fraction(-6157250, 5773131), Fraction(902, 735)],
    [Fraction(2699, 7410), Fraction(0), Fraction(-252, 1235), Fraction(-1393253, 3993990),
     Fraction(236875, 72618), Fraction(-135, 49), Fraction(15, 22)],
    [Fraction(11, 144), Fraction(0), Fraction(0), Fraction(256, 693), Fraction(0),
     Fraction(125, 504), Fraction(125, 528), Fraction(5, 72)],
]

_B = [Fraction(11, 144), Fraction(0), Fraction(0), Fraction(256, 693), Fraction(0),
      Fraction(125, 504), Fraction(125, 528), Fraction(5, 72), Fraction(0)]

_B_HAT = [Fraction(28, 477), Fraction(0), Fraction(0), Fraction(212, 441),
          Fraction(-312500, 366177), Fraction(2125, 1764), Fraction(0),
          Fraction(-2105, 35532), Fraction(2995, 17766)]

_ERR = [b - bh for b, bh in zip(_B, _B_HAT)]

RK_ORDER = 6


class _GmpyBackend:
    """Binary floats via gmpy2 at a precision chosen from the digit budget."""

    name = "gmpy2"

    def __init__(self, digits: int):
        self.bits = max(128, int(digits * 3.4) + 16)
        self._saved = None

    def __enter__(self):
        self._saved = gmpy2.get_context()
        gmpy2.set_context(gmpy2.context(precision=self.bits))
        return self

    def __exit__(self, *exc):
        gmpy2.set_context(self._saved)
        return False

    def real(self, fr: Fraction):
        return gmpy2.mpfr(fr.numerator) / fr.denominator

    def real_str(self, s: str):
        return gmpy2.mpfr(s)

    def cplx(self, re, im):
        return gmpy2.mpc(re, im)

    sin = staticmethod(gmpy2.sin)
    cos = staticmethod(gmpy2.cos)
    log = staticmethod(gmpy2.log)
    exp = staticmethod(gmpy2.exp)

    def to_mpmath(self, z):
        return mpmath.mpc(mpmath.mpf(str(z.real)), mpmath.mpf(str(z.imag)))


class _MpmathBackend:
    """Same interface on mpmath; slower, used for cross-checks."""

    name = "mpmath"

    def __init__(self, digits: int):
        self.digits = digits
        self._saved = None

    def __enter__(self):
        self._saved = mpmath.mp.dps
        mpmath.mp.dps = self.digits
        return self

    def __exit__(self, *exc):
        mpmath.mp.dps = self._saved
        return False

    def real(self, fr: Fraction):
        return mpmath.mpf(fr.numerator) / fr.denominator

    def real_str(self, s: str):
        return mpmath.mpf(s)

    def cplx(self, re, im):
        return mpmath.mpc(re, im)

    sin = staticmethod(mpmath.sin)
    cos = staticmethod(mpmath.cos)
    log = staticmethod(mpmath.log)
    exp = staticmethod(mpmath.exp)

    def to_mpmath(self, z):
        return mpmath.mpc(z)


def _compile_rhs(scenario: Scenario, be):
    """Turn rho (D + R) into per-entry lists of (coeff, a, b, c) with backend
    numbers, plus a fast shared-power evaluator z' = G(x) z."""
    state, _atoms = init_scenario(scenario)
    G = FunMatrix.diagonal(state.Dconst) + state.Delta
    for blk in state.V.values():
        G = G + blk
    G = G.scale_expr(scenario.rho())

    n = scenario.n
    entries = []
    for i in range(n):
        row = []
        for j in range(n):
            terms = []
            for (a, b, c), q in sorted(G.entries[i][j].terms.items()):
                coeff = be.cplx(be.real(q.re), be.real(q.im))
                terms.append((coeff, be.real(a), be.real(b), b != 0, int(c), (a, b, c)))
            row.append(terms)
        entries.append(row)
    periodic = scenario.kind == "periodic"
    zero = be.cplx(be.real(Fraction(0)), be.real(Fraction(0)))

    def rhs(x, y):
        lx = be.log(x)
        if periodic:
            f = 2 + be.sin(x)
            fp = be.cos(x)
            lf = be.log(f)
        else:
            fp = None
            lf = None
        cache = {}
        out = []
        for i in range(n):
            acc = None
            for j in range(n):
                terms = entries[i][j]
                if not terms:
                    continue
                val = None
                for coeff, a, b, has_b, c, key in terms:
                    p = cache.get(key)
                    if p is None:
                        p = be.exp(a * lx + b * lf) if has_b else be.exp(a * lx)
                        if c:
                            p = p * fp ** c
                        cache[key] = p
                    t = coeff * p
                    val = t if val is None else val + t
                prod = val * y[j]
                acc = prod if acc is None else acc + prod
            out.append(acc if acc is not None else zero)
        return out

    return rhs


@dataclass
class OracleRun:
    """Outcome of one adaptive integration of the original system."""

    endpoint: list
    steps: int
    rejected: int
    min_h: float
    max_h: float
    max_err_ratio: float
    tolerance: float
    backend: str

    def to_json(self, digits: int = 20) -> dict:
        def c(z):
            return {"re": mpmath.nstr(z.real, digits), "im": mpmath.nstr(z.imag, digits)}
        return {
            "endpoint": [c(z) for z in self.endpoint],
            "steps": self.steps,
            "rejected": self.rejected,
            "min_h": self.min_h,
            "max_h": self.max_h,
            "max_err_ratio": self.max_err_ratio,
            "tolerance": self.tolerance,
            "backend": self.backend,
        }


def ode_oracle(scenario: Scenario, z0, x0, x1, tol: float = 1e-15,
               backend: str = "gmpy2", digits: int = 38,
               max_steps: int = 2_000_000) -> OracleRun:
    """Propagate z' = rho (D + R) z from x0 to x1 with an embedded Verner 6(5)
    pair under pure relative local error control.

    z0 entries may be mpmath numbers, complex, or (re, im) string pairs."""
    x0f, x1f = as_exponent(x0), as_exponent(x1)
    if x1f <= x0f:
        raise InputError(f"need x1 > x0, got {x0f} -> {x1f}")
    if not 0 < tol < 1:
        raise InputError(f"tolerance must be in (0, 1), got {tol}")
    if backend == "gmpy2":
        be = _GmpyBackend(digits)
    elif backend == "mpmath":
        be = _MpmathBackend(digits)
    else:
        raise InputError(f"unknown backend {backend!r}")

    with be:
        rhs = _compile_rhs(scenario, be)
        A_t = [[be.real(v) for v in row] for row in _A]
        B_t = [be.real(v) for v in _B]
        E_t = [be.real(v) for v in _ERR]
        C_t = [be.real(v) for v in _C]
        tol_r = be.real_str(repr(tol))

        def conv(z):
            if isinstance(z, tuple):
                return be.cplx(be.real_str(z[0]), be.real_str(z[1]))
            zz = mpmath.mpc(z)
            return be.cplx(be.real_str(mpmath.nstr(zz.real, digits + 5)),
                           be.real_str(mpmath.nstr(zz.imag, digits + 5)))

        y = [conv(z) for z in z0]
        n = len(y)
        if n != scenario.n:
            raise InputError(f"initial vector has size {n}, expected {scenario.n}")

        def vnorm(vec):
            return max(abs(z) for z in vec)

        x = be.real(x0f)
        x_end = be.real(x1f)
        span = x_end - x
        h = min(be.real(Fraction(1)), span / 16)
        k = [None] * 9
        k[0] = rhs(x, y)
        steps = rejected = 0
        min_h = None
        max_h = None
        max_ratio = 0.0
        floor_h = span * be.real_str("1e-14")

        while x < x_end:
            if steps + rejected > max_steps:
                raise RigorError(f"oracle exceeded {max_steps} steps before reaching {x1f}")
            if x + h > x_end:
                h = x_end - x
            for s in range(1, 9):
                ys = list(y)
                arow = A_t[s]
                for i in range(n):
                    acc = ys[i]
                    for r, a in enumerate(arow):
                        if a:
                            acc = acc + (h * a) * k[r][i]
                    ys[i] = acc
                k[s] = rhs(x + C_t[s] * h, ys)
            ynew = list(y)
            for i in range(n):
                acc = ynew[i]
                for s in range(9):
                    if B_t[s]:
                        acc = acc + (h * B_t[s]) * k[s][i]
                ynew[i] = acc
            errv = []
            for i in range(n):
                acc = None
                for s in range(9):
                    if E_t[s]:
                        t = E_t[s] * k[s][i]
                        acc = t if acc is None else acc + t
                errv.append(h * acc)
            scale = tol_r * max(vnorm(y), vnorm(ynew))
            ratio = vnorm(errv) / scale if scale > 0 else scale
            if ratio <= 1:
                x = x + h
                y = ynew
                k[0] = k[8]  # FSAL
                steps += 1
                hf = float(h)
                min_h = hf if min_h is None else min(min_h, hf)
                max_h = hf if max_h is None else max(max_h, hf)
                max_ratio = max(max_ratio, float(ratio))
            else:
                rejected += 1
            if ratio == 0:
                factor = be.real(Fraction(5))
            else:
                factor = be.real_str("0.9") * ratio ** be.real(Fraction(-1, RK_ORDER))
                factor = min(be.real(Fraction(5)), max(be.real(Fraction(1, 5)), factor))
            h = h * factor
            if h < floor_h:
                raise RigorError(f"step size collapsed to {float(h):.3g} at x = {float(x):.6g}")

        with mpmath.workdps(digits + 5):
            endpoint = [be.to_mpmath(z) for z in y]

    return OracleRun(endpoint=endpoint, steps=steps, rejected=rejected,
                     min_h=min_h or 0.0, max_h=max_h or 0.0,
                     max_err_ratio=max_ratio, tolerance=tol, backend=be.name)
