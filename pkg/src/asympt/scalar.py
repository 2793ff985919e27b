"""Exact scalar coefficient algebra.

Matrix entries throughout the pipeline are finite sums of monomials

    q * x^a * f(x)^b * f'(x)^c

with q a Gaussian rational (exact complex number with Fraction parts) and
a, b, c rational exponents. The profile function f is kept symbolic; the
only concrete model shipped is f(x) = 2 + sin(x), whose second derivative
is the affine combination f'' = 2 - f, which keeps differentiation closed
over the monomial family.

Everything in this module is exact. Floating point appears only in
evaluate(), which renders an expression at a point through mpmath at a
caller-chosen working precision, and in the float helpers at the bottom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import gmpy2
import mpmath

from .errors import GradingError, InputError
from .grading import as_exponent, format_exponent

_ZERO = Fraction(0)
_ONE = Fraction(1)


@dataclass(frozen=True, slots=True)
class Qi:
    """Gaussian rational: re + im*i with exact Fraction parts."""

    re: Fraction = _ZERO
    im: Fraction = _ZERO

    @staticmethod
    def of(re, im=0) -> "Qi":
        return Qi(as_exponent(re), as_exponent(im))

    def __add__(self, other: "Qi") -> "Qi":
        return Qi(self.re + other.re, self.im + other.im)

    def __sub__(self, other: "Qi") -> "Qi":
        return Qi(self.re - other.re, self.im - other.im)

    def __mul__(self, other: "Qi") -> "Qi":
        return Qi(self.re * other.re - self.im * other.im,
                  self.re * other.im + self.im * other.re)

    def __truediv__(self, other: "Qi") -> "Qi":
        d = other.re * other.re + other.im * other.im
        if d == 0:
            raise ZeroDivisionError("division by zero Gaussian rational")
        return Qi((self.re * other.re + self.im * other.im) / d,
                  (self.im * other.re - self.re * other.im) / d)

    def __neg__(self) -> "Qi":
        return Qi(-self.re, -self.im)

    def is_zero(self) -> bool:
        return self.re == 0 and self.im == 0

    def conj(self) -> "Qi":
        return Qi(self.re, -self.im)

    def abs_upper(self) -> Fraction:
        """Rational upper bound on the modulus, tight to one integer-sqrt ulp."""
        s = self.re * self.re + self.im * self.im
        if s == 0:
            return _ZERO
        n, d = s.numerator, s.denominator
        # sqrt(n/d) = sqrt(n*d)/d <= (isqrt(n*d)+1)/d
        r = math.isqrt(n * d)
        if r * r == n * d:
            return Fraction(r, d)
        return Fraction(r + 1, d)

    def to_mpc(self) -> mpmath.mpc:
        return mpmath.mpc(mpmath.mpf(self.re.numerator) / self.re.denominator,
                          mpmath.mpf(self.im.numerator) / self.im.denominator)

    def __str__(self) -> str:
        if self.im == 0:
            return str(self.re)
        if self.re == 0:
            if self.im == 1:
                return "i"
            if self.im == -1:
                return "-i"
            return f"{self.im}*i"
        sign = "+" if self.im > 0 else "-"
        mag = abs(self.im)
        imag = "i" if mag == 1 else f"{mag}*i"
        return f"{self.re}{sign}{imag}"

    def to_json(self) -> dict:
        return {"re": str(self.re), "im": str(self.im)}

    @staticmethod
    def from_json(data) -> "Qi":
        if isinstance(data, dict):
            return Qi(as_exponent(data.get("re", 0)), as_exponent(data.get("im", 0)))
        return Qi.of(data)


QI_ZERO = Qi()
QI_ONE = Qi(_ONE)
QI_I = Qi(_ZERO, _ONE)


@dataclass(frozen=True)
class FModel:
    """Concrete profile function with the envelope data the bound stage needs.

    fpp_const/fpp_fcoef encode f'' = fpp_const + fpp_fcoef * f, which is what
    keeps d/dx closed on the monomial family.
    """

    kind: str
    f_lo: Fraction
    f_hi: Fraction
    fp_bound: Fraction
    fpp_const: Fraction
    fpp_fcoef: Fraction

    @staticmethod
    def two_plus_sin() -> "FModel":
        return FModel(kind="two_plus_sin", f_lo=_ONE, f_hi=Fraction(3),
                      fp_bound=_ONE, fpp_const=Fraction(2), fpp_fcoef=Fraction(-1))

    def f_value(self, x):
        if self.kind != "two_plus_sin":
            raise InputError(f"unknown profile kind {self.kind!r}")
        return 2 + mpmath.sin(x)

    def fp_value(self, x):
        if self.kind != "two_plus_sin":
            raise InputError(f"unknown profile kind {self.kind!r}")
        return mpmath.cos(x)

    def to_json(self) -> dict:
        return {"kind": self.kind}

    @staticmethod
    def from_json(data) -> "FModel":
        kind = data["kind"] if isinstance(data, dict) else data
        if kind == "two_plus_sin":
            return FModel.two_plus_sin()
        raise InputError(f"unknown profile kind {kind!r}")


class EvalContext:
    """Caches x, f(x), f'(x) and their rational powers at a fixed precision."""

    def __init__(self, x, fmodel: FModel | None, digits: int):
        self.digits = digits
        xf = as_exponent(x)
        if xf <= 0:
            raise InputError(f"evaluation point must be positive, got {xf}")
        with mpmath.workdps(digits):
            self.x = mpmath.mpf(xf.numerator) / xf.denominator
            if fmodel is not None:
                self.f = fmodel.f_value(self.x)
                self.fp = fmodel.fp_value(self.x)
            else:
                self.f = mpmath.mpf(1)
                self.fp = mpmath.mpf(0)
        self._pow: dict[tuple[str, Fraction], mpmath.mpf] = {}

    def power(self, tag: str, exponent: Fraction):
        key = (tag, exponent)
        got = self._pow.get(key)
        if got is None:
            base = {"x": self.x, "f": self.f, "fp": self.fp}[tag]
            with mpmath.workdps(self.digits):
                if exponent == 0:
                    got = mpmath.mpf(1)
                elif exponent.denominator == 1:
                    got = base ** exponent.numerator
                else:
                    got = mpmath.power(base, mpmath.mpf(exponent.numerator) / exponent.denominator)
            self._pow[key] = got
        return got


class ScalarExpr:
    """Finite sum of q * x^a * f^b * fp^c monomials, held exactly.

    Terms live in a dict keyed by the exponent triple; zero coefficients are
    dropped eagerly so equality is structural.
    """

    __slots__ = ("terms",)

    def __init__(self, terms: dict[tuple[Fraction, Fraction, Fraction], Qi] | None = None):
        self.terms = {}
        if terms:
            for key, q in terms.items():
                if not q.is_zero():
                    self.terms[key] = q

    @staticmethod
    def zero() -> "ScalarExpr":
        return ScalarExpr()

    @staticmethod
    def constant(q) -> "ScalarExpr":
        if not isinstance(q, Qi):
            q = Qi.of(q)
        return ScalarExpr({(_ZERO, _ZERO, _ZERO): q})

    @staticmethod
    def monomial(coeff, a=0, b=0, c=0) -> "ScalarExpr":
        if not isinstance(coeff, Qi):
            coeff = Qi.of(coeff)
        return ScalarExpr({(as_exponent(a), as_exponent(b), as_exponent(c)): coeff})

    def is_zero(self) -> bool:
        return not self.terms

    def __eq__(self, other) -> bool:
        return isinstance(other, ScalarExpr) and self.terms == other.terms

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def __add__(self, other: "ScalarExpr") -> "ScalarExpr":
        out = dict(self.terms)
        for key, q in other.terms.items():
            s = out.get(key, QI_ZERO) + q
            if s.is_zero():
                out.pop(key, None)
            else:
                out[key] = s
        return ScalarExpr(out)

    def __sub__(self, other: "ScalarExpr") -> "ScalarExpr":
        return self + (-other)

    def __neg__(self) -> "ScalarExpr":
        return ScalarExpr({key: -q for key, q in self.terms.items()})

    def __mul__(self, other: "ScalarExpr") -> "ScalarExpr":
        out: dict[tuple[Fraction, Fraction, Fraction], Qi] = {}
        for (a1, b1, c1), q1 in self.terms.items():
            for (a2, b2, c2), q2 in other.terms.items():
                key = (a1 + a2, b1 + b2, c1 + c2)
                s = out.get(key, QI_ZERO) + q1 * q2
                if s.is_zero():
                    out.pop(key, None)
                else:
                    out[key] = s
        return ScalarExpr(out)

    def scale(self, q) -> "ScalarExpr":
        if not isinstance(q, Qi):
            q = Qi.of(q)
        return ScalarExpr({key: q * v for key, v in self.terms.items()})

    def differentiate(self, fmodel: FModel | None) -> "ScalarExpr":
        """d/dx, using f'' = fpp_const + fpp_fcoef * f to stay in the family."""
        out = ScalarExpr()
        for (a, b, c), q in self.terms.items():
            if a != 0:
                out = out + ScalarExpr({(a - 1, b, c): q * Qi.of(a)})
            if b != 0:
                out = out + ScalarExpr({(a, b - 1, c + 1): q * Qi.of(b)})
            if c != 0:
                if fmodel is None:
                    raise InputError("cannot differentiate fp powers without a profile model")
                u, v = fmodel.fpp_const, fmodel.fpp_fcoef
                branch = ScalarExpr({(a, b, c - 1): q * Qi.of(c * u)}) \
                    + ScalarExpr({(a, b + 1, c - 1): q * Qi.of(c * v)})
                out = out + branch
        return out

    def evaluate(self, ctx: EvalContext) -> mpmath.mpc:
        with mpmath.workdps(ctx.digits):
            total = mpmath.mpc(0)
            for (a, b, c), q in sorted(self.terms.items()):
                val = ctx.power("x", a) * ctx.power("f", b) * ctx.power("fp", c)
                total += q.to_mpc() * val
            return total

    def min_order(self) -> Fraction | None:
        """Guaranteed decay order: the expression is O(x^-min_order) as x grows.
        None for the zero expression (which decays faster than anything)."""
        if not self.terms:
            return None
        return min(-a for (a, _b, _c) in self.terms)

    def split_by_order(self) -> dict[Fraction, "ScalarExpr"]:
        """Group terms by decay order -a."""
        out: dict[Fraction, ScalarExpr] = {}
        for key, q in self.terms.items():
            order = -key[0]
            out.setdefault(order, ScalarExpr()).terms[key] = q
        return out

    def tail_bound(self, X, fmodel: FModel | None) -> Fraction:
        """Rational bound on sup_{x >= X} |expr(x)|, via per-monomial envelopes.

        Requires every x-exponent <= 0 and every fp-exponent >= 0; anything
        else has no finite sup on [X, inf)."""
        Xf = as_exponent(X)
        if Xf <= 0:
            raise InputError(f"X must be positive, got {Xf}")
        total = _ZERO
        for (a, b, c), q in self.terms.items():
            if a > 0:
                raise GradingError(f"monomial x^{a} grows: no tail bound on [{Xf}, inf)")
            if c < 0 or c.denominator != 1:
                raise GradingError(f"fp exponent {c} admits no envelope bound")
            piece = q.abs_upper() * power_upper(Xf, a)
            if b != 0:
                if fmodel is None:
                    raise InputError("profile exponents present but no profile model given")
                if b > 0:
                    piece *= power_upper(fmodel.f_hi, b)
                else:
                    piece *= power_upper(fmodel.f_lo, b)
            if c > 0 and fmodel is not None:
                piece *= fmodel.fp_bound ** int(c)
            elif c > 0:
                raise InputError("profile exponents present but no profile model given")
            total += piece
        return total

    def render(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for (a, b, c), q in sorted(self.terms.items()):
            factors = [f"({q})"]
            for tag, e in (("x", a), ("f", b), ("fp", c)):
                if e == 0:
                    continue
                es = format_exponent(e)
                if "-" in es or "/" in es:
                    es = f"({es})"
                factors.append(f"{tag}^{es}")
            parts.append("·".join(factors))
        return " + ".join(parts)

    def __repr__(self) -> str:
        return f"ScalarExpr[{self.render()}]"

    def to_json(self) -> list:
        out = []
        for (a, b, c), q in sorted(self.terms.items()):
            out.append({"re": str(q.re), "im": str(q.im),
                        "a": str(a), "b": str(b), "c": str(c)})
        return out

    @staticmethod
    def from_json(data: list) -> "ScalarExpr":
        terms: dict[tuple[Fraction, Fraction, Fraction], Qi] = {}
        for item in data:
            key = (as_exponent(item["a"]), as_exponent(item["b"]), as_exponent(item["c"]))
            q = Qi(as_exponent(item["re"]), as_exponent(item["im"]))
            if key in terms:
                q = terms[key] + q
            terms[key] = q
        return ScalarExpr(terms)


def iroot_floor(n: int, q: int) -> int:
    """floor(n ** (1/q)) for n >= 0, q >= 1, exactly."""
    if n < 0 or q < 1:
        raise InputError(f"iroot_floor needs n >= 0 and q >= 1, got {n}, {q}")
    root, _exact = gmpy2.iroot(gmpy2.mpz(n), q)
    return int(root)


def root_lower(value: Fraction, q: int) -> Fraction:
    """Rational lower bound on value ** (1/q) for value >= 0."""
    if value < 0:
        raise InputError("root of a negative value")
    n, d = value.numerator, value.denominator
    return Fraction(iroot_floor(n * d ** (q - 1), q), d)


def root_upper(value: Fraction, q: int) -> Fraction:
    """Rational upper bound on value ** (1/q) for value >= 0."""
    if value < 0:
        raise InputError("root of a negative value")
    n, d = value.numerator, value.denominator
    t = n * d ** (q - 1)
    r = iroot_floor(t, q)
    if r ** q == t:
        return Fraction(r, d)
    return Fraction(r + 1, d)


def power_upper(base: Fraction, exponent: Fraction) -> Fraction:
    """Rational upper bound on base ** exponent for base > 0."""
    if base <= 0:
        raise InputError(f"power_upper needs a positive base, got {base}")
    p, q = exponent.numerator, exponent.denominator
    if p >= 0:
        inner = base ** p
        return inner if q == 1 else root_upper(inner, q)
    # base^(p/q) = 1 / base^(|p|/q): divide by a LOWER bound of the positive power.
    inner = base ** (-p)
    lower = inner if q == 1 else root_lower(inner, q)
    if lower == 0:
        raise InputError(f"cannot bound {base}**{exponent} from above: root underflow")
    return 1 / lower


def power_lower(base: Fraction, exponent: Fraction) -> Fraction:
    """Rational lower bound on base ** exponent for base > 0."""
    if base <= 0:
        raise InputError(f"power_lower needs a positive base, got {base}")
    p, q = exponent.numerator, exponent.denominator
    if p >= 0:
        inner = base ** p
        return inner if q == 1 else root_lower(inner, q)
    inner = base ** (-p)
    upper = inner if q == 1 else root_upper(inner, q)
    return 1 / upper


def float_up(value: Fraction) -> float:
    """Smallest float >= value (one nextafter step past the rounded value)."""
    f = float(value)
    if Fraction(f) >= value:
        return f
    return math.nextafter(f, math.inf)
