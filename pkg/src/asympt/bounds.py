"""Certified sup-norm bounds for the terminal error operator.

The template pass leaves the last stage with an explicit ledger: every
error term is a signed word in atoms whose concrete matrices the pipeline
has already built. Each atom gets a rational bound on its max-entry norm
over [X, inf); a word of length r then contributes at most
n^(r-1) * product of atom bounds, by submultiplicativity of the max-entry
norm up to one factor of n per multiplication. Summing over the ledger
gives a fully rigorous bound on the terminal error operator, as an exact
Fraction.

The only non-trivial atom is the resolvent A_m = (I + P_m)^-1, bounded by
the Neumann series 1 + p/(1 - n p) with p the bound for P_m; that needs
n p < 1, otherwise the bound is refused (RigorError) rather than guessed.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .diagflow import PipelineRun
from .errors import InputError, RigorError
from .grading import as_exponent, format_exponent
from .ncalg import NCExpr, NCSymbol, sym_P
from .scalar import float_up


def atom_norm(sym: NCSymbol, run: PipelineRun, X: Fraction,
              cache: dict[NCSymbol, Fraction] | None = None) -> Fraction:
    """Rational bound on sup_{x >= X} of the atom's max-entry norm."""
    if cache is not None and sym in cache:
        return cache[sym]
    scenario = run.scenario
    if sym.kind in ("P", "T", "V", "W"):
        mat = run.atoms.get(sym)
        if mat is None:
            raise InputError(f"atom {sym.render()} has no concrete matrix")
        val = mat.max_tail_bound(X, scenario.fmodel)
    elif sym.kind in ("A", "IplusP"):
        p = atom_norm(sym_P(scenario.lattice, sym.m), run, X, cache)
        if sym.kind == "IplusP":
            val = max(Fraction(1), p)
        else:
            if scenario.n * p >= 1:
                raise RigorError(
                    f"cannot certify (I+P[{sym.m}])^-1 at X = {X}: the Neumann "
                    f"premise n*|P| < 1 fails ({scenario.n}*{float_up(p):.3g} >= 1); "
                    "X is too small for a rigorous bound")
            val = 1 + p / (1 - scenario.n * p)
    else:
        raise InputError(f"atom kind {sym.kind!r} carries no norm")
    if cache is not None:
        cache[sym] = val
    return val


@dataclass
class BoundReport:
    """Itemized rigorous bound for one expression at one cutoff X."""

    X: Fraction
    K: Fraction
    n: int
    total: Fraction
    terms: list[tuple[str, Fraction]]
    atom_norms: dict[str, Fraction]

    @property
    def term_count(self) -> int:
        return len(self.terms)

    def to_json(self) -> dict:
        return {
            "X": format_exponent(self.X),
            "K": format_exponent(self.K),
            "n": self.n,
            "total": str(self.total),
            "total_float": float_up(self.total),
            "term_count": self.term_count,
            "terms": [{"term": t, "bound": str(b), "bound_float": float_up(b)}
                      for t, b in self.terms],
            "atom_norms": {name: {"bound": str(b), "bound_float": float_up(b)}
                           for name, b in sorted(self.atom_norms.items())},
        }


def bound_expr(run: PipelineRun, X, expr: NCExpr | None = None) -> BoundReport:
    """Bound the terminal error ledger (or any other template) at cutoff X."""
    Xf = as_exponent(X)
    if Xf <= 0:
        raise InputError(f"X must be positive, got {Xf}")
    if expr is None:
        expr = run.plan.E_template
    n = run.scenario.n
    cache: dict[NCSymbol, Fraction] = {}
    items: list[tuple[str, Fraction]] = []
    total = Fraction(0)
    for term in expr.terms:
        prod = Fraction(1)
        for f in term.factors:
            prod *= atom_norm(f, run, Xf, cache)
            if prod == 0:
                break
        contribution = n ** (len(term.factors) - 1) * prod
        sign = "−" if term.sign < 0 else "+"
        items.append((f"{sign}{term.render()}", contribution))
        total += contribution
    norms = {sym.render(): val for sym, val in cache.items()}
    return BoundReport(X=Xf, K=run.scenario.K, n=n, total=total,
                       terms=items, atom_norms=norms)


def bound_curve(run: PipelineRun, xs) -> list[tuple[Fraction, Fraction]]:
    """The X -> total bound ladder, for decay inspection and CSV output."""
    out = []
    for x in xs:
        rep = bound_expr(run, x)
        out.append((rep.X, rep.total))
    return out
