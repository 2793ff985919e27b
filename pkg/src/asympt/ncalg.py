"""Non-commutative graded symbol algebra and template generation.

The reduction pipeline rewrites the system coefficient through a chain of
near-identity transformations I + P_m. Before any matrix is touched, the
whole chain is played out symbolically: terms are words in non-commuting
atoms (P_m, T_m, W_{j,m}, A_m, first-stage blocks V_{j,1}, and the
off-diagonal leftovers V_{1,m}), each carrying an exact decay grade from
the order lattice. derive_stage_plan plays the chain forward and returns a
StagePlan: per-stage templates for the graded buckets S_m / V_{k,m} and a
fully expanded ledger for the terminal error operator.

Grades are floors: a concrete matrix substituted for an atom may decay
faster than the atom's grade, never slower. All bucket placement below is
exact in the template grading.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import GradingError, InputError
from .grading import SigmaLattice

# Deterministic ordering of atom kinds inside canonical renderings.
KIND_RANK = {"T": 0, "V": 1, "W": 2, "P": 3, "S": 4, "A": 5, "IplusP": 6, "E": 7}


@dataclass(frozen=True, slots=True)
class NCSymbol:
    """One non-commuting atom with its decay grade.

    kind is one of P, V, W, T, A, E, S, IplusP; j is the block index for
    V/W kinds and 0 otherwise; m is the stage index.
    """

    kind: str
    m: int
    j: int
    grade: Fraction

    def key(self) -> tuple:
        return (self.grade, KIND_RANK[self.kind], self.j, self.m)

    def render(self) -> str:
        if self.kind in ("V", "W"):
            return f"{self.kind}[{self.j},{self.m}]"
        if self.kind == "IplusP":
            return f"(I+P[{self.m}])"
        return f"{self.kind}[{self.m}]"

    def to_json(self) -> dict:
        out = {"kind": self.kind, "m": self.m}
        if self.kind in ("V", "W"):
            out["j"] = self.j
        return out


def _check_stage(m: int) -> None:
    if m < 1:
        raise InputError(f"stage index must be >= 1, got {m}")


def sym_P(lat: SigmaLattice, m: int) -> NCSymbol:
    _check_stage(m)
    return NCSymbol("P", m, 0, lat.sigma(m))


def sym_S(lat: SigmaLattice, m: int) -> NCSymbol:
    _check_stage(m)
    return NCSymbol("S", m, 0, lat.sigma(m))


def sym_T(lat: SigmaLattice, m: int) -> NCSymbol:
    _check_stage(m)
    return NCSymbol("T", m, 0, lat.sigma(m + 1))


def sym_V(lat: SigmaLattice, j: int, m: int) -> NCSymbol:
    _check_stage(m)
    if j < 1:
        raise InputError(f"block index must be >= 1, got {j}")
    return NCSymbol("V", m, j, lat.sigma(m + j - 1))


def sym_W(lat: SigmaLattice, j: int, m: int) -> NCSymbol:
    _check_stage(m)
    if j < 1:
        raise InputError(f"block index must be >= 1, got {j}")
    return NCSymbol("W", m, j, lat.sigma(m + j))


def sym_A(lat: SigmaLattice, m: int) -> NCSymbol:
    _check_stage(m)
    return NCSymbol("A", m, 0, Fraction(0))


def sym_IplusP(lat: SigmaLattice, m: int) -> NCSymbol:
    _check_stage(m)
    return NCSymbol("IplusP", m, 0, Fraction(0))


def sym_E(lat: SigmaLattice, m: int) -> NCSymbol:
    _check_stage(m)
    return NCSymbol("E", m, 0, lat.K)


@dataclass(frozen=True, slots=True)
class NCTerm:
    """Signed word of atoms. Factor order is multiplication order."""

    sign: int
    factors: tuple[NCSymbol, ...]
    grade: Fraction

    def key(self) -> tuple:
        return (self.grade, tuple(f.key() for f in self.factors), -self.sign)

    def render(self) -> str:
        return "·".join(f.render() for f in self.factors)


def nc_term(sign: int, factors) -> NCTerm:
    fs = tuple(factors)
    if sign not in (1, -1):
        raise InputError(f"term sign must be +-1, got {sign}")
    if not fs:
        raise InputError("empty factor list: the identity is not an atom here")
    return NCTerm(sign, fs, sum((f.grade for f in fs), Fraction(0)))


class NCExpr:
    """Canonical signed multiset of terms.

    Opposite-signed copies of the same word cancel on construction; surviving
    net multiplicity k is stored as |k| identical terms. Term order is the
    canonical (grade, word, sign) order, so rendering and JSON output are
    deterministic.
    """

    __slots__ = ("terms",)

    def __init__(self, terms=()):
        counts: Counter[tuple[int, tuple[NCSymbol, ...]]] = Counter()
        for t in terms:
            counts[t.factors] += t.sign
        out = []
        for factors, net in counts.items():
            if net == 0:
                continue
            sign = 1 if net > 0 else -1
            out.extend(nc_term(sign, factors) for _ in range(abs(net)))
        out.sort(key=NCTerm.key)
        self.terms = tuple(out)

    def is_zero(self) -> bool:
        return not self.terms

    def __len__(self) -> int:
        return len(self.terms)

    def __eq__(self, other) -> bool:
        return isinstance(other, NCExpr) and self.terms == other.terms

    def __hash__(self):
        return hash(self.terms)

    def __add__(self, other: "NCExpr") -> "NCExpr":
        return NCExpr(self.terms + other.terms)

    def __neg__(self) -> "NCExpr":
        return NCExpr(nc_term(-t.sign, t.factors) for t in self.terms)

    def __sub__(self, other: "NCExpr") -> "NCExpr":
        return self + (-other)

    def __mul__(self, other: "NCExpr") -> "NCExpr":
        out = []
        for t1 in self.terms:
            for t2 in other.terms:
                out.append(nc_term(t1.sign * t2.sign, t1.factors + t2.factors))
        return NCExpr(out)

    def min_grade(self) -> Fraction | None:
        if not self.terms:
            return None
        return min(t.grade for t in self.terms)

    def kinds(self) -> set[str]:
        return {f.kind for t in self.terms for f in t.factors}

    def render(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for i, t in enumerate(self.terms):
            body = t.render()
            if i == 0:
                parts.append(("−" if t.sign < 0 else "") + body)
            else:
                parts.append((" − " if t.sign < 0 else " + ") + body)
        return "".join(parts)

    def __repr__(self) -> str:
        return f"NCExpr[{self.render()}]"

    def to_json(self) -> dict:
        return {"terms": [{"sign": t.sign, "factors": [f.to_json() for f in t.factors]}
                          for t in self.terms]}

    @staticmethod
    def from_json(lat: SigmaLattice, data: dict) -> "NCExpr":
        makers = {"P": sym_P, "S": sym_S, "T": sym_T, "A": sym_A,
                  "IplusP": sym_IplusP, "E": sym_E}
        terms = []
        for td in data["terms"]:
            factors = []
            for fd in td["factors"]:
                kind = fd["kind"]
                if kind in ("V", "W"):
                    maker = sym_V if kind == "V" else sym_W
                    factors.append(maker(lat, fd["j"], fd["m"]))
                elif kind in makers:
                    factors.append(makers[kind](lat, fd["m"]))
                else:
                    raise InputError(f"unknown atom kind {kind!r}")
            terms.append(nc_term(td["sign"], factors))
        return NCExpr(terms)


def nc_atom(symbol: NCSymbol) -> NCExpr:
    return NCExpr([nc_term(1, (symbol,))])


def nc_zero() -> NCExpr:
    return NCExpr()


def expand_with(defs: dict[NCSymbol, NCExpr], expr: NCExpr) -> NCExpr:
    """Replace defined atoms by their expressions, repeatedly, order-preserving.

    Alias atoms of kind S must all disappear: they are shorthand for bucket
    expressions and have no concrete matrix of their own."""
    current = expr
    for _ in range(32):
        hit = False
        out = []
        for t in current.terms:
            partial = [(t.sign, ())]
            for f in t.factors:
                sub = defs.get(f)
                if sub is None:
                    partial = [(s, fs + (f,)) for s, fs in partial]
                else:
                    hit = True
                    partial = [(s * u.sign, fs + u.factors)
                               for s, fs in partial for u in sub.terms]
            out.extend(nc_term(s, fs) for s, fs in partial)
        current = NCExpr(out)
        if not hit:
            break
    else:
        raise InputError("substitution did not settle: cyclic definitions?")
    leftover = sorted(f.render() for t in current.terms for f in t.factors if f.kind == "S")
    if leftover:
        raise InputError(f"undefined alias atoms remain after expansion: {leftover[0]}")
    return current


@dataclass
class StagePlan:
    """Symbolic output of the template pass.

    S_templates[m]   bucket-1 template defining stage m's diagonal update
                     and leftover block, for m = 2..M.
    V_buckets[m]     buckets produced while processing stage m, keyed by
                     k >= 1 (bucket 1 is S_templates[m+1] again); bucket k
                     defines block V_{k,m+1} for k >= 2.
    E_templates[m]   error ledger after stage m-1 has run (E_templates[1]
                     holds blocks too slow-decaying to ever transform).
    blocks[m]        the block expressions fed into stage m's elimination.
    """

    lattice: SigmaLattice
    l: int
    S_templates: dict[int, NCExpr] = field(default_factory=dict)
    V_buckets: dict[int, dict[int, NCExpr]] = field(default_factory=dict)
    E_templates: dict[int, NCExpr] = field(default_factory=dict)
    blocks: dict[int, dict[int, NCExpr]] = field(default_factory=dict)

    @property
    def E_template(self) -> NCExpr:
        return self.E_templates[self.lattice.M]


def _smallest_nu(sigma_m: Fraction, g: Fraction, K: Fraction) -> int:
    nu = 0
    cap = int(K / sigma_m) + 2
    while (nu + 1) * sigma_m + g < K:
        nu += 1
        if nu > cap:
            raise GradingError("Neumann cutoff runaway: grades are not advancing")
    return nu


def derive_stage_plan(lattice: SigmaLattice, l: int) -> StagePlan:
    """Generate all stage templates for the given lattice and W-split width l.

    Requires theta_j to be the j-th lattice value for every generator, so the
    first-stage blocks carry honest grades."""
    if l < 1:
        raise InputError(f"W-split width must be >= 1, got {l}")
    N = len(lattice.thetas)
    for j, theta in enumerate(lattice.thetas, start=1):
        if lattice.sigma(j) != theta:
            raise GradingError(
                f"base order theta_{j} = {theta} is not the lattice value sigma_{j} = "
                f"{lattice.sigma(j)}; first-stage blocks would be mis-graded")
    K, M = lattice.K, lattice.M
    plan = StagePlan(lattice=lattice, l=l)

    # Stage-1 blocks; anything already at or past the truncation order is error.
    blocks: dict[int, NCExpr] = {}
    E = nc_zero()
    for j in range(1, N + 1):
        atom = nc_atom(sym_V(lattice, j, 1))
        if lattice.thetas[j - 1] >= K:
            E = E + atom
        else:
            blocks[j] = atom
    plan.E_templates[1] = E
    plan.blocks[1] = dict(blocks)

    for m in range(1, M):
        sigma_m = lattice.sigma(m)
        P = sym_P(lattice, m)
        A = sym_A(lattice, m)

        # Error ledger propagates through A_m * E_m * (I + P_m), distributed.
        wrapped = []
        for t in E.terms:
            wrapped.append(nc_term(t.sign, (A,) + t.factors))
            wrapped.append(nc_term(t.sign, (A,) + t.factors + (P,)))
        E_next_terms = wrapped

        # Signed contributions the elimination at stage m must redistribute.
        U_list: list[NCExpr] = []
        for j in range(1, l + 1):
            U_list.append(-nc_atom(sym_W(lattice, j, m)))
        U_list.append(nc_atom(sym_T(lattice, m)))
        P_expr = nc_atom(P)
        if 1 in blocks:
            U_list.append(blocks[1] * P_expr)
        for j in sorted(blocks):
            if j >= 2:
                U_list.append(blocks[j])
                U_list.append(blocks[j] * P_expr)

        buckets: dict[int, NCExpr] = {}
        for U in U_list:
            if U.is_zero():
                continue
            g_U = U.min_grade()
            if any(t.grade != g_U for t in U.terms):
                raise GradingError("mixed-grade contribution: bucket bookkeeping broken")
            if g_U < lattice.sigma(m + 1):
                raise GradingError(
                    f"contribution of grade {g_U} below sigma_{m + 1}: stage {m} "
                    "did not eliminate its own order")
            nu = _smallest_nu(sigma_m, g_U, K)
            for r in range(nu + 1):
                g = r * sigma_m + g_U
                prefix = (P,) * r
                moved = [nc_term(t.sign * (-1) ** r, prefix + t.factors) for t in U.terms]
                if g < K:
                    idx = lattice.order_index(g)
                    if idx is None:
                        raise GradingError(f"grade {g} < K is not a lattice value")
                    k = idx - m
                    if not 1 <= k <= M - m - 1:
                        raise GradingError(f"bucket index {k} out of range at stage {m}")
                    buckets[k] = buckets.get(k, nc_zero()) + NCExpr(moved)
                else:
                    if r != 0:
                        raise GradingError("only the undressed copy may overflow")
                    E_next_terms.extend(moved)
            rem_sign = (-1) ** (nu + 1)
            rem_prefix = (A,) + (P,) * (nu + 1)
            E_next_terms.extend(nc_term(t.sign * rem_sign, rem_prefix + t.factors)
                                for t in U.terms)

        E = NCExpr(E_next_terms)
        S_next = buckets.get(1, nc_zero())
        bucket_kinds: set[str] = set()
        for b in buckets.values():
            bucket_kinds |= b.kinds()
        forbidden = bucket_kinds & {"A", "IplusP", "E", "S"}
        if forbidden:
            raise GradingError(f"bucket contains non-block atoms: {sorted(forbidden)}")

        plan.V_buckets[m] = buckets
        plan.S_templates[m + 1] = S_next
        plan.E_templates[m + 1] = E

        next_blocks: dict[int, NCExpr] = {}
        if not S_next.is_zero():
            next_blocks[1] = nc_atom(sym_V(lattice, 1, m + 1))
        for k in sorted(buckets):
            if k >= 2 and not buckets[k].is_zero():
                next_blocks[k] = buckets[k]
        blocks = next_blocks
        plan.blocks[m + 1] = dict(blocks)

    return plan
