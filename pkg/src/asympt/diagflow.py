"""Concrete stage-by-stage reduction of a scenario system.

A scenario fixes the system Z' = rho(x) (D + R(x)) Z: a constant diagonal
D of unit-modulus eigenvalues, a perturbation R split into graded blocks,
and the weight rho. Templates from ncalg say, purely symbolically, how the
blocks recombine under each near-identity transformation; this module
substitutes actual matrices of ScalarExpr entries into those templates,
solves the commutator equation for each P_m, differentiates it for the
derivative remainder, and carries the decaying diagonal forward.

Every step stays exact. Order floors promised by the template grades are
re-checked on the concrete matrices and violations raise GradingError.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .errors import GradingError, InputError
from .grading import SigmaLattice, as_exponent, build_lattice, default_K, format_exponent
from .ncalg import (NCExpr, NCSymbol, StagePlan, derive_stage_plan,
                    sym_P, sym_T, sym_V, sym_W)
from .scalar import EvalContext, FModel, Qi, QI_ONE, ScalarExpr


class FunMatrix:
    """Square matrix with exact ScalarExpr entries."""

    __slots__ = ("entries", "n")

    def __init__(self, entries):
        rows = tuple(tuple(row) for row in entries)
        self.n = len(rows)
        if any(len(row) != self.n for row in rows):
            raise InputError("matrix must be square")
        self.entries = rows

    @staticmethod
    def zero(n: int) -> "FunMatrix":
        return FunMatrix([[ScalarExpr.zero()] * n for _ in range(n)])

    @staticmethod
    def identity(n: int) -> "FunMatrix":
        return FunMatrix([[ScalarExpr.constant(QI_ONE) if i == j else ScalarExpr.zero()
                           for j in range(n)] for i in range(n)])

    @staticmethod
    def diagonal(values) -> "FunMatrix":
        vals = list(values)
        n = len(vals)
        out = [[ScalarExpr.zero()] * n for _ in range(n)]
        for i, v in enumerate(vals):
            out[i][i] = v if isinstance(v, ScalarExpr) else ScalarExpr.constant(v)
        return FunMatrix(out)

    def __eq__(self, other) -> bool:
        return isinstance(other, FunMatrix) and self.entries == other.entries

    def __hash__(self):
        return hash(self.entries)

    def is_zero(self) -> bool:
        return all(e.is_zero() for row in self.entries for e in row)

    def __add__(self, other: "FunMatrix") -> "FunMatrix":
        self._match(other)
        return FunMatrix([[a + b for a, b in zip(r1, r2)]
                          for r1, r2 in zip(self.entries, other.entries)])

    def __sub__(self, other: "FunMatrix") -> "FunMatrix":
        self._match(other)
        return FunMatrix([[a - b for a, b in zip(r1, r2)]
                          for r1, r2 in zip(self.entries, other.entries)])

    def __neg__(self) -> "FunMatrix":
        return FunMatrix([[-e for e in row] for row in self.entries])

    def __mul__(self, other: "FunMatrix") -> "FunMatrix":
        self._match(other)
        n = self.n
        out = []
        for i in range(n):
            row = []
            for j in range(n):
                acc = ScalarExpr.zero()
                for k in range(n):
                    acc = acc + self.entries[i][k] * other.entries[k][j]
                row.append(acc)
            out.append(row)
        return FunMatrix(out)

    def _match(self, other: "FunMatrix") -> None:
        if not isinstance(other, FunMatrix) or other.n != self.n:
            raise InputError("matrix size mismatch")

    def scale_expr(self, s: ScalarExpr) -> "FunMatrix":
        return FunMatrix([[e * s for e in row] for row in self.entries])

    def scale_qi(self, q: Qi) -> "FunMatrix":
        return FunMatrix([[e.scale(q) for e in row] for row in self.entries])

    def dg(self) -> "FunMatrix":
        return FunMatrix([[self.entries[i][j] if i == j else ScalarExpr.zero()
                           for j in range(self.n)] for i in range(self.n)])

    def off(self) -> "FunMatrix":
        return FunMatrix([[ScalarExpr.zero() if i == j else self.entries[i][j]
                           for j in range(self.n)] for i in range(self.n)])

    def diff(self, fmodel: FModel | None) -> "FunMatrix":
        return FunMatrix([[e.differentiate(fmodel) for e in row] for row in self.entries])

    def evaluate(self, ctx: EvalContext):
        import mpmath
        with mpmath.workdps(ctx.digits):
            out = mpmath.matrix(self.n, self.n)
            for i in range(self.n):
                for j in range(self.n):
                    out[i, j] = self.entries[i][j].evaluate(ctx)
            return out

    def max_tail_bound(self, X, fmodel: FModel | None) -> Fraction:
        """Bound on sup_{x >= X} of the max-entry norm."""
        best = Fraction(0)
        for row in self.entries:
            for e in row:
                b = e.tail_bound(X, fmodel)
                if b > best:
                    best = b
        return best

    def min_order(self) -> Fraction | None:
        orders = [e.min_order() for row in self.entries for e in row]
        orders = [o for o in orders if o is not None]
        return min(orders) if orders else None

    def check_min_order(self, expected: Fraction, what: str) -> None:
        got = self.min_order()
        if got is not None and got < expected:
            raise GradingError(f"{what}: concrete order {got} is below its floor {expected}")

    def split_by_order(self) -> dict[Fraction, "FunMatrix"]:
        """Decompose into order-homogeneous matrices keyed by decay order."""
        pieces: dict[Fraction, list[list[ScalarExpr]]] = {}
        for i, row in enumerate(self.entries):
            for j, e in enumerate(row):
                for order, part in e.split_by_order().items():
                    grid = pieces.setdefault(
                        order, [[ScalarExpr.zero()] * self.n for _ in range(self.n)])
                    grid[i][j] = part
        return {order: FunMatrix(grid) for order, grid in sorted(pieces.items())}

    def render(self) -> str:
        return "\n".join("[" + ", ".join(e.render() for e in row) + "]"
                         for row in self.entries)

    def to_json(self) -> list:
        return [[e.to_json() for e in row] for row in self.entries]

    @staticmethod
    def from_json(data: list) -> "FunMatrix":
        return FunMatrix([[ScalarExpr.from_json(e) for e in row] for row in data])


def roots_of_unity(n: int) -> tuple[Qi, ...]:
    """The n-th roots of unity, exactly. Only n with all roots Gaussian
    rational are representable here, hence the 1/2/4 restriction."""
    table = {
        1: (QI_ONE,),
        2: (QI_ONE, -QI_ONE),
        4: (QI_ONE, Qi.of(0, 1), -QI_ONE, Qi.of(0, -1)),
    }
    if n not in table:
        raise InputError(
            f"system size n = {n} not supported: eigenvalue ratios must stay "
            "exact complex rationals, which holds for n in {1, 2, 4}")
    return table[n]


def builtin_C(n: int) -> tuple[tuple[Qi, ...], ...]:
    """Default coupling matrix: c_jk = (1/n) w_j / (w_j - w_k) off the
    diagonal and -(n-1)/(2n) on it, with w the n-th roots of unity."""
    w = roots_of_unity(n)
    inv_n = Qi.of(Fraction(1, n))
    diag = Qi.of(Fraction(-(n - 1), 2 * n))
    rows = []
    for j in range(n):
        row = []
        for k in range(n):
            if j == k:
                row.append(diag)
            else:
                row.append(inv_n * (w[j] / (w[j] - w[k])))
        rows.append(tuple(row))
    return tuple(rows)


@dataclass(frozen=True)
class Scenario:
    """Validated, fully-defaulted description of one input system."""

    name: str
    kind: str
    n: int
    gamma: Fraction
    beta: Fraction
    thetas: tuple[Fraction, ...]
    K: Fraction
    C: tuple[tuple[Qi, ...], ...]
    fmodel: FModel | None
    X: Fraction
    digits: int
    l: int
    lattice: SigmaLattice

    def rho(self) -> ScalarExpr:
        if self.kind == "periodic":
            return ScalarExpr.monomial(1, a=self.gamma, b=Fraction(self.beta, self.n))
        return ScalarExpr.monomial(1, a=self.gamma)

    def rho_inv(self) -> ScalarExpr:
        if self.kind == "periodic":
            return ScalarExpr.monomial(1, a=-self.gamma, b=-Fraction(self.beta, self.n))
        return ScalarExpr.monomial(1, a=-self.gamma)

    def d_consts(self) -> tuple[Qi, ...]:
        return roots_of_unity(self.n)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "n": self.n,
            "gamma": format_exponent(self.gamma),
            "beta": format_exponent(self.beta),
            "thetas": [format_exponent(t) for t in self.thetas],
            "K": format_exponent(self.K),
            "C": [[q.to_json() for q in row] for row in self.C],
            "profile": self.fmodel.to_json() if self.fmodel else None,
            "X": format_exponent(self.X),
            "digits": self.digits,
            "l": self.l,
        }


def _parse_C(data, n: int) -> tuple[tuple[Qi, ...], ...]:
    if len(data) != n or any(len(row) != n for row in data):
        raise InputError(f"coupling matrix must be {n}x{n}")
    return tuple(tuple(Qi.from_json(v) for v in row) for row in data)


def load_scenario(source) -> Scenario:
    """Build a Scenario from a dict, a JSON string, or a path to a JSON file."""
    if isinstance(source, (str, Path)):
        p = Path(source)
        if p.exists():
            data = json.loads(p.read_text())
            data.setdefault("name", p.stem)
        else:
            try:
                data = json.loads(str(source))
            except json.JSONDecodeError as exc:
                raise InputError(f"scenario file not found: {source}") from exc
    elif isinstance(source, dict):
        data = dict(source)
    else:
        raise InputError(f"cannot load scenario from {type(source).__name__}")

    kind = data.get("kind")
    if kind not in ("periodic", "power"):
        raise InputError(f"scenario kind must be 'periodic' or 'power', got {kind!r}")
    n = data.get("n", 4)
    if not isinstance(n, int) or isinstance(n, bool):
        raise InputError(f"n must be an integer, got {n!r}")
    roots_of_unity(n)  # validates the 1/2/4 restriction

    gamma = as_exponent(data.get("gamma", 1))
    if gamma <= 0:
        raise InputError(f"gamma must be positive, got {gamma}")
    beta = as_exponent(data.get("beta", 1))
    if kind == "periodic":
        if gamma != 1 or beta != 1:
            raise InputError("periodic scenarios are supported at gamma = beta = 1 only")
        fmodel = FModel.from_json(data.get("profile", {"kind": "two_plus_sin"}))
        default_thetas = (Fraction(1), Fraction(2))
    else:
        if "profile" in data and data["profile"] is not None:
            raise InputError("power scenarios carry no profile function")
        fmodel = None
        default_thetas = (1 + gamma,)

    thetas = tuple(as_exponent(t) for t in data.get("thetas", default_thetas))
    if thetas != default_thetas:
        raise InputError(
            f"thetas {[str(t) for t in thetas]} do not match the block orders "
            f"{[str(t) for t in default_thetas]} this scenario kind produces")
    l = data.get("l", len(thetas))
    if l != len(thetas):
        raise InputError(f"l must equal the number of base orders ({len(thetas)}), got {l}")

    K = as_exponent(data["K"]) if "K" in data and data["K"] is not None else default_K(thetas)
    C = _parse_C(data["C"], n) if data.get("C") is not None else builtin_C(n)
    if kind == "periodic":
        want = Fraction(-(n - 1), 2 * n)
        for i in range(n):
            if C[i][i] != Qi.of(want):
                raise InputError(
                    f"periodic coupling matrix must have diagonal {want}, "
                    f"got {C[i][i]} at position {i}")

    X = as_exponent(data.get("X", 40))
    if X <= 0:
        raise InputError(f"X must be positive, got {X}")
    digits = data.get("digits", 30)
    if not isinstance(digits, int) or digits < 8:
        raise InputError(f"digits must be an integer >= 8, got {digits!r}")

    lattice = build_lattice(thetas, K)
    return Scenario(name=data.get("name", "scenario"), kind=kind, n=n, gamma=gamma,
                    beta=beta, thetas=thetas, K=K, C=C, fmodel=fmodel, X=X,
                    digits=digits, l=l, lattice=lattice)


def builtin_scenario_path(name: str) -> Path:
    return Path(__file__).parent / "scenarios" / f"{name}.json"


def resolve_scenario(name_or_path: str) -> Scenario:
    """Accept either a bundled scenario name or a filesystem path."""
    p = Path(name_or_path)
    if p.exists():
        return load_scenario(p)
    bundled = builtin_scenario_path(name_or_path)
    if bundled.exists():
        return load_scenario(bundled)
    raise InputError(f"no scenario file or bundled scenario named {name_or_path!r}")


@dataclass
class StageState:
    """Everything stage m knows: the running diagonal and its blocks,
    plus the transformation data computed at this stage."""

    m: int
    Dconst: tuple[Qi, ...]
    Delta: FunMatrix
    V: dict[int, FunMatrix]
    P: FunMatrix
    T: FunMatrix
    W: dict[int, FunMatrix]


def solve_commutator(Dconst: tuple[Qi, ...], V1: FunMatrix) -> FunMatrix:
    """P with P D - D P = V1 entrywise: p_ij = v_ij / (d_j - d_i), zero diagonal."""
    n = V1.n
    for i in range(n):
        if not V1.entries[i][i].is_zero():
            raise GradingError("commutator target must be off-diagonal")
    rows = []
    for i in range(n):
        row = []
        for j in range(n):
            if i == j or V1.entries[i][j].is_zero():
                row.append(ScalarExpr.zero())
            else:
                row.append(V1.entries[i][j].scale(QI_ONE / (Dconst[j] - Dconst[i])))
        rows.append(row)
    P = FunMatrix(rows)
    D = FunMatrix.diagonal(Dconst)
    if not (P * D - D * P - V1).is_zero():
        raise GradingError("commutator residual is nonzero: eigenvalue collision?")
    return P


def compute_T(Delta: FunMatrix, P: FunMatrix) -> FunMatrix:
    return Delta * P - P * Delta

def compute_W(P: FunMatrix, scenario: Scenario, m: int) -> dict[int, FunMatrix]:
    """Split the derivative remainder rho^-1 P' into the l graded classes.

    Each order-homogeneous piece of order o goes to the widest class j with
    theta_j <= o - sigma_m; the last class absorbs everything faster. Class
    floors sigma_{m+j} are re-checked afterwards."""
    lat = scenario.lattice
    l = scenario.l
    sigma_m = lat.sigma(m)
    Wmat = P.diff(scenario.fmodel).scale_expr(scenario.rho_inv())
    out = {j: FunMatrix.zero(P.n) for j in range(1, l + 1)}
    for order, piece in Wmat.split_by_order().items():
        excess = order - sigma_m
        if excess < scenario.thetas[0]:
            raise GradingError(
                f"derivative remainder piece of order {order} at stage {m} sits "
                f"below sigma_{m} + theta_1: split rule cannot place it")
        j = max(idx + 1 for idx, th in enumerate(scenario.thetas) if th <= excess)
        j = min(j, l)
        out[j] = out[j] + piece
    for j in range(1, l + 1):
        out[j].check_min_order(lat.sigma(m + j), f"W[{j},{m}]")
    return out


def substitute(expr: NCExpr, atoms: dict[NCSymbol, FunMatrix], n: int) -> FunMatrix:
    """Evaluate a template by replacing every atom with its concrete matrix."""
    total = FunMatrix.zero(n)
    for term in expr.terms:
        acc: FunMatrix | None = None
        for f in term.factors:
            if f.kind in ("A", "IplusP", "E", "S"):
                raise InputError(f"atom {f.render()} has no concrete matrix")
            mat = atoms.get(f)
            if mat is None:
                raise InputError(f"atom {f.render()} is not registered yet")
            acc = mat if acc is None else acc * mat
        assert acc is not None
        total = (total + acc) if term.sign > 0 else (total - acc)
    return total


def init_scenario(scenario: Scenario) -> tuple[StageState, dict[NCSymbol, FunMatrix]]:
    """Set up stage 1: split R into its graded blocks and build P_1, T_1, W_1."""
    lat = scenario.lattice
    n = scenario.n
    Dconst = scenario.d_consts()
    Cmat = FunMatrix([[ScalarExpr.constant(q) for q in row] for row in scenario.C])

    if scenario.kind == "periodic":
        # R = (q'/q) rho^-1 C with q = x^(n gamma) f^beta splits into the
        # f'-carrying order-gamma piece and the 1/x piece one order slower.
        slow = ScalarExpr.monomial(scenario.beta, a=-scenario.gamma,
                                   b=-Fraction(scenario.beta, scenario.n) - 1, c=1)
        fast = ScalarExpr.monomial(scenario.n * scenario.gamma, a=-1 - scenario.gamma,
                                   b=-Fraction(scenario.beta, scenario.n))
        R1 = Cmat.scale_expr(slow)
        blocks = {1: R1.off(), 2: Cmat.scale_expr(fast)}
        Delta = R1.dg()
    else:
        R = Cmat.scale_expr(ScalarExpr.monomial(1, a=-1 - scenario.gamma))
        blocks = {1: R.off()}
        Delta = R.dg()

    Delta.check_min_order(scenario.thetas[0], "Delta[1]")
    for j, blk in blocks.items():
        blk.check_min_order(lat.sigma(j), f"V[{j},1]")

    atoms: dict[NCSymbol, FunMatrix] = {}
    for j, blk in blocks.items():
        atoms[sym_V(lat, j, 1)] = blk

    P = solve_commutator(Dconst, blocks[1])
    T = compute_T(Delta, P)
    W = compute_W(P, scenario, 1)
    P.check_min_order(lat.sigma(1), "P[1]")
    T.check_min_order(lat.sigma(2), "T[1]")
    atoms[sym_P(lat, 1)] = P
    atoms[sym_T(lat, 1)] = T
    for j, w in W.items():
        atoms[sym_W(lat, j, 1)] = w

    state = StageState(m=1, Dconst=Dconst, Delta=Delta, V=blocks, P=P, T=T, W=W)
    return state, atoms


def advance_stage(plan: StagePlan, state: StageState, scenario: Scenario,
                  atoms: dict[NCSymbol, FunMatrix]) -> tuple[StageState, FunMatrix]:
    """Move from stage m to m+1: realize the bucket templates, absorb the new
    diagonal, and build the next transformation data (unless m+1 = M, where
    only the diagonal remains). Returns the new state and concrete S_{m+1}."""
    lat = scenario.lattice
    m = state.m
    n = scenario.n
    S = substitute(plan.S_templates[m + 1], atoms, n)
    S.check_min_order(lat.sigma(m + 1), f"S[{m + 1}]")

    Delta = state.Delta + S.dg()
    V1 = S.off()
    Vnew: dict[int, FunMatrix] = {1: V1}
    for k, bucket in sorted(plan.V_buckets[m].items()):
        if k < 2:
            continue
        Vk = substitute(bucket, atoms, n)
        Vk.check_min_order(lat.sigma(m + k), f"V[{k},{m + 1}]")
        Vnew[k] = Vk
    atoms[sym_V(lat, 1, m + 1)] = V1

    if m + 1 == lat.M:
        state2 = StageState(m=m + 1, Dconst=state.Dconst, Delta=Delta, V=Vnew,
                            P=FunMatrix.zero(n), T=FunMatrix.zero(n),
                            W={j: FunMatrix.zero(n) for j in range(1, scenario.l + 1)})
        return state2, S

    P = solve_commutator(state.Dconst, V1)
    T = compute_T(Delta, P)
    W = compute_W(P, scenario, m + 1)
    P.check_min_order(lat.sigma(m + 1), f"P[{m + 1}]")
    T.check_min_order(lat.sigma(m + 2), f"T[{m + 1}]")
    atoms[sym_P(lat, m + 1)] = P
    atoms[sym_T(lat, m + 1)] = T
    for j, w in W.items():
        atoms[sym_W(lat, j, m + 1)] = w

    state2 = StageState(m=m + 1, Dconst=state.Dconst, Delta=Delta, V=Vnew, P=P, T=T, W=W)
    return state2, S


@dataclass
class PipelineRun:
    """Full concrete reduction: plan, per-stage states, and the final diagonal."""

    scenario: Scenario
    plan: StagePlan
    states: dict[int, StageState]
    S_concrete: dict[int, FunMatrix]
    atoms: dict[NCSymbol, FunMatrix]
    Delta_final: FunMatrix
    D_final: FunMatrix


def run_pipeline(scenario: Scenario) -> PipelineRun:
    """Template pass plus concrete evaluation through all M-1 transformations."""
    lat = scenario.lattice
    plan = derive_stage_plan(lat, scenario.l)
    state, atoms = init_scenario(scenario)
    states = {1: state}
    S_concrete: dict[int, FunMatrix] = {}
    for m in range(1, lat.M):
        state, S = advance_stage(plan, state, scenario, atoms)
        S_concrete[m + 1] = S
        if state.m < lat.M:
            states[state.m] = state
    Delta_final = state.Delta
    D_final = FunMatrix.diagonal(state.Dconst) + Delta_final
    return PipelineRun(scenario=scenario, plan=plan, states=states,
                       S_concrete=S_concrete, atoms=atoms,
                       Delta_final=Delta_final, D_final=D_final)
