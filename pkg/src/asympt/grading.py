"""Order-of-magnitude lattice for graded asymptotic expansions.

Decay orders live in the additive lattice generated by base orders
theta_1 < theta_2 < ... < theta_N, with the first generator required at
least once:

    sigma = { n1*theta_1 + ... + nN*theta_N : n1 >= 1, nj >= 0 }.

Given a truncation order K, the distinct lattice values are sorted as
sigma_1 < sigma_2 < ... and split by K: sigma_L < K <= sigma_{L+1}.
M = L + 1 is the number of the final, error-only stage; the lattice
stores sigma_1 .. sigma_{L+1}.

All orders are exact rationals (fractions.Fraction); nothing here is
floating point.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational

from .errors import InputError

# An x-order exponent. Exact rational throughout the package.
Exponent = Fraction


def as_exponent(value) -> Fraction:
    """Coerce ints, 'p/q' strings, decimal strings and floats to an exact Fraction.

    Floats go through their shortest decimal repr, so 0.5 means 1/2, not the
    binary expansion of 0.5.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise InputError("boolean is not a valid exponent")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, Rational):
        return Fraction(value.numerator, value.denominator)
    if isinstance(value, float):
        return Fraction(str(value))
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise InputError(f"cannot parse exponent {value!r}") from exc
    raise InputError(f"cannot parse exponent of type {type(value).__name__}")


def format_exponent(e: Fraction) -> str:
    """Render as 'p' or 'p/q'."""
    return str(Fraction(e))


@dataclass(frozen=True)
class SigmaLattice:
    """Sorted lattice of decay orders truncated at K.

    sigmas holds sigma_1 .. sigma_{L+1}; sigma_L < K <= sigma_{L+1}.
    Immutable after construction; build via build_lattice().
    """

    thetas: tuple[Fraction, ...]
    K: Fraction
    sigmas: tuple[Fraction, ...]
    L: int
    M: int

    def sigma(self, i: int) -> Fraction:
        """1-based lookup of sigma_i, extending past the stored window on demand."""
        if i < 1:
            raise InputError(f"sigma index must be >= 1, got {i}")
        if i <= len(self.sigmas):
            return self.sigmas[i - 1]
        return _enumerate_sorted(self.thetas, self.sigmas[-1] + (i - len(self.sigmas)) * self.thetas[0])[i - 1]

    def order_index(self, e) -> int | None:
        """1-based k with sigma_k == e, or None when e is not a stored lattice value."""
        e = as_exponent(e)
        try:
            return self.sigmas.index(e) + 1
        except ValueError:
            return None

    def to_json(self) -> dict:
        return {
            "thetas": [format_exponent(t) for t in self.thetas],
            "K": format_exponent(self.K),
            "sigmas": [format_exponent(s) for s in self.sigmas],
            "L": self.L,
            "M": self.M,
        }

    @staticmethod
    def from_json(data: dict) -> "SigmaLattice":
        lat = build_lattice([as_exponent(t) for t in data["thetas"]], as_exponent(data["K"]))
        stored = tuple(as_exponent(s) for s in data.get("sigmas", ()))
        if stored and stored != lat.sigmas:
            # thetas/K determine everything else; a mismatch means a corrupt payload.
            raise InputError("serialized sigmas disagree with thetas/K")
        return lat


def _enumerate_sorted(thetas: tuple[Fraction, ...], bound: Fraction) -> list[Fraction]:
    """All distinct lattice values, sorted, guaranteed to cover every value < bound
    plus at least one value >= bound."""
    t1 = thetas[0]
    ranges = [range(1, int(bound / t1) + 2)]
    for t in thetas[1:]:
        hi = int((bound - t1) / t) if bound > t1 else 0
        ranges.append(range(0, hi + 2))
    values = {sum(n * t for n, t in zip(combo, thetas)) for combo in itertools.product(*ranges)}
    return sorted(values)


def build_lattice(thetas, K) -> SigmaLattice:
    """Construct the truncated lattice. Rejects empty/non-increasing/non-positive
    generators and K <= theta_1 (no transformation stage would exist)."""
    ths = tuple(as_exponent(t) for t in thetas)
    Kf = as_exponent(K)
    if not ths:
        raise InputError("thetas must be non-empty")
    if any(t <= 0 for t in ths):
        raise InputError(f"all base orders must be positive, got {[str(t) for t in ths]}")
    if any(b <= a for a, b in zip(ths, ths[1:])):
        raise InputError("base orders must be strictly increasing")
    if Kf <= 0:
        raise InputError(f"K must be positive, got {Kf}")
    if Kf <= ths[0]:
        raise InputError(
            f"K = {Kf} <= theta_1 = {ths[0]}: no sub-threshold order exists, nothing to transform"
        )
    values = _enumerate_sorted(ths, Kf)
    below = [v for v in values if v < Kf]
    at_or_above = next(v for v in values if v >= Kf)
    sigmas = tuple(below) + (at_or_above,)
    L = len(below)
    return SigmaLattice(thetas=ths, K=Kf, sigmas=sigmas, L=L, M=L + 1)


def default_K(thetas) -> Fraction:
    """The out-of-box truncation order: sigma_4 of the generators' lattice,
    giving the standard three-transformation / fourth-order-error run."""
    ths = tuple(as_exponent(t) for t in thetas)
    if not ths or ths[0] <= 0:
        raise InputError("thetas must be non-empty and positive")
    return _enumerate_sorted(ths, 4 * ths[0])[3]
