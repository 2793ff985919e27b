import itertools
import json
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asympt import InputError, as_exponent, build_lattice, default_K, format_exponent
from asympt.grading import SigmaLattice


def brute_force_orders(thetas, bound):
    """Reference enumeration, deliberately wasteful: try every tuple of
    counts up to a generous cap and keep the distinct sums <= bound."""
    caps = [int(bound / t) + 3 for t in thetas]
    vals = set()
    for counts in itertools.product(*(range(c + 1) for c in caps)):
        if counts[0] < 1:
            continue
        s = sum(n * t for n, t in zip(counts, thetas))
        if s <= bound:
            vals.add(s)
    return sorted(vals)


def test_unit_lattice_is_integers():
    lat = build_lattice([Fraction(1), Fraction(2)], Fraction(4))
    assert lat.sigmas == (1, 2, 3, 4)
    assert lat.L == 3
    assert lat.M == 4


def test_power_lattice_closed_form():
    for gamma in (Fraction(1), Fraction(1, 2), Fraction(2)):
        step = 1 + gamma
        K = 4 * step
        lat = build_lattice([step], K)
        assert lat.sigmas == tuple(m * step for m in range(1, 5))
        assert lat.L == 3
        assert lat.M == 4


def test_lattice_against_brute_force():
    thetas = [Fraction(1), Fraction(5, 2)]
    K = Fraction(6)
    lat = build_lattice(thetas, K)
    ref = brute_force_orders(thetas, K + 5)
    below = [v for v in ref if v < K]
    assert list(lat.sigmas[:-1]) == below
    assert lat.sigmas[-1] == next(v for v in ref if v >= K)


def test_sigma_indexing_and_extension():
    thetas = [Fraction(1), Fraction(2)]
    lat = build_lattice(thetas, Fraction(4))
    assert lat.sigma(1) == 1
    assert lat.sigma(4) == 4
    # indices past M come from re-enumeration, not arithmetic guessing
    ref = brute_force_orders(thetas, 12)
    for i in range(1, 11):
        assert lat.sigma(i) == ref[i - 1]
    with pytest.raises(InputError):
        lat.sigma(0)


def test_order_index_round_trip():
    lat = build_lattice([Fraction(1), Fraction(5, 2)], Fraction(6))
    for i, s in enumerate(lat.sigmas, start=1):
        assert lat.order_index(s) == i
    assert lat.order_index(Fraction(7, 3)) is None


def test_default_K_is_fourth_order():
    assert default_K([Fraction(1), Fraction(2)]) == 4
    assert default_K([Fraction(2)]) == 8
    assert default_K([Fraction(3, 2)]) == 6


def test_validation_errors():
    with pytest.raises(InputError):
        build_lattice([], Fraction(4))
    with pytest.raises(InputError):
        build_lattice([Fraction(-1)], Fraction(4))
    with pytest.raises(InputError):
        build_lattice([Fraction(2), Fraction(1)], Fraction(4))
    with pytest.raises(InputError):
        build_lattice([Fraction(1), Fraction(1)], Fraction(4))
    # K must exceed the smallest generator or no stage exists
    with pytest.raises(InputError):
        build_lattice([Fraction(2)], Fraction(2))


def test_as_exponent_accepts_common_forms():
    assert as_exponent(3) == Fraction(3)
    assert as_exponent("5/4") == Fraction(5, 4)
    assert as_exponent(Fraction(1, 3)) == Fraction(1, 3)
    assert as_exponent(0.5) == Fraction(1, 2)
    with pytest.raises(InputError):
        as_exponent(object())
    with pytest.raises(InputError):
        as_exponent("not a number")


def test_format_exponent():
    assert format_exponent(Fraction(3)) == "3"
    assert format_exponent(Fraction(-5, 4)) == "-5/4"


def test_json_round_trip():
    lat = build_lattice([Fraction(1), Fraction(5, 2)], Fraction(6))
    blob = json.dumps(lat.to_json())
    back = SigmaLattice.from_json(json.loads(blob))
    assert back == lat


small_fracs = st.fractions(min_value=Fraction(1, 4), max_value=Fraction(6), max_denominator=6)


@settings(max_examples=60, deadline=None)
@given(st.lists(small_fracs, min_size=1, max_size=3, unique=True), st.data())
def test_lattice_matches_brute_force_property(raw_thetas, data):
    thetas = sorted(raw_thetas)
    delta = data.draw(
        st.fractions(min_value=Fraction(1, 4), max_value=Fraction(8), max_denominator=6)
    )
    K = thetas[0] + delta
    lat = build_lattice(thetas, K)
    ref = brute_force_orders(thetas, K + 4 * thetas[0])
    below = [v for v in ref if v < K]
    assert list(lat.sigmas[:-1]) == below
    assert lat.sigmas[-1] == next(v for v in ref if v >= K)
    assert lat.M == len(below) + 1
    # sortedness and distinctness
    assert all(a < b for a, b in zip(lat.sigmas, lat.sigmas[1:]))
