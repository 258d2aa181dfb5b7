import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from foodchain.persistence import (
    EmptyRange,
    Infeasible,
    adjacent_matchings,
    classify,
    delta_tilde,
    delta_tilde_all,
    equilibrium,
    exact_tilde,
    matching_sum,
)
from instances import random_tilde, spec2, spec2_extinct, tilde2


def brute_matchings(a, b):
    """Independent oracle: all disjoint subsets of the adjacent-pair set."""
    candidates = [(i, i + 1) for i in range(a, b)]
    found = []
    for r in range(len(candidates) + 1):
        for combo in itertools.combinations(candidates, r):
            used = [j for p in combo for j in p]
            if len(used) == len(set(used)):
                found.append(frozenset(combo))
    return set(found)


def matching_product(tilde, matching, a, b):
    """Product of coefficients selected by one matching over species a..b.

    Starts from an integer 1 so exact (Fraction) coefficients stay exact.
    """
    prod = 1
    paired = {j for p in matching.pairs for j in p} if hasattr(matching, "pairs") else {j for p in matching for j in p}
    pairs = matching.pairs if hasattr(matching, "pairs") else matching
    for j in range(a, b + 1):
        if j not in paired:
            prod *= tilde.aii[j - 1]
    for i, _ in pairs:
        prod *= tilde.hi[i - 1] * tilde.lo[i]
    return prod


def delta_brute(tilde, k):
    """delta(k) straight from its defining double sum over enumerated matchings."""
    total = tilde.a0[0] * math.prod(tilde.lo[1:k])
    for m in range(2, k + 1):
        msum = sum(matching_product(tilde, mt, 1, m - 1) for mt in brute_matchings(1, m - 1))
        total -= tilde.a0[m - 1] * math.prod(tilde.lo[m:k]) * msum
    return total


def test_matchings_match_listed_elements():
    got3 = {m.pairs for m in adjacent_matchings(1, 3)}
    assert got3 == {(), ((1, 2),), ((2, 3),)}
    got4 = {m.pairs for m in adjacent_matchings(1, 4)}
    assert got4 == {(), ((1, 2),), ((2, 3),), ((3, 4),), ((1, 2), (3, 4))}
    assert {m.pairs for m in adjacent_matchings(1, 1)} == {()}


def test_matchings_fibonacci_counts_vs_brute_force():
    fib = [1, 1]
    while len(fib) < 16:
        fib.append(fib[-1] + fib[-2])
    for b in range(1, 13):
        ours = adjacent_matchings(1, b)
        assert len(ours) == fib[b]  # Fibonacci(b+1) with F(1)=F(2)=1
        assert {frozenset(m.pairs) for m in ours} == brute_matchings(1, b)


def test_matchings_offset_range():
    got = {m.pairs for m in adjacent_matchings(3, 5)}
    assert got == {(), ((3, 4),), ((4, 5),)}


def test_matchings_empty_range_raises():
    with pytest.raises(EmptyRange):
        adjacent_matchings(4, 3)


def test_matching_apply_is_involution():
    for m in adjacent_matchings(1, 6):
        for j in range(1, 7):
            assert m.apply(m.apply(j)) == j


def test_matching_sum_against_enumeration():
    rng = np.random.default_rng(21)
    for _ in range(50):
        n = int(rng.integers(1, 8))
        t = random_tilde(rng, n)
        a = int(rng.integers(1, n + 1))
        b = int(rng.integers(a, n + 1))
        direct = sum(matching_product(t, m, a, b) for m in brute_matchings(a, b))
        got = matching_sum(t, a, b)
        assert got == pytest.approx(direct, rel=1e-12, abs=1e-14)


def test_delta_symbolic_small_cases():
    rng = np.random.default_rng(2)
    t = random_tilde(rng, 3)
    a10, a20, a30 = t.a0
    a11, a22 = t.aii[0], t.aii[1]
    a12, a23 = t.hi[0], t.hi[1]
    a21, a32 = t.lo[1], t.lo[2]
    assert delta_tilde(t, 2) == pytest.approx(a10 * a21 - a20 * a11, rel=1e-12)
    expect3 = a10 * a32 * a21 - a20 * a32 * a11 - a30 * a22 * a11 - a30 * a12 * a21
    assert delta_tilde(t, 3) == pytest.approx(expect3, rel=1e-12)
    assert delta_tilde(t, 1) == a10


def test_delta_canonical_values():
    t = tilde2()
    assert delta_tilde(t, 2) == 2.0
    assert delta_tilde_all(t) == (3.0, 2.0)


def test_delta_recurrence_vs_definition_ensemble():
    rng = np.random.default_rng(42)
    for _ in range(300):
        n = int(rng.integers(1, 9))
        t = random_tilde(rng, n)
        all_vals = delta_tilde_all(t)
        for k in range(1, n + 1):
            brute = delta_brute(t, k)
            scale = max(abs(brute), abs(all_vals[k - 1]), abs(t.a0[0] * math.prod(t.lo[1:k])))
            assert abs(all_vals[k - 1] - brute) <= 1e-10 * max(scale, 1e-30)
            assert delta_tilde(t, k) == pytest.approx(all_vals[k - 1], rel=1e-12, abs=1e-300)


def test_delta_factorization_exact_rational():
    # with zero diagonals above the base, delta(n) = kappa(n) * prod(a~_{i,i-1})
    # where kappa is computed by an independent exact formula
    rng = np.random.default_rng(17)
    for _ in range(25):
        n = int(rng.integers(2, 7))
        t = exact_tilde(random_tilde(rng, n, diag_zero=True))
        delta_n = delta_tilde(t, n)
        prod_lo = math.prod(t.lo[1:n], start=Fraction(1))
        kappa = Fraction(t.a0[0])
        for k in range(2, n + 1):
            msum = Fraction(0)
            for m in brute_matchings(1, k - 1):
                term = Fraction(1)
                paired = {j for p in m for j in p}
                for j in range(1, k):
                    if j not in paired:
                        term *= t.aii[j - 1]
                for i, _ in m:
                    term *= t.hi[i - 1] * t.lo[i]
                msum += term
            kappa -= t.a0[k - 1] * msum / math.prod(t.lo[1:k], start=Fraction(1))
        assert delta_n == kappa * prod_lo


def test_equilibrium_canonical():
    p = equilibrium(tilde2())
    assert np.allclose(p, [1.0, 2.0], rtol=0, atol=1e-14)


def test_equilibrium_boundary_infeasible():
    # a~10 * a~21 = a~20 * a~11 makes delta(2) exactly zero
    t = tilde2()
    t = type(t)(n=2, a0=(1.0, 1.0), aii=(1.0, 0.0), lo=(0.0, 1.0), hi=(1.0, 0.0), sigma=(0.0, 0.0))
    with pytest.raises(Infeasible) as exc:
        equilibrium(t)
    assert exc.value.delta_n == 0.0
    assert exc.value.formal_point[-1] == 0.0


def _dense_solve(t):
    n = t.n
    m = np.zeros((n, n))
    rhs = np.empty(n)
    for i in range(n):
        m[i, i] = t.aii[i]
        if i > 0:
            m[i, i - 1] = -t.lo[i]
        if i < n - 1:
            m[i, i + 1] = t.hi[i]
        rhs[i] = t.a0[i] if i == 0 else -t.a0[i]
    return np.linalg.solve(m, rhs)


def test_equilibrium_matches_dense_solve_and_sign_equivalence():
    rng = np.random.default_rng(100)
    feasible = 0
    for _ in range(400):
        n = int(rng.integers(1, 9))
        t = random_tilde(rng, n)
        delta_n = delta_tilde(t, n)
        try:
            p = equilibrium(t)
            assert delta_n > 0
            assert np.all(p > 0)
            oracle = _dense_solve(t)
            assert np.allclose(p, oracle, rtol=1e-9, atol=1e-12)
            feasible += 1
        except Infeasible as exc:
            assert delta_n <= 0
            assert exc.formal_point[-1] <= 0
    assert feasible > 50


def test_extinction_cascade_upward_closed():
    rng = np.random.default_rng(33)
    for _ in range(500):
        n = int(rng.integers(2, 9))
        t = random_tilde(rng, n)
        delta = delta_tilde_all(t)
        nonpos = [k for k, d in enumerate(delta, start=1) if d <= 0]
        if nonpos:
            first = nonpos[0]
            assert nonpos == list(range(first, n + 1))
            # strict negativity beyond the first nonpositive level
            assert all(d < 0 for d in delta[first:])


def test_classify_persistent():
    rep = classify(spec2())
    assert rep.classification == "Persistent"
    assert rep.delta[1] == pytest.approx(1.995)
    assert rep.equilibrium is not None
    assert rep.j_star is None


def test_classify_extinct_above_1():
    rep = classify(spec2_extinct())
    assert rep.classification == "ExtinctAbove"
    assert rep.j_star == 1
    assert rep.delta[0] == pytest.approx(0.495)
    assert rep.delta[1] == pytest.approx(-0.505)
    assert rep.equilibrium is None


def test_classify_unsupported_noise():
    rep = classify(spec2(sigma=(0.0, 0.0)))
    assert rep.classification == "UnsupportedNoise"
    assert rep.equilibrium is not None  # delta(2) > 0, p* still reported


def test_classify_boundary():
    from foodchain.model import build_spec

    s = build_spec(a0=(1.0, 1.0), aii=(1.0, 0.0), lo=(0.0, 1.0), hi=(1.0, 0.0), sigma=(0.0, 0.0))
    rep = classify(s)
    assert rep.classification == "Boundary"
    assert rep.boundary == 2
    assert rep.to_dict()["j_star"] == 2


def test_classify_extinct_noise_hypothesis():
    # j* = 1 but only sigma_2 > 0: neither sigma_1 nor sigma_{j*} supported
    rep = classify(spec2_extinct(sigma=(0.0, 0.3)))
    assert rep.classification == "UnsupportedNoise"


def test_classify_report_invariants():
    rng = np.random.default_rng(55)
    from instances import random_spec

    for _ in range(200):
        s = random_spec(rng, int(rng.integers(1, 7)))
        rep = classify(s)
        if rep.classification == "Persistent":
            assert rep.delta[-1] > 0
            assert s.sigma[0] > 0 or s.sigma[-1] > 0
        if rep.classification == "ExtinctAbove" and rep.j_star:
            j = rep.j_star
            assert rep.delta[j - 1] > 0
            assert rep.delta[j] <= 0 if j < s.n else True
