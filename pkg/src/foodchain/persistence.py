"""Persistence analysis from coefficients alone.

The scalar parameter delta(k), built from the corrected coefficients of the
first k species, decides the fate of the chain: delta(n) > 0 if and only if
the corrected field has a (unique) equilibrium with all components positive,
and the largest j with delta(j) > 0 is the highest trophic level that can
persist.  delta is a signed sum over matchings by adjacent transpositions.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .model import ChainSpec, TildeSpec, per_capita_Ftilde, tilde_transform

__all__ = [
    "AdjacentMatching",
    "RegimeReport",
    "EmptyRange",
    "Infeasible",
    "adjacent_matchings",
    "matching_sum",
    "delta_tilde",
    "delta_tilde_all",
    "equilibrium",
    "classify",
    "exact_tilde",
]

# delta(k) counts as zero when it is below this relative to its positive term
TIE_RTOL = 1e-12


class EmptyRange(ValueError):
    """Matching range with a > b."""


class Infeasible(Exception):
    """delta(n) <= 0: no positive equilibrium exists.

    Carries the formal (not componentwise-positive) solution of the linear
    system for inspection.
    """

    def __init__(self, formal_point, delta_n):
        self.formal_point = tuple(formal_point)
        self.delta_n = delta_n
        super().__init__(f"no positive equilibrium: delta(n) = {delta_n}")


@dataclass(frozen=True)
class AdjacentMatching:
    """An involution of {a,...,b} that is a product of disjoint (i, i+1) swaps."""

    a: int
    b: int
    pairs: tuple[tuple[int, int], ...]

    def apply(self, j: int) -> int:
        for i, k in self.pairs:
            if j == i:
                return k
            if j == k:
                return i
        return j


@dataclass(frozen=True)
class RegimeReport:
    delta: tuple[float, ...]
    equilibrium: Optional[tuple[float, ...]]
    classification: str  # Persistent | ExtinctAbove | Boundary | UnsupportedNoise
    j_star: Optional[int]
    boundary: Optional[int]
    noise_note: str

    def to_dict(self) -> dict:
        # Boundary reuses the j_star slot for the tied level k.
        j = self.j_star if self.classification == "ExtinctAbove" else self.boundary
        return {
            "delta": list(self.delta),
            "pstar": list(self.equilibrium) if self.equilibrium is not None else None,
            "classification": self.classification,
            "j_star": j,
            "noise_note": self.noise_note,
        }


def adjacent_matchings(a: int, b: int) -> list[AdjacentMatching]:
    """Enumerate every matching of {a,...,b} by disjoint adjacent swaps.

    Iterative pair/skip walk; |result| = Fibonacci(b - a + 2).  Kept for
    oracles and small ranges; the numeric sums below use the O(n) recurrence
    instead.
    """
    if a > b:
        raise EmptyRange(f"empty index range [{a}, {b}]")
    out: list[AdjacentMatching] = []
    stack: list[tuple[int, tuple[tuple[int, int], ...]]] = [(a, ())]
    while stack:
        i, pairs = stack.pop()
        if i >= b:
            out.append(AdjacentMatching(a, b, pairs))
            continue
        stack.append((i + 1, pairs))
        stack.append((i + 2, pairs + ((i, i + 1),)))
    return out


def matching_sum(tilde: TildeSpec, a: int, b: int):
    """Sum over matchings in [a, b] of the products of matched coefficients.

    A fixed point j contributes a~_jj, a swapped pair (j, j+1) contributes
    a~_{j,j+1} * a~_{j+1,j}.  Computed by the two-term continuant recurrence

        S(a, b) = a~_bb S(a, b-1) + a~_{b-1,b} a~_{b,b-1} S(a, b-2)

    with S(a, a-1) = 1.  Species indices are 1-based; b = a - 1 is allowed
    (empty product).  Works verbatim on exact (Fraction) coefficients.
    """
    if b < a - 1:
        raise EmptyRange(f"invalid matching range [{a}, {b}]")
    prev2 = 1  # S(a, a-2) convention for the recurrence start
    prev = 1  # S(a, a-1)
    for j in range(a, b + 1):
        cur = tilde.aii[j - 1] * prev
        if j > a:
            cur = cur + tilde.hi[j - 2] * tilde.lo[j - 1] * prev2
        prev2, prev = prev, cur
    return prev


def _prefix_matching_sums(tilde: TildeSpec, upto: int) -> list:
    """[S(1,0), S(1,1), ..., S(1,upto)] in one continuant sweep."""
    sums = [1]
    prev2, prev = 0, 1
    for j in range(1, upto + 1):
        cur = tilde.aii[j - 1] * prev
        if j > 1:
            cur = cur + tilde.hi[j - 2] * tilde.lo[j - 1] * prev2
        prev2, prev = prev, cur
        sums.append(cur)
    return sums


def delta_tilde(tilde: TildeSpec, k: int):
    """Evaluate delta(k) for the sub-chain of the first k species.

    delta(k) = a~10 prod_{j=2..k} a~_{j,j-1}
             - sum_{m=2..k} a~_m0 (prod_{l=m+1..k} a~_{l,l-1}) S(1, m-1)

    with empty products equal to 1, so delta(1) = a~10.
    """
    if not 1 <= k <= tilde.n:
        raise ValueError(f"k must be in 1..{tilde.n}, got {k}")
    sums = _prefix_matching_sums(tilde, k - 1)
    # suffix[m] = prod_{l=m+1..k} a~_{l,l-1}, built backwards
    suffix = [1] * (k + 1)
    for m in range(k - 1, 0, -1):
        suffix[m] = suffix[m + 1] * tilde.lo[m]  # lo[m] = a~_{m+1,m}
    total = tilde.a0[0] * suffix[1]
    for m in range(2, k + 1):
        total = total - tilde.a0[m - 1] * suffix[m] * sums[m - 1]
    return total


def delta_tilde_all(tilde: TildeSpec):
    """All of delta(1..n) via the recurrence
    delta(k) = a~_{k,k-1} delta(k-1) - a~_k0 S(1, k-1)."""
    n = tilde.n
    sums = _prefix_matching_sums(tilde, n - 1)
    out = [tilde.a0[0]]
    for k in range(2, n + 1):
        out.append(tilde.lo[k - 1] * out[-1] - tilde.a0[k - 1] * sums[k - 1])
    return tuple(out)


def equilibrium(tilde: TildeSpec):
    """Solve F~(p*) = 0 by the closed form.

    x_n = delta(n) / S(1, n); then for i = n-1..1

        x_i = [ x_n S(i+1, n) + a~_{i+1,0} prod_{j=i+2..n} a~_{j,j-1}
                + sum_{k=i+2..n} a~_k0 (prod_{l=k+1..n} a~_{l,l-1}) S(i+1, k-1) ]
              / prod_{j=i+1..n} a~_{j,j-1}

    Returns the equilibrium (ndarray for float coefficients, tuple for exact
    ones) when delta(n) > 0; raises `Infeasible` carrying the formal solution
    otherwise.
    """
    n = tilde.n
    delta_n = delta_tilde(tilde, n)
    xs = [None] * n
    xs[n - 1] = delta_n / matching_sum(tilde, 1, n)
    # suffix[i] = prod_{j=i+1..n} a~_{j,j-1}
    suffix = [1] * (n + 2)
    for i in range(n - 1, 0, -1):
        suffix[i] = suffix[i + 1] * tilde.lo[i]
    for i in range(n - 1, 0, -1):
        bracket = xs[n - 1] * matching_sum(tilde, i + 1, n)
        bracket = bracket + tilde.a0[i] * suffix[i + 1]
        for k in range(i + 2, n + 1):
            bracket = bracket + tilde.a0[k - 1] * suffix[k] * matching_sum(tilde, i + 1, k - 1)
        xs[i - 1] = bracket / suffix[i]
    exact = isinstance(xs[n - 1], Fraction)
    if not (delta_n > 0):
        raise Infeasible(xs, delta_n)
    if exact:
        return tuple(xs)
    pstar = np.array(xs, dtype=float)
    residual = float(np.max(np.abs(per_capita_Ftilde(tilde, pstar))))
    if residual > 1e-9 * (1.0 + float(np.linalg.norm(pstar))):
        raise ArithmeticError(f"equilibrium residual {residual:.3e} out of tolerance")
    return pstar


def exact_tilde(spec: ChainSpec | TildeSpec) -> TildeSpec:
    """Rebuild the corrected coefficients in exact rational arithmetic."""
    sig = tuple(Fraction(s) for s in spec.sigma)
    if isinstance(spec, TildeSpec):
        a0 = tuple(Fraction(v) for v in spec.a0)
    else:
        half = Fraction(1, 2)
        a0 = (Fraction(spec.a0[0]) - half * sig[0] ** 2,) + tuple(
            Fraction(spec.a0[i]) + half * sig[i] ** 2 for i in range(1, spec.n)
        )
    return TildeSpec(
        n=spec.n,
        a0=a0,
        aii=tuple(Fraction(v) for v in spec.aii),
        lo=tuple(Fraction(v) for v in spec.lo),
        hi=tuple(Fraction(v) for v in spec.hi),
        sigma=sig,
    )


def _effective_signs(tilde: TildeSpec, delta: Sequence[float]) -> list[int]:
    """Sign of each delta(k) with ties (relative to the positive term) as 0."""
    signs = []
    scale = abs(tilde.a0[0])
    for k, d in enumerate(delta, start=1):
        if k > 1:
            scale = scale * tilde.lo[k - 1]
        if abs(d) <= TIE_RTOL * abs(scale):
            signs.append(0)
        elif d > 0:
            signs.append(1)
        else:
            signs.append(-1)
    return signs


def classify(spec: ChainSpec) -> RegimeReport:
    """Full regime classification of a validated chain.

    Computes the corrected coefficients, delta(1..n) and, when it exists, the
    positive equilibrium.  The outcome also records whether the noise support
    needed by the persistence (sigma_1 > 0 or sigma_n > 0) or extinction
    (sigma_1 > 0 or sigma_{j*} > 0) statements actually holds; when it does
    not, the classification is UnsupportedNoise.
    """
    tilde = tilde_transform(spec)
    delta = delta_tilde_all(tilde)
    signs = _effective_signs(tilde, delta)
    sigma = spec.sigma
    n = spec.n

    pstar = None
    if signs[n - 1] > 0:
        pstar = tuple(float(v) for v in equilibrium(tilde))

    first_nonpos = next((k for k, s in enumerate(signs, start=1) if s <= 0), None)
    if first_nonpos is None:
        if sigma[0] > 0 or sigma[n - 1] > 0:
            which = "sigma_1 > 0" if sigma[0] > 0 else f"sigma_{n} > 0"
            return RegimeReport(delta, pstar, "Persistent", None, None,
                                f"persistence noise hypothesis holds ({which})")
        return RegimeReport(delta, pstar, "UnsupportedNoise", None, None,
                            "delta(n) > 0 but neither sigma_1 > 0 nor sigma_n > 0")
    if signs[first_nonpos - 1] == 0:
        return RegimeReport(delta, pstar, "Boundary", None, first_nonpos,
                            f"delta({first_nonpos}) = 0 within tolerance; "
                            "the strict-sign statements do not apply")
    j_star = first_nonpos - 1
    if j_star == 0:
        return RegimeReport(delta, pstar, "ExtinctAbove", 0, None,
                            "delta(1) <= 0: even the basal species cannot persist "
                            "(outside the stated extinction statements)")
    if sigma[0] > 0 or sigma[j_star - 1] > 0:
        which = "sigma_1 > 0" if sigma[0] > 0 else f"sigma_{j_star} > 0"
        return RegimeReport(delta, pstar, "ExtinctAbove", j_star, None,
                            f"extinction noise hypothesis holds ({which})")
    return RegimeReport(delta, pstar, "UnsupportedNoise", j_star, None,
                        f"delta({j_star}) > 0 >= delta({j_star + 1}) but neither "
                        f"sigma_1 > 0 nor sigma_{j_star} > 0")
