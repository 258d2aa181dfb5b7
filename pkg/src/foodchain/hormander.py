"""Lie-bracket rank certification and the zero-control accessibility probe.

The noise fields are the diagonal scalings sigma_j x_j e_j and the drift is
the quadratic field x_i F~_i(x); all iterated brackets therefore stay
polynomial and are computed exactly in sparse monomial form.  Anchored at a
noisy end of the chain, the bracket recursion b^{k+1} = [b^k, drift] sweeps
across the chain and is triangular: its k-th field touches only the first k
coordinates (last k when anchored at the top), with an explicitly known
leading monomial, so the family has full rank everywhere in the interior.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .model import TildeSpec, per_capita_Ftilde
from .persistence import Infeasible, equilibrium

__all__ = [
    "Poly",
    "PolyVectorField",
    "HormanderReport",
    "ZeroNoiseAtAnchor",
    "BoundaryPoint",
    "EquilibriumAbsent",
    "lie_bracket",
    "drift_field",
    "noise_field",
    "bracket_chain",
    "rank_at",
    "accessibility_probe",
]

BOUNDARY_MARGIN = 1e-8


class ZeroNoiseAtAnchor(ValueError):
    """Bracket chain requested from a species with sigma = 0."""


class BoundaryPoint(ValueError):
    """Interior-only operation evaluated too close to the boundary."""


class EquilibriumAbsent(ValueError):
    """Probe toward the positive equilibrium, but delta(n) <= 0."""


class Poly:
    """Sparse multivariate polynomial: map from exponent tuples to floats."""

    __slots__ = ("n", "terms")

    def __init__(self, n: int, terms: Optional[dict] = None):
        self.n = n
        self.terms = {}
        if terms:
            for expo, coeff in terms.items():
                if coeff != 0.0:
                    self.terms[tuple(expo)] = coeff

    @classmethod
    def constant(cls, n: int, value: float) -> "Poly":
        return cls(n, {(0,) * n: value})

    @classmethod
    def monomial(cls, n: int, coeff: float, **powers: int) -> "Poly":
        expo = [0] * n
        for name, p in powers.items():
            expo[int(name[1:])] = p  # x0, x1, ...
        return cls(n, {tuple(expo): coeff})

    def _combine(self, other: "Poly", sign: float) -> "Poly":
        out = dict(self.terms)
        for expo, coeff in other.terms.items():
            new = out.get(expo, 0.0) + sign * coeff
            if new == 0.0:
                out.pop(expo, None)
            else:
                out[expo] = new
        return Poly(self.n, out)

    def __add__(self, other: "Poly") -> "Poly":
        return self._combine(other, 1.0)

    def __sub__(self, other: "Poly") -> "Poly":
        return self._combine(other, -1.0)

    def __mul__(self, other: "Poly") -> "Poly":
        out: dict = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                expo = tuple(a + b for a, b in zip(e1, e2))
                new = out.get(expo, 0.0) + c1 * c2
                if new == 0.0:
                    out.pop(expo, None)
                else:
                    out[expo] = new
        return Poly(self.n, out)

    def scale(self, factor: float) -> "Poly":
        return Poly(self.n, {e: factor * c for e, c in self.terms.items()})

    def partial(self, j: int) -> "Poly":
        out: dict = {}
        for expo, coeff in self.terms.items():
            p = expo[j]
            if p == 0:
                continue
            new = list(expo)
            new[j] = p - 1
            out[tuple(new)] = out.get(tuple(new), 0.0) + coeff * p
        return Poly(self.n, out)

    def __call__(self, x) -> float:
        total = 0.0
        for expo, coeff in self.terms.items():
            term = coeff
            for j, p in enumerate(expo):
                if p:
                    term *= x[j] ** p
            total += term
        return total

    def is_zero(self) -> bool:
        return not self.terms

    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def __eq__(self, other) -> bool:
        return isinstance(other, Poly) and self.n == other.n and self.terms == other.terms

    def __repr__(self) -> str:
        return f"Poly({self.terms})"


@dataclass(frozen=True)
class PolyVectorField:
    components: tuple

    @property
    def n(self) -> int:
        return len(self.components)

    def __call__(self, x) -> np.ndarray:
        return np.array([c(x) for c in self.components])


@dataclass(frozen=True)
class HormanderReport:
    point: tuple
    brackets: np.ndarray  # rows are b^1(x) .. b^n(x)
    rank: int
    smallest_singular_ratio: float
    satisfied: bool

    def to_dict(self) -> dict:
        return {
            "point": list(self.point),
            "brackets": self.brackets.tolist(),
            "rank": self.rank,
            "smallest_singular_ratio": self.smallest_singular_ratio,
            "satisfied": self.satisfied,
        }


def lie_bracket(v: PolyVectorField, w: PolyVectorField) -> PolyVectorField:
    """[V, W]_i = sum_j (dW_i/dx_j V_j - dV_i/dx_j W_j), exactly."""
    n = v.n
    comps = []
    for i in range(n):
        acc = Poly(n)
        for j in range(n):
            acc = acc + w.components[i].partial(j) * v.components[j]
            acc = acc - v.components[i].partial(j) * w.components[j]
        comps.append(acc)
    return PolyVectorField(tuple(comps))


def drift_field(tilde: TildeSpec) -> PolyVectorField:
    """The quadratic drift x_i F~_i(x) as a polynomial field."""
    n = tilde.n
    signed = tilde.signed_a0()
    comps = []
    for i in range(n):
        poly = Poly.monomial(n, signed[i], **{f"x{i}": 1})
        poly = poly - Poly(n, {_expo2(n, i, i): tilde.aii[i]})
        if i > 0:
            poly = poly + Poly(n, {_expo2(n, i, i - 1): tilde.lo[i]})
        if i < n - 1:
            poly = poly - Poly(n, {_expo2(n, i, i + 1): tilde.hi[i]})
        comps.append(poly)
    return PolyVectorField(tuple(comps))


def _expo2(n: int, i: int, j: int) -> tuple:
    expo = [0] * n
    expo[i] += 1
    expo[j] += 1
    return tuple(expo)


def noise_field(tilde: TildeSpec, j: int) -> PolyVectorField:
    """sigma_j x_j e_j (0-based j)."""
    n = tilde.n
    comps = [Poly(n) for _ in range(n)]
    comps[j] = Poly.monomial(n, tilde.sigma[j], **{f"x{j}": 1})
    return PolyVectorField(tuple(comps))


def bracket_chain(tilde: TildeSpec, direction: str = "bottom") -> list[PolyVectorField]:
    """b^1 = noise field at the anchor, b^{k+1} = [b^k, drift].

    direction="bottom" anchors at species 1 (requires sigma_1 > 0) and gives
    fields with b^k_j = 0 for j > k and leading term
    b^k_k = sigma_1 a~_21 ... a~_{k,k-1} x_1 x_2 ... x_k; "top" anchors at
    species n and is its mirror image.  The triangular structure is verified
    symbolically before returning.
    """
    n = tilde.n
    if direction == "bottom":
        anchor = 0
    elif direction == "top":
        anchor = n - 1
    else:
        raise ValueError(f"direction must be 'bottom' or 'top', got {direction!r}")
    if tilde.sigma[anchor] <= 0:
        raise ZeroNoiseAtAnchor(f"sigma_{anchor + 1} must be > 0 to anchor the chain")

    a0 = drift_field(tilde)
    chain = [noise_field(tilde, anchor)]
    for _ in range(n - 1):
        chain.append(lie_bracket(chain[-1], a0))

    for k, field in enumerate(chain, start=1):
        if direction == "bottom":
            dead = range(k, n)
            lead = k - 1
            coeff = tilde.sigma[0]
            for i in range(1, k):
                coeff = coeff * tilde.lo[i]
        else:
            dead = range(0, n - k)
            lead = n - k
            coeff = tilde.sigma[n - 1]
            for i in range(n - k, n - 1):
                coeff = coeff * tilde.hi[i]
            coeff = coeff * (-1.0) ** (k - 1)
        for j in dead:
            if not field.components[j].is_zero():
                raise AssertionError(f"bracket b^{k} is not triangular at component {j}")
        expo = [0] * n
        for i in range(min(anchor, lead), max(anchor, lead) + 1):
            expo[i] = 1
        got = field.components[lead].terms.get(tuple(expo))
        if got is None or abs(got - coeff) > 1e-12 * max(1.0, abs(coeff)):
            raise AssertionError(f"bracket b^{k} leading coefficient {got} != {coeff}")
    return chain


def _balance(matrix: np.ndarray, sweeps: int = 5) -> np.ndarray:
    """Alternate row and column normalization (rank-preserving diagonal
    scalings).  Bracket rows grow geometrically along the chain, so the raw
    matrix can be scaled across 10+ orders of magnitude; balancing makes the
    singular-value ratio measure angular independence instead."""
    m = matrix.copy()
    for _ in range(sweeps):
        rn = np.linalg.norm(m, axis=1, keepdims=True)
        m = np.divide(m, rn, out=m, where=rn > 0)
        cn = np.linalg.norm(m, axis=0, keepdims=True)
        m = np.divide(m, cn, out=m, where=cn > 0)
    return m


def rank_at(tilde: TildeSpec, x, tolerance: float = 1e-10,
            direction: Optional[str] = None) -> HormanderReport:
    """Numerical rank of {b^1(x), ..., b^n(x)} at an interior point.

    The bracket matrix is balanced by diagonal scalings (which cannot change
    its rank) and rank counts singular values above `tolerance` times the
    largest one; the spanning condition holds iff rank == n.  Points with a
    coordinate below 1e-8 are rejected: the claim only concerns the open
    interior.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= BOUNDARY_MARGIN):
        raise BoundaryPoint(f"point {x} is not in the open interior")
    if direction is None:
        direction = "bottom" if tilde.sigma[0] > 0 else "top"
    chain = bracket_chain(tilde, direction)
    rows = np.array([field(x) for field in chain])
    sv = np.linalg.svd(_balance(rows), compute_uv=False)
    ratio = float(sv[-1] / sv[0]) if sv[0] > 0 else 0.0
    rank = int(np.sum(sv > tolerance * sv[0])) if sv[0] > 0 else 0
    return HormanderReport(
        point=tuple(float(v) for v in x),
        brackets=rows,
        rank=rank,
        smallest_singular_ratio=ratio,
        satisfied=rank == tilde.n,
    )


@dataclass(frozen=True)
class ProbeResult:
    final_state: np.ndarray
    final_distance: float
    checkpoint_times: np.ndarray
    checkpoint_distances: np.ndarray
    converged: bool

    def to_dict(self) -> dict:
        return {
            "final_state": self.final_state.tolist(),
            "final_distance": self.final_distance,
            "checkpoint_times": self.checkpoint_times.tolist(),
            "checkpoint_distances": self.checkpoint_distances.tolist(),
            "converged": self.converged,
        }


def accessibility_probe(tilde: TildeSpec, x0, horizon: float = 500.0,
                        dt: float = 1.0, target_distance: float = 1e-7) -> ProbeResult:
    """Integrate the zero-control flow dy_i/dt = y_i F~_i(y) toward p*.

    Runs in log coordinates with an adaptive explicit scheme; `dt` is the
    checkpoint spacing.  Stops early once the distance to the equilibrium
    falls below `target_distance`.
    """
    x0 = np.asarray(x0, dtype=float)
    if np.any(x0 <= 0):
        raise BoundaryPoint("probe start must be interior")
    try:
        pstar = np.asarray(equilibrium(tilde), dtype=float)
    except Infeasible as exc:
        raise EquilibriumAbsent(str(exc)) from exc

    def rhs(_t, z):
        return per_capita_Ftilde(tilde, np.exp(z))

    def close(_t, z):
        return float(np.linalg.norm(np.exp(z) - pstar)) - target_distance

    close.terminal = True
    times = np.arange(0.0, horizon + 0.5 * dt, dt)
    sol = solve_ivp(rhs, (0.0, horizon), np.log(x0), t_eval=times,
                    events=close, rtol=1e-10, atol=1e-12, max_step=horizon)
    states = np.exp(sol.y.T)
    dists = np.linalg.norm(states - pstar[None, :], axis=1)
    final = np.exp(sol.y_events[0][0]) if sol.y_events[0].size else states[-1]
    final_dist = float(np.linalg.norm(final - pstar))
    return ProbeResult(
        final_state=final,
        final_distance=final_dist,
        checkpoint_times=sol.t,
        checkpoint_distances=dists,
        converged=final_dist <= max(target_distance, 1e-6),
    )
