"""Food-chain model: coefficient records, drift fields and their Jacobians.

A chain of ``n`` species couples tridiagonally: species ``i`` eats species
``i-1`` and is eaten by species ``i+1``.  The per-capita growth rates are

    F_1(x) = a10 - a11*x1 - a12*x2
    F_i(x) = -a_i0 + a_{i,i-1}*x_{i-1} - a_ii*x_i - a_{i,i+1}*x_{i+1}
    F_n(x) = -a_n0 + a_{n,n-1}*x_{n-1} - a_nn*x_n

and each species carries multiplicative noise of amplitude ``sigma_i``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "ChainSpec",
    "TildeSpec",
    "ChainSpecWarning",
    "SpecError",
    "Violation",
    "build_spec",
    "validate",
    "spec_to_dict",
    "subchain",
    "tilde_transform",
    "invert_tilde",
    "per_capita_F",
    "per_capita_Ftilde",
    "drift_vector_A0",
    "drift_jacobian",
]


class ChainSpecWarning(UserWarning):
    """Non-fatal oddity in a coefficient table (e.g. a10 <= 0)."""


@dataclass(frozen=True)
class Violation:
    code: str  # NonPositiveCoefficient | NegativeDiagonal | NegativeSigma | NonFinite | Structural
    name: str  # coefficient name, e.g. "a21"
    path: str  # JSON path, e.g. "a[2].lo"
    message: str


class SpecError(ValueError):
    """Raised by `validate`; carries every violated constraint."""

    def __init__(self, violations: list[Violation]):
        self.violations = violations
        super().__init__("; ".join(f"{v.path}: {v.message}" for v in violations))


@dataclass(frozen=True)
class ChainSpec:
    """Validated food-chain coefficients.

    Arrays are indexed by species (0-based).  ``a0[0]`` is the growth rate of
    the basal species; ``a0[i]`` for ``i >= 1`` are death rates.  ``lo[i]``
    is the predation gain ``a_{i+1,i}`` (``lo[0]`` is an unused 0), ``hi[i]``
    the predation loss ``a_{i+1,i+2}`` (``hi[n-1]`` is an unused 0).
    """

    n: int
    a0: tuple[float, ...]
    aii: tuple[float, ...]
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    sigma: tuple[float, ...]

    def signed_a0(self) -> tuple[float, ...]:
        """Constant terms of F with their signs: (+a10, -a20, ..., -an0)."""
        return (self.a0[0],) + tuple(-v for v in self.a0[1:])


@dataclass(frozen=True)
class TildeSpec:
    """Stratonovich-corrected coefficients.

    Same layout as `ChainSpec` but with a0[0] reduced and a0[i>=1] increased
    by sigma_i^2/2; the corrected growth rate may be <= 0.
    """

    n: int
    a0: tuple[float, ...]
    aii: tuple[float, ...]
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    sigma: tuple[float, ...]

    def signed_a0(self) -> tuple[float, ...]:
        return (self.a0[0],) + tuple(-v for v in self.a0[1:])


def build_spec(
    a0: Sequence[float],
    aii: Sequence[float],
    lo: Sequence[float],
    hi: Sequence[float],
    sigma: Sequence[float],
) -> ChainSpec:
    """Validate raw coefficient arrays and return a `ChainSpec`.

    ``lo``/``hi`` must already carry their 0.0 padding at index 0 / n-1.
    """
    n = len(a0)
    violations: list[Violation] = []
    if n < 1:
        raise SpecError([Violation("Structural", "n", "n", "species count must be >= 1")])
    for name, arr, want in (("a0", a0, n), ("aii", aii, n), ("lo", lo, n), ("hi", hi, n), ("sigma", sigma, n)):
        if len(arr) != want:
            raise SpecError([Violation("Structural", name, name, f"expected length {want}, got {len(arr)}")])

    def check_finite(value: float, name: str, path: str) -> bool:
        if not math.isfinite(value):
            violations.append(Violation("NonFinite", name, path, f"{name} is not finite"))
            return False
        return True

    for i in range(n):
        sp = i + 1
        if check_finite(a0[i], f"a{sp}0", f"a[{sp}].i0" if i else "a10") and i > 0 and a0[i] <= 0:
            violations.append(
                Violation("NonPositiveCoefficient", f"a{sp}0", f"a[{sp}].i0", f"death rate a{sp}0 must be > 0")
            )
        if check_finite(aii[i], f"a{sp}{sp}", f"a[{sp}].ii"):
            if i == 0 and aii[i] <= 0:
                violations.append(
                    Violation("NonPositiveCoefficient", "a11", "a[1].ii", "a11 must be > 0")
                )
            elif aii[i] < 0:
                violations.append(
                    Violation("NegativeDiagonal", f"a{sp}{sp}", f"a[{sp}].ii", f"a{sp}{sp} must be >= 0")
                )
        if i > 0 and check_finite(lo[i], f"a{sp}{sp - 1}", f"a[{sp}].lo") and lo[i] <= 0:
            violations.append(
                Violation("NonPositiveCoefficient", f"a{sp}{sp - 1}", f"a[{sp}].lo", f"a{sp}{sp - 1} must be > 0")
            )
        if i < n - 1 and check_finite(hi[i], f"a{sp}{sp + 1}", f"a[{sp}].hi") and hi[i] <= 0:
            violations.append(
                Violation("NonPositiveCoefficient", f"a{sp}{sp + 1}", f"a[{sp}].hi", f"a{sp}{sp + 1} must be > 0")
            )
        if check_finite(sigma[i], f"sigma{sp}", f"sigma[{sp}]") and sigma[i] < 0:
            violations.append(
                Violation("NegativeSigma", f"sigma{sp}", f"sigma[{sp}]", f"sigma{sp} must be >= 0")
            )

    if violations:
        raise SpecError(violations)
    if a0[0] <= 0:
        warnings.warn(
            "a10 <= 0: the basal species has no net growth; the chain cannot persist",
            ChainSpecWarning,
            stacklevel=2,
        )
    lo = (0.0,) + tuple(float(v) for v in lo[1:])
    hi = tuple(float(v) for v in hi[: n - 1]) + (0.0,)
    return ChainSpec(
        n=n,
        a0=tuple(float(v) for v in a0),
        aii=tuple(float(v) for v in aii),
        lo=lo,
        hi=hi,
        sigma=tuple(float(v) for v in sigma),
    )


def validate(raw: Mapping) -> ChainSpec:
    """Parse and validate a JSON-shaped coefficient table.

    Expected document:
        {"n": int, "a10": num,
         "a": [{"i0": num|null, "ii": num, "lo": num|null, "hi": num|null}, ...],
         "sigma": [num, ...]}

    ``a`` lists one record per species in order; record fields that do not
    exist for a species (i0 and lo for species 1, hi for species n) are null.
    Error paths are 1-based by species, e.g. "a[2].lo" for a21.
    """
    violations: list[Violation] = []
    try:
        n = int(raw["n"])
    except (KeyError, TypeError, ValueError):
        raise SpecError([Violation("Structural", "n", "n", "missing or non-integer field 'n'")]) from None
    if n < 1:
        raise SpecError([Violation("Structural", "n", "n", "n must be >= 1")])
    records = raw.get("a")
    sigma_raw = raw.get("sigma")
    if not isinstance(records, Sequence) or len(records) != n:
        raise SpecError([Violation("Structural", "a", "a", f"'a' must list exactly {n} records")])
    if not isinstance(sigma_raw, Sequence) or len(sigma_raw) != n:
        raise SpecError([Violation("Structural", "sigma", "sigma", f"'sigma' must list exactly {n} values")])

    def pull(rec, key: str, sp: int, required: bool) -> float:
        value = rec.get(key) if isinstance(rec, Mapping) else None
        if value is None:
            if required:
                violations.append(
                    Violation("Structural", f"a[{sp}].{key}", f"a[{sp}].{key}", f"missing coefficient a[{sp}].{key}")
                )
            return math.nan
        return float(value)

    if raw.get("a10") is None:
        violations.append(Violation("Structural", "a10", "a10", "missing coefficient a10"))
        a10 = math.nan
    else:
        a10 = float(raw["a10"])

    a0 = [a10]
    aii = []
    lo = [0.0]
    hi = []
    for i, rec in enumerate(records):
        sp = i + 1
        if i > 0:
            a0.append(pull(rec, "i0", sp, required=True))
            lo.append(pull(rec, "lo", sp, required=True))
        aii.append(pull(rec, "ii", sp, required=True))
        if i < n - 1:
            hi.append(pull(rec, "hi", sp, required=True))
    hi.append(0.0)
    if violations:
        raise SpecError(violations)
    return build_spec(a0, aii, lo, hi, [float(s) for s in sigma_raw])


def spec_to_dict(spec: ChainSpec) -> dict:
    """Serialize back to the JSON document shape accepted by `validate`."""
    records = []
    for i in range(spec.n):
        records.append(
            {
                "i0": spec.a0[i] if i > 0 else None,
                "ii": spec.aii[i],
                "lo": spec.lo[i] if i > 0 else None,
                "hi": spec.hi[i] if i < spec.n - 1 else None,
            }
        )
    return {"n": spec.n, "a10": spec.a0[0], "a": records, "sigma": list(spec.sigma)}


def tilde_transform(spec: ChainSpec) -> TildeSpec:
    """Apply the Ito-to-Stratonovich correction to the intrinsic rates.

    The growth rate drops by sigma_1^2/2, death rates rise by sigma_i^2/2;
    interaction coefficients are unchanged.
    """
    a0 = (spec.a0[0] - 0.5 * spec.sigma[0] ** 2,) + tuple(
        spec.a0[i] + 0.5 * spec.sigma[i] ** 2 for i in range(1, spec.n)
    )
    return TildeSpec(n=spec.n, a0=a0, aii=spec.aii, lo=spec.lo, hi=spec.hi, sigma=spec.sigma)


def invert_tilde(tilde: TildeSpec) -> ChainSpec:
    """Undo `tilde_transform` (exact up to one rounding per coefficient)."""
    a0 = (tilde.a0[0] + 0.5 * tilde.sigma[0] ** 2,) + tuple(
        tilde.a0[i] - 0.5 * tilde.sigma[i] ** 2 for i in range(1, tilde.n)
    )
    return ChainSpec(n=tilde.n, a0=a0, aii=tilde.aii, lo=tilde.lo, hi=tilde.hi, sigma=tilde.sigma)


def subchain(spec, j: int):
    """Restrict a ChainSpec or TildeSpec to species 1..j.

    Species j loses its predation-loss term; correction and truncation
    commute, so subchain(tilde_transform(s), j) == tilde_transform(subchain(s, j)).
    """
    if not 1 <= j <= spec.n:
        raise ValueError(f"subchain length must be in 1..{spec.n}, got {j}")
    return type(spec)(
        n=j,
        a0=spec.a0[:j],
        aii=spec.aii[:j],
        lo=spec.lo[:j],
        hi=spec.hi[: j - 1] + (0.0,),
        sigma=spec.sigma[:j],
    )


def _per_capita(signed_a0, lo, aii, hi, x: np.ndarray) -> np.ndarray:
    n = len(signed_a0)
    f = np.asarray(signed_a0, dtype=float) - np.asarray(aii) * x
    if n > 1:
        f[1:] += np.asarray(lo[1:]) * x[:-1]
        f[:-1] -= np.asarray(hi[:-1]) * x[1:]
    return f


def per_capita_F(spec: ChainSpec, x) -> np.ndarray:
    """Evaluate (F_1(x), ..., F_n(x))."""
    x = np.asarray(x, dtype=float)
    return _per_capita(spec.signed_a0(), spec.lo, spec.aii, spec.hi, x)


def per_capita_Ftilde(tilde: TildeSpec, x) -> np.ndarray:
    """Evaluate the corrected field (F~_1(x), ..., F~_n(x))."""
    x = np.asarray(x, dtype=float)
    return _per_capita(tilde.signed_a0(), tilde.lo, tilde.aii, tilde.hi, x)


def drift_vector_A0(tilde: TildeSpec, x) -> np.ndarray:
    """Drift field of the Stratonovich form: component i is x_i * F~_i(x)."""
    x = np.asarray(x, dtype=float)
    return x * per_capita_Ftilde(tilde, x)


def drift_jacobian(tilde: TildeSpec, x) -> np.ndarray:
    """Exact (tridiagonal) Jacobian of `drift_vector_A0` at x.

    Diagonal entries are F~_i(x) - x_i * a~_ii; the sub/super-diagonals are
    +x_i * a~_{i,i-1} and -x_i * a~_{i,i+1}.
    """
    x = np.asarray(x, dtype=float)
    n = tilde.n
    f = per_capita_Ftilde(tilde, x)
    jac = np.zeros((n, n))
    for i in range(n):
        jac[i, i] = f[i] - x[i] * tilde.aii[i]
        if i > 0:
            jac[i, i - 1] = x[i] * tilde.lo[i]
        if i < n - 1:
            jac[i, i + 1] = -x[i] * tilde.hi[i]
    return jac
