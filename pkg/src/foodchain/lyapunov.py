"""Lyapunov family construction and numerical drift-inequality certificates.

The linear function U(x) = 1 + sum c_i x_i, with weights chosen so that
predation cross-terms cancel (c_i a_{i,i-1} = c_{i-1} a_{i-1,i}), satisfies

    L U <= -alpha U + beta      and      Gamma_L(U) <= gamma U^2

with alpha the smallest death rate, gamma the largest noise variance and
beta given in closed form by a one-dimensional quadratic maximum.  From
these constants the critical moment order q0 = 1 + 2 alpha / gamma and the
rate families V, W_q, W_hat are built, and every inequality the convergence
statements rely on is certified by scanning radial shells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .model import ChainSpec, per_capita_F

__all__ = [
    "LyapunovU",
    "FamilyParams",
    "CertInputs",
    "ScanPlan",
    "ScanResult",
    "RateCertificate",
    "RateFunctions",
    "SingleSpecies",
    "NonInteriorPoint",
    "WeightsTooLarge",
    "build_U",
    "q_zero",
    "generator_on_family",
    "carre_du_champ_on_family",
    "verify_drift_inequalities",
    "build_rate_functions",
]

FAMILIES = ("U", "Uq", "lnU", "V", "Wq", "What")
_INTERIOR_FAMILIES = ("lnU", "V", "Wq", "What")


class SingleSpecies(ValueError):
    """alpha is a minimum over death rates of species 2..n; undefined for n=1."""


class NonInteriorPoint(ValueError):
    """Log-type family evaluated on the boundary."""


class WeightsTooLarge(ValueError):
    """p-weights violate V > 0 or W_hat >= 1 on the verification sample."""


@dataclass(frozen=True)
class LyapunovU:
    """Weights and drift constants of the linear Lyapunov function."""

    c: tuple[float, ...]
    alpha: float
    beta: float
    gamma: float


def build_U(spec: ChainSpec, c1: float = 1.0) -> LyapunovU:
    """Construct U's weights and (alpha, beta, gamma) in closed form.

    beta = alpha + sup_{x1>0} c1 x1 (a10 + alpha - a11 x1); the supremum is
    the quadratic's vertex value c1 (a10 + alpha)^2 / (4 a11) when
    a10 + alpha > 0 and 0 otherwise.
    """
    if spec.n < 2:
        raise SingleSpecies("the drift constants need at least two species")
    if c1 <= 0:
        raise ValueError("c1 must be > 0")
    c = [c1]
    for i in range(1, spec.n):
        c.append(c[-1] * spec.hi[i - 1] / spec.lo[i])
    alpha = min(spec.a0[1:])
    gamma = max(s * s for s in spec.sigma)
    a10, a11 = spec.a0[0], spec.aii[0]
    top = a10 + alpha
    vertex = c1 * top * top / (4.0 * a11) if top > 0 else 0.0
    return LyapunovU(c=tuple(c), alpha=alpha, beta=alpha + vertex, gamma=gamma)


def q_zero(cert: LyapunovU) -> float:
    """Critical moment order solving -alpha + (q0 - 1) gamma / 2 = 0.

    Returns +inf for gamma = 0 (no noise bound; every finite order works).
    """
    if cert.gamma == 0:
        return math.inf
    return 1.0 + 2.0 * cert.alpha / cert.gamma


@dataclass(frozen=True)
class FamilyParams:
    """Parameters shared by the closed-form families."""

    lyap: LyapunovU
    q: Optional[float] = None
    p_weights: Optional[tuple[float, ...]] = None
    C: float = 1.0
    eps_star: float = 0.05


def _family_partials(family: str, params: FamilyParams, x: np.ndarray):
    """Value, gradient and diagonal Hessian of the named family at x."""
    c = np.asarray(params.lyap.c)
    u = 1.0 + float(c @ x)
    if family in _INTERIOR_FAMILIES and np.any(x <= 0):
        raise NonInteriorPoint(f"family {family} needs a strictly positive point")
    if family == "U":
        return u, c, np.zeros_like(c)
    if family == "Uq":
        q = params.q
        if q is None:
            raise ValueError("family Uq needs q")
        val = u ** q
        grad = q * u ** (q - 1) * c
        hess = q * (q - 1) * u ** (q - 2) * c * c
        return val, grad, hess
    if family == "lnU":
        return math.log(u), c / u, -(c * c) / (u * u)
    p = np.asarray(params.p_weights if params.p_weights is not None else np.zeros_like(c))
    v = u - float(p @ np.log(x))
    if family == "V":
        return v, c - p / x, p / (x * x)
    if family == "Wq":
        q = params.q
        if q is None or q <= 1:
            raise ValueError("family Wq needs q > 1")
        m = q if q <= 2 else 2 * q - 2
        gv = c - p / x
        val = v ** q + params.C * u ** m
        grad = q * v ** (q - 1) * gv + params.C * m * u ** (m - 1) * c
        hess = (
            q * (q - 1) * v ** (q - 2) * gv * gv
            + q * v ** (q - 1) * (p / (x * x))
            + params.C * m * (m - 1) * u ** (m - 2) * c * c
        )
        return val, grad, hess
    if family == "What":
        eps = params.eps_star
        w = (u / float(np.prod(x ** p))) ** eps
        g = eps * (c / u - p / x)
        grad = w * g
        hess = w * (g * g + eps * (p / (x * x) - (c * c) / (u * u)))
        return w, grad, hess
    raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")


def generator_on_family(spec: ChainSpec, family: str, params: FamilyParams, x) -> float:
    """Apply the diffusion generator
    L g = sum x_i F_i dg/dx_i + (1/2) sum sigma_i^2 x_i^2 d2g/dx_i^2
    to the named closed-form family, using its analytic partials."""
    x = np.asarray(x, dtype=float)
    _, grad, hess = _family_partials(family, params, x)
    f = per_capita_F(spec, x)
    sig2 = np.asarray(spec.sigma) ** 2
    return float(np.sum(x * f * grad) + 0.5 * np.sum(sig2 * x * x * hess))


def carre_du_champ_on_family(spec: ChainSpec, family: str, params: FamilyParams, x) -> float:
    """Gamma_L(g)(x) = sum sigma_i^2 x_i^2 (dg/dx_i)^2 for the named family."""
    x = np.asarray(x, dtype=float)
    _, grad, _ = _family_partials(family, params, x)
    sig2 = np.asarray(spec.sigma) ** 2
    return float(np.sum(sig2 * x * x * grad * grad))


@dataclass(frozen=True)
class ScanPlan:
    """Log-spaced radial shells with low-discrepancy directions."""

    radii: tuple[float, ...] = tuple(float(r) for r in np.geomspace(1e-2, 1e4, 13))
    samples_per_shell: int = 800
    seed: int = 12345
    floor: float = 1e-6  # direction components stay above this before normalizing

    def points(self, n: int) -> list[np.ndarray]:
        """One (samples, n) array of scan points per shell."""
        sampler = qmc.Halton(d=n, scramble=True, seed=self.seed)
        u = sampler.random(self.samples_per_shell)
        w = self.floor + (1.0 - self.floor) * u
        dirs = w / np.linalg.norm(w, axis=1, keepdims=True)
        return [r * dirs for r in self.radii]


@dataclass(frozen=True)
class ScanResult:
    inequality: str
    passed: bool
    min_margin: float
    worst_point: tuple[float, ...]
    activation_radius: Optional[float]
    shell_margins: tuple[tuple[float, float], ...] = ()  # (radius, worst margin)

    def to_dict(self) -> dict:
        return {
            "inequality": self.inequality,
            "passed": self.passed,
            "min_margin": self.min_margin,
            "worst_point": list(self.worst_point),
            "activation_radius": self.activation_radius,
        }


@dataclass(frozen=True)
class CertInputs:
    """Overrides for the scanned constants; everything derivable is derived."""

    c1: float = 1.0
    q: Optional[float] = None
    p0_linear: Optional[float] = None
    p0_log: Optional[float] = None
    d0: float = 1.0
    growth_C: Optional[float] = None
    p_total: float = 0.01
    eps_star: float = 0.05
    C_Wq: float = 1.0


@dataclass(frozen=True)
class RateCertificate:
    q0: float
    q: float
    k1q: float
    k2q: float
    p0_linear: float
    p0_log: Optional[float]
    growth_C: float
    d0: float
    p_weights: tuple[float, ...]
    C_Wq: float
    eps_star: float
    lyap: LyapunovU
    scan_results: tuple[ScanResult, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.scan_results)

    def to_json_rows(self) -> list[dict]:
        return [r.to_dict() for r in self.scan_results]


def _coefficient_norms(spec: ChainSpec, c: Sequence[float]):
    """(A, B, maxcol): sum |F_i| <= A + maxcol * ||x||_1 <= A + B * U."""
    n = spec.n
    const = sum(abs(v) for v in spec.a0)
    colsums = []
    for j in range(n):
        col = spec.aii[j]
        if j + 1 < n:
            col += spec.lo[j + 1]
        if j > 0:
            col += spec.hi[j - 1]
        colsums.append(col)
    maxcol = max(colsums)
    b = max(colsums[j] / c[j] for j in range(n))
    return const, b, maxcol


def _batch_F(spec: ChainSpec, pts: np.ndarray) -> np.ndarray:
    a0s = np.array(spec.signed_a0())
    f = a0s[None, :] - np.array(spec.aii)[None, :] * pts
    if spec.n > 1:
        f[:, 1:] += np.array(spec.lo[1:])[None, :] * pts[:, :-1]
        f[:, :-1] -= np.array(spec.hi[:-1])[None, :] * pts[:, 1:]
    return f


def _limsup_result(name: str, radii, shell_margins, shell_worst) -> ScanResult:
    """Certify 'holds beyond some radius': find the smallest shell index from
    which every larger shell has positive margin."""
    k0 = None
    for k in range(len(radii)):
        if all(m > 0 for m in shell_margins[k:]):
            k0 = k
            break
    if k0 is None:
        worst = int(np.argmin(shell_margins))
        return ScanResult(name, False, float(shell_margins[worst]),
                          tuple(shell_worst[worst]), None,
                          tuple((float(r), float(m)) for r, m in zip(radii, shell_margins)))
    tail = shell_margins[k0:]
    worst_rel = int(np.argmin(tail)) + k0
    return ScanResult(name, True, float(shell_margins[worst_rel]),
                      tuple(shell_worst[worst_rel]), float(radii[k0]),
                      tuple((float(r), float(m)) for r, m in zip(radii, shell_margins)))


def verify_drift_inequalities(spec: ChainSpec, cert_inputs: Optional[CertInputs] = None,
                              scan_plan: Optional[ScanPlan] = None) -> RateCertificate:
    """Scan every drift inequality the convergence statements rely on.

    Global bounds (margins must be >= 0 at every sampled point):
      LU_drift      beta - alpha U - LU
      carre_bound   gamma U^2 - Gamma_L(U)
      F_growth      C U^{d0} - sum |F_i|
      LUq_drift     (k1q - (k2q/2) U^q - LU^q) / U^q   (q < q0; normalized
                    by U^q so large q cannot overflow)
      V_positive    V                              (p-weight smallness check)
      What_floor    ln U - sum p_i ln x_i          (W_hat >= 1 check)

    Asymptotic bounds, certified per shell beyond a reported activation
    radius:
      U_log_coercive   min U / ln ||x||            (shells with radius > 1)
      LU_plus_F        -(LU + p0 sum|F_i|)
      lnU_plus_F       -(L ln U + p0 sum|F_i|)     (only when all a_ii > 0)

    Failures are recorded, not raised.
    """
    inputs = cert_inputs or CertInputs()
    plan = scan_plan or ScanPlan()
    lyap = build_U(spec, inputs.c1)
    c = np.asarray(lyap.c)
    alpha, beta, gamma = lyap.alpha, lyap.beta, lyap.gamma
    q0 = q_zero(lyap)
    q = inputs.q if inputs.q is not None else ((1.0 + q0) / 2.0 if math.isfinite(q0) else 2.0)
    if not 1.0 < q < q0:
        raise ValueError(f"q must lie in (1, q0) = (1, {q0}), got {q}")
    k2q = q * (alpha - (q - 1) * gamma / 2.0)
    h = k2q / 2.0
    # k1q = sup_{u >= 1} of g(u) = q beta u^{q-1} - h u^q; the vertex sits at
    # u* = (q-1) beta / h where g(u*) = beta u*^{q-1}.  Kept in log space:
    # small gamma makes q, and with it k1q, astronomically large.
    ustar = (q - 1) * beta / h
    g_at_1 = q * beta - h
    if ustar > 1:
        log_k1q = math.log(beta) + (q - 1) * math.log(ustar)
        if g_at_1 > 0:
            log_k1q = max(log_k1q, math.log(g_at_1))
        k1q = math.exp(log_k1q) if log_k1q < 700.0 else math.inf
    else:
        log_k1q = None
        k1q = g_at_1

    const_a, growth_b, maxcol = _coefficient_norms(spec, lyap.c)
    growth_c = inputs.growth_C if inputs.growth_C is not None else const_a + growth_b
    p0_lin = inputs.p0_linear if inputs.p0_linear is not None else alpha / (2.0 * growth_b)
    all_diag = all(v > 0 for v in spec.aii)
    p0_log = inputs.p0_log
    if p0_log is None and all_diag:
        m_diag = min(a * ci for a, ci in zip(spec.aii, lyap.c))
        p0_log = 0.5 * m_diag / (spec.n * max(lyap.c) * maxcol)

    p_weights = tuple(inputs.p_total / spec.n for _ in range(spec.n))
    p = np.asarray(p_weights)
    sig2 = np.asarray(spec.sigma) ** 2

    shells = plan.points(spec.n)
    results: list[ScanResult] = []

    # accumulators for the global inequalities: (margin, point)
    global_rows = {
        name: [math.inf, None]
        for name in ("LU_drift", "carre_bound", "F_growth", "LUq_drift", "V_positive", "What_floor")
    }
    limsup_rows = {"U_log_coercive": [], "LU_plus_F": []}
    if p0_log is not None:
        limsup_rows["lnU_plus_F"] = []
    shell_worst_pts = {k: [] for k in limsup_rows}

    for r, pts in zip(plan.radii, shells):
        u = 1.0 + pts @ c
        log_u = np.log(u)
        fvals = _batch_F(spec, pts)
        lu = np.sum(c[None, :] * pts * fvals, axis=1)
        carre = np.sum(sig2[None, :] * pts * pts * c[None, :] ** 2, axis=1)
        sum_abs_f = np.sum(np.abs(fvals), axis=1)
        # LU^q inequality normalized by U^q (margins per unit U^q): the raw
        # quantities overflow for the large q that small gamma produces
        luq_scaled = q * lu / u + 0.5 * q * (q - 1) * carre / (u * u)
        if log_k1q is not None:
            head = np.exp(log_k1q - q * log_u)
        else:
            head = k1q * np.exp(-q * log_u)
        lnu_term = lu / u - 0.5 * carre / (u * u)
        logs = np.log(pts)
        vvals = u - logs @ p

        def track(name: str, margins: np.ndarray):
            i = int(np.argmin(margins))
            if margins[i] < global_rows[name][0]:
                global_rows[name][0] = float(margins[i])
                global_rows[name][1] = pts[i]

        track("LU_drift", beta - alpha * u - lu)
        track("carre_bound", gamma * u * u - carre)
        track("F_growth", growth_c * u ** inputs.d0 - sum_abs_f)
        track("LUq_drift", head - h - luq_scaled)
        track("V_positive", vvals)
        track("What_floor", log_u - logs @ p)

        def shell(name: str, margins: np.ndarray):
            i = int(np.argmin(margins))
            limsup_rows[name].append(float(margins[i]))
            shell_worst_pts[name].append(pts[i])

        if r > 1.0:
            shell("U_log_coercive", u / math.log(r))
        else:
            limsup_rows["U_log_coercive"].append(-math.inf)
            shell_worst_pts["U_log_coercive"].append(pts[0])
        shell("LU_plus_F", -(lu + p0_lin * sum_abs_f))
        if p0_log is not None:
            shell("lnU_plus_F", -(lnu_term + p0_log * sum_abs_f))

    for name, (margin, point) in global_rows.items():
        results.append(ScanResult(name, margin >= -1e-12, margin,
                                  tuple(float(v) for v in point), None))
    for name in limsup_rows:
        results.append(_limsup_result(name, plan.radii, limsup_rows[name], shell_worst_pts[name]))

    return RateCertificate(
        q0=q0, q=q, k1q=k1q, k2q=k2q, p0_linear=p0_lin, p0_log=p0_log,
        growth_C=growth_c, d0=inputs.d0, p_weights=p_weights, C_Wq=inputs.C_Wq,
        eps_star=inputs.eps_star, lyap=lyap, scan_results=tuple(results),
    )


@dataclass(frozen=True)
class RateFunctions:
    """Callable rate-norm weights V, W_q, W_{beta,q} and W_hat."""

    lyap: LyapunovU
    q: float
    p_weights: tuple[float, ...]
    C: float
    eps_star: float

    def _params(self) -> FamilyParams:
        return FamilyParams(self.lyap, q=self.q, p_weights=self.p_weights,
                            C=self.C, eps_star=self.eps_star)

    def U(self, x) -> float:
        return 1.0 + float(np.asarray(self.lyap.c) @ np.asarray(x, dtype=float))

    def V(self, x) -> float:
        return _family_partials("V", self._params(), np.asarray(x, dtype=float))[0]

    def W_q(self, x) -> float:
        return _family_partials("Wq", self._params(), np.asarray(x, dtype=float))[0]

    def W_beta_q(self, x, beta: float) -> float:
        return self.W_q(x) ** (1.0 - beta / self.q)

    def W_hat(self, x) -> float:
        return _family_partials("What", self._params(), np.asarray(x, dtype=float))[0]


def build_rate_functions(cert: LyapunovU, q: float,
                         p_weights: Optional[Sequence[float]] = None,
                         C: float = 1.0, eps_star: float = 0.05,
                         sample: Optional[np.ndarray] = None) -> RateFunctions:
    """Build evaluators for V, W_q, W_{beta,q} and W_hat.

    q must lie in (1, min(q0, (q0+2)/2)); the V^q + C U^q branch is used for
    q <= 2 and V^q + C U^{2q-2} above.  The p-weights must be small enough
    that V > 0 and W_hat >= 1 on the verification sample, else
    `WeightsTooLarge` is raised.
    """
    n = len(cert.c)
    q0 = q_zero(cert)
    if not 1.0 < q < min(q0, (q0 + 2.0) / 2.0):
        raise ValueError(f"q must lie in (1, min(q0, (q0+2)/2)), got {q} with q0 = {q0}")
    p = tuple(float(v) for v in (p_weights if p_weights is not None else [0.01 / n] * n))
    if any(v < 0 for v in p):
        raise ValueError("p_weights must be >= 0")
    fns = RateFunctions(lyap=cert, q=q, p_weights=p, C=C, eps_star=eps_star)
    if sample is None:
        sample = np.concatenate(ScanPlan(seed=987).points(n), axis=0)
    c = np.asarray(cert.c)
    u = 1.0 + sample @ c
    logs = np.log(sample) @ np.asarray(p)
    if np.any(u - logs <= 0):
        raise WeightsTooLarge("V <= 0 at a verification point; reduce the p-weights")
    if np.any(np.log(u) - logs < 0):
        raise WeightsTooLarge("W_hat < 1 at a verification point; reduce the p-weights")
    return fns
