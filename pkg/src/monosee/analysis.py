"""Comparison-function machinery: concave moduli, Bihari/Gronwall bounds, norms.

The uniqueness and Picard-convergence arguments all reduce to one scalar
comparison inequality

    g(t) <= Ginv( G(g0) + int_0^t lambda(s) ds ),   G(x) = int_{g0}^x dy / rho(y),

with rho a nondecreasing concave modulus.  When rho additionally satisfies the
Osgood condition (int_0+ dx/rho(x) = +infinity), g0 = 0 forces g == 0, which is
the quantitative mechanism behind pathwise uniqueness and fixed-point
convergence.  This module evaluates the moduli, the bound, its zero-limit
diagnostic, and the discrete weighted norms used by every error study.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid, quad
from scipy.optimize import brentq

from .errors import ConfigError

# Values above this are reported as blow-up rather than returned.
BOUND_CAP = 1e300

LINEAR = "linear"
RHO_K = "rho_k"
POWER = "power"


def _iterated_logs(w: float, k: int) -> list[float]:
    """[l_1(w), ..., l_k(w)] with l_1 = w and l_{j+1} = log l_j."""
    vals = [float(w)]
    for _ in range(k - 1):
        vals.append(math.log(vals[-1]))
    return vals


@dataclass(frozen=True)
class ModulusSpec:
    """A concave modulus rho on [0, inf).

    kind = "linear":  rho(x) = slope * x  (classical Gronwall case).
    kind = "rho_k":   rho(x) = c0 * x * prod_{j=1}^k log^j(1/x) for x <= eta,
                      extended affinely above eta with the left derivative
                      (C1 match), where log^j is the j-times iterated log.
    kind = "power":   rho(x) = c0 * x**alpha, alpha in (0, 1).  Not Osgood;
                      exists so the zero-limit diagnostic has a negative case.
    """

    kind: str
    slope: float = 1.0
    k: int = 1
    c0: float = 1.0
    eta: float = math.exp(-1.0)
    alpha: float = 0.5

    def __post_init__(self):
        if self.kind == LINEAR:
            if self.slope < 0:
                raise ConfigError("linear modulus needs slope >= 0")
        elif self.kind == RHO_K:
            if self.k < 1 or int(self.k) != self.k:
                raise ConfigError("rho_k modulus needs integer k >= 1")
            if self.c0 <= 0:
                raise ConfigError("rho_k modulus needs c0 > 0")
            if not (0.0 < self.eta <= math.exp(-self.k) * (1.0 + 1e-12)):
                raise ConfigError(
                    f"rho_k modulus needs eta in (0, e^-k]; got eta={self.eta}, k={self.k}"
                )
            w_eta = math.log(1.0 / self.eta)
            logs = _iterated_logs(w_eta, self.k)
            if min(logs) <= 0.0:
                raise ConfigError(
                    "rho_k modulus: iterated logs must stay positive on (0, eta]"
                )
            if _rho_k_prime_inner(self.eta, self.k, self.c0) < -1e-12:
                raise ConfigError(
                    "rho_k modulus: eta too large, rho would decrease before eta"
                )
        elif self.kind == POWER:
            if not (0.0 < self.alpha < 1.0):
                raise ConfigError("power modulus needs alpha in (0, 1)")
            if self.c0 <= 0:
                raise ConfigError("power modulus needs c0 > 0")
        else:
            raise ConfigError(f"unknown modulus kind {self.kind!r}")

    @property
    def is_osgood(self) -> bool:
        """Analytic criterion: does int_0+ dx/rho(x) diverge?"""
        return self.kind in (LINEAR, RHO_K)


def linear_modulus(slope: float = 1.0) -> ModulusSpec:
    return ModulusSpec(kind=LINEAR, slope=slope)


def rho_k_modulus(k: int = 1, c0: float = 1.0, eta: float | None = None) -> ModulusSpec:
    if eta is None:
        eta = math.exp(-float(k))
    return ModulusSpec(kind=RHO_K, k=k, c0=c0, eta=eta)


def power_modulus(alpha: float = 0.5, c0: float = 1.0) -> ModulusSpec:
    return ModulusSpec(kind=POWER, alpha=alpha, c0=c0)


def _rho_k_inner(x: float, k: int, c0: float) -> float:
    # c0 * x * prod_j log^j(1/x), valid for 0 < x <= eta
    w = math.log(1.0 / x)
    prod = 1.0
    for lj in _iterated_logs(w, k):
        prod *= lj
    return c0 * x * prod

def _rho_k_prime_inner(x: float, k: int, c0: float) -> float:
    # d/dx [c0 x prod_j l_j(log 1/x)] = c0 (prod_j l_j - sum_j prod_{i>j} l_i)
    w = math.log(1.0 / x)
    logs = _iterated_logs(w, k)
    prod = 1.0
    for lj in logs:
        prod *= lj
    total = prod
    for j in range(k):
        tail = 1.0
        for lj in logs[j + 1:]:
            tail *= lj
        total -= tail
    return c0 * total


def rho_eval(x, spec: ModulusSpec):
    """Evaluate the modulus; accepts scalars or arrays, domain x >= 0."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0):
        raise ValueError("modulus domain is x >= 0")
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if spec.kind == LINEAR:
        out = spec.slope * arr
    elif spec.kind == POWER:
        out = spec.c0 * np.power(arr, spec.alpha)
    else:
        flat = arr.reshape(-1)
        out = np.empty_like(flat)
        rho_eta = _rho_k_inner(spec.eta, spec.k, spec.c0)
        slope_eta = max(_rho_k_prime_inner(spec.eta, spec.k, spec.c0), 0.0)
        for i, xi in enumerate(flat):
            xi = float(xi)
            if xi == 0.0:
                out[i] = 0.0
            elif xi <= spec.eta:
                out[i] = _rho_k_inner(xi, spec.k, spec.c0)
            else:
                out[i] = rho_eta + slope_eta * (xi - spec.eta)
        out = out.reshape(arr.shape)
    return float(out[0]) if scalar else out


def rho_extension_slope(spec: ModulusSpec) -> float:
    """Left derivative at eta, used for the affine extension (rho_k only)."""
    if spec.kind != RHO_K:
        raise ValueError("extension slope only defined for rho_k moduli")
    return max(_rho_k_prime_inner(spec.eta, spec.k, spec.c0), 0.0)


def _G(x: float, g0: float, spec: ModulusSpec) -> float:
    """G(x) = int_{g0}^x dy / rho(y), by adaptive quadrature in u = log y.

    The substitution removes the integrable singularity of 1/rho near 0
    (1/(y log 1/y) is smooth in u = log y).
    """
    if x == g0:
        return 0.0
    lo, hi = math.log(g0), math.log(x)
    def integrand(u):
        return math.exp(u) / rho_eval(math.exp(u), spec)
    pts = None
    if spec.kind == RHO_K:
        cut = math.log(spec.eta)
        if lo < cut < hi:
            pts = [cut]
    val, _err = quad(integrand, lo, hi, epsabs=1e-12, epsrel=1e-11,
                     limit=400, points=pts)
    return val


def _G_inverse(target: float, g0: float, spec: ModulusSpec) -> float:
    """Solve G(x) = target for x >= g0 by bracketed monotone root-finding."""
    if target <= 0.0:
        return g0
    hi = max(g0 * 2.0, g0 + 1e-12)
    g_hi = _G(hi, g0, spec)
    while g_hi < target:
        hi *= 8.0
        if hi > BOUND_CAP:
            return math.inf
        g_hi = _G(hi, g0, spec)
    return brentq(lambda x: _G(x, g0, spec) - target, g0, hi,
                  xtol=1e-300, rtol=8.9e-16, maxiter=200)


@dataclass
class BihariBound:
    """Comparison bound G^{-1}(G(g0) + Lambda(t)) tabulated on a grid."""

    g0: float
    t_grid: np.ndarray
    lambda_integral: np.ndarray   # Lambda(t) = int_0^t lambda
    spec: ModulusSpec
    bound_curve: np.ndarray
    blowup_time: float | None = None

    def at_end(self) -> float:
        return float(self.bound_curve[-1])


def _lambda_integral(lambda_profile, t_grid: np.ndarray) -> np.ndarray:
    t_grid = np.asarray(t_grid, dtype=float)
    if callable(lambda_profile):
        lam = np.array([float(lambda_profile(t)) for t in t_grid])
    else:
        lam = np.asarray(lambda_profile, dtype=float)
        if lam.shape != t_grid.shape:
            raise ValueError("tabulated lambda profile must match t_grid")
    if np.any(lam < 0):
        raise ValueError("lambda profile must be nonnegative")
    return np.concatenate([[0.0], cumulative_trapezoid(lam, t_grid)])


def bihari_bound(g0: float, lambda_profile, spec: ModulusSpec, t_grid) -> BihariBound:
    """Tabulate the comparison bound on t_grid.

    lambda_profile may be a callable t -> lambda(t) >= 0 or an array tabulated
    on t_grid.  The base point of G is fixed at g0 itself, so the bound is
    directly G^{-1}(Lambda(t)).  The linear kind short-circuits to the closed
    Gronwall form g0 * exp(slope * Lambda).  Values that would exceed the cap
    are reported through blowup_time and set to inf.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if g0 < 0:
        raise ValueError("g0 must be nonnegative")
    if spec.kind != LINEAR and g0 == 0.0:
        if spec.is_osgood:
            lam_int = _lambda_integral(lambda_profile, t_grid)
            return BihariBound(0.0, t_grid, lam_int, spec, np.zeros_like(t_grid))
        raise ValueError("g0 > 0 required for a non-Osgood modulus base point")

    lam_int = _lambda_integral(lambda_profile, t_grid)
    bound = np.empty_like(lam_int)
    blowup: float | None = None

    if spec.kind == LINEAR:
        log_cap = math.log(BOUND_CAP)
        for i, lam in enumerate(lam_int):
            if g0 == 0.0:
                bound[i] = 0.0
                continue
            log_val = math.log(g0) + spec.slope * lam
            if log_val > log_cap:
                bound[i] = math.inf
                if blowup is None:
                    blowup = float(t_grid[i])
            else:
                bound[i] = math.exp(log_val)
    else:
        for i, lam in enumerate(lam_int):
            if blowup is not None:
                bound[i] = math.inf
                continue
            val = g0 if lam == 0.0 else _G_inverse(lam, g0, spec)
            if not math.isfinite(val) or val > BOUND_CAP:
                bound[i] = math.inf
                blowup = float(t_grid[i])
            else:
                bound[i] = val

    return BihariBound(g0, t_grid, lam_int, spec, bound, blowup)


@dataclass
class ZeroLimitReport:
    """Quantitative uniqueness diagnostic: does the bound vanish as g0 -> 0?"""

    spec: ModulusSpec
    g0_sequence: np.ndarray
    end_bounds: np.ndarray
    threshold: float
    vanishes: bool
    osgood: bool

    @property
    def flagged(self) -> bool:
        return not self.vanishes


def zero_limit_check(lambda_profile, spec: ModulusSpec, t_grid,
                     g0_sequence=None, threshold: float = 1e-3) -> ZeroLimitReport:
    """Evaluate the end-time bound along g0 -> 0 and test that it vanishes.

    Passes when the end-time bounds are nonincreasing along the sequence and
    the last one is below threshold; a non-Osgood modulus is expected to fail
    (the bound stalls at a positive value), which the report flags.
    """
    if g0_sequence is None:
        g0_sequence = np.array([1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12])
    g0_sequence = np.asarray(g0_sequence, dtype=float)
    ends = np.array([
        bihari_bound(g0, lambda_profile, spec, t_grid).at_end()
        for g0 in g0_sequence
    ])
    finite = np.all(np.isfinite(ends))
    dec = bool(np.all(np.diff(ends) <= 1e-12 + 1e-9 * ends[:-1]))
    vanishes = bool(finite and dec and ends[-1] <= threshold)
    return ZeroLimitReport(spec, g0_sequence, ends, threshold, vanishes, spec.is_osgood)


def osgood_partial_integral(spec: ModulusSpec, floor: float, eps: float = 0.1) -> float:
    """Partial integral int_floor^eps dx/rho(x); diverges as floor -> 0 iff Osgood."""
    if not (0.0 < floor < eps):
        raise ValueError("need 0 < floor < eps")
    return _G(eps, floor, spec)


def picard_comparison_curve(prev_curve, lambda_profile, spec: ModulusSpec,
                            t_grid, c0: float = 1.0) -> np.ndarray:
    """One application of the comparison operator g -> c0 * int_0^t lam * rho(g).

    Iterating this from a measured first-discrepancy curve produces the
    majorant that successive Picard differences must stay below.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    prev = np.asarray(prev_curve, dtype=float)
    if callable(lambda_profile):
        lam = np.array([float(lambda_profile(t)) for t in t_grid])
    else:
        lam = np.asarray(lambda_profile, dtype=float)
    integrand = lam * rho_eval(np.maximum(prev, 0.0), spec)
    return c0 * np.concatenate([[0.0], cumulative_trapezoid(integrand, t_grid)])


# ---------------------------------------------------------------------------
# discrete norms and rates


def k_norm(path, which: int, lambda_profile) -> float:
    """Discrete weighted norm [ int_0^T lambda_i(t) ||X(t)||_{X_i}^{q_i} dt ]^{1/q_i}.

    path must expose times, x1_norm/x2_norm ledgers and exponents q1/q2
    (a SolutionPath does).  Left-endpoint rule, full horizon.
    """
    if which not in (1, 2):
        raise ValueError("which must be 1 or 2")
    times = np.asarray(path.times, dtype=float)
    vals = np.asarray(path.x1_norm if which == 1 else path.x2_norm, dtype=float)
    q = float(path.q1 if which == 1 else path.q2)
    if callable(lambda_profile):
        lam = np.array([float(lambda_profile(t)) for t in times])
    else:
        lam = np.asarray(lambda_profile, dtype=float)
    dt = np.diff(times)
    integral = float(np.sum(lam[:-1] * vals[:-1] ** q * dt))
    return integral ** (1.0 / q)


def sup_h_distance(p1, p2) -> float:
    """sup over the shared grid of the H-distance between two paths.

    Accepts SolutionPath-like objects (times + coeffs, with coefficients in an
    H-orthonormal basis so the H-norm is Euclidean) or plain arrays of
    coefficients with matching shape.
    """
    a, ta = (p1.coeffs, p1.times) if hasattr(p1, "coeffs") else (p1, None)
    b, tb = (p2.coeffs, p2.times) if hasattr(p2, "coeffs") else (p2, None)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"paths live on different grids: {a.shape} vs {b.shape}")
    if ta is not None and tb is not None:
        if not np.allclose(np.asarray(ta), np.asarray(tb), rtol=0, atol=1e-12):
            raise ValueError("paths live on different time grids")
    diff = a - b
    if diff.ndim == 1:
        return float(np.max(np.abs(diff)))
    return float(np.max(np.sqrt(np.sum(diff * diff, axis=1))))


def convergence_order(errors, steps) -> float:
    """Least-squares slope of log(error) against log(step)."""
    errors = np.asarray(errors, dtype=float)
    steps = np.asarray(steps, dtype=float)
    if errors.shape != steps.shape or errors.size < 3:
        raise ValueError("need at least 3 matching (error, step) pairs")
    if np.any(errors <= 0) or np.any(steps <= 0):
        raise ValueError("errors and steps must be positive for a log-log fit")
    slope, _intercept = np.polyfit(np.log(steps), np.log(errors), 1)
    return float(slope)
