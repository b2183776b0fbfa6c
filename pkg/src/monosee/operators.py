"""Concrete drift/diffusion operators and sampled hypothesis checkers.

Drift outputs live in dual coordinates: vectors stored so that
``triple.dual_pairing`` applies the flavor's pairing directly.  For the
porous-medium family the drift returns L @ phi(u) in grid coordinates, so
the (-L)^{-1} inside the W^{-1,2} pairing cancels and [v, A(u)] collapses
to -h * sum(v * phi(u)).  The reaction-diffusion family returns the
discrete divergence of the flux plus the (negated) reaction term, paired
against L^2 directly.

Checkers sample random states (amplitudes log-uniform over a wide range to
probe both small- and large-field regimes) and report every inequality
violation as data; nothing raises on a failed hypothesis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, MonoseeError
from .noise import EMPTY_CONTEXT
from .reporting import Violation, ViolationReport
from .triple import POROUS_MEDIUM, REACTION_DIFFUSION, DiscreteTriple, _values

__all__ = [
    "constant_profile",
    "abs_scalar_profile",
    "tabulated_profile",
    "HypothesisBundle",
    "PorousMediumDrift",
    "PhiDrift",
    "ReactionDiffusionDrift",
    "ConstantDiffusion",
    "MultiplicativeDiffusion",
    "state_sampler",
    "pair_sampler",
    "check_monotonicity",
    "check_coercivity",
    "check_boundedness",
    "check_hemicontinuity",
    "OperatorSet",
    "build_operator_set",
    "OPERATOR_NAMES",
]


# ---------------------------------------------------------------------------
# time profiles: every hypothesis constant may be a process evaluated from
# the driving noise, so profiles are callables (t, ctx) -> float

def constant_profile(value: float):
    value = float(value)

    def profile(t, ctx):
        return value

    return profile


def abs_scalar_profile(scale: float = 1.0):
    """t -> scale * |w_t| with w the context's scalar driving path."""

    def profile(t, ctx):
        return scale * abs(ctx.scalar(t))

    return profile


def tabulated_profile(times, values):
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.ndim != 1 or times.shape != values.shape:
        raise ConfigError("tabulated profile needs matching 1-d times/values")

    def profile(t, ctx):
        return float(np.interp(t, times, values))

    return profile


@dataclass
class HypothesisBundle:
    """Rates and constants entering the structural inequalities.

    lambda0 damps the monotonicity gap; lambda1/lambda2 are the coercivity
    rates paired with exponents q1/q2; lambda3 and xi weaken coercivity by
    a quadratic term and an additive process.  eta1/eta2 and c_a1/c_a2
    bound the drift parts in the dual norms.  c1 is the margin by which
    the coercivity rates must dominate lambda0.
    """

    lambda0: Callable = field(default_factory=lambda: constant_profile(0.0))
    lambda1: Callable = field(default_factory=lambda: constant_profile(1.0))
    lambda2: Callable = field(default_factory=lambda: constant_profile(1.0))
    lambda3: Callable = field(default_factory=lambda: constant_profile(0.0))
    xi: Callable = field(default_factory=lambda: constant_profile(0.0))
    eta1: Callable = field(default_factory=lambda: constant_profile(0.0))
    eta2: Callable = field(default_factory=lambda: constant_profile(0.0))
    q1: float = 2.0
    q2: float = 2.0
    c_a1: float = 1.0
    c_a2: float = 1.0
    c1: float = 1.0

    def __post_init__(self):
        if self.q1 < 2 or self.q2 < 2:
            raise ConfigError(f"exponents must be >= 2, got q1={self.q1}, q2={self.q2}")
        if self.c_a1 <= 0 or self.c_a2 <= 0 or self.c1 <= 0:
            raise ConfigError("c_a1, c_a2, c1 must be positive")

    def check_rate_domination(self, ctx, t_values, tol: float = 0.0) -> ViolationReport:
        """Sampled 0 <= lambda0(t) < c1 * min(lambda1(t), lambda2(t)).

        Strict inequality is demanded at every sampled t; callers should
        sample t in (0, T] since the condition is almost-everywhere and
        degenerate coefficients may vanish at isolated times.
        """
        t_values = np.atleast_1d(np.asarray(t_values, dtype=float))
        report = ViolationReport(name="rate domination", n_samples=t_values.size, tol=tol)
        for i, t in enumerate(t_values):
            l0 = self.lambda0(t, ctx)
            cap = self.c1 * min(self.lambda1(t, ctx), self.lambda2(t, ctx))
            if l0 < 0 or not l0 < cap - tol:
                report.violations.append(Violation(
                    index=i, t=float(t), excess=float(l0 - cap),
                    detail={"lambda0": l0, "cap": cap}))
        return report

    def integrability_report(self, ctx, t_final: float, n: int = 512) -> ViolationReport:
        """Trapezoid quadrature of each rate over [0, T]; flags non-finite mass."""
        ts = np.linspace(0.0, t_final, n + 1)
        report = ViolationReport(name="rate integrability", n_samples=5, tol=0.0)
        for idx, (label, prof) in enumerate([
                ("lambda0", self.lambda0), ("lambda1", self.lambda1),
                ("lambda2", self.lambda2), ("lambda3", self.lambda3),
                ("xi", self.xi)]):
            vals = np.array([prof(t, ctx) for t in ts])
            mass = float(np.trapezoid(vals, ts))
            report.notes.append(f"int {label} = {mass:.6g}")
            if not np.isfinite(mass):
                report.violations.append(Violation(
                    index=idx, t=t_final, excess=np.inf, detail={"rate": label}))
        return report


def _require_finite(u: np.ndarray, who: str) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        bad = int(np.flatnonzero(~np.isfinite(u))[0])
        raise MonoseeError(f"{who}: non-finite state entry at index {bad}")
    return u


class PorousMediumDrift:
    """Nonlinear diffusion u -> L phi(u) with phi(t, r) = c(t) |r|**(p-2) r.

    Output is in dual grid coordinates (pre-multiplied by L), so
    dual_pairing(v, eval(u)) = -h * sum(v * phi(u)).
    """

    def __init__(self, triple: DiscreteTriple, p: float, coeff=None):
        if triple.flavor != POROUS_MEDIUM:
            raise ConfigError("PorousMediumDrift needs a porous_medium triple")
        if p < 2:
            raise ConfigError(f"exponent p must be >= 2, got {p}")
        self.triple = triple
        self.p = float(p)
        self.coeff = coeff if coeff is not None else constant_profile(1.0)

    def phi(self, t, ctx, r):
        c = self.coeff(t, ctx)
        r = np.asarray(r, dtype=float)
        return c * np.abs(r) ** (self.p - 2.0) * r

    def phi_prime(self, t, ctx, r):
        c = self.coeff(t, ctx)
        r = np.asarray(r, dtype=float)
        return c * (self.p - 1.0) * np.abs(r) ** (self.p - 2.0)

    def eval(self, t, ctx, u) -> np.ndarray:
        u = _require_finite(_values(u), "porous-medium drift")
        return self.triple.apply_laplacian(self.phi(t, ctx, u))

    def parts(self, t, ctx, u):
        return [(1, self.eval(t, ctx, u))]

    def jacobian(self, t, ctx, u) -> np.ndarray:
        u = _values(u)
        return self.triple.laplacian * self.phi_prime(t, ctx, u)[np.newaxis, :]


class PhiDrift:
    """Nonlinear-diffusion drift L phi(u) with a user-supplied scalar map.

    Same dual-coordinate convention as PorousMediumDrift; exists so planted
    counterexamples (non-monotone or discontinuous phi) can run through the
    hypothesis checkers.
    """

    def __init__(self, triple: DiscreteTriple, phi, phi_prime=None):
        if triple.flavor != POROUS_MEDIUM:
            raise ConfigError("PhiDrift needs a porous_medium triple")
        self.triple = triple
        self._phi = phi
        self._phi_prime = phi_prime

    def phi(self, t, ctx, r):
        return np.asarray(self._phi(t, ctx, np.asarray(r, dtype=float)), dtype=float)

    def eval(self, t, ctx, u) -> np.ndarray:
        u = _require_finite(_values(u), "phi drift")
        return self.triple.apply_laplacian(self.phi(t, ctx, u))

    def parts(self, t, ctx, u):
        return [(1, self.eval(t, ctx, u))]

    def jacobian(self, t, ctx, u) -> np.ndarray:
        if self._phi_prime is None:
            raise ConfigError("analytic jacobian needs phi_prime")
        u = _values(u)
        pp = np.asarray(self._phi_prime(t, ctx, u), dtype=float)
        return self.triple.laplacian * pp[np.newaxis, :]


class ReactionDiffusionDrift:
    """Quasilinear drift div_h a(d_h u) - b(u) on the L^2 triple.

    ``a`` and ``b`` are scalar maps (t, ctx, r) -> value, applied pointwise
    to face gradients and nodal values respectively; both must be
    nondecreasing in r for the hypothesis checks to pass.  Output pairs
    against L^2 directly, split into a divergence part (gradient space dual)
    and a reaction part (Lebesgue dual).
    """

    def __init__(self, triple: DiscreteTriple, a, b, a_prime=None, b_prime=None):
        if triple.flavor != REACTION_DIFFUSION:
            raise ConfigError("ReactionDiffusionDrift needs a reaction_diffusion triple")
        self.triple = triple
        self.a = a
        self.b = b
        self.a_prime = a_prime
        self.b_prime = b_prime

    def divergence_part(self, t, ctx, u) -> np.ndarray:
        u = _require_finite(_values(u), "reaction-diffusion drift")
        faces = self.triple.grad(u)
        flux = np.asarray(self.a(t, ctx, faces), dtype=float)
        return np.diff(flux) / self.triple.h

    def reaction_part(self, t, ctx, u) -> np.ndarray:
        u = _require_finite(_values(u), "reaction-diffusion drift")
        return -np.asarray(self.b(t, ctx, u), dtype=float)

    def eval(self, t, ctx, u) -> np.ndarray:
        return self.divergence_part(t, ctx, u) + self.reaction_part(t, ctx, u)

    def parts(self, t, ctx, u):
        return [(1, self.divergence_part(t, ctx, u)),
                (2, self.reaction_part(t, ctx, u))]

    def jacobian(self, t, ctx, u) -> np.ndarray:
        u = _values(u)
        tr = self.triple
        n = tr.n_grid
        if self.a_prime is None or self.b_prime is None:
            raise ConfigError("analytic jacobian needs a_prime and b_prime")
        ap = np.asarray(self.a_prime(t, ctx, tr.grad(u)), dtype=float)
        bp = np.asarray(self.b_prime(t, ctx, u), dtype=float)
        # J1[i, k] = (ap[i+1]*(G u)[i+1] - ap[i]*(G u)[i]) derivative pattern:
        # tridiagonal with face conductivities ap / h^2
        J = np.zeros((n, n))
        main = -(ap[:-1] + ap[1:]) / tr.h ** 2
        J[np.arange(n), np.arange(n)] = main - bp
        off = ap[1:-1] / tr.h ** 2
        J[np.arange(n - 1), np.arange(1, n)] = off
        J[np.arange(1, n), np.arange(n - 1)] = off
        return J


class ConstantDiffusion:
    """State-independent diffusion: a fixed n_grid x n_modes matrix into H."""

    def __init__(self, triple: DiscreteTriple, matrix):
        self.triple = triple
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        if self.matrix.shape[0] != triple.n_grid:
            raise ConfigError(
                f"diffusion matrix has {self.matrix.shape[0]} rows, "
                f"grid has {triple.n_grid}")

    @property
    def n_modes(self) -> int:
        return self.matrix.shape[1]

    def eval(self, t, ctx, u) -> np.ndarray:
        return self.matrix

    def hs_norm_sq(self, t, ctx, u) -> float:
        cols = self.eval(t, ctx, u)
        return float(sum(self.triple.h_inner(cols[:, j], cols[:, j])
                         for j in range(cols.shape[1])))


class MultiplicativeDiffusion:
    """Pointwise (Nemytskii) diffusion: column j is sigma_j(t, u(.))."""

    def __init__(self, triple: DiscreteTriple, sigmas):
        if not sigmas:
            raise ConfigError("need at least one sigma")
        self.triple = triple
        self.sigmas = list(sigmas)

    @property
    def n_modes(self) -> int:
        return len(self.sigmas)

    def eval(self, t, ctx, u) -> np.ndarray:
        u = _require_finite(_values(u), "multiplicative diffusion")
        return np.column_stack([np.broadcast_to(
            np.asarray(s(t, ctx, u), dtype=float), u.shape)
            for s in self.sigmas])

    def hs_norm_sq(self, t, ctx, u) -> float:
        cols = self.eval(t, ctx, u)
        return float(sum(self.triple.h_inner(cols[:, j], cols[:, j])
                         for j in range(cols.shape[1])))


# ---------------------------------------------------------------------------
# samplers

def state_sampler(triple: DiscreteTriple, t_final: float = 1.0,
                  amp_range=(1e-3, 1e3), times=None):
    """Random (t, u) with log-uniform amplitude over amp_range.

    Pass the noise grid as ``times`` when the operators carry random
    coefficients: scalar-path lookups only exist at grid times.
    """
    lo, hi = np.log(amp_range[0]), np.log(amp_range[1])
    times = None if times is None else np.asarray(times, dtype=float)

    def sample(rng):
        if times is None:
            t = float(rng.uniform(0.0, t_final))
        else:
            t = float(rng.choice(times))
        amp = float(np.exp(rng.uniform(lo, hi)))
        u = amp * rng.standard_normal(triple.n_grid)
        return t, u

    return sample


def pair_sampler(triple: DiscreteTriple, t_final: float = 1.0,
                 amp_range=(1e-3, 1e3), times=None):
    """Random (t, u, v) triplets for the two-point checks."""
    single = state_sampler(triple, t_final, amp_range, times=times)

    def sample(rng):
        t, u = single(rng)
        _, v = single(rng)
        if rng.uniform() < 0.1:
            v = u.copy()  # exercise the u = v edge exactly
        return t, u, v

    return sample


# ---------------------------------------------------------------------------
# hypothesis checkers

def check_monotonicity(drift, diff, bundle: HypothesisBundle, sampler,
                       n_samples: int = 500, seed: int = 0, tol: float = 1e-10,
                       ctx=EMPTY_CONTEXT) -> ViolationReport:
    """Sampled two-point dissipation check.

    excess = 2[u-v, A(u)-A(v)] + |B(u)-B(v)|_HS^2 - lambda0 |u-v|_H^2
    must be <= 0 up to a relative tolerance.
    """
    rng = np.random.default_rng(seed)
    tr = drift.triple
    report = ViolationReport(name="monotonicity", n_samples=n_samples, tol=tol)
    for i in range(n_samples):
        t, u, v = sampler(rng)
        du = u - v
        pairing = 2.0 * tr.dual_pairing(du, drift.eval(t, ctx, u) - drift.eval(t, ctx, v))
        cols = diff.eval(t, ctx, u) - diff.eval(t, ctx, v)
        hs2 = float(sum(tr.h_inner(cols[:, j], cols[:, j])
                        for j in range(cols.shape[1])))
        damp = bundle.lambda0(t, ctx) * tr.h_norm(du) ** 2
        excess = pairing + hs2 - damp
        scale = 1.0 + abs(pairing) + hs2 + abs(damp)
        if excess > tol * scale:
            report.violations.append(Violation(
                index=i, t=t, excess=excess,
                detail={"pairing": pairing, "hs2": hs2, "damp": damp}))
    return report


def check_coercivity(drift, diff, bundle: HypothesisBundle, sampler,
                     n_samples: int = 500, seed: int = 0, tol: float = 1e-10,
                     ctx=EMPTY_CONTEXT) -> ViolationReport:
    """Sampled energy-dissipation check.

    excess = 2[u, A(u)] + |B(u)|_HS^2 + lambda1 |u|_X1^q1 + lambda2 |u|_X2^q2
             - lambda3 |u|_H^2 - xi
    must be <= 0 up to a relative tolerance.
    """
    rng = np.random.default_rng(seed)
    tr = drift.triple
    report = ViolationReport(name="coercivity", n_samples=n_samples, tol=tol)
    for i in range(n_samples):
        sampled = sampler(rng)
        t, u = sampled[0], sampled[1]
        pairing = 2.0 * tr.dual_pairing(u, drift.eval(t, ctx, u))
        hs2 = diff.hs_norm_sq(t, ctx, u)
        lam1 = bundle.lambda1(t, ctx) * tr.x_norm(u, 1) ** bundle.q1
        lam2 = bundle.lambda2(t, ctx) * tr.x_norm(u, 2) ** bundle.q2
        lam3 = bundle.lambda3(t, ctx) * tr.h_norm(u) ** 2
        xi = bundle.xi(t, ctx)
        excess = pairing + hs2 + lam1 + lam2 - lam3 - xi
        scale = 1.0 + abs(pairing) + hs2 + lam1 + lam2 + lam3 + xi
        if excess > tol * scale:
            report.violations.append(Violation(
                index=i, t=t, excess=excess,
                detail={"pairing": pairing, "hs2": hs2,
                        "lam1": lam1, "lam2": lam2}))
    return report


def check_boundedness(drift, bundle: HypothesisBundle, sampler,
                      n_samples: int = 500, seed: int = 0, tol: float = 1e-10,
                      ctx=EMPTY_CONTEXT) -> ViolationReport:
    """Sampled dual-norm growth check, per drift part.

    |A_i(u)|_{Xi*} <= eta_i lambda_i^{1/q_i} + c_{A_i} lambda_i |u|_{X_i}^{q_i - 1}
    """
    rng = np.random.default_rng(seed)
    tr = drift.triple
    report = ViolationReport(name="boundedness", n_samples=n_samples, tol=tol)
    for i in range(n_samples):
        sampled = sampler(rng)
        t, u = sampled[0], sampled[1]
        for which, part in drift.parts(t, ctx, u):
            lam = (bundle.lambda1 if which == 1 else bundle.lambda2)(t, ctx)
            eta = (bundle.eta1 if which == 1 else bundle.eta2)(t, ctx)
            q = bundle.q1 if which == 1 else bundle.q2
            c = bundle.c_a1 if which == 1 else bundle.c_a2
            lhs = tr.dual_norm(part, which)
            rhs = eta * lam ** (1.0 / q) + c * lam * tr.x_norm(u, which) ** (q - 1.0)
            if lhs > rhs * (1.0 + tol) + tol:
                report.violations.append(Violation(
                    index=i, t=t, excess=lhs - rhs,
                    detail={"part": which, "lhs": lhs, "rhs": rhs}))
    return report


def check_hemicontinuity(drift, sampler, n_samples: int = 100, seed: int = 0,
                         jump_fraction: float = 0.5,
                         ctx=EMPTY_CONTEXT) -> ViolationReport:
    """Continuity of e -> [x, A(t, y + e z)] along segments.

    Evaluates the pairing on the grid e in {0, 1/32, ..., 1} and flags any
    single-step jump exceeding jump_fraction of the profile's total range
    (an affine or smooth profile spreads its variation over many steps; a
    step discontinuity concentrates it in one).
    """
    rng = np.random.default_rng(seed)
    tr = drift.triple
    eps_grid = np.linspace(0.0, 1.0, 33)
    report = ViolationReport(name="hemicontinuity", n_samples=n_samples,
                             tol=jump_fraction)
    for i in range(n_samples):
        t, x = sampler(rng)
        _, y = sampler(rng)
        _, z = sampler(rng)
        vals = np.array([tr.dual_pairing(x, drift.eval(t, ctx, y + e * z))
                         for e in eps_grid])
        total = float(np.max(vals) - np.min(vals))
        jumps = np.abs(np.diff(vals))
        worst = float(np.max(jumps))
        if total > 0 and worst > jump_fraction * total:
            report.violations.append(Violation(
                index=i, t=t, excess=worst / total - jump_fraction,
                detail={"worst_jump": worst, "range": total}))
    return report


# ---------------------------------------------------------------------------
# built-in operator sets

@dataclass
class OperatorSet:
    """A drift, a diffusion, and the constants they satisfy."""

    label: str
    drift: object
    diffusion: object
    bundle: HypothesisBundle
    triple: DiscreteTriple


def _ones_matrix(triple: DiscreteTriple, n_modes: int) -> np.ndarray:
    return np.ones((triple.n_grid, n_modes))


def build_operator_set(name: str, n_grid: int, p: float = 3.0,
                       n_modes: int = 1) -> OperatorSet:
    """Construct one of the named built-in operator families.

    heat                    linear diffusion on the W^{-1,2} triple
    porous_medium           deterministic |r|^{p-2} r diffusion
    reaction_diffusion      deterministic linear flux + power reaction
    eq_1_1                  porous medium with |w_t| coefficient (contract name)
    eq_1_2                  reaction-diffusion with |w_t| coefficients (contract name)
    """
    if name in ("heat", "porous_medium", "eq_1_1"):
        p_eff = 2.0 if name == "heat" else p
        tr = DiscreteTriple(n_grid, POROUS_MEDIUM, q1=p_eff, q2=p_eff)
        if name == "eq_1_1":
            coeff = abs_scalar_profile()
            lam = abs_scalar_profile()
        else:
            coeff = constant_profile(1.0)
            lam = constant_profile(1.0)
        drift = PorousMediumDrift(tr, p_eff, coeff=coeff)
        if name == "heat":
            diffusion = ConstantDiffusion(tr, np.zeros((n_grid, n_modes)))
            xi_val = 0.0
        else:
            B = _ones_matrix(tr, n_modes)
            diffusion = ConstantDiffusion(tr, B)
            xi_val = diffusion.hs_norm_sq(0.0, EMPTY_CONTEXT, None)
        bundle = HypothesisBundle(
            lambda0=constant_profile(0.0),
            lambda1=lam, lambda2=lam,
            lambda3=constant_profile(1e-6),
            xi=constant_profile(xi_val),
            q1=p_eff, q2=p_eff, c_a1=1.0, c_a2=1.0, c1=1.0)
        return OperatorSet(name, drift, diffusion, bundle, tr)

    if name in ("reaction_diffusion", "eq_1_2"):
        tr = DiscreteTriple(n_grid, REACTION_DIFFUSION, q1=2.0, q2=p)
        if name == "eq_1_2":
            def a(t, ctx, r):
                return abs(ctx.scalar(t)) * np.asarray(r, dtype=float)

            def a_prime(t, ctx, r):
                return abs(ctx.scalar(t)) * np.ones_like(np.asarray(r, dtype=float))

            def b(t, ctx, r):
                r = np.asarray(r, dtype=float)
                return abs(ctx.scalar(t)) * np.abs(r) ** (p - 2.0) * r

            def b_prime(t, ctx, r):
                r = np.asarray(r, dtype=float)
                return abs(ctx.scalar(t)) * (p - 1.0) * np.abs(r) ** (p - 2.0)

            def sigma1(t, ctx, r):
                return np.sqrt(abs(ctx.scalar(t))) * np.asarray(r, dtype=float)

            drift = ReactionDiffusionDrift(tr, a, b, a_prime, b_prime)
            diffusion = MultiplicativeDiffusion(tr, [sigma1])
            lam0 = abs_scalar_profile()
            lam12 = abs_scalar_profile(2.0)
            lam3 = abs_scalar_profile()
        else:
            def a(t, ctx, r):
                return np.asarray(r, dtype=float)

            def a_prime(t, ctx, r):
                return np.ones_like(np.asarray(r, dtype=float))

            def b(t, ctx, r):
                r = np.asarray(r, dtype=float)
                return np.abs(r) ** (p - 2.0) * r

            def b_prime(t, ctx, r):
                r = np.asarray(r, dtype=float)
                return (p - 1.0) * np.abs(r) ** (p - 2.0)

            drift = ReactionDiffusionDrift(tr, a, b, a_prime, b_prime)
            diffusion = ConstantDiffusion(tr, np.zeros((n_grid, n_modes)))
            lam0 = constant_profile(0.0)
            lam12 = constant_profile(2.0)
            lam3 = constant_profile(1e-6)
        bundle = HypothesisBundle(
            lambda0=lam0, lambda1=lam12, lambda2=lam12, lambda3=lam3,
            xi=constant_profile(0.0),
            q1=2.0, q2=p, c_a1=1.0, c_a2=1.0, c1=1.0)
        return OperatorSet(name, drift, diffusion, bundle, tr)

    raise ConfigError(f"unknown operator family {name!r}; "
                      f"known: {sorted(OPERATOR_NAMES)}")


OPERATOR_NAMES = ("heat", "porous_medium", "reaction_diffusion", "eq_1_1", "eq_1_2")
