"""Galerkin forward solver for monotone stochastic evolution equations.

The continuous problem dX = A(t, X) dt + B(t, X) dW on an evolution triple
is projected onto the first n eigenmodes of the discrete Laplacian, turning
it into an n-dimensional Ito equation for the mode coefficients,

    dy_i = b_i(t, y) dt + (sigma(t, y) dW)_i,   b_i = [e_i, A(t, y . e)],

which is integrated by a drift-implicit Euler scheme: the noise enters
explicitly, the drift implicitly, and each step is one resolvent solve of
the (dissipative) projected drift.  Random coefficients are frozen at the
left endpoint of every step so the scheme stays adapted.

The module also houses the coefficient rescaling that removes lambda0 from
the hypothesis bundle (solve the transformed equation, multiply back by
gamma), the dissipation clock theta, the per-step energy-identity ledger,
and the a-priori norm budget check.

Coordinate facts used throughout: the basis is H-orthonormal, so the
squared H-norm of a state is the Euclidean square of its coefficient
vector, and the pairing [e_i, f] is the same linear functional as the
H-inner product against e_i (see the triple module's coordinate
convention).  Both are realized by a single projector matrix P with
rows h * ((-L)^{-1} e_i)^T (porous-medium flavor) or h * e_i^T
(reaction-diffusion flavor).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import ConfigError, MonoseeError, NonconvergenceError
from .noise import EMPTY_CONTEXT, NoiseContext, NoisePath
from .operators import HypothesisBundle, constant_profile
from .resolvent import MonotoneMap, resolvent
from .triple import POROUS_MEDIUM, DiscreteTriple

__all__ = [
    "SolverConfig",
    "SolutionPath",
    "GalerkinSystem",
    "galerkin_coefficients",
    "step_implicit",
    "step_semilinearized",
    "solve_forward",
    "solve_diagonal_batch",
    "RescaledProblem",
    "rescale_problem",
    "clock_theta",
    "energy_residual",
    "AprioriReport",
    "apriori_norms",
    "trajectory_csv",
]

SCHEMES = ("drift_implicit", "semi_implicit")


@dataclass
class SolverConfig:
    """Numerical parameters of one forward solve."""

    n_modes_galerkin: int
    dt: Optional[float] = None          # None: take the noise grid's step
    scheme: str = "drift_implicit"
    resolvent_tol: float = 1e-10
    resolvent_max_iter: int = 50
    rescale_lambda0: bool = False

    def __post_init__(self):
        if self.n_modes_galerkin < 1:
            raise ConfigError(f"n_modes_galerkin must be >= 1, got "
                              f"{self.n_modes_galerkin}")
        if self.dt is not None and self.dt <= 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; "
                              f"known: {list(SCHEMES)}")
        if self.resolvent_tol <= 0:
            raise ConfigError("resolvent_tol must be positive")
        if self.resolvent_max_iter < 1:
            raise ConfigError("resolvent_max_iter must be >= 1")


@dataclass
class SolutionPath:
    """A solved trajectory plus its per-step norm and energy ledger.

    ``coeffs`` holds the Galerkin coefficients (row k = time k), ``states``
    the corresponding grid values.  ``h_norm_sq`` is the squared H-norm,
    ``x1_norm``/``x2_norm`` the (unpowered) X1/X2 norms of each state.
    ``energy_residual[k]`` is the defect of the discrete energy identity
    over step k (so it has one entry fewer than ``times``).
    """

    times: np.ndarray
    coeffs: np.ndarray
    states: np.ndarray
    h_norm_sq: np.ndarray
    x1_norm: np.ndarray
    x2_norm: np.ndarray
    energy_residual: np.ndarray
    q1: float
    q2: float
    n_modes: int
    triple: DiscreteTriple = field(repr=False, default=None)

    def __post_init__(self):
        for name in ("h_norm_sq", "x1_norm", "x2_norm"):
            if np.any(np.asarray(getattr(self, name)) < 0):
                raise MonoseeError(f"negative entry in the {name} ledger")

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def t_final(self) -> float:
        return float(self.times[-1])

    def span_residual(self) -> float:
        """Largest H-distance of any state from its n-mode projection."""
        worst = 0.0
        for k in range(len(self.times)):
            proj = self.triple.project(self.states[k], self.n_modes)
            worst = max(worst, self.triple.h_norm(self.states[k] - proj))
        return worst


# ---------------------------------------------------------------------------
# Galerkin projection


class GalerkinSystem:
    """Finite-dimensional drift/diffusion obtained by mode projection.

    ``b(t, ctx, x)`` and ``sigma(t, ctx, x)`` act on coefficient vectors
    x of length n; sigma is truncated to min(n, diffusion modes) noise
    columns (the noise-side projection).  ``b_jacobian`` is available
    whenever the drift exposes an analytic Jacobian.
    """

    def __init__(self, drift, diffusion, n: int, triple: DiscreteTriple):
        if not 1 <= n <= triple.n_grid:
            raise ConfigError(f"Galerkin dimension {n} out of range "
                              f"1..{triple.n_grid}")
        self.drift = drift
        self.diffusion = diffusion
        self.n = int(n)
        self.triple = triple
        self.modes = triple.basis[:, :n]                     # (n_grid, n)
        if triple.flavor == POROUS_MEDIUM:
            paired = np.linalg.solve(-triple.laplacian, self.modes)
        else:
            paired = self.modes
        self.projector = triple.h * paired.T                 # (n, n_grid)
        self.n_noise = min(self.n, diffusion.n_modes)
        # probe once whether the drift can linearize (structural, not
        # state-dependent, so the origin is as good a point as any)
        try:
            drift.jacobian(0.0, EMPTY_CONTEXT, np.zeros(triple.n_grid))
            self._has_jacobian = True
        except ConfigError:
            self._has_jacobian = False

    @property
    def has_jacobian(self) -> bool:
        return self._has_jacobian

    def lift(self, x) -> np.ndarray:
        """Grid values of the state with coefficient vector x."""
        return self.modes @ np.asarray(x, dtype=float)

    def b(self, t: float, ctx, x) -> np.ndarray:
        return self.projector @ self.drift.eval(t, ctx, self.lift(x))

    def sigma(self, t: float, ctx, x) -> np.ndarray:
        cols = self.projector @ self.diffusion.eval(t, ctx, self.lift(x))
        return cols[:, :self.n_noise]

    def b_jacobian(self, t: float, ctx, x) -> np.ndarray:
        full = self.drift.jacobian(t, ctx, self.lift(x))
        return self.projector @ full @ self.modes


def galerkin_coefficients(drift, diffusion, n: int, triple: DiscreteTriple):
    """The projected SDE functions (b, sigma), each taking (t, ctx, x)."""
    system = GalerkinSystem(drift, diffusion, n, triple)
    return system.b, system.sigma


# ---------------------------------------------------------------------------
# one step


def step_implicit(x, t: float, dt: float, dW, b, sigma, cfg: SolverConfig,
                  b_jacobian=None, guess=None) -> np.ndarray:
    """One drift-implicit Euler step.

    Solves y - dt * b(t + dt, y) = x + sigma(t, x) @ dW to the configured
    resolvent tolerance.  ``b`` and ``sigma`` are plain callables of
    (t, state); any context freezing has already been bound by the caller.
    """
    x = np.asarray(x, dtype=float)
    dW = np.atleast_1d(np.asarray(dW, dtype=float))
    sig = np.atleast_2d(np.asarray(sigma(t, x), dtype=float))
    m = min(sig.shape[1], dW.size)
    r = x + sig[:, :m] @ dW[:m]
    drift_map = MonotoneMap(eval=b, jacobian=b_jacobian, diagonal=False,
                            name="projected drift")
    return resolvent(drift_map, t + dt, dt, r, tol=cfg.resolvent_tol,
                     max_iter=cfg.resolvent_max_iter, guess=guess)


def step_semilinearized(x, t: float, dt: float, dW, b, sigma,
                        b_jacobian) -> np.ndarray:
    """One linearized (semi-implicit) step: a single Newton iterate.

    Solves (I - dt * Jb(t+dt, x)) y = x + sigma dW + dt (b(t+dt, x)
    - Jb(t+dt, x) x), which agrees with the fully implicit step exactly
    when b is affine.
    """
    x = np.asarray(x, dtype=float)
    dW = np.atleast_1d(np.asarray(dW, dtype=float))
    sig = np.atleast_2d(np.asarray(sigma(t, x), dtype=float))
    m = min(sig.shape[1], dW.size)
    r = x + sig[:, :m] @ dW[:m]
    jac = np.asarray(b_jacobian(t + dt, x), dtype=float)
    lhs = np.eye(x.size) - dt * jac
    rhs = r + dt * (np.asarray(b(t + dt, x), dtype=float) - jac @ x)
    return np.linalg.solve(lhs, rhs)


def _energy_defect(x, y, b_at_y, noise_term, dt: float) -> float:
    """Defect of the discrete energy identity over one step.

    |y|^2 - |x|^2 - 2 dt [y, A(y)] - 2 <x, B dW> - |B dW|^2 in coefficient
    coordinates; algebraically equal to -dt^2 |b(y)|^2 for an exact
    resolvent solve, and 0 for zero drift.
    """
    return float(y @ y - x @ x - 2.0 * dt * (y @ b_at_y)
                 - 2.0 * (x @ noise_term) - noise_term @ noise_term)


# ---------------------------------------------------------------------------
# full trajectory


def solve_forward(cfg: SolverConfig, drift, diffusion, noise: NoisePath,
                  x0, bundle: Optional[HypothesisBundle] = None) -> SolutionPath:
    """Integrate the projected equation along one noise path.

    ``x0`` may be grid values or a GridFunction; it is projected onto the
    first n modes.  With ``cfg.rescale_lambda0`` set (which requires the
    hypothesis ``bundle`` for its lambda0 rate), the transformed equation
    is solved and the result is multiplied back by gamma, so the returned
    trajectory approximates the original equation; its energy residual
    then refers to the transformed dynamics that were actually stepped.

    Deterministic for fixed (noise, config): no RNG is consulted.
    """
    triple = drift.triple
    n = cfg.n_modes_galerkin
    if n > triple.n_grid:
        raise ConfigError(f"n_modes_galerkin={n} exceeds grid size "
                          f"{triple.n_grid}")
    dt = noise.dt
    if cfg.dt is not None and abs(cfg.dt - dt) > 1e-12 * max(1.0, dt):
        raise ConfigError(f"config dt={cfg.dt} does not match the noise "
                          f"grid step {dt}")

    if cfg.rescale_lambda0:
        if bundle is None:
            raise ConfigError("rescale_lambda0 needs the hypothesis bundle "
                              "(its lambda0 rate defines gamma)")
        scaled = rescale_problem(drift, diffusion, bundle)
        inner = replace(cfg, rescale_lambda0=False)
        tilde = solve_forward(inner, scaled.drift, scaled.diffusion, noise, x0)
        base_ctx = NoiseContext(noise)
        gam = np.array([scaled.gamma(t, base_ctx) for t in noise.times])
        coeffs = tilde.coeffs * gam[:, None]
        states = tilde.states * gam[:, None]
        x1 = np.array([triple.x_norm(s, 1) for s in states])
        x2 = np.array([triple.x_norm(s, 2) for s in states])
        return SolutionPath(
            times=tilde.times.copy(), coeffs=coeffs, states=states,
            h_norm_sq=np.sum(coeffs * coeffs, axis=1),
            x1_norm=x1, x2_norm=x2,
            energy_residual=tilde.energy_residual, q1=triple.q1,
            q2=triple.q2, n_modes=n, triple=triple)

    system = GalerkinSystem(drift, diffusion, n, triple)
    if cfg.scheme == "semi_implicit" and not system.has_jacobian:
        raise ConfigError("semi_implicit scheme needs a drift Jacobian")
    times = noise.times
    n_steps = noise.n_steps
    x0v = np.asarray(x0.values if hasattr(x0, "values") else x0, dtype=float)
    if x0v.shape != (triple.n_grid,):
        raise ConfigError(f"initial state has shape {x0v.shape}, expected "
                          f"({triple.n_grid},)")

    coeffs = np.empty((n_steps + 1, n))
    coeffs[0] = triple.coefficients(x0v, n)
    residual = np.empty(n_steps)
    base_ctx = NoiseContext(noise)

    for k in range(n_steps):
        t0 = float(times[k])
        t1 = float(times[k + 1])
        ctx = base_ctx.frozen(t0)
        xk = coeffs[k]

        def b_fn(t, y, _ctx=ctx):
            return system.b(t, _ctx, y)

        def sigma_fn(t, y, _ctx=ctx):
            return system.sigma(t, _ctx, y)

        jac_fn = None
        if system.has_jacobian:
            def jac_fn(t, y, _ctx=ctx):
                return system.b_jacobian(t, _ctx, y)

        dw = noise.increments[k]
        try:
            if cfg.scheme == "semi_implicit":
                y = step_semilinearized(xk, t0, dt, dw, b_fn, sigma_fn, jac_fn)
            else:
                y = step_implicit(xk, t0, dt, dw, b_fn, sigma_fn, cfg,
                                  b_jacobian=jac_fn, guess=xk)
        except NonconvergenceError as err:
            raise NonconvergenceError(
                f"forward solve failed at step {k} (t = {t0:g}): {err}",
                residuals=err.residuals) from err

        sig = sigma_fn(t0, xk)
        m = min(sig.shape[1], dw.size)
        noise_term = sig[:, :m] @ dw[:m]
        residual[k] = _energy_defect(xk, y, b_fn(t1, y), noise_term, dt)
        coeffs[k + 1] = y

    states = coeffs @ system.modes.T
    x1 = np.array([triple.x_norm(s, 1) for s in states])
    x2 = np.array([triple.x_norm(s, 2) for s in states])
    return SolutionPath(
        times=times.copy(), coeffs=coeffs, states=states,
        h_norm_sq=np.sum(coeffs * coeffs, axis=1),
        x1_norm=x1, x2_norm=x2, energy_residual=residual,
        q1=triple.q1, q2=triple.q2, n_modes=n, triple=triple)


def solve_diagonal_batch(f, g, noise: NoisePath, y0, f_prime=None,
                         tol: float = 1e-12, max_iter: int = 200):
    """Drift-implicit solve of independent scalar equations, vectorized.

    Each noise column drives one replica of du = f(t, u) dt + g(t, u) dw;
    f and g act elementwise on the replica vector.  Returns (times,
    states) with states of shape (n_steps + 1, n_replicas).  Useful for
    Monte-Carlo studies where spawning one solver per replica would
    dominate the runtime.
    """
    inc = noise.increments
    times = noise.times
    dt = noise.dt
    n_rep = inc.shape[1]
    y = (np.full(n_rep, float(y0)) if np.isscalar(y0)
         else np.asarray(y0, dtype=float).copy())
    if y.shape != (n_rep,):
        raise ConfigError(f"y0 has shape {y.shape}, expected ({n_rep},)")
    out = np.empty((len(times), n_rep))
    out[0] = y
    drift_map = MonotoneMap(eval=f, jacobian=f_prime, diagonal=True,
                            name="batch scalar drift")
    for k in range(inc.shape[0]):
        r = y + g(float(times[k]), y) * inc[k]
        y = resolvent(drift_map, float(times[k + 1]), dt, r, tol=tol,
                      max_iter=max_iter)
        out[k + 1] = y
    return times, out


# ---------------------------------------------------------------------------
# lambda0 rescaling


def _gamma_factory(lambda0) -> Callable:
    """gamma(t, ctx) = exp(0.5 * integral of lambda0 over [0, t]).

    With a noise path in the context the integral uses the left-endpoint
    rule on the path grid (lambda0 may read the scalar path, which is only
    defined at grid times; the left rule also keeps the value adapted).
    Without a path the profile is deterministic and a trapezoid rule on a
    fine fixed grid applies.  Per-path cumulative integrals are cached.
    """
    cache: dict = {}

    def gamma(t, ctx) -> float:
        t = float(t)
        if t <= 0.0:
            return 1.0
        path = getattr(ctx, "path", None)
        if path is None:
            grid = np.linspace(0.0, t, 257)
            vals = np.array([float(lambda0(s, ctx)) for s in grid])
            return math.exp(0.5 * float(np.trapezoid(vals, grid)))
        key = id(path)
        hit = cache.get(key)
        if hit is None or hit[0] is not path:
            base = NoiseContext(path)
            vals = np.array([float(lambda0(float(s), base))
                             for s in path.times])
            cum = np.concatenate(
                [[0.0], np.cumsum(vals[:-1] * np.diff(path.times))])
            cache[key] = (path, vals, cum)
            hit = cache[key]
        _, vals, cum = hit
        if t >= path.t_final:
            return math.exp(0.5 * float(cum[-1]))
        j = int(np.searchsorted(path.times, t, side="right")) - 1
        partial = cum[j] + vals[j] * (t - float(path.times[j]))
        return math.exp(0.5 * partial)

    return gamma


class _RescaledDrift:
    """gamma^{-1} A(t, gamma x) minus half the lambda0 damping.

    The damping is subtracted once from the total drift (that is what the
    transformed state's differential demands); ``parts`` distributes it
    evenly across the declared parts so per-part bounds stay valid.
    """

    def __init__(self, base, lambda0, gamma):
        self.base = base
        self.lambda0 = lambda0
        self.gamma = gamma
        self.triple = base.triple

    def eval(self, t, ctx, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        g = self.gamma(t, ctx)
        lam0 = float(self.lambda0(t, ctx))
        return self.base.eval(t, ctx, g * u) / g - 0.5 * lam0 * u

    def parts(self, t, ctx, u):
        u = np.asarray(u, dtype=float)
        g = self.gamma(t, ctx)
        lam0 = float(self.lambda0(t, ctx))
        base_parts = self.base.parts(t, ctx, g * u)
        share = 0.5 * lam0 / len(base_parts)
        return [(idx, f / g - share * u) for idx, f in base_parts]

    def jacobian(self, t, ctx, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        g = self.gamma(t, ctx)
        lam0 = float(self.lambda0(t, ctx))
        return (self.base.jacobian(t, ctx, g * u)
                - 0.5 * lam0 * np.eye(u.size))


class _RescaledDiffusion:
    """gamma^{-1} B(t, gamma x)."""

    def __init__(self, base, gamma):
        self.base = base
        self.gamma = gamma
        self.triple = base.triple

    @property
    def n_modes(self) -> int:
        return self.base.n_modes

    def eval(self, t, ctx, u) -> np.ndarray:
        g = self.gamma(t, ctx)
        return self.base.eval(t, ctx, g * np.asarray(u, dtype=float)) / g

    def hs_norm_sq(self, t, ctx, u) -> float:
        g = self.gamma(t, ctx)
        if u is None:
            return self.base.hs_norm_sq(t, ctx, None) / g ** 2
        return self.base.hs_norm_sq(t, ctx, g * np.asarray(u, dtype=float)) / g ** 2


class RescaledProblem(NamedTuple):
    drift: object
    diffusion: object
    bundle: HypothesisBundle
    gamma: Callable


def rescale_problem(drift, diffusion, bundle: HypothesisBundle,
                    c0: float = 1.0) -> RescaledProblem:
    """Remove lambda0 from the hypothesis bundle by an exponential gauge.

    With gamma(t) = exp(0.5 int_0^t lambda0), the transformed operators
    A~(t, x) = gamma^{-1} A(t, gamma x) - lambda0 x / 2 and
    B~(t, x) = gamma^{-1} B(t, gamma x) satisfy the same inequalities with

        lambda0~ = 0,
        lambda_i~ = lambda_i * gamma^(q_i - 2),
        lambda3~ = lambda3 + lambda0,
        eta_i~  = eta_i + c0 * lambda_i^((q_i - 1)/q_i),
        c_Ai~   = c_Ai + c0,

    where ``c0`` is a caller-certified comparison constant absorbing the
    X_i* versus X_i norm gap of the damping term (combined with the
    lambda0 <= c1 min(lambda1, lambda2) domination).  xi is unchanged
    (gamma >= 1 only shrinks it).  If lambda0 vanishes identically, the
    transform is the identity.
    """
    if c0 <= 0:
        raise ConfigError(f"c0 must be positive, got {c0}")
    lam0 = bundle.lambda0
    gamma = _gamma_factory(lam0)
    q1, q2 = bundle.q1, bundle.q2

    def lam1_t(t, ctx):
        return bundle.lambda1(t, ctx) * gamma(t, ctx) ** (q1 - 2.0)

    def lam2_t(t, ctx):
        return bundle.lambda2(t, ctx) * gamma(t, ctx) ** (q2 - 2.0)

    def lam3_t(t, ctx):
        return bundle.lambda3(t, ctx) + lam0(t, ctx)

    def eta1_t(t, ctx):
        return bundle.eta1(t, ctx) + c0 * bundle.lambda1(t, ctx) ** ((q1 - 1.0) / q1)

    def eta2_t(t, ctx):
        return bundle.eta2(t, ctx) + c0 * bundle.lambda2(t, ctx) ** ((q2 - 1.0) / q2)

    new_bundle = HypothesisBundle(
        lambda0=constant_profile(0.0),
        lambda1=lam1_t, lambda2=lam2_t, lambda3=lam3_t,
        xi=bundle.xi, eta1=eta1_t, eta2=eta2_t,
        q1=q1, q2=q2,
        c_a1=bundle.c_a1 + c0, c_a2=bundle.c_a2 + c0, c1=bundle.c1)
    return RescaledProblem(_RescaledDrift(drift, lam0, gamma),
                           _RescaledDiffusion(diffusion, gamma),
                           new_bundle, gamma)


# ---------------------------------------------------------------------------
# dissipation clock


def clock_theta(lambda3, m: float, t_final: float, ctx=EMPTY_CONTEXT,
                n_quad: int = 2048) -> float:
    """First time the accumulated quadratic rate H(t) = int_0^t lambda3
    reaches m; t_final when it never does (the empty-infimum convention).

    With a noise path in the context the quadrature grid is the path grid
    (random profiles are only defined there); otherwise a uniform grid of
    n_quad cells is used.
    """
    if m < 0:
        raise ConfigError(f"clock level m must be >= 0, got {m}")
    if m == 0:
        return 0.0
    path = getattr(ctx, "path", None)
    if path is not None:
        grid = path.times[path.times <= t_final + 1e-12].astype(float)
        if grid.size < 2 or grid[-1] < t_final - 1e-9:
            raise ConfigError("noise grid does not cover [0, t_final]")
    else:
        grid = np.linspace(0.0, float(t_final), n_quad + 1)
    vals = np.array([float(lambda3(float(s), ctx)) for s in grid])
    if np.any(vals < 0):
        raise ConfigError("lambda3 must be nonnegative for the clock")
    accumulated = np.concatenate(
        [[0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * np.diff(grid))])
    if accumulated[-1] < m:
        return float(t_final)
    idx = int(np.searchsorted(accumulated, m, side="left"))
    if idx == 0:
        return float(grid[0])
    lo, hi = accumulated[idx - 1], accumulated[idx]
    if hi == lo:
        return float(grid[idx])
    frac = (m - lo) / (hi - lo)
    return float(grid[idx - 1] + frac * (grid[idx] - grid[idx - 1]))


# ---------------------------------------------------------------------------
# energy identity and a-priori budget


def energy_residual(path: SolutionPath, drift, diffusion,
                    noise: NoisePath) -> np.ndarray:
    """Recompute the per-step energy-identity defect from a stored path.

    Expects the operators the trajectory was actually stepped with; for a
    rescaled solve that means the transformed ones.  Agrees with the
    ledger filled in by solve_forward.
    """
    system = GalerkinSystem(drift, diffusion, path.n_modes, path.triple)
    times = path.times
    dt = noise.dt
    base_ctx = NoiseContext(noise)
    out = np.empty(path.n_steps)
    for k in range(path.n_steps):
        ctx = base_ctx.frozen(float(times[k]))
        x = path.coeffs[k]
        y = path.coeffs[k + 1]
        sig = system.sigma(float(times[k]), ctx, x)
        dw = noise.increments[k]
        m = min(sig.shape[1], dw.size)
        noise_term = sig[:, :m] @ dw[:m]
        b_at_y = system.b(float(times[k + 1]), ctx, y)
        out[k] = _energy_defect(x, y, b_at_y, noise_term, dt)
    return out


@dataclass
class AprioriReport:
    """Pathwise norm ledger versus the exponential-in-m budget.

    The three left-hand quantities mirror the a-priori estimate: the grid
    supremum of the squared H-norm, the lambda_i-weighted X_i integrals,
    and the lambda3-weighted dissipation integral, all over [0, theta].
    The budget is 3 e^m (|X0|_H^2 + int xi + sum_i int eta_i^{q_i'}):
    each left-hand piece obeys an e^m bound through the discrete Gronwall
    chain, so their sum obeys three times that.  Pathwise it is a
    diagnostic surrogate of an expectation bound; ``ok`` reports it.
    """

    sup_h_sq: float
    weighted_x1: float
    weighted_x2: float
    dissipation: float
    m: float
    theta: float
    base: float
    budget: float
    ok: bool

    @property
    def lhs_total(self) -> float:
        return self.sup_h_sq + self.weighted_x1 + self.weighted_x2 \
            + self.dissipation

    def summary(self) -> str:
        status = "within budget" if self.ok else "EXCEEDS budget"
        return (f"a-priori ledger {status}: sup|X|^2={self.sup_h_sq:.6g}, "
                f"weighted X1={self.weighted_x1:.6g}, "
                f"weighted X2={self.weighted_x2:.6g}, "
                f"dissipation={self.dissipation:.6g}, "
                f"budget={self.budget:.6g} (m={self.m:.6g}, "
                f"theta={self.theta:.6g})")


def apriori_norms(path: SolutionPath, bundle: HypothesisBundle,
                  ctx=EMPTY_CONTEXT, m: Optional[float] = None) -> AprioriReport:
    """Compare the trajectory's norm ledger against its Gronwall budget.

    ``m`` caps the accumulated quadratic rate (integrals run over
    [0, theta_m]); by default it is the full accumulated rate, making
    theta the final time.  Left-endpoint quadrature throughout, matching
    the ledger's own convention.
    """
    times = np.asarray(path.times, dtype=float)
    dts = np.diff(times)
    lam1 = np.array([float(bundle.lambda1(t, ctx)) for t in times])
    lam2 = np.array([float(bundle.lambda2(t, ctx)) for t in times])
    lam3 = np.array([float(bundle.lambda3(t, ctx)) for t in times])
    xi = np.array([float(bundle.xi(t, ctx)) for t in times])
    eta1 = np.array([float(bundle.eta1(t, ctx)) for t in times])
    eta2 = np.array([float(bundle.eta2(t, ctx)) for t in times])

    if m is None:
        m_val = float(np.sum(lam3[:-1] * dts))
        theta = float(times[-1])
    else:
        m_val = float(m)
        theta = clock_theta(bundle.lambda3, m_val, float(times[-1]), ctx)

    # cell weights for integrals over [0, theta]
    weights = np.clip(np.minimum(times[1:], theta) - times[:-1], 0.0, None)
    on = times <= theta + 1e-12

    sup_h_sq = float(np.max(path.h_norm_sq[on]))
    w1 = float(np.sum(lam1[:-1] * path.x1_norm[:-1] ** path.q1 * weights))
    w2 = float(np.sum(lam2[:-1] * path.x2_norm[:-1] ** path.q2 * weights))
    diss = float(np.sum(lam3[:-1] * path.h_norm_sq[:-1] * weights))

    qp1 = path.q1 / (path.q1 - 1.0)
    qp2 = path.q2 / (path.q2 - 1.0)
    base = float(path.h_norm_sq[0]
                 + np.sum(xi[:-1] * weights)
                 + np.sum((eta1[:-1] ** qp1 + eta2[:-1] ** qp2) * weights))
    budget = 3.0 * math.exp(m_val) * base
    lhs = sup_h_sq + w1 + w2 + diss
    ok = lhs <= budget * (1.0 + 1e-12) or lhs == 0.0
    return AprioriReport(sup_h_sq=sup_h_sq, weighted_x1=w1, weighted_x2=w2,
                         dissipation=diss, m=m_val, theta=theta, base=base,
                         budget=budget, ok=ok)


# ---------------------------------------------------------------------------
# trajectory export


def trajectory_csv(path: SolutionPath) -> str:
    """Render a trajectory as CSV: t, mode coefficients, squared H-norm,
    X1/X2 norms, and the energy residual of the arriving step (0 for the
    initial row).  Full 17-significant-digit floats so a rerun with the
    same seed reproduces the file byte for byte.
    """
    n = path.coeffs.shape[1]
    header = ("t," + ",".join(f"c{i}" for i in range(1, n + 1))
              + ",h_norm_sq,x1_norm,x2_norm,energy_residual")
    res = np.concatenate([[0.0], path.energy_residual])
    lines = [header]
    for k in range(len(path.times)):
        cells = [path.times[k], *path.coeffs[k], path.h_norm_sq[k],
                 path.x1_norm[k], path.x2_norm[k], res[k]]
        lines.append(",".join(f"{c:.17g}" for c in cells))
    return "\r\n".join(lines) + "\r\n"
