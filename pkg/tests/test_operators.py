"""Operator instances and hypothesis-checker tests.

Pairing values are checked against direct pointwise summation oracles
computed here, independent of the triple's pairing machinery.
"""

import numpy as np
import pytest

from monosee.errors import ConfigError, MonoseeError
from monosee.noise import EMPTY_CONTEXT, NoiseContext, sample_path
from monosee.operators import (ConstantDiffusion, HypothesisBundle,
                               MultiplicativeDiffusion, PhiDrift,
                               PorousMediumDrift, ReactionDiffusionDrift,
                               abs_scalar_profile, build_operator_set,
                               check_boundedness, check_coercivity,
                               check_hemicontinuity, check_monotonicity,
                               constant_profile, pair_sampler, state_sampler)
from monosee.triple import POROUS_MEDIUM, REACTION_DIFFUSION, DiscreteTriple


class FixedScalar:
    """Context stub with a constant driving value."""

    def __init__(self, w):
        self.w = float(w)

    def scalar(self, t):
        return self.w

    def frozen(self, t0):
        return self


def test_heat_drift_is_discrete_laplacian():
    ops = build_operator_set("heat", 8)
    u = np.sin(np.linspace(0.3, 2.0, 8))
    out = ops.drift.eval(0.0, EMPTY_CONTEXT, u)
    assert np.allclose(out, ops.triple.laplacian @ u, rtol=0, atol=1e-12)


def test_zero_state_maps_to_zero():
    pm = build_operator_set("porous_medium", 8, p=3)
    rd = build_operator_set("reaction_diffusion", 8, p=3)
    z = np.zeros(8)
    assert np.all(pm.drift.eval(0.2, EMPTY_CONTEXT, z) == 0.0)
    assert np.all(rd.drift.eval(0.2, EMPTY_CONTEXT, z) == 0.0)


def test_spike_pairing_oracle():
    # p = 3, c = 1, spike of height 2: [u, A(u)] = -h * sum(u * |u| u) = -8h
    n = 9
    ops = build_operator_set("porous_medium", n, p=3)
    u = np.zeros(n)
    u[4] = 2.0
    drift_out = ops.drift.eval(0.0, EMPTY_CONTEXT, u)
    pairing = ops.triple.dual_pairing(u, drift_out)
    h = ops.triple.h
    oracle = -h * np.sum(u * np.abs(u) ** 1 * u)  # direct summation
    assert pairing == pytest.approx(-8.0 * h, rel=1e-10)
    assert pairing == pytest.approx(oracle, rel=1e-10)


def test_porous_medium_pairing_identity_random_states():
    # dual_pairing(v, A(u)) = -h * sum(v * phi(u)) for any v, u
    ops = build_operator_set("porous_medium", 16, p=3)
    rng = np.random.default_rng(1)
    for _ in range(20):
        u = rng.uniform(-2, 2, 16)
        v = rng.uniform(-2, 2, 16)
        lhs = ops.triple.dual_pairing(v, ops.drift.eval(0.0, EMPTY_CONTEXT, u))
        phi = np.abs(u) * u
        rhs = -ops.triple.h * float(np.sum(v * phi))
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


def test_reaction_diffusion_linear_flux_matches_heat():
    # a(r) = r, b = 0: divergence part is exactly the discrete Laplacian
    tr = DiscreteTriple(8, REACTION_DIFFUSION)
    drift = ReactionDiffusionDrift(
        tr, a=lambda t, ctx, r: r, b=lambda t, ctx, r: np.zeros_like(r),
        a_prime=lambda t, ctx, r: np.ones_like(r),
        b_prime=lambda t, ctx, r: np.zeros_like(r))
    u = np.cos(np.linspace(0.0, 3.0, 8))
    out = drift.eval(0.0, EMPTY_CONTEXT, u)
    assert np.allclose(out, tr.laplacian @ u, rtol=0, atol=1e-10)


def test_reaction_diffusion_jacobian_matches_fd():
    ops = build_operator_set("reaction_diffusion", 10, p=3)
    rng = np.random.default_rng(4)
    u = rng.uniform(-1.5, 1.5, 10)
    J = ops.drift.jacobian(0.3, EMPTY_CONTEXT, u)
    fd = np.empty_like(J)
    for k in range(10):
        step = 1e-7 * (1 + abs(u[k]))
        up, dn = u.copy(), u.copy()
        up[k] += step
        dn[k] -= step
        fd[:, k] = (ops.drift.eval(0.3, EMPTY_CONTEXT, up)
                    - ops.drift.eval(0.3, EMPTY_CONTEXT, dn)) / (2 * step)
    assert np.allclose(J, fd, rtol=1e-5, atol=1e-4)


def test_porous_medium_jacobian_matches_fd():
    ops = build_operator_set("porous_medium", 8, p=3)
    rng = np.random.default_rng(5)
    u = rng.uniform(-2, 2, 8)
    J = ops.drift.jacobian(0.0, EMPTY_CONTEXT, u)
    fd = np.empty_like(J)
    for k in range(8):
        step = 1e-7 * (1 + abs(u[k]))
        up, dn = u.copy(), u.copy()
        up[k] += step
        dn[k] -= step
        fd[:, k] = (ops.drift.eval(0.0, EMPTY_CONTEXT, up)
                    - ops.drift.eval(0.0, EMPTY_CONTEXT, dn)) / (2 * step)
    assert np.allclose(J, fd, rtol=1e-5, atol=1e-4)


def test_nan_state_raises_with_location():
    ops = build_operator_set("porous_medium", 6, p=3)
    u = np.zeros(6)
    u[3] = np.nan
    with pytest.raises(MonoseeError, match="index 3"):
        ops.drift.eval(0.0, EMPTY_CONTEXT, u)


def test_constant_diffusion_zero_and_hs_norm():
    tr = DiscreteTriple(7, REACTION_DIFFUSION)
    zero = ConstantDiffusion(tr, np.zeros((7, 3)))
    assert np.all(zero.eval(0.0, EMPTY_CONTEXT, None) == 0.0)
    assert zero.hs_norm_sq(0.0, EMPTY_CONTEXT, None) == 0.0


def test_multiplicative_sigma_column_of_twos():
    # sigma_1(t, r) = sqrt(|w_t|) r with w_t = 4, u = 1: column of 2s
    tr = DiscreteTriple(5, REACTION_DIFFUSION)
    diff = MultiplicativeDiffusion(
        tr, [lambda t, ctx, r: np.sqrt(abs(ctx.scalar(t))) * r])
    cols = diff.eval(0.5, FixedScalar(4.0), np.ones(5))
    assert np.allclose(cols, 2.0 * np.ones((5, 1)), rtol=0, atol=1e-14)


def test_hs_norm_two_ways():
    # L^2 flavor: HS-norm^2 = h * sum_j sum_grid sigma_j^2, matrix vs direct
    tr = DiscreteTriple(6, REACTION_DIFFUSION)
    diff = MultiplicativeDiffusion(
        tr, [lambda t, ctx, r: r, lambda t, ctx, r: np.sin(r)])
    u = np.linspace(-1, 2, 6)
    m = diff.eval(0.0, EMPTY_CONTEXT, u)
    direct = tr.h * float(np.sum(m ** 2))
    assert diff.hs_norm_sq(0.0, EMPTY_CONTEXT, u) == pytest.approx(direct, rel=1e-12)


def test_power_map_monotone_sign_oracle():
    # |r|^{p-2} r is nondecreasing: sign check over random scalar pairs
    rng = np.random.default_rng(8)
    r, s = rng.uniform(-50, 50, 1000), rng.uniform(-50, 50, 1000)
    phi = lambda x: np.abs(x) * x
    assert np.all((r - s) * (phi(r) - phi(s)) >= 0.0)


def test_monotonicity_porous_medium_passes():
    ops = build_operator_set("porous_medium", 12, p=3)
    report = check_monotonicity(ops.drift, ops.diffusion, ops.bundle,
                                pair_sampler(ops.triple), n_samples=500, seed=3)
    assert report.ok, report.summary()


def test_monotonicity_equal_pair_excess_zero():
    ops = build_operator_set("porous_medium", 10, p=3)
    rng = np.random.default_rng(0)
    u = rng.uniform(-3, 3, 10)
    a1 = ops.drift.eval(0.1, EMPTY_CONTEXT, u)
    a2 = ops.drift.eval(0.1, EMPTY_CONTEXT, u)
    assert np.array_equal(a1, a2)
    excess = 2.0 * ops.triple.dual_pairing(u - u, a1 - a2)
    assert excess == 0.0


def test_monotonicity_swapping_pair_is_exact():
    ops = build_operator_set("porous_medium", 10, p=3)
    rng = np.random.default_rng(2)
    u, v = rng.uniform(-3, 3, 10), rng.uniform(-3, 3, 10)
    au = ops.drift.eval(0.0, EMPTY_CONTEXT, u)
    av = ops.drift.eval(0.0, EMPTY_CONTEXT, v)
    one = ops.triple.dual_pairing(u - v, au - av)
    two = ops.triple.dual_pairing(v - u, av - au)
    assert one == two  # negations are exact in IEEE arithmetic


def test_monotonicity_flags_planted_sine():
    tr = DiscreteTriple(12, POROUS_MEDIUM, q1=3, q2=3)
    drift = PhiDrift(tr, lambda t, ctx, r: np.sin(r))
    diff = ConstantDiffusion(tr, np.zeros((12, 1)))
    bundle = HypothesisBundle(q1=3, q2=3)
    report = check_monotonicity(drift, diff, bundle,
                                pair_sampler(tr, amp_range=(1e-1, 1e2)),
                                n_samples=500, seed=3)
    assert not report.ok
    assert report.n_violations >= 1


def test_coercivity_porous_medium_passes():
    ops = build_operator_set("porous_medium", 12, p=3)
    report = check_coercivity(ops.drift, ops.diffusion, ops.bundle,
                              state_sampler(ops.triple), n_samples=500, seed=7)
    assert report.ok, report.summary()


def test_coercivity_flags_underdeclared_xi():
    ops = build_operator_set("porous_medium", 10, p=3)
    diff = ConstantDiffusion(ops.triple, np.ones((10, 1)))
    full = diff.hs_norm_sq(0.0, EMPTY_CONTEXT, None)
    starved = HypothesisBundle(
        lambda1=constant_profile(1.0), lambda2=constant_profile(1.0),
        lambda3=constant_profile(1e-6), xi=constant_profile(0.5 * full),
        q1=3, q2=3)
    report = check_coercivity(ops.drift, diff, starved,
                              state_sampler(ops.triple), n_samples=200, seed=7)
    assert not report.ok  # constant HS mass dominates near u = 0


def test_coercivity_degenerate_coefficient_time():
    # |w_t| = 0: drift and rates all vanish, excess still <= 0
    ops = build_operator_set("eq_1_1", 10, p=3)
    ctx = FixedScalar(0.0)
    report = check_coercivity(ops.drift, ops.diffusion, ops.bundle,
                              state_sampler(ops.triple), n_samples=100,
                              seed=9, ctx=ctx)
    assert report.ok, report.summary()


def test_boundedness_zero_state():
    ops = build_operator_set("porous_medium", 8, p=3)
    report = check_boundedness(
        ops.drift, ops.bundle,
        lambda rng: (0.0, np.zeros(8)), n_samples=3, seed=0)
    assert report.ok


def test_boundedness_porous_medium_holder_equality():
    # |A(u)|_{X*} = |u|_q^{q-1} exactly for the power nonlinearity
    ops = build_operator_set("porous_medium", 12, p=3)
    rng = np.random.default_rng(12)
    u = rng.uniform(-2, 2, 12)
    lhs = ops.triple.dual_norm(ops.drift.eval(0.0, EMPTY_CONTEXT, u), 1)
    rhs = ops.triple.lq_norm(u, 3.0) ** 2
    assert lhs == pytest.approx(rhs, rel=1e-10)
    report = check_boundedness(ops.drift, ops.bundle,
                               state_sampler(ops.triple), n_samples=300, seed=1)
    assert report.ok, report.summary()


def test_boundedness_flags_exponent_mismatch():
    ops = build_operator_set("porous_medium", 10, p=3)
    wrong = HypothesisBundle(q1=2, q2=2)  # claims linear growth for p=3
    report = check_boundedness(ops.drift, wrong,
                               state_sampler(ops.triple), n_samples=200, seed=1)
    assert not report.ok


def test_hemicontinuity_linear_affine_profile():
    ops = build_operator_set("heat", 8)
    tr = ops.triple
    rng = np.random.default_rng(3)
    x, y, z = (rng.uniform(-1, 1, 8) for _ in range(3))
    eps = np.linspace(0, 1, 33)
    vals = np.array([tr.dual_pairing(x, ops.drift.eval(0.0, EMPTY_CONTEXT, y + e * z))
                     for e in eps])
    second = np.diff(vals, 2)
    assert np.max(np.abs(second)) < 1e-10 * (1 + np.max(np.abs(vals)))
    report = check_hemicontinuity(ops.drift, state_sampler(tr), n_samples=50, seed=3)
    assert report.ok


def test_hemicontinuity_cubic_passes_dense_grid():
    ops = build_operator_set("porous_medium", 10, p=3)
    report = check_hemicontinuity(ops.drift, state_sampler(ops.triple),
                                  n_samples=100, seed=6)
    assert report.ok, report.summary()


def test_hemicontinuity_flags_step_nonlinearity():
    tr = DiscreteTriple(10, POROUS_MEDIUM, q1=3, q2=3)
    drift = PhiDrift(tr, lambda t, ctx, r: np.sign(r))
    report = check_hemicontinuity(drift, state_sampler(tr, amp_range=(0.5, 2.0)),
                                  n_samples=100, seed=6)
    assert not report.ok


def test_random_coefficient_builtins_pass_all_checks():
    path = sample_path(21, 1.0, 64, 1)
    ctx = NoiseContext(path)
    grid_times = path.times
    for name in ("eq_1_1", "eq_1_2"):
        ops = build_operator_set(name, 10, p=3)
        pairs = pair_sampler(ops.triple, times=grid_times)
        singles = state_sampler(ops.triple, times=grid_times)
        mono = check_monotonicity(ops.drift, ops.diffusion, ops.bundle, pairs,
                                  n_samples=200, seed=5, ctx=ctx)
        coer = check_coercivity(ops.drift, ops.diffusion, ops.bundle, singles,
                                n_samples=200, seed=5, ctx=ctx)
        bnd = check_boundedness(ops.drift, ops.bundle, singles,
                                n_samples=200, seed=5, ctx=ctx)
        hemi = check_hemicontinuity(ops.drift, singles, n_samples=50,
                                    seed=5, ctx=ctx)
        for rep in (mono, coer, bnd, hemi):
            assert rep.ok, f"{name}: {rep.summary()}"


def test_rate_domination_and_integrability():
    path = sample_path(33, 1.0, 128, 1)
    ctx = NoiseContext(path)
    ops = build_operator_set("eq_1_2", 8, p=3)
    interior = path.times[1:]  # strictness holds a.e.; avoid w_0 = 0
    report = ops.bundle.check_rate_domination(ctx, interior)
    assert report.ok, report.summary()
    # a degenerate instant violates the strict inequality and is reported
    degenerate = ops.bundle.check_rate_domination(FixedScalar(0.0), [0.5])
    assert not degenerate.ok
    integ = ops.bundle.integrability_report(ctx, 1.0, n=128)
    assert integ.ok
    assert len(integ.notes) == 5


def test_checkers_are_deterministic():
    ops = build_operator_set("porous_medium", 10, p=3)
    a = check_monotonicity(ops.drift, ops.diffusion, ops.bundle,
                           pair_sampler(ops.triple), n_samples=100, seed=42)
    b = check_monotonicity(ops.drift, ops.diffusion, ops.bundle,
                           pair_sampler(ops.triple), n_samples=100, seed=42)
    assert a.summary() == b.summary()
    assert a.n_violations == b.n_violations


def test_unknown_operator_name():
    with pytest.raises(ConfigError, match="unknown operator family"):
        build_operator_set("wave", 8)


def test_bundle_validation():
    with pytest.raises(ConfigError):
        HypothesisBundle(q1=1.5)
    with pytest.raises(ConfigError):
        HypothesisBundle(c1=0.0)
