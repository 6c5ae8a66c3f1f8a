import numpy as np
import pytest

from nltransport.functionals import Profile
from nltransport.linstab import Linearization, semigroup
from nltransport.model import Model
from nltransport import dde, pde
from nltransport.ratefit import fit_rate


@pytest.fixture(scope="module")
def const_lin(const_model):
    return Linearization(const_model)


def test_semigroup_constant_profile():
    prof = Profile.constant(3.0)
    assert abs(semigroup(prof, 2.0, 1.0, 0.7) - 3.0 * np.exp(-0.5)) < 1e-14


def test_semigroup_identity_at_zero():
    prof = Profile(value=lambda y: np.sin(y) + 2.0, deriv=lambda y: np.cos(y))
    assert abs(semigroup(prof, 2.0, 0.0, 1.3) - prof(1.3)) < 1e-14


def test_semigroup_composition():
    prof = Profile(value=lambda y: np.exp(-0.7 * y), deriv=lambda y: -0.7 * np.exp(-0.7 * y))
    rng = np.random.default_rng(2)
    for _ in range(10):
        y, t1, t2 = rng.uniform(0.2, 3.0), rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0)
        inner = Profile(value=lambda u: semigroup(prof, 2.0, t2, u),
                        deriv=lambda u: 0.0 * u)
        lhs = semigroup(inner, 2.0, t1, y)
        rhs = semigroup(prof, 2.0, t1 + t2, y)
        assert abs(lhs - rhs) < 1e-12


def test_kernel_constant_source_closed_form(const_lin):
    # B A xi_p is the constant h_inf, so K(t) = K(0) e^{-t/p} with K(0) = 1/4
    t = np.linspace(0.0, 8.0, 33)
    K = const_lin.kernel_K(t)
    assert abs(K[0] - 0.25) < 1e-12
    assert np.max(np.abs(K - 0.25 * np.exp(-t / 2.0))) < 1e-12


def test_kernel_positive_and_weighted_monotone(kernel_certificate):
    assert kernel_certificate["K_min"] > 0.0
    assert kernel_certificate["monotone_margin"] >= -1e-10


def test_kernel_prime_matches_difference_quotient(linearization):
    t = np.array([0.3, 1.5, 5.0])
    h = 1e-5
    fd = (linearization.kernel_K(t + h) - linearization.kernel_K(t - h)) / (2 * h)
    assert np.max(np.abs(fd - linearization.kernel_K_prime(t))) < 1e-9


def test_laplace_constant_source_analytic(const_lin):
    z = np.array([0.5, 1.0 + 2.0j, -0.2 + 5.0j, -0.4])
    vals, tail = const_lin.laplace_khat(z)
    # the certified truncation tail covers the worst (leftmost) sample
    assert np.max(np.abs(vals - 0.25 / (z + 0.5))) <= tail + 1e-10
    # no zero of 1 + K_hat right of -1/p: the only root sits at -1/p - K(0)
    root = -0.5 - 0.25
    assert root < -0.5


def test_laplace_positive_on_reals(linearization):
    vals, _ = linearization.laplace_khat(np.array([0.1, 1.0, 3.0]))
    assert np.all(vals.real > 0.0)
    assert np.max(np.abs(vals.imag)) < 1e-12


def test_condition_h3_log_source(linearization):
    rep = linearization.condition_H3()
    assert rep["status"] == "conclusive"
    assert rep["winding_number"] == 0
    assert rep["min_abs_one_plus_khat"] > 0.5


def test_linear_decay_weak_coupling(weak_log_model):
    lin = Linearization(weak_log_model)
    xp = weak_log_model.equilibrium_profile_interpolated()
    out = lin.linear_evolve(xp.scaled(1e-3), T=24.0, dt=0.01)
    rate = out["rate_fit"].rate
    assert 1.0 / (1.3 * 2.0) <= rate <= 1.0 / (0.9 * 2.0)
    assert out["rate_fit"].r_squared > 0.999


def test_linear_decay_canonical_exceeds_lower_edge(linearization, log_model):
    # the canonical coupling cancels the slow mode entirely, so the decay is
    # faster than 1/p; the lower edge still certifies the stability claim
    xp = log_model.equilibrium_profile_interpolated()
    out = linearization.linear_evolve(xp.scaled(1e-3), T=20.0, dt=0.01)
    assert out["rate_fit"].rate >= 1.0 / (1.3 * 2.0)
    print(f"canonical linear decay rate: {out['rate_fit'].rate:.4f}")


def test_zero_perturbation_stays_zero(linearization):
    zero = Profile.constant(0.0)
    out = linearization.linear_evolve(zero, T=5.0, dt=0.02, n_samples=20)
    assert np.max(np.abs(out["u"])) < 1e-14
    assert np.max(out["norm_1inf"]) < 1e-14
    assert out["rate_fit"] is None


def test_weighted_u_bounded(linearization, log_model):
    xp = log_model.equilibrium_profile_interpolated()
    out = linearization.linear_evolve(xp.scaled(1e-3), T=20.0, dt=0.01)
    w = np.abs(out["u"]) * np.exp(out["t"] / (1.2 * 2.0))
    # the weighted curve attains its maximum early, not at the right end
    assert np.argmax(w) < 0.75 * len(w)


def test_linear_matches_nonlinear_I(linearization, log_model):
    # linearized functional value tracks the full run at small amplitude
    amp = 1e-3
    xp = log_model.equilibrium_profile_interpolated()
    pert = xp.scaled(amp)
    xi0 = _sum_profile(xp, pert)
    traj = pde.run(log_model, xi0, T=10.0, dt=0.01, stride=10, norms=False)
    out = linearization.linear_evolve(pert, T=10.0, dt=0.01)
    spec = log_model.functional
    grid = spec.nodes
    I_lin = []
    A_tab = None
    for t_probe in traj.t[::10]:
        idx = int(round(t_probe / 0.01))
        val, dval = linearization.perturbation_at(pert, out["t"], out["u"], idx, grid)
        I_lin.append(spec.value_from_samples(log_model.xi_p_nodes + val))
    I_ref = traj.I[::10]
    rel = np.max(np.abs(np.asarray(I_lin) / I_ref - 1.0))
    assert rel < 1e-4


def test_nonlinear_gap_scales_quadratically(weak_log_model):
    # distance between the full flow and the linearized flow is O(amplitude^2)
    lin = Linearization(weak_log_model)
    xp = weak_log_model.equilibrium_profile_interpolated()
    grid = np.geomspace(1e-2, 1e3, 150)
    amps = [1e-3, 2e-3, 4e-3]
    gaps = []
    for amp in amps:
        xi0 = xp.scaled(1.0 + amp)
        state = pde.LagrangianState(weak_log_model, xi0, capacity=640)
        out = lin.linear_evolve(xp.scaled(amp), T=6.0, dt=0.01, n_samples=40)
        gap = 0.0
        for k in range(0, 601, 50):
            for _ in range(k - state.n + 1):
                state.step(0.01)
            xi, dxi = state.refined_samples(k, grid)
            lv, ld = lin.perturbation_at(xp.scaled(amp), out["t"], out["u"], k, grid)
            xpv, xpd = weak_log_model.equilibrium_pair(grid)
            diff = np.abs(xi - xpv - lv) + grid * np.abs(dxi - xpd - ld)
            gap = max(gap, float(np.max(diff)))
        gaps.append(gap)
    slope = np.polyfit(np.log(amps), np.log(gaps), 1)[0]
    assert 1.8 <= slope <= 2.2


def test_perturbation_deltas_vanish_at_zero(linearization):
    d1, d2 = linearization.perturbation_deltas(Profile.constant(0.0))
    assert abs(d1) < 1e-14 and abs(d2) < 1e-14


def test_perturbation_deltas_scaling(linearization, log_model):
    # d1 scales linearly, d2 quadratically with the perturbation amplitude
    xp = log_model.equilibrium_profile_interpolated()
    amps = np.array([1e-3, 2e-3, 4e-3, 8e-3])
    d1s, d2s = [], []
    for amp in amps:
        d1, d2 = linearization.perturbation_deltas(xp.scaled(amp))
        d1s.append(abs(d1))
        d2s.append(abs(d2))
    s1 = np.polyfit(np.log(amps), np.log(d1s), 1)[0]
    s2 = np.polyfit(np.log(amps), np.log(d2s), 1)[0]
    assert abs(s1 - 1.0) <= 0.05
    assert abs(s2 - 2.0) <= 0.1


def test_perturbation_deltas_lipschitz_ratios(linearization, log_model):
    xp = log_model.equilibrium_profile_interpolated()
    rng = np.random.default_rng(9)
    ratios = []
    for _ in range(8):
        a1, a2 = rng.uniform(1e-3, 5e-3, 2)
        z1, z2 = xp.scaled(a1), xp.scaled(a2)
        d11, _ = linearization.perturbation_deltas(z1)
        d12, _ = linearization.perturbation_deltas(z2)
        from nltransport.functionals import weighted_norm
        dist = weighted_norm(xp.scaled(a1 - a2), m=1)
        if dist > 1e-12:
            ratios.append(abs(d11 - d12) / dist)
    print(f"delta1 Lipschitz ratios: max {max(ratios):.4f}")
    assert np.isfinite(max(ratios))


def test_delay_coefficient_limits(linearization):
    # M(t) approaches K(0) at the kernel's own exponential rate
    t = np.linspace(0.0, 16.0, 81)
    M = linearization._M_values(t)
    K0 = float(linearization.kernel_K(0.0))
    resid = np.abs(M - K0)
    sel = resid > 1e-12
    fit = fit_rate(t[sel], resid[sel], window=0.75)
    assert fit.rate >= 1.0 / (1.2 * 2.0)


def test_delay_memory_matches_kernel_derivative(linearization):
    t0 = 8.0
    for s in (0.0, 4.0, 7.0):
        _, m = linearization.lin_dde_coeffs(t0, s)
        kp = float(linearization.kernel_K_prime(t0 - s))
        assert abs(m + kp) <= 0.1 * np.exp(-(t0 - s) / 2.0 - t0 / 2.0) + 1e-9


def test_delay_routes_agree(linearization, log_model):
    xp = log_model.equilibrium_profile_interpolated()
    pert = xp.scaled(1e-3)
    r1 = linearization.lin_dde_solve(1e-3, pert, T=12.0, dt=0.01)
    r2 = linearization.lin_dde_solve_volterra_route(1e-3, pert, T=12.0, dt=0.01)
    t = r1["t"]
    d = np.abs(r1["I_tilde"] - r2["I_tilde"])
    # identical derivatives at time zero pin the sign conventions
    assert abs(r1["dI_tilde"][0] - r2["dI_tilde"][0]) < 1e-10
    assert np.max(d[t <= 0.5]) < 1e-6
    weighted = np.max(d * np.exp(t / 4.0))
    assert np.isfinite(weighted)
    # the weighted gap stays stable under refinement
    r1b = linearization.lin_dde_solve(1e-3, pert, T=12.0, dt=0.005)
    r2b = linearization.lin_dde_solve_volterra_route(1e-3, pert, T=12.0, dt=0.005)
    weighted_b = np.max(np.abs(r1b["I_tilde"] - r2b["I_tilde"])
                        * np.exp(r1b["t"] / 4.0))
    assert weighted_b <= 1.5 * weighted + 1e-9


def test_delay_solution_bounded(linearization, log_model):
    # zero profile perturbation, nonzero scalar offset: solution stays bounded
    zero = Profile.constant(0.0)
    out = linearization.lin_dde_solve(1.0, zero, T=20.0, dt=0.02)
    bound = np.max(np.abs(out["I_tilde"]))
    assert bound <= 5.0
    print(f"delay response bound C = {bound:.3f} for unit offset")


def test_delay_derivative_decays(linearization, log_model):
    xp = log_model.equilibrium_profile_interpolated()
    out = linearization.lin_dde_solve(1e-3, xp.scaled(1e-3), T=16.0, dt=0.01)
    d = np.abs(out["dI_tilde"])
    sel = d > 1e-16
    fit = fit_rate(out["t"][sel], d[sel], window=0.5)
    assert fit.rate >= 1.0 / (1.2 * 2.0)


def _sum_profile(a, b):
    def pair(y):
        va, da = a.pair_eval(y)
        vb, db = b.pair_eval(y)
        return va + vb, da + db

    return Profile(value=lambda y: pair(y)[0], deriv=lambda y: pair(y)[1],
                   descriptor="sum", pair=pair)
