"""Acceptance criteria, one test per criterion.

Each test records a ``PASS``/``FAIL`` line with the measured value and the
tolerance; the lines are printed in the pytest terminal summary and when this
file is run directly (``python3 tests/test_acceptance.py``).
"""
from __future__ import annotations

import itertools
import math
import time

import numpy as np

from sipkit import analytic, exactsolve, kmc, verify
from sipkit.model import ModelParams, perturbed_params

LINES: list[str] = []


def record(number: int, title: str, passed: bool, detail: str, started: float) -> None:
    elapsed = time.perf_counter() - started
    LINES.append(f"[{'PASS' if passed else 'FAIL'}] {number}. {title}: {detail} ({elapsed:.1f} s)")
    assert passed, detail


def test_1_mclennan_equals_leq():
    t0 = time.perf_counter()
    mc = analytic.mclennan_coefficients(1.0, 2.0, 1.0, 3).coefficients
    leq = analytic.leq_first_order_coefficients(1.0, 2.0, 1.0, 3).coefficients
    worst_example = float(max(np.max(np.abs(mc - [0.5, 0.0, -0.5])), np.max(np.abs(mc - leq))))
    worst_grid = 0.0
    for N, m, (b, d) in itertools.product(range(2, 11), (0.5, 1.0, 2.0), ((1, 2), (1, 3), (2, 5))):
        a = analytic.mclennan_coefficients(b, d, m, N).coefficients
        c = analytic.leq_first_order_coefficients(b, d, m, N).coefficients
        worst_grid = max(worst_grid, float(np.max(np.abs(a - c))))
    ok = worst_example <= 1e-12 and worst_grid <= 1e-12 and time.perf_counter() - t0 < 1.0
    record(1, "McLennan = LEQ coefficients", ok,
           f"example dev {worst_example:.1e}, grid max dev {worst_grid:.1e} (tol 1e-12)", t0)


def test_2_pointwise_generator_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    configs = verify.random_configurations(rng, 200, max_sites=6, max_occ=20)
    worst = 0.0
    for b, d, m in ((1.0, 2.0, 1.0), (1.0, 3.0, 0.5), (2.0, 5.0, 2.0)):
        for cfg in configs:
            c = analytic.mclennan_coefficients(b, d, m, len(cfg)).coefficients
            worst = max(worst, verify.identity_error(c, cfg, ModelParams.equilibrium(len(cfg), m, b, d), b, d))
    ok = worst <= 1e-12 and time.perf_counter() - t0 < 1.0
    record(2, "L(sum c_i eta_i) = w1 on 200 random configurations", ok,
           f"max relative error {worst:.1e} (tol 1e-12)", t0)


def test_3_exact_stationary_profile():
    t0 = time.perf_counter()
    b, d, m, N, eps, n_max = 1.0, 2.0, 1.0, 3, 0.05, 40
    space = exactsolve.build_space(N, n_max)
    G = exactsolve.build_generator(space, perturbed_params(b, d, eps, N, m))
    nu = exactsolve.stationary_distribution(G)
    profile = analytic.density_profile_perturbed(b, d, m, N, eps).densities
    dev = float(np.max(np.abs(nu.site_means() - profile)))
    first = float(np.max(np.abs(nu.site_means() - analytic.density_profile_weak(b, d, m, N, eps).densities)))

    G0 = exactsolve.build_generator(space, ModelParams.equilibrium(N, m, b, d))
    nu0 = exactsolve.stationary_distribution(G0)
    dev0 = float(np.max(np.abs(nu0.probs - exactsolve.product_measure(space, b / d, m).probs)))
    ok = dev <= 1e-6 and dev0 <= 1e-10 and time.perf_counter() - t0 < 30.0
    record(3, "exact stationary profile (N=3, eps=0.05, n_max=40)", ok,
           f"means vs profile {dev:.1e} (tol 1e-6; first-order formula differs by {first:.1e}), "
           f"eps=0 per-state vs product measure {dev0:.1e} (tol 1e-10)", t0)


def test_4_dyson_mclennan_finite_difference_triangle():
    t0 = time.perf_counter()
    checks, info = verify.dyson_checks(1.0, 2.0, 1.0, 3, 30, eps_pair=(0.02, 0.01))
    by = {c.name: c for c in checks}
    h1 = by["dyson_h1_equals_poisson_w1"]
    r1, r2 = by["finite_difference_first_order"], by["finite_difference_second_order"]
    ok = all(c.passed for c in (h1, r1, r2)) and time.perf_counter() - t0 < 60.0
    record(4, "Dyson / McLennan / finite-difference triangle (n_max=30)", ok,
           f"|h1 - Poisson(w1)| {h1.value:.1e} (tol 1e-10), error ratio {r1.value:.4f} (2 +- 0.1), "
           f"with h2 {r2.value:.4f} (4 +- 0.2)", t0)


def test_5_equilibrium_kmc():
    t0 = time.perf_counter()
    p = ModelParams.equilibrium(5, 1.0, 1.0, 2.0)
    est = kmc.run_simulation(p, 2e5, replicas=8, rng=kmc.RngStream(20240501))
    z_rho = float(np.max(np.abs(est.densities - 1.0) / est.density_stderr))
    z_w1 = abs(est.w1) / est.w1_stderr
    geometric = 0.5 ** (np.arange(11) + 1.0)
    pval = est.histogram(3).chi_square(geometric).pvalue
    ok = z_rho <= 3 and z_w1 <= 3 and pval > 0.01
    record(5, "equilibrium KMC (N=5, T=2e5, 8 replicas)", ok,
           f"max density |z| {z_rho:.2f}, <w1> |z| {z_w1:.2f} (tol 3), site-3 histogram p = {pval:.3f} (> 0.01)", t0)


def test_6_nonequilibrium_kmc_current():
    t0 = time.perf_counter()
    b, d, m, N, eps = 1.0, 2.0, 1.0, 5, 0.1
    D = (d - b) ** 2 * N + 2 * (d - b) * m - (d - b) ** 2
    target = 2 * b * d * m * eps / D
    p = perturbed_params(b, d, eps, N, m)
    est = kmc.run_simulation(p, 2e5, replicas=8, rng=kmc.RngStream(20240502))
    z = np.abs(est.currents - target) / est.current_stderr
    diffs = est.batch_currents[:, 1:] - est.batch_currents[:, :1]
    zb = np.abs(diffs.mean(axis=0)) / (diffs.std(axis=0, ddof=1) / math.sqrt(diffs.shape[0]))
    exact = analytic.particle_flux(p)
    ok = bool(np.all(z <= 3) and np.all(zb <= 3))
    record(6, "driven KMC current (N=5, eps=0.1)", ok,
           f"target {target:.5f} (exact-in-eps {exact:.5f}), bond currents {np.round(est.currents, 5).tolist()}, "
           f"max |z| {z.max():.2f}, bond-to-bond max |z| {zb.max():.2f} (tol 3)", t0)


def test_7_truncated_detailed_balance():
    t0 = time.perf_counter()
    space = exactsolve.build_space(3, 6)
    G = exactsolve.build_generator(space, ModelParams.equilibrium(3, 1.0, 1.0, 2.0))
    check = verify.check_truncated_detailed_balance(G, exactsolve.stationary_distribution(G))
    ok = check.passed and time.perf_counter() - t0 < 5.0
    record(7, "detailed balance on N=3, n_max=6", ok, f"max relative flux asymmetry {check.value:.1e} (tol 1e-10)", t0)


if __name__ == "__main__":
    failures = 0
    for name, fn in sorted((k, v) for k, v in list(globals().items()) if k.startswith("test_")):
        try:
            fn()
        except AssertionError:
            failures += 1
    print("\n".join(LINES))
    raise SystemExit(1 if failures else 0)
