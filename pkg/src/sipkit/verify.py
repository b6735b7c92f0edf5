"""Consistency checks tying the analytic, exact and simulated routes together."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import analytic, exactsolve, kmc
from .model import (
    Configuration,
    ModelParams,
    TransitionKind,
    enumerate_transitions,
    generator_apply,
    local_force,
    perturbed_params,
    reverse_transition,
)


@dataclass
class Check:
    name: str
    passed: bool
    value: float | None = None
    tolerance: float | None = None
    detail: str = ""

    def as_dict(self) -> dict[str, Any]:
        return {"name": self.name, "passed": self.passed, "value": self.value,
                "tolerance": self.tolerance, "detail": self.detail}


@dataclass
class VerifyConfig:
    params: ModelParams
    b: float
    d: float
    eps: float | None
    n_max: int
    seed: int = 0
    kmc_time: float = 0.0
    kmc_replicas: int = 4
    kmc_burn_in: float | None = None
    samples: int = 200
    coefficient_offset: float = 0.0
    extra: dict[str, Any] = field(default_factory=dict)


def random_configurations(rng: np.random.Generator, count: int, max_sites: int = 6, max_occ: int = 20,
                          N: int | None = None) -> list[Configuration]:
    out = []
    for _ in range(count):
        n = N if N is not None else int(rng.integers(2, max_sites + 1))
        out.append(Configuration(tuple(int(x) for x in rng.integers(0, max_occ + 1, size=n))))
    return out


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1.0)


def check_rate_ratios(configs, m: float) -> Check:
    worst = 0.0
    for cfg in configs:
        p = ModelParams.equilibrium(len(cfg), m, 1.0, 2.0)
        for t in enumerate_transitions(cfg, p):
            if not t.kind.is_bulk:
                continue
            back = reverse_transition(t, p)
            src = t.source
            i, j = (t.bond, t.bond + 1) if t.kind is TransitionKind.BULK_RIGHT else (t.bond + 1, t.bond)
            expected = src[i] * (m + src[j]) / ((src[j] + 1) * (m + src[i] - 1))
            worst = max(worst, _rel(t.rate / back.rate, expected))
    return Check("bulk_rate_ratio", worst <= 1e-12, worst, 1e-12)


def check_local_detailed_balance(configs, b: float, d: float, m: float, eps: float) -> Check:
    theta = b / d
    worst = 0.0
    for cfg in configs:
        p = perturbed_params(b, d, eps, len(cfg), m)
        for t in enumerate_transitions(cfg, p):
            back = reverse_transition(t, p)
            du = analytic.potential_U(t.source, theta, m) - analytic.potential_U(t.target, theta, m)
            expected = math.exp(du + local_force(t, eps))
            worst = max(worst, abs(t.rate / back.rate - expected) / expected)
    return Check("local_detailed_balance", worst <= 1e-10, worst, 1e-10)


def check_generator_moments(configs, p_template: ModelParams) -> Check:
    worst = 0.0
    for cfg in configs:
        N = len(cfg)
        p = ModelParams(N, p_template.m, p_template.b1, p_template.d1, p_template.bN, p_template.dN)
        worst = max(worst, abs(generator_apply(lambda x: 1.0, cfg, p)))
        for i in range(1, N - 1):
            lhs = generator_apply(lambda x, i=i: x[i], cfg, p)
            worst = max(worst, _rel(lhs, p.m * (cfg[i - 1] + cfg[i + 1] - 2 * cfg[i])))
        lhs = generator_apply(lambda x: x[0], cfg, p)
        worst = max(worst, _rel(lhs, p.b1 * p.m + (p.b1 - p.d1 - p.m) * cfg[0] + p.m * cfg[1]))
        lhs = generator_apply(lambda x: x[-1], cfg, p)
        worst = max(worst, _rel(lhs, p.bN * p.m + (p.bN - p.dN - p.m) * cfg[-1] + p.m * cfg[-2]))
    return Check("generator_moment_closure", worst <= 1e-12, worst, 1e-12)


def identity_error(coefficients, cfg: Configuration, p: ModelParams, b: float, d: float) -> float:
    """Relative error of ``L(sum c_i eta_i)(cfg) = (b-d)(eta_1 - eta_N)``.

    The error is scaled by ``sum_t rate_t |f(y_t) - f(cfg)|``, the size of the
    terms that cancel in ``L f``, or by ``|w_1|`` when that is larger.
    """
    c = np.asarray(coefficients, dtype=float)

    def f(x):
        return float(np.dot(c, x.occupations))

    lhs = generator_apply(f, cfg, p)
    rhs = (b - d) * (cfg[0] - cfg[-1])
    f0 = f(cfg)
    scale = math.fsum(t.rate * abs(f(t.target) - f0) for t in enumerate_transitions(cfg, p))
    return abs(lhs - rhs) / max(abs(rhs), scale, 1e-300)


def check_mclennan_identity(configs, b: float, d: float, m: float, offset: float = 0.0) -> Check:
    """Pointwise ``L(sum c_i eta_i) = (b-d)(eta_1 - eta_N)`` with McLennan ``c``.

    ``offset`` is added to ``c_1``; a nonzero value must make the check fail.
    """
    worst = 0.0
    for cfg in configs:
        N = len(cfg)
        c = analytic.mclennan_coefficients(b, d, m, N).coefficients.copy()
        c[0] += offset
        worst = max(worst, identity_error(c, cfg, ModelParams.equilibrium(N, m, b, d), b, d))
    return Check("mclennan_generator_identity", worst <= 1e-12, worst, 1e-12)


def check_mclennan_equals_leq(b: float, d: float, m: float, N: int) -> Check:
    c_mc = analytic.mclennan_coefficients(b, d, m, N).coefficients
    c_leq = analytic.leq_first_order_coefficients(b, d, m, N).coefficients
    c_cf = analytic.leq_closed_form_coefficients(b, d, m, N).coefficients
    diff = float(max(np.max(np.abs(c_mc - c_leq)), np.max(np.abs(c_leq - c_cf))))
    return Check("mclennan_equals_leq", diff <= 1e-12, diff, 1e-12)


def check_truncated_detailed_balance(G: exactsolve.GeneratorMatrix, nu: exactsolve.Distribution) -> Check:
    flux = G.matrix.multiply(nu.probs[:, None]).tocsr()
    flux.setdiag(0)
    flux.eliminate_zeros()
    diff = (flux - flux.T).tocoo()
    scale = abs(flux).maximum(abs(flux.T)).tocsr()
    rel = np.abs(diff.data) / np.asarray(scale[diff.row, diff.col]).ravel() if diff.nnz else np.zeros(0)
    worst = float(rel.max()) if rel.size else 0.0
    return Check("truncated_detailed_balance", worst <= 1e-10, worst, 1e-10)


def _ratio_check(name: str, errors: list[float], target: float, rtol: float) -> Check:
    ratio = errors[0] / errors[1] if errors[1] > 0 else math.inf
    return Check(name, abs(ratio - target) <= rtol * target, ratio, rtol * target,
                 f"errors at eps=2h, h: {errors[0]:.3e}, {errors[1]:.3e}; target ratio {target}")


def dyson_checks(b: float, d: float, m: float, N: int, n_max: int, eps_pair=(0.02, 0.01)) -> tuple[list[Check], dict]:
    space = exactsolve.build_space(N, n_max)
    p0 = ModelParams.equilibrium(N, m, b, d)
    G0 = exactsolve.build_generator(space, p0)
    nu0 = exactsolve.stationary_distribution(G0)
    checks = []
    product = exactsolve.product_measure(space, b / d, m)
    diff = float(np.max(np.abs(nu0.probs - product.probs)))
    checks.append(Check("equilibrium_product_measure", diff <= 1e-10, diff, 1e-10))
    eta = space.states
    w1 = (b - d) * (eta[:, 0] - eta[:, -1]).astype(float)
    mean_w1 = exactsolve.expectation(w1, nu0)
    checks.append(Check("equilibrium_entropy_production_zero", abs(mean_w1) <= 1e-10, abs(mean_w1), 1e-10))
    gamma = exactsolve.perturbation_operator(space, p0)
    res = exactsolve.gamma_identity_residual(G0, gamma, nu0)
    checks.append(Check("gamma_adjoint_identity", res <= 1e-10, res, 1e-10))
    h1 = exactsolve.dyson_first_order(G0, nu0)
    phi = exactsolve.solve_poisson(G0, w1, nu0)
    diff = float(np.max(np.abs(h1 - phi)))
    checks.append(Check("dyson_h1_equals_poisson_w1", diff <= 1e-10, diff, 1e-10))
    stage2 = exactsolve.dyson_higher_order(G0, gamma, h1, nu0)
    h2 = stage2.h
    e1, e2 = [], []
    for eps in eps_pair:
        G = exactsolve.build_generator(space, perturbed_params(b, d, eps, N, m))
        nu = exactsolve.stationary_distribution(G)
        r = exactsolve.relative_correction(nu, nu0, eps)
        e1.append(float(nu0.probs @ np.abs(r - h1)))
        e2.append(float(nu0.probs @ np.abs(r - h1 - eps * h2)))
    checks.append(_ratio_check("finite_difference_first_order", e1, 2.0, 0.05))
    checks.append(_ratio_check("finite_difference_second_order", e2, 4.0, 0.05))
    info = {"dyson_states": space.size, "dyson_n_max": n_max, "h2_projection": stage2.projection,
            "fd_errors_first": e1, "fd_errors_second": e2}
    return checks, info


def exact_profile_check(p: ModelParams, n_max: int) -> tuple[Check, dict]:
    space = exactsolve.build_space(p.N, n_max)
    G = exactsolve.build_generator(space, p)
    nu = exactsolve.stationary_distribution(G)
    means = nu.site_means()
    prof = analytic.density_profile_general(p).densities
    diff = float(np.max(np.abs(means - prof)))
    dropped = G.weighted_dropped_rate(nu)
    tol = 1e-6
    info = {"exact_densities": means.tolist(), "residual": nu.residual, "dropped_rate": dropped,
            "states": space.size, "n_max": n_max}
    return Check("exact_profile_matches_analytic", diff <= tol, diff, tol,
                 f"weighted dropped rate {dropped:.3e}"), info


def kmc_checks(p: ModelParams, exact_means, time: float, replicas: int, seed: int,
               burn_in: float | None = None) -> tuple[list[Check], kmc.SimEstimates]:
    est = kmc.run_simulation(p, time, burn_in, replicas=replicas, rng=kmc.RngStream(seed))
    z = np.abs(est.densities - np.asarray(exact_means)) / est.density_stderr
    checks = [Check("kmc_density_matches_exact", bool(np.all(z <= 3)), float(z.max()), 3.0, "max |z| over sites")]
    flux = analytic.particle_flux(p)
    zc = np.abs(est.currents - flux) / est.current_stderr
    checks.append(Check("kmc_current_matches_flux", bool(np.all(zc <= 3)), float(zc.max()), 3.0, "max |z| over bonds"))
    if p.N > 2:
        diffs = est.batch_currents[:, 1:] - est.batch_currents[:, :1]
        n = diffs.shape[0]
        zb = np.abs(diffs.mean(axis=0)) / (diffs.std(axis=0, ddof=1) / math.sqrt(n))
        checks.append(Check("kmc_current_bond_independent", bool(np.all(zb <= 3)), float(zb.max()), 3.0))
    return checks, est


def run_battery(cfg: VerifyConfig) -> tuple[list[Check], dict]:
    """All checks for ``cfg``; KMC checks only when ``cfg.kmc_time > 0``."""
    p, b, d, m, N = cfg.params, cfg.b, cfg.d, cfg.params.m, cfg.params.N
    rng = np.random.default_rng(cfg.seed)
    configs = random_configurations(rng, cfg.samples)
    small = random_configurations(rng, 40, max_sites=5, max_occ=8)
    checks = [
        check_rate_ratios(small, m),
        check_local_detailed_balance(small, b, d, m, cfg.eps if cfg.eps else 0.05),
        check_generator_moments(configs, p),
        check_mclennan_equals_leq(b, d, m, N),
        check_mclennan_identity(configs, b, d, m, cfg.coefficient_offset),
    ]
    info: dict[str, Any] = {}

    space_db = exactsolve.build_space(N, 6) if 7**N <= exactsolve.DEFAULT_MAX_STATES else None
    if space_db is not None:
        G = exactsolve.build_generator(space_db, ModelParams.equilibrium(N, m, b, d))
        checks.append(check_truncated_detailed_balance(G, exactsolve.stationary_distribution(G)))

    dchecks, dinfo = dyson_checks(b, d, m, N, cfg.n_max)
    checks += dchecks
    info.update(dinfo)

    pcheck, pinfo = exact_profile_check(p, cfg.n_max)
    checks.append(pcheck)
    info.update(pinfo)

    if cfg.eps == 0 or p.is_equilibrium:
        beta = analytic.stationary_current(p)
        checks.append(Check("equilibrium_zero_current", abs(beta) <= 1e-14, abs(beta), 1e-14))

    if cfg.kmc_time > 0:
        kchecks, est = kmc_checks(p, pinfo["exact_densities"], cfg.kmc_time, cfg.kmc_replicas, cfg.seed,
                                  cfg.kmc_burn_in)
        checks += kchecks
        info["kmc_densities"] = est.densities.tolist()
        info["kmc_density_stderr"] = est.density_stderr.tolist()
        info["kmc_currents"] = est.currents.tolist()
        info["kmc_current_stderr"] = est.current_stderr.tolist()
        info["kmc_w1"] = est.w1
        info["kmc_w1_stderr"] = est.w1_stderr
        if cfg.eps == 0 or p.is_equilibrium:
            zw = abs(est.w1) / est.w1_stderr
            checks.append(Check("kmc_equilibrium_entropy_production_zero", zw <= 3, zw, 3.0))
    return checks, info
