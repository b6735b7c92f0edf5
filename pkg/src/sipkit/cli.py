"""``sipkit`` command-line interface.

Every subcommand accepts the model either as ``--b --d --eps`` (symmetric
boundary perturbation) or as four explicit rates ``--b1 --d1 --bN --dN``.
Settings are resolved as command-line flags, then a flat ``key = value``
config file (``--config``), then built-in defaults.

Reports go to ``--out`` when given, else to ``$SIPKIT_OUTPUT_DIR/<command>.<ext>``
when that variable is set, else to standard output.  CSV tables are written
with a JSON diagnostics sidecar next to them.  The exit status is 0 when all
checks of the command pass, 1 when a check fails and 2 on invalid input.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__, analytic, exactsolve, kmc, verify
from .errors import ParameterError, SIPError
from .model import ModelParams, perturbed_params
from .report import SITE_COLUMNS, Report, to_csv, to_json, write_report

OUTPUT_DIR_ENV = "SIPKIT_OUTPUT_DIR"
DEFAULT_STATE_BUDGET = 50_000
COMMANDS = ("profile", "equilibrium", "mclennan", "dyson", "solve", "simulate", "verify")
CURRENT_NOTE = (
    "slope_beta is the profile slope <eta_{i+1} - eta_i>; particle_flux = -m * slope_beta "
    "is the net number of left-to-right jumps per unit time across any bond"
)

RATE_FORM = ("b", "d", "eps")
EXPLICIT_FORM = ("b1", "d1", "bN", "dN")


@dataclass(frozen=True)
class RunConfig:
    """Resolved settings of one CLI invocation."""

    command: str
    N: int = 3
    m: float = 1.0
    b: float | None = None
    d: float | None = None
    eps: float | None = None
    b1: float | None = None
    d1: float | None = None
    bN: float | None = None
    dN: float | None = None
    nmax: int | None = None
    time: float | None = None
    burnin: float | None = None
    replicas: int = 4
    seed: int = 0
    batches: int = 20
    out: str | None = None
    format: str = "csv"
    backend: str | None = None
    first_order: bool = False
    dyson: bool = False
    corrupt_coefficients: float = 0.0

    @property
    def explicit(self) -> bool:
        return self.b1 is not None

    def params(self) -> ModelParams:
        if self.explicit:
            return ModelParams(self.N, self.m, self.b1, self.d1, self.bN, self.dN)
        return perturbed_params(self.b, self.d, self.eps, self.N, self.m)

    def reference_rates(self) -> tuple[float, float]:
        """Equilibrium ``(b, d)`` around which the first-order theory expands."""
        if not self.explicit:
            return self.b, self.d
        if self.d1 != self.dN:
            raise ParameterError("first-order quantities need d1 == dN; use the --b --d --eps form")
        return (self.b1 + self.bN) / 2, self.d1

    def eps_value(self) -> float:
        if not self.explicit:
            return self.eps
        b, _ = self.reference_rates()
        return (self.b1 - self.bN) / (2 * b)

    def echo(self) -> dict[str, Any]:
        keys = ("N", "m") + (EXPLICIT_FORM if self.explicit else RATE_FORM)
        return {k: getattr(self, k) for k in keys}


_TYPES = {"N": int, "nmax": int, "replicas": int, "seed": int, "batches": int}
_FLOAT_KEYS = ("m", "b", "d", "eps", "b1", "d1", "bN", "dN", "time", "burnin", "corrupt_coefficients")
_STR_KEYS = ("out", "format", "backend")
_BOOL_KEYS = ("first_order", "dyson")
_CONFIG_KEYS = set(_TYPES) | set(_FLOAT_KEYS) | set(_STR_KEYS) | set(_BOOL_KEYS)


def _convert(key: str, text: str):
    if key in _TYPES:
        return int(text)
    if key in _FLOAT_KEYS:
        return float(text)
    if key in _BOOL_KEYS:
        low = text.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ParameterError(f"{key}: expected a boolean, got {text!r}")
        return low in ("true", "1", "yes")
    return text


def read_config_file(path: str | Path) -> dict[str, Any]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _CONFIG_KEYS:
            raise ParameterError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _convert(key, value)
        except ValueError as exc:
            raise ParameterError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return values


def resolve_config(command: str, flags: dict[str, Any], file_values: dict[str, Any] | None = None) -> RunConfig:
    """Merge flags over config-file values over defaults and validate."""
    merged: dict[str, Any] = dict(file_values or {})
    merged.update({k: v for k, v in flags.items() if v is not None})
    has_rate = any(k in merged for k in RATE_FORM)
    has_explicit = any(k in merged for k in EXPLICIT_FORM)
    if has_rate and has_explicit:
        raise ParameterError("give either --b/--d/--eps or --b1/--d1/--bN/--dN, not both")
    if has_explicit:
        missing = [k for k in EXPLICIT_FORM if k not in merged]
        if missing:
            raise ParameterError(f"explicit rates need all of b1, d1, bN, dN; missing {', '.join(missing)}")
    else:
        merged.setdefault("b", 1.0)
        merged.setdefault("d", 2.0)
        merged.setdefault("eps", 0.0)
    names = {f.name for f in fields(RunConfig)}
    cfg = RunConfig(command=command, **{k: v for k, v in merged.items() if k in names})
    if cfg.format not in ("csv", "json"):
        raise ParameterError(f"format must be csv or json, got {cfg.format!r}")
    for key in ("replicas", "batches"):
        if getattr(cfg, key) < 1:
            raise ParameterError(f"{key} must be >= 1")
    if cfg.seed < 0:
        raise ParameterError("seed must be non-negative")
    if cfg.nmax is not None and cfg.nmax < 1:
        raise ParameterError("nmax must be >= 1")
    cfg.params()  # same predicates as the library
    return cfg


def default_nmax(p: ModelParams, budget: int = DEFAULT_STATE_BUDGET) -> int:
    """Tail cap at the largest boundary fugacity, limited to ``budget`` states."""
    theta = max(p.theta_left, p.theta_right)
    if theta >= 1:
        raise ParameterError("boundary fugacity b/d must be < 1 for a truncated solve")
    cap = exactsolve.choose_nmax(theta, p.m)
    fit = int(math.floor(budget ** (1.0 / p.N) + 1e-9)) - 1
    return max(1, min(cap, fit))


def _site_rows(N: int) -> list[dict[str, Any]]:
    return [{c: None for c in SITE_COLUMNS} | {"site": i} for i in range(1, N + 1)]


def _profile_diagnostics(prof: analytic.DensityProfile, m: float) -> dict[str, Any]:
    return {
        "alpha": prof.alpha,
        "slope_beta": prof.beta,
        "particle_flux": -m * prof.beta,
        "current_note": CURRENT_NOTE,
    }


def cmd_profile(cfg: RunConfig) -> Report:
    p = cfg.params()
    if cfg.first_order:
        b, d = cfg.reference_rates()
        prof = analytic.density_profile_weak(b, d, p.m, p.N, cfg.eps_value())
        method = "first_order"
    else:
        prof = analytic.density_profile_general(p)
        method = "exact_linear"
    rows = _site_rows(p.N)
    for row, rho in zip(rows, prof.densities):
        row["analytic_density"] = float(rho)
    diag = {"params": cfg.echo(), "method": method} | _profile_diagnostics(prof, p.m)
    return Report("profile", SITE_COLUMNS, rows, diag)


def cmd_equilibrium(cfg: RunConfig) -> Report:
    p = cfg.params()
    if not p.is_equilibrium:
        raise ParameterError("equilibrium needs b1/d1 == bN/dN")
    marg = analytic.EquilibriumMarginal(p.theta_left, p.m)
    n_top = cfg.nmax if cfg.nmax is not None else marg.tail_cap(1e-12)
    n = np.arange(n_top + 1)
    pmf = marg.pmf(n)
    rows = [{"n": int(k), "pmf": float(q), "potential": float(v)} for k, q, v in zip(n, pmf, marg.potential(n))]
    diag = {
        "params": cfg.echo(),
        "theta": marg.theta,
        "partition_function": marg.partition,
        "mean_occupancy": marg.mean,
        "tail_mass": float(max(0.0, 1.0 - math.fsum(pmf))),
    }
    return Report("equilibrium", ("n", "pmf", "potential"), rows, diag)


def cmd_mclennan(cfg: RunConfig) -> Report:
    p = cfg.params()
    b, d = cfg.reference_rates()
    mc = analytic.mclennan_coefficients(b, d, p.m, p.N)
    rng = np.random.default_rng(cfg.seed)
    configs = verify.random_configurations(rng, 200)
    checks = [
        verify.check_mclennan_identity(configs, b, d, p.m, cfg.corrupt_coefficients),
        verify.check_mclennan_equals_leq(b, d, p.m, p.N),
    ]
    rows = _site_rows(p.N)
    for row, c in zip(rows, mc.coefficients):
        row["coefficient"] = float(c)
    diag: dict[str, Any] = {"params": cfg.echo(), "A": mc.A, "B": mc.B,
                            "checks": [c.as_dict() for c in checks]}
    if math.isclose(d, b + p.m, rel_tol=1e-12):
        i = np.arange(1, p.N + 1)
        diag["special_case_d_equals_b_plus_m"] = (1 - 2 * i / (p.N + 1)).tolist()
    return Report("mclennan", SITE_COLUMNS, rows, diag, all(c.passed for c in checks))


def _nmax(cfg: RunConfig, p: ModelParams) -> int:
    return cfg.nmax if cfg.nmax is not None else default_nmax(p)


def cmd_dyson(cfg: RunConfig) -> Report:
    p = cfg.params()
    b, d = cfg.reference_rates()
    n_max = _nmax(cfg, ModelParams.equilibrium(p.N, p.m, b, d))
    checks, info = verify.dyson_checks(b, d, p.m, p.N, n_max)
    c = analytic.mclennan_coefficients(b, d, p.m, p.N).coefficients
    rows = _site_rows(p.N)
    for row, ci in zip(rows, c):
        row["coefficient"] = float(ci)
    diag = {"params": cfg.echo(), "checks": [ch.as_dict() for ch in checks]} | info
    return Report("dyson", SITE_COLUMNS, rows, diag, all(ch.passed for ch in checks))


def cmd_solve(cfg: RunConfig) -> Report:
    p = cfg.params()
    n_max = _nmax(cfg, p)
    check, info = verify.exact_profile_check(p, n_max)
    checks = [check]
    rows = _site_rows(p.N)
    prof = analytic.density_profile_general(p)
    for row, rho, ex in zip(rows, prof.densities, info["exact_densities"]):
        row["analytic_density"] = float(rho)
        row["exact_density"] = float(ex)
    diag = {"params": cfg.echo()} | info | _profile_diagnostics(prof, p.m)
    if cfg.dyson:
        b, d = cfg.reference_rates()
        dchecks, dinfo = verify.dyson_checks(b, d, p.m, p.N, n_max)
        checks += dchecks
        diag["dyson"] = dinfo
    diag["checks"] = [c.as_dict() for c in checks]
    return Report("solve", SITE_COLUMNS, rows, diag, all(c.passed for c in checks))


def _default_time(p: ModelParams) -> float:
    return max(2e4, 10.0 * kmc.default_burn_in(p))


def cmd_simulate(cfg: RunConfig) -> Report:
    p = cfg.params()
    time = cfg.time if cfg.time is not None else _default_time(p)
    est = kmc.run_simulation(p, time, cfg.burnin, replicas=cfg.replicas, rng=kmc.RngStream(cfg.seed),
                             n_batches=cfg.batches, backend=cfg.backend)
    rows = _site_rows(p.N)
    prof = analytic.density_profile_general(p) if p.has_finite_density or p.is_equilibrium else None
    for i, row in enumerate(rows):
        row["kmc_density"] = float(est.densities[i])
        row["kmc_stderr"] = float(est.density_stderr[i])
        if prof is not None:
            row["analytic_density"] = float(prof.densities[i])
    bonds = [
        {"bond": f"{i + 1}-{i + 2}", "current": float(est.currents[i]), "stderr": float(est.current_stderr[i])}
        for i in range(p.N - 1)
    ]
    diag: dict[str, Any] = {
        "params": cfg.echo(),
        "seed": cfg.seed,
        "total_time": est.total_time,
        "burn_in": est.burn_in,
        "replicas": est.replicas,
        "batches_per_replica": est.n_batches,
        "events": est.events,
        "bonds": bonds,
        "w1": est.w1,
        "w1_stderr": est.w1_stderr,
    }
    if prof is not None:
        diag |= _profile_diagnostics(prof, p.m)
    return Report("simulate", SITE_COLUMNS, rows, diag)


VERIFY_COLUMNS = ("check", "passed", "value", "tolerance", "detail")


def cmd_verify(cfg: RunConfig) -> Report:
    p = cfg.params()
    b, d = cfg.reference_rates()
    vcfg = verify.VerifyConfig(
        params=p,
        b=b,
        d=d,
        eps=cfg.eps_value(),
        n_max=_nmax(cfg, p),
        seed=cfg.seed,
        kmc_time=cfg.time if cfg.time is not None else _default_time(p),
        kmc_replicas=cfg.replicas,
        kmc_burn_in=cfg.burnin,
        coefficient_offset=cfg.corrupt_coefficients,
    )
    checks, info = verify.run_battery(vcfg)
    rows = [{"check": c.name, "passed": c.passed, "value": c.value, "tolerance": c.tolerance,
             "detail": c.detail or None} for c in checks]
    diag = {"params": cfg.echo(), "n_max": vcfg.n_max, "seed": cfg.seed,
            "failed": [c.name for c in checks if not c.passed]} | info
    return Report("verify", VERIFY_COLUMNS, rows, diag, all(c.passed for c in checks))


HANDLERS = {
    "profile": cmd_profile,
    "equilibrium": cmd_equilibrium,
    "mclennan": cmd_mclennan,
    "dyson": cmd_dyson,
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}

HELP = {
    "profile": "analytic stationary density profile",
    "equilibrium": "single-site equilibrium marginal",
    "mclennan": "first-order McLennan coefficients with identity checks",
    "dyson": "Dyson corrections h1, h2 on a truncated box with finite-difference checks",
    "solve": "exact stationary law on a truncated box",
    "simulate": "kinetic Monte Carlo estimates",
    "verify": "full consistency battery",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("model")
    g.add_argument("--N", type=int, help="number of sites (default 3)")
    g.add_argument("--m", type=float, help="diffusion strength (default 1)")
    g.add_argument("--b", type=float, help="reference birth rate (default 1)")
    g.add_argument("--d", type=float, help="reference death rate (default 2)")
    g.add_argument("--eps", type=float, help="boundary perturbation, b1 = b(1+eps), bN = b(1-eps) (default 0)")
    for name in EXPLICIT_FORM:
        g.add_argument(f"--{name}", type=float, help=f"explicit reservoir rate {name}")
    r = common.add_argument_group("run")
    r.add_argument("--nmax", type=int, help="per-site occupation cap for exact solves")
    r.add_argument("--time", type=float, help="simulated time per replica")
    r.add_argument("--burnin", type=float, help="discarded initial time per replica")
    r.add_argument("--replicas", type=int, help="independent replicas (default 4)")
    r.add_argument("--seed", type=int, help="random seed (default 0)")
    r.add_argument("--batches", type=int, help="batches per replica (default 20)")
    r.add_argument("--backend", choices=kmc.available_backends(), help="simulation kernel")
    o = common.add_argument_group("output")
    o.add_argument("--out", help="output file")
    o.add_argument("--format", choices=("csv", "json"), help="output format (default csv)")
    o.add_argument("--config", help="flat key = value settings file")
    o.add_argument("--corrupt-coefficients", dest="corrupt_coefficients", type=float, help=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="sipkit", description="Boundary-driven symmetric inclusion process.")
    parser.add_argument("--version", action="version", version=f"sipkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common], help=HELP[name], description=HELP[name])
        if name == "profile":
            sp.add_argument("--first-order", dest="first_order", action="store_true", default=None,
                            help="use the first-order expansion in eps")
        if name == "solve":
            sp.add_argument("--dyson", action="store_true", default=None,
                            help="add Dyson h1/h2 finite-difference checks")
    return parser


def _destination(cfg: RunConfig) -> Path | None:
    if cfg.out:
        return Path(cfg.out)
    folder = os.environ.get(OUTPUT_DIR_ENV)
    if folder:
        return Path(folder) / f"{cfg.command}.{cfg.format}"
    return None


def emit(report: Report, cfg: RunConfig, stdout=None) -> list[Path]:
    stdout = stdout or sys.stdout
    report.diagnostics.setdefault("version", __version__)
    dest = _destination(cfg)
    if dest is not None:
        return write_report(report, dest, cfg.format)
    stdout.write(to_json(report) if cfg.format == "json" else to_csv(report))
    return []


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        file_values = read_config_file(args.config) if args.config else None
        cfg = resolve_config(args.command, flags, file_values)
        report = HANDLERS[cfg.command](cfg)
        paths = emit(report, cfg)
    except (SIPError, OSError) as exc:
        print(f"sipkit {args.command}: error: {exc}", file=sys.stderr)
        return 2
    for path in paths:
        print(f"wrote {path}", file=sys.stderr)
    if not report.passed:
        failed = [c["name"] for c in report.diagnostics.get("checks", []) if not c["passed"]]
        failed = failed or report.diagnostics.get("failed", [])
        print(f"sipkit {cfg.command}: FAILED {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
