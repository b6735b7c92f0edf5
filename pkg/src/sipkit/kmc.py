"""Exact event-driven simulation of the SIP with batch-means error bars.

The event loop is provided by a compiled extension when available and by a
pure-Python implementation otherwise; both give bit-identical trajectories.
Set ``SIPKIT_BACKEND=python`` to force the fallback.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import stats

from . import _kmc_py
from .errors import ParameterError
from .model import Configuration, ModelParams, enumerate_transitions

try:
    from . import _kmc_core
except ImportError:  # pragma: no cover - exercised only without a compiler
    _kmc_core = None

__all__ = [
    "RngStream",
    "SimEstimates",
    "OccupancyHistogram",
    "HotellingResult",
    "available_backends",
    "default_backend",
    "default_burn_in",
    "kmc_step",
    "run_simulation",
    "occupancy_histogram",
]

MIN_BATCHES = 20
DEFAULT_HIST_MAX = 30


def available_backends() -> list[str]:
    return (["compiled"] if _kmc_core is not None else []) + ["python"]


def default_backend() -> str:
    requested = os.environ.get("SIPKIT_BACKEND", "").strip().lower()
    if requested:
        if requested not in available_backends():
            raise ParameterError(f"backend {requested!r} unavailable; have {available_backends()}")
        return requested
    return available_backends()[0]


def _kernel(backend: str | None):
    name = backend or default_backend()
    if name == "compiled":
        if _kmc_core is None:
            raise ParameterError("compiled backend was not built")
        return _kmc_core.simulate_chain
    if name == "python":
        return _kmc_py.simulate_chain
    raise ParameterError(f"unknown backend {name!r}")


class RngStream:
    """Philox stream ``stream`` of seed ``seed``.

    Distinct stream ids are separated by ``2**128`` draws of the counter-based
    generator, so replica streams never overlap.  The stream is stateful:
    successive draws advance it.
    """

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or stream < 0:
            raise ParameterError("seed and stream must be non-negative")
        self.seed = int(seed)
        self.stream = int(stream)
        self.bit_generator = self._fresh()
        self.generator = np.random.Generator(self.bit_generator)

    def _fresh(self) -> np.random.Philox:
        return np.random.Philox(self.seed).jumped(self.stream) if self.stream else np.random.Philox(self.seed)

    def replica(self, r: int) -> "RngStream":
        """Independent stream for replica ``r`` (stream id ``self.stream + r``)."""
        return RngStream(self.seed, self.stream + r)

    def random(self) -> float:
        return float(self.generator.random())

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream={self.stream})"


def _as_stream(rng) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    if rng is None:
        return RngStream(0)
    return RngStream(int(rng))


def default_burn_in(p: ModelParams) -> float:
    """``max(10 N^2 / m, 100)``: a few diffusive relaxation times."""
    return max(10.0 * p.N**2 / p.m, 100.0)


def kmc_step(cfg: Configuration, p: ModelParams, rng: RngStream | np.random.Generator) -> tuple[Configuration, float]:
    """One jump of the chain: ``(next configuration, waiting time)``."""
    gen = rng.generator if isinstance(rng, RngStream) else rng
    transitions = enumerate_transitions(cfg, p)
    total = 0.0
    for t in transitions:
        total += t.rate
    dt = -math.log(1.0 - gen.random()) / total
    target = gen.random() * total
    acc = 0.0
    for t in transitions:
        acc += t.rate
        if target < acc:
            return t.target, dt
    return transitions[-1].target, dt


class HotellingResult(NamedTuple):
    statistic: float
    dof: int
    pvalue: float


def _hotelling(diffs: np.ndarray) -> HotellingResult:
    """Test ``E[diffs] = 0`` from iid batch rows (Hotelling T^2, F-calibrated)."""
    n, k = diffs.shape
    mean = diffs.mean(axis=0)
    cov = np.cov(diffs, rowvar=False, ddof=1).reshape(k, k)
    rank = np.linalg.matrix_rank(cov)
    if rank == 0:
        return HotellingResult(0.0 if not np.any(mean) else math.inf, 0, 1.0 if not np.any(mean) else 0.0)
    if n <= rank:
        raise ParameterError(f"need more than {rank} batches, have {n}")
    t2 = float(n * mean @ np.linalg.pinv(cov) @ mean)
    fstat = (n - rank) / (rank * (n - 1)) * t2
    return HotellingResult(t2, int(rank), float(stats.f.sf(fstat, rank, n - rank)))


@dataclass(frozen=True)
class OccupancyHistogram:
    """Time-weighted occupancy law at one site (1-based ``site``).

    ``fractions[n]`` is the fraction of time with ``n`` particles for
    ``n <= hist_max``; the last entry is the time above ``hist_max``.
    """

    site: int
    fractions: np.ndarray
    stderr: np.ndarray
    batch_fractions: np.ndarray

    @property
    def hist_max(self) -> int:
        return self.fractions.size - 2

    def chi_square(self, pmf, max_bin: int = 10, min_prob: float = 1e-3) -> HotellingResult:
        """Goodness of fit against ``pmf[0..max_bin]`` with batch-estimated covariance.

        Bins whose expected mass is below ``min_prob`` are pooled into one bin,
        which is kept only if its pooled mass reaches ``min_prob``.
        """
        pmf = np.asarray(pmf, dtype=float)[: max_bin + 1]
        obs = self.batch_fractions[:, : pmf.size]
        big = pmf >= min_prob
        cols = [obs[:, big] - pmf[big]]
        if pmf[~big].sum() >= min_prob:
            cols.append((obs[:, ~big].sum(axis=1) - pmf[~big].sum())[:, None])
        return _hotelling(np.hstack(cols))

    def compare(self, other: "OccupancyHistogram", max_bin: int = 10, min_prob: float = 1e-3) -> HotellingResult:
        """Paired test that two sites of the same run share one occupancy law."""
        if self.batch_fractions.shape != other.batch_fractions.shape:
            raise ParameterError("histograms come from different runs")
        a = self.batch_fractions[:, : max_bin + 1]
        b = other.batch_fractions[:, : max_bin + 1]
        big = (self.fractions[: max_bin + 1] + other.fractions[: max_bin + 1]) / 2 >= min_prob
        return _hotelling(a[:, big] - b[:, big])


@dataclass(frozen=True)
class SimEstimates:
    """Pooled time averages with batch-means standard errors.

    ``currents[i]`` is the net number of left-to-right jumps across the bond
    between sites ``i+1`` and ``i+2`` per unit time.  ``w1`` is the time
    average of ``(b - d)(eta_1 - eta_N)`` with ``(b, d)`` the reference rates.
    """

    params: ModelParams
    densities: np.ndarray
    density_stderr: np.ndarray
    currents: np.ndarray
    current_stderr: np.ndarray
    w1: float
    w1_stderr: float
    total_time: float
    burn_in: float
    replicas: int
    n_batches: int
    events: int
    backend: str
    batch_densities: np.ndarray = field(repr=False)
    batch_currents: np.ndarray = field(repr=False)
    batch_histograms: np.ndarray = field(repr=False)
    final_states: np.ndarray = field(repr=False)

    def histogram(self, site: int) -> OccupancyHistogram:
        if not 1 <= site <= self.params.N:
            raise ParameterError(f"site must lie in 1..{self.params.N}, got {site}")
        batches = self.batch_histograms[:, site - 1, :]
        n = batches.shape[0]
        return OccupancyHistogram(site, batches.mean(axis=0), batches.std(axis=0, ddof=1) / math.sqrt(n), batches)


def _mean_se(batches: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = batches.shape[0]
    return batches.mean(axis=0), batches.std(axis=0, ddof=1) / math.sqrt(n)


def run_simulation(
    p: ModelParams,
    total_time: float,
    burn_in: float | None = None,
    replicas: int = 1,
    rng: RngStream | int | None = None,
    n_batches: int = MIN_BATCHES,
    hist_max: int = DEFAULT_HIST_MAX,
    initial: Configuration | None = None,
    backend: str | None = None,
    workers: int = 1,
) -> SimEstimates:
    """Simulate ``replicas`` independent chains on ``[0, total_time]``.

    Each replica measures on ``[burn_in, total_time]`` split into ``n_batches``
    equal windows; all ``replicas * n_batches`` window averages are pooled as
    iid batch means.  Replica ``r`` uses stream ``rng.stream + r``.
    """
    if burn_in is None:
        burn_in = default_burn_in(p)
    if not (math.isfinite(total_time) and math.isfinite(burn_in)):
        raise ParameterError("durations must be finite")
    if not total_time > burn_in >= 0:
        raise ParameterError(f"need total_time > burn_in >= 0, got {total_time}, {burn_in}")
    if replicas < 1:
        raise ParameterError("replicas must be >= 1")
    if n_batches < 2 or replicas * n_batches < MIN_BATCHES:
        raise ParameterError(f"need at least {MIN_BATCHES} batches in total")
    if hist_max < 0:
        raise ParameterError("hist_max must be >= 0")
    start = Configuration.empty(p.N) if initial is None else initial
    p.check(start)
    base = _as_stream(rng)
    name = backend or default_backend()
    kernel = _kernel(name)
    eta0 = np.asarray(start.occupations, dtype=np.int64)

    def one(r: int):
        stream = base.replica(r)
        return kernel(eta0, p.m, p.b1, p.d1, p.bN, p.dN, float(burn_in), float(total_time),
                      int(n_batches), int(hist_max), stream.bit_generator)

    if workers > 1 and replicas > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(replicas)))
    else:
        results = [one(r) for r in range(replicas)]

    width = (total_time - burn_in) / n_batches
    dens = np.concatenate([r[1] for r in results]) / width
    cur = np.concatenate([r[2] for r in results]).astype(float) / width
    hist = np.concatenate([r[3] for r in results]) / width
    b, d = p.reference_rates
    w1_batches = (b - d) * (dens[:, 0] - dens[:, -1])
    rho, rho_se = _mean_se(dens)
    j, j_se = _mean_se(cur)
    w1, w1_se = _mean_se(w1_batches[:, None])
    return SimEstimates(
        params=p,
        densities=rho,
        density_stderr=rho_se,
        currents=j,
        current_stderr=j_se,
        w1=float(w1[0]),
        w1_stderr=float(w1_se[0]),
        total_time=float(total_time),
        burn_in=float(burn_in),
        replicas=int(replicas),
        n_batches=int(n_batches),
        events=int(sum(r[4] for r in results)),
        backend=name,
        batch_densities=dens,
        batch_currents=cur,
        batch_histograms=hist,
        final_states=np.stack([r[0] for r in results]),
    )


def occupancy_histogram(
    p: ModelParams,
    site: int,
    total_time: float,
    burn_in: float | None = None,
    rng: RngStream | int | None = None,
    replicas: int = 1,
    hist_max: int = DEFAULT_HIST_MAX,
    **kwargs,
) -> OccupancyHistogram:
    """Time-weighted occupancy distribution at ``site`` (1-based)."""
    if not 1 <= site <= p.N:
        raise ParameterError(f"site must lie in 1..{p.N}, got {site}")
    est = run_simulation(p, total_time, burn_in, replicas=replicas, rng=rng, hist_max=hist_max, **kwargs)
    return est.histogram(site)
