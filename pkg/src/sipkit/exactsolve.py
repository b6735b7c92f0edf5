"""Master-equation solves on the truncated box ``{0..n_max}^N``.

The generator is stored as a sparse matrix ``G`` acting on functions,
``(G f)(x) = sum_y rate(x, y) (f(y) - f(x))``; the forward (master-equation)
operator on measures is ``G.T``.  Jumps that would leave the box are dropped
and their rate is kept per state as a truncation diagnostic, so ``G`` stays a
proper conservative rate matrix on the box.

Both singular systems (``G.T nu = 0`` and ``G phi = f``) are solved by pinning
one unknown at the empty configuration, which removes the rank-one deficiency
while keeping the matrix sparse; one LU factorization serves both.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .analytic import EquilibriumMarginal, marginal_logpmf
from .errors import ParameterError, SolvabilityError, SolverError, StateSpaceTooLarge
from .model import Configuration, ModelParams

__all__ = [
    "TruncatedSpace",
    "GeneratorMatrix",
    "Distribution",
    "DysonStage",
    "build_space",
    "build_generator",
    "choose_nmax",
    "product_measure",
    "stationary_distribution",
    "expectation",
    "solve_poisson",
    "perturbation_operator",
    "gamma_identity_residual",
    "dyson_first_order",
    "dyson_higher_order",
    "dyson_series",
]

DEFAULT_MAX_STATES = 2_000_000
SOLVABILITY_TOL = 1e-8
RESIDUAL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class TruncatedSpace:
    """All configurations with ``eta_i <= n_max``, in row-major (C) order."""

    N: int
    n_max: int
    max_states: int = DEFAULT_MAX_STATES

    def __post_init__(self):
        if self.N < 2:
            raise ParameterError(f"N must be >= 2, got {self.N}")
        if self.n_max < 1:
            raise ParameterError(f"n_max must be >= 1, got {self.n_max}")
        size = (self.n_max + 1) ** self.N
        if size > np.iinfo(np.int64).max:
            raise StateSpaceTooLarge(f"(n_max+1)^N = {size} overflows the index type")
        if size > self.max_states:
            raise StateSpaceTooLarge(f"{size} states exceeds the budget of {self.max_states}")

    @property
    def size(self) -> int:
        return (self.n_max + 1) ** self.N

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_max + 1,) * self.N

    @functools.cached_property
    def strides(self) -> np.ndarray:
        return (self.n_max + 1) ** np.arange(self.N - 1, -1, -1, dtype=np.int64)

    @functools.cached_property
    def states(self) -> np.ndarray:
        """``(size, N)`` int64 array; row ``k`` is the state with index ``k``."""
        grid = np.indices(self.shape, dtype=np.int64).reshape(self.N, -1).T
        grid.setflags(write=False)
        return grid

    def index(self, cfg) -> int:
        eta = np.asarray(cfg.occupations if isinstance(cfg, Configuration) else cfg, dtype=np.int64)
        if eta.shape != (self.N,) or np.any(eta < 0) or np.any(eta > self.n_max):
            raise ParameterError(f"{tuple(eta)} is not in the box")
        return int(eta @ self.strides)

    def state(self, k: int) -> Configuration:
        return Configuration(tuple(int(x) for x in self.states[k]))

    def interior_mask(self, margin: int) -> np.ndarray:
        """States with every occupation ``<= margin``."""
        return np.all(self.states <= margin, axis=1)


def build_space(N: int, n_max: int, max_states: int = DEFAULT_MAX_STATES) -> TruncatedSpace:
    return TruncatedSpace(N, n_max, max_states)


def choose_nmax(theta: float, m: float, tol: float = 1e-12) -> int:
    """Smallest single-site cap whose equilibrium tail mass at ``theta`` is below ``tol``.

    For driven runs pass the largest boundary fugacity, ``max(b1/d1, bN/dN)``.
    """
    return EquilibriumMarginal(theta, m).tail_cap(tol)


class _PinnedLU:
    """LU of ``G`` with row and column ``pin`` removed."""

    def __init__(self, G: sp.csr_matrix, pin: int):
        n = G.shape[0]
        keep = np.ones(n, dtype=bool)
        keep[pin] = False
        self.pin = pin
        self.keep = keep
        A = G[keep][:, keep].tocsc()
        try:
            # -A is a nonsingular M-matrix: diagonal pivots are stable
            self.lu = spla.splu(
                A,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
        except RuntimeError as exc:
            raise SolverError(f"sparse factorization failed: {exc}") from exc
        self.pin_row = np.asarray(G[pin, keep].todense()).ravel()

    def solve(self, rhs: np.ndarray, trans: str = "N") -> np.ndarray:
        return self.lu.solve(np.ascontiguousarray(rhs), trans=trans)


@dataclass(eq=False)
class GeneratorMatrix:
    """Sparse rate matrix on a truncated box."""

    space: TruncatedSpace
    params: ModelParams
    matrix: sp.csr_matrix
    dropped_rate: np.ndarray
    truncated: bool = field(init=False)

    def __post_init__(self):
        self.truncated = bool(np.any(self.dropped_rate > 0))

    @property
    def size(self) -> int:
        return self.space.size

    @functools.cached_property
    def _lu(self) -> _PinnedLU:
        return _PinnedLU(self.matrix, pin=0)

    def weighted_dropped_rate(self, nu: "Distribution | np.ndarray") -> float:
        probs = nu.probs if isinstance(nu, Distribution) else np.asarray(nu)
        return float(probs @ self.dropped_rate)

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.matrix @ f

    def forward(self, mu: np.ndarray) -> np.ndarray:
        return self.matrix.T @ mu


def _moves(space: TruncatedSpace, p: ModelParams):
    """Yield ``(rate, delta_index, in_box)`` arrays for every transition slot."""
    eta = space.states
    s = space.strides
    n_max, m = space.n_max, p.m
    for i in range(p.N - 1):
        a, c = eta[:, i], eta[:, i + 1]
        yield a * (m + c), s[i + 1] - s[i], c < n_max
        yield c * (m + a), s[i] - s[i + 1], a < n_max
    first, last = eta[:, 0], eta[:, -1]
    yield p.b1 * (m + first), s[0], first < n_max
    yield p.d1 * first, -s[0], np.ones_like(first, dtype=bool)
    yield p.bN * (m + last), s[-1], last < n_max
    yield p.dN * last, -s[-1], np.ones_like(last, dtype=bool)


def _assemble(space: TruncatedSpace, slots) -> tuple[sp.csr_matrix, np.ndarray]:
    n = space.size
    idx = np.arange(n, dtype=np.int64)
    rows, cols, vals = [], [], []
    dropped = np.zeros(n)
    for rate, delta, inside in slots:
        rate = np.asarray(rate, dtype=float)
        live = rate != 0
        keep = live & inside
        rows.append(idx[keep])
        cols.append(idx[keep] + delta)
        vals.append(rate[keep])
        dropped += np.where(live & ~inside, np.abs(rate), 0.0)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    off = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return (off + sp.diags(diag)).tocsr(), dropped


def build_generator(space: TruncatedSpace, p: ModelParams) -> GeneratorMatrix:
    """Rate matrix of the SIP restricted to ``space``."""
    if space.N != p.N:
        raise ParameterError(f"space has N={space.N}, params have N={p.N}")
    matrix, dropped = _assemble(space, _moves(space, p))
    return GeneratorMatrix(space, p, matrix, dropped)


@dataclass(frozen=True, eq=False)
class Distribution:
    """Probability vector over a truncated space."""

    space: TruncatedSpace
    probs: np.ndarray
    residual: float = 0.0

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.shape != (self.space.size,):
            raise ParameterError("probability vector does not match the space")
        if np.any(probs < -1e-15) or abs(probs.sum() - 1.0) > 1e-12:
            raise SolverError("not a probability vector")
        object.__setattr__(self, "probs", probs)

    def site_means(self) -> np.ndarray:
        return self.space.states.T @ self.probs

    def __getitem__(self, cfg) -> float:
        return float(self.probs[self.space.index(cfg)])


def product_measure(space: TruncatedSpace, thetas, m: float) -> Distribution:
    """Product of single-site marginals, renormalized over the box."""
    thetas = np.broadcast_to(np.asarray(thetas, dtype=float), (space.N,))
    n = np.arange(space.n_max + 1)
    logp = np.zeros(space.size)
    for i, t in enumerate(thetas):
        logp += marginal_logpmf(float(t), m, n)[space.states[:, i]]
    probs = np.exp(logp - logp.max())
    return Distribution(space, probs / probs.sum())


def stationary_distribution(G: GeneratorMatrix, tol: float = RESIDUAL_TOL) -> Distribution:
    """Unique ``nu`` with ``G.T nu = 0`` and ``sum(nu) = 1``.

    ``nu`` at the empty state is fixed to one, its balance equation is dropped
    (it is implied by the others), the remaining sparse system is solved
    directly and the result normalized.
    """
    lu = G._lu
    rhs = -lu.pin_row
    rest = lu.solve(rhs, trans="T")
    nu = np.empty(G.size)
    nu[lu.pin] = 1.0
    nu[lu.keep] = rest
    if not np.all(np.isfinite(nu)):
        raise SolverError("stationary solve produced non-finite values")
    nu /= nu.sum()
    nu = np.clip(nu, 0.0, None)
    nu /= nu.sum()
    residual = float(np.max(np.abs(G.forward(nu))))
    if residual > tol:
        raise SolverError(f"stationarity residual {residual:.3e} exceeds {tol:.1e}")
    return Distribution(G.space, nu, residual)


def _values(f, space: TruncatedSpace) -> np.ndarray:
    if callable(f):
        return np.array([f(Configuration(tuple(int(x) for x in row))) for row in space.states], dtype=float)
    values = np.asarray(f, dtype=float)
    if values.shape != (space.size,):
        raise ParameterError("function values do not match the space")
    return values


def expectation(f: Callable[[Configuration], float] | np.ndarray, nu: Distribution) -> float:
    """``sum_x f(x) nu(x)``; ``f`` is a callable on configurations or a value vector."""
    return float(_values(f, nu.space) @ nu.probs)


def solve_poisson(
    G: GeneratorMatrix,
    f: np.ndarray,
    nu: Distribution,
    tol: float = SOLVABILITY_TOL,
) -> np.ndarray:
    """Solve ``G phi = f`` with the gauge ``<phi>_nu = 0``.

    ``f`` must be centred under ``nu``; a mean larger than ``tol`` (relative to
    ``max|f|``) raises :class:`SolvabilityError`.
    """
    f = _values(f, G.space)
    scale = max(1.0, float(np.max(np.abs(f))))
    mean = float(f @ nu.probs)
    if abs(mean) > tol * scale:
        raise SolvabilityError(f"<f>_nu = {mean:.3e}; the equation G phi = f has no solution")
    if not np.any(f):
        return np.zeros(G.size)
    lu = G._lu
    phi = np.zeros(G.size)
    phi[lu.keep] = lu.solve(f[lu.keep])
    phi -= phi @ nu.probs
    # the pinned equation is implied by the others only up to the mean of f
    residual = float(np.max(np.abs(G.apply(phi) - f)[lu.keep]))
    if residual > 1e-8 * scale:
        raise SolverError(f"Poisson residual {residual:.3e} too large")
    return phi


def _equilibrium_rates(p: ModelParams) -> tuple[float, float]:
    if not (p.b1 == p.bN and p.d1 == p.dN):
        raise ParameterError("the reference generator must have identical reservoirs")
    return p.b1, p.d1


def perturbation_operator(space: TruncatedSpace, p_eq: ModelParams) -> sp.csr_matrix:
    """Derivative in ``eps`` of the +-eps generator, restricted to the box.

    ``(Gamma f)(x) = b(m+eta_1)(f(x^{1+}) - f(x)) - b(m+eta_N)(f(x^{N+}) - f(x))``.
    """
    b, _ = _equilibrium_rates(p_eq)
    eta = space.states
    s, n_max, m = space.strides, space.n_max, p_eq.m
    slots = [
        (b * (m + eta[:, 0]), s[0], eta[:, 0] < n_max),
        (-b * (m + eta[:, -1]), s[-1], eta[:, -1] < n_max),
    ]
    matrix, _ = _assemble(space, slots)
    return matrix


def gamma_identity_residual(G0: GeneratorMatrix, gamma: sp.csr_matrix, nu0: Distribution) -> float:
    """Largest relative deviation of ``Gamma* rho0`` from ``(b-d)(eta_N - eta_1) rho0``.

    Only states whose boundary births stay inside the box are compared.
    """
    b, d = _equilibrium_rates(G0.params)
    eta = G0.space.states
    rho0 = nu0.probs
    lhs = gamma.T @ rho0
    rhs = (b - d) * (eta[:, -1] - eta[:, 0]) * rho0
    inner = (eta[:, 0] < G0.space.n_max) & (eta[:, -1] < G0.space.n_max)
    scale = b * (2 * G0.params.m + eta[:, 0] + eta[:, -1] + 1) * rho0
    return float(np.max(np.abs(lhs - rhs)[inner] / scale[inner]))


def dyson_first_order(G0: GeneratorMatrix, nu0: Distribution | None = None, tol: float = 1e-10) -> np.ndarray:
    """First-order correction ``h1`` with ``nu_eps = nu0 (1 + eps h1) + O(eps^2)``.

    Checks the adjoint identity for ``Gamma* rho0`` and then solves
    ``G0 h1 = (b - d)(eta_1 - eta_N)`` in the zero-mean gauge.
    """
    b, d = _equilibrium_rates(G0.params)
    if nu0 is None:
        nu0 = stationary_distribution(G0)
    gamma = perturbation_operator(G0.space, G0.params)
    res = gamma_identity_residual(G0, gamma, nu0)
    if res > tol:
        raise SolverError(f"Gamma* rho0 identity fails on interior states (residual {res:.3e})")
    eta = G0.space.states
    w1 = (b - d) * (eta[:, 0] - eta[:, -1]).astype(float)
    return solve_poisson(G0, w1, nu0)


class DysonStage(NamedTuple):
    h: np.ndarray
    projection: float


def dyson_higher_order(
    G0: GeneratorMatrix,
    gamma: sp.csr_matrix,
    h_prev: np.ndarray,
    nu0: Distribution,
    tol: float = SOLVABILITY_TOL,
) -> DysonStage:
    """Next term ``h_k = -(1/rho0) (L0*)^{-1} Gamma*(rho0 h_{k-1})`` of the Dyson series.

    Uses reversibility of the box generator, ``L0*(rho0 h) = rho0 L0 h``, so the
    stage reduces to a Poisson solve.  The source is centred before solving and
    the removed mean is returned as ``projection``.
    """
    rho0 = nu0.probs
    if np.any(rho0 <= 0):
        raise SolverError("reference measure underflows; reduce n_max")
    source = -(gamma.T @ (rho0 * h_prev)) / rho0
    projection = float(source @ rho0)
    scale = max(1.0, float(np.max(np.abs(source))))
    if abs(projection) > tol * scale:
        raise SolvabilityError(f"Dyson stage source has mean {projection:.3e}")
    h = solve_poisson(G0, source - projection, nu0)
    return DysonStage(h, projection)


def dyson_series(G0: GeneratorMatrix, order: int, nu0: Distribution | None = None) -> list[DysonStage]:
    """``[h_1, ..., h_order]``; ``h_1`` from :func:`dyson_first_order`."""
    if order < 1:
        raise ParameterError("order must be >= 1")
    if nu0 is None:
        nu0 = stationary_distribution(G0)
    gamma = perturbation_operator(G0.space, G0.params)
    stages = [DysonStage(dyson_first_order(G0, nu0), 0.0)]
    for _ in range(order - 1):
        stages.append(dyson_higher_order(G0, gamma, stages[-1].h, nu0))
    return stages


def relative_correction(nu_eps: Distribution, nu0: Distribution, eps: float) -> np.ndarray:
    """Finite-difference estimate ``(nu_eps - nu0) / (eps nu0)``."""
    if eps == 0 or not math.isfinite(eps):
        raise ParameterError("eps must be nonzero")
    return (nu_eps.probs - nu0.probs) / (eps * nu0.probs)
