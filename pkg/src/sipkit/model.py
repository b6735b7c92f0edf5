"""State space, parameters and jump structure of the boundary-driven SIP.

Sites are numbered ``0 .. N-1`` internally; the left reservoir is attached
to site ``0`` and the right reservoir to site ``N-1``.  Bulk transitions are
labelled by the bond index ``i`` joining sites ``i`` and ``i+1``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

from .errors import ParameterError

__all__ = [
    "Configuration",
    "ModelParams",
    "TransitionKind",
    "Transition",
    "enumerate_transitions",
    "reverse_transition",
    "escape_rate",
    "generator_apply",
    "perturbed_params",
    "local_force_F1",
    "local_force",
    "entropy_production_w1",
]

# occupations are stored as Python ints; this cap mirrors the int64 storage
# used by the simulation kernels
MAX_OCCUPATION = 2**62


@dataclass(frozen=True)
class Configuration:
    """Occupation numbers ``eta = (eta_1, ..., eta_N)``."""

    occupations: tuple[int, ...]

    def __post_init__(self):
        occ = tuple(int(x) for x in self.occupations)
        if any(x < 0 for x in occ):
            raise ParameterError(f"negative occupation in {occ}")
        object.__setattr__(self, "occupations", occ)

    @classmethod
    def of(cls, *occupations: int) -> "Configuration":
        return cls(tuple(occupations))

    @classmethod
    def empty(cls, N: int) -> "Configuration":
        return cls((0,) * N)

    def __len__(self) -> int:
        return len(self.occupations)

    def __getitem__(self, i: int) -> int:
        return self.occupations[i]

    def __iter__(self) -> Iterator[int]:
        return iter(self.occupations)

    @property
    def total(self) -> int:
        return sum(self.occupations)

    def added(self, i: int) -> "Configuration":
        occ = list(self.occupations)
        if occ[i] + 1 >= MAX_OCCUPATION:
            raise OverflowError(f"occupation at site {i} overflows")
        occ[i] += 1
        return Configuration(tuple(occ))

    def removed(self, i: int) -> "Configuration":
        occ = list(self.occupations)
        occ[i] -= 1
        return Configuration(tuple(occ))

    def moved(self, src: int, dst: int) -> "Configuration":
        occ = list(self.occupations)
        occ[src] -= 1
        occ[dst] += 1
        return Configuration(tuple(occ))


@dataclass(frozen=True)
class ModelParams:
    """Site count ``N``, inclusion parameter ``m`` and the four reservoir rates."""

    N: int
    m: float
    b1: float
    d1: float
    bN: float
    dN: float

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise ParameterError(f"N must be an integer >= 2, got {self.N!r}")
        object.__setattr__(self, "N", int(self.N))
        for name in ("m", "b1", "d1", "bN", "dN"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value <= 0:
                raise ParameterError(f"{name} must be a positive finite number, got {value!r}")
            object.__setattr__(self, name, value)

    @classmethod
    def equilibrium(cls, N: int, m: float, b: float, d: float) -> "ModelParams":
        return cls(N, m, b, d, b, d)

    @property
    def theta_left(self) -> float:
        return self.b1 / self.d1

    @property
    def theta_right(self) -> float:
        return self.bN / self.dN

    @property
    def is_equilibrium(self) -> bool:
        return math.isclose(self.theta_left, self.theta_right, rel_tol=1e-14, abs_tol=0.0)

    @property
    def has_finite_density(self) -> bool:
        return self.theta_left < 1 and self.theta_right < 1

    @property
    def reference_rates(self) -> tuple[float, float]:
        """``(b, d)`` of the unperturbed reservoirs (midpoints of the two boundaries)."""
        return 0.5 * (self.b1 + self.bN), 0.5 * (self.d1 + self.dN)

    def check(self, cfg: Configuration) -> None:
        if len(cfg) != self.N:
            raise ParameterError(f"configuration has {len(cfg)} sites, model has N={self.N}")


class TransitionKind(enum.Enum):
    BULK_RIGHT = "bulk-right"
    BULK_LEFT = "bulk-left"
    BIRTH_LEFT = "birth-left"
    DEATH_LEFT = "death-left"
    BIRTH_RIGHT = "birth-right"
    DEATH_RIGHT = "death-right"

    @property
    def is_bulk(self) -> bool:
        return self in (TransitionKind.BULK_RIGHT, TransitionKind.BULK_LEFT)


_REVERSE_KIND = {
    TransitionKind.BULK_RIGHT: TransitionKind.BULK_LEFT,
    TransitionKind.BULK_LEFT: TransitionKind.BULK_RIGHT,
    TransitionKind.BIRTH_LEFT: TransitionKind.DEATH_LEFT,
    TransitionKind.DEATH_LEFT: TransitionKind.BIRTH_LEFT,
    TransitionKind.BIRTH_RIGHT: TransitionKind.DEATH_RIGHT,
    TransitionKind.DEATH_RIGHT: TransitionKind.BIRTH_RIGHT,
}

_F1 = {
    TransitionKind.BIRTH_LEFT: 1,
    TransitionKind.DEATH_LEFT: -1,
    TransitionKind.BIRTH_RIGHT: -1,
    TransitionKind.DEATH_RIGHT: 1,
}


@dataclass(frozen=True)
class Transition:
    """A single jump ``source -> target`` with its rate.

    ``bond`` is the bond index for bulk moves and ``None`` for reservoir moves.
    """

    kind: TransitionKind
    source: Configuration
    target: Configuration
    rate: float
    bond: int | None = None


def _rate(kind: TransitionKind, cfg: Configuration, p: ModelParams, bond: int | None) -> float:
    m = p.m
    if kind is TransitionKind.BULK_RIGHT:
        return cfg[bond] * (m + cfg[bond + 1])
    if kind is TransitionKind.BULK_LEFT:
        return cfg[bond + 1] * (m + cfg[bond])
    if kind is TransitionKind.BIRTH_LEFT:
        return p.b1 * (m + cfg[0])
    if kind is TransitionKind.DEATH_LEFT:
        return p.d1 * cfg[0]
    if kind is TransitionKind.BIRTH_RIGHT:
        return p.bN * (m + cfg[-1])
    return p.dN * cfg[-1]


def _target(kind: TransitionKind, cfg: Configuration, bond: int | None) -> Configuration:
    if kind is TransitionKind.BULK_RIGHT:
        return cfg.moved(bond, bond + 1)
    if kind is TransitionKind.BULK_LEFT:
        return cfg.moved(bond + 1, bond)
    if kind is TransitionKind.BIRTH_LEFT:
        return cfg.added(0)
    if kind is TransitionKind.DEATH_LEFT:
        return cfg.removed(0)
    if kind is TransitionKind.BIRTH_RIGHT:
        return cfg.added(len(cfg) - 1)
    return cfg.removed(len(cfg) - 1)


def enumerate_transitions(cfg: Configuration, p: ModelParams) -> list[Transition]:
    """All jumps out of ``cfg`` with strictly positive rate.

    Order: bulk right moves by bond, bulk left moves by bond, then
    birth-left, death-left, birth-right, death-right.
    """
    p.check(cfg)
    out = []
    slots = [(TransitionKind.BULK_RIGHT, i) for i in range(p.N - 1)]
    slots += [(TransitionKind.BULK_LEFT, i) for i in range(p.N - 1)]
    slots += [
        (TransitionKind.BIRTH_LEFT, None),
        (TransitionKind.DEATH_LEFT, None),
        (TransitionKind.BIRTH_RIGHT, None),
        (TransitionKind.DEATH_RIGHT, None),
    ]
    for kind, bond in slots:
        rate = _rate(kind, cfg, p, bond)
        if rate > 0:
            out.append(Transition(kind, cfg, _target(kind, cfg, bond), rate, bond))
    return out


def reverse_transition(t: Transition, p: ModelParams) -> Transition:
    """The jump ``target -> source``, with its rate under ``p``."""
    kind = _REVERSE_KIND[t.kind]
    return Transition(kind, t.target, t.source, _rate(kind, t.target, p, t.bond), t.bond)


def escape_rate(cfg: Configuration, p: ModelParams) -> float:
    return sum(t.rate for t in enumerate_transitions(cfg, p))


def generator_apply(f: Callable[[Configuration], float], cfg: Configuration, p: ModelParams) -> float:
    """``(Lf)(cfg)`` for the full generator (bulk plus both reservoirs)."""
    f0 = f(cfg)
    return math.fsum(t.rate * (f(t.target) - f0) for t in enumerate_transitions(cfg, p))


def perturbed_params(b: float, d: float, eps: float, N: int, m: float) -> ModelParams:
    """Reservoirs ``b1 = b(1+eps)``, ``bN = b(1-eps)``, ``d1 = dN = d``."""
    if not -1 < eps < 1:
        raise ParameterError(f"eps must lie in (-1, 1), got {eps!r}")
    return ModelParams(N, m, b * (1 + eps), d, b * (1 - eps), d)


def local_force_F1(t: Transition) -> int:
    """First-order driving force of a transition (0 in the bulk)."""
    return _F1.get(t.kind, 0)


def local_force(t: Transition, eps: float) -> float:
    """Exact driving ``F_eps`` for the symmetric +-eps reservoir perturbation."""
    if t.kind.is_bulk:
        return 0.0
    if t.kind in (TransitionKind.BIRTH_LEFT, TransitionKind.DEATH_LEFT):
        return local_force_F1(t) * math.log1p(eps)
    return -local_force_F1(t) * math.log1p(-eps)


def entropy_production_w1(cfg: Configuration | Sequence[int], b: float, d: float) -> float:
    """Entropy production rate ``(b - d)(eta_1 - eta_N)``."""
    return (b - d) * (cfg[0] - cfg[-1])
