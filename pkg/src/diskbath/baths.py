"""Heat baths: Poisson injection of particles through the two openings.

A bath is described by its rate and three independent laws, for the entry
height on the opening, the entry angle measured from the inward normal and
the speed.  Every bath owns its own random stream, so the sequence a bath
produces does not depend on what else happens in the simulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special

from .dynamics import InjectionEvent, ParticleState, injection_velocity
from .geometry import DomainSpec

HALF_PI = 0.5 * math.pi
TABLE_MIN_POINTS = 4096


# ---------------------------------------------------------------- laws

@dataclass(frozen=True)
class UniformLaw:
    lo: float = -1.0
    hi: float = 1.0

    def sample(self, rng) -> float:
        return self.lo + (self.hi - self.lo) * rng.random()

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= self.lo) & (x <= self.hi), 1.0 / (self.hi - self.lo), 0.0)

    def cdf(self, x):
        return np.clip((np.asarray(x, dtype=float) - self.lo) / (self.hi - self.lo), 0.0, 1.0)


@dataclass(frozen=True)
class CosineAngleLaw:
    """Density ``cos(delta) / 2`` on ``(-pi/2, pi/2)``."""

    def sample(self, rng) -> float:
        return math.asin(2.0 * rng.random() - 1.0)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) < HALF_PI, 0.5 * np.cos(x), 0.0)

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), -HALF_PI, HALF_PI)
        return 0.5 * (1.0 + np.sin(x))


@dataclass(frozen=True)
class MaxwellSpeedLaw:
    """Speed density ``4 a^3 / sqrt(pi) * s^2 exp(-a^2 s^2)`` with ``a^2 = m / T``."""

    temperature: float = 1.0
    mass: float = 1.0

    @property
    def a(self) -> float:
        return math.sqrt(self.mass / self.temperature)

    def sample(self, rng) -> float:
        # norm of a 3D Gaussian vector: exact, untruncated
        sd = 1.0 / (math.sqrt(2.0) * self.a)
        g = rng.normal(0.0, sd, 3)
        return math.sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2])

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        a = self.a
        return np.where(s > 0, 4.0 * a ** 3 / math.sqrt(math.pi) * s * s * np.exp(-(a * s) ** 2), 0.0)

    def cdf(self, s):
        s = np.maximum(np.asarray(s, dtype=float), 0.0)
        z = self.a * s
        return special.erf(z) - 2.0 / math.sqrt(math.pi) * z * np.exp(-z * z)

    def mean(self) -> float:
        return 2.0 / (math.sqrt(math.pi) * self.a)


class TabulatedLaw:
    """Piecewise-linear density given at sample points, sampled by inverse CDF.

    The table is resampled onto at least ``TABLE_MIN_POINTS`` equally spaced
    nodes before the cumulative integral is formed.
    """

    def __init__(self, values, density, n_points: int = TABLE_MIN_POINTS):
        values = np.asarray(values, dtype=float)
        density = np.asarray(density, dtype=float)
        if values.ndim != 1 or values.shape != density.shape or len(values) < 2:
            raise ValueError("need matching 1D arrays with at least two points")
        if np.any(np.diff(values) <= 0):
            raise ValueError("table abscissae must be strictly increasing")
        if np.any(density < 0) or np.any(density[1:-1] <= 0):
            raise ValueError("density must be strictly positive inside its interval")
        self.lo, self.hi = float(values[0]), float(values[-1])
        self.grid = np.linspace(self.lo, self.hi, max(n_points, len(values)))
        dens = np.interp(self.grid, values, density)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(self.grid))])
        self.norm = cum[-1]
        self.dens = dens / self.norm
        self.cum = cum / self.norm

    @classmethod
    def from_file(cls, path, **kw) -> "TabulatedLaw":
        data = np.loadtxt(path, ndmin=2)
        return cls(data[:, 0], data[:, 1], **kw)

    def sample(self, rng) -> float:
        return float(np.interp(rng.random(), self.cum, self.grid))

    def pdf(self, x):
        return np.interp(x, self.grid, self.dens, left=0.0, right=0.0)

    def cdf(self, x):
        return np.interp(x, self.grid, self.cum, left=0.0, right=1.0)


# ---------------------------------------------------------------- baths

@dataclass
class BathSpec:
    side: str
    rate: float
    position_law: object = field(default_factory=UniformLaw)
    angle_law: object = field(default_factory=CosineAngleLaw)
    speed_law: object = field(default_factory=MaxwellSpeedLaw)
    temperature: Optional[float] = None  # set for equilibrium baths

    def __post_init__(self):
        if self.side not in ("left", "right"):
            raise ValueError(f"side must be 'left' or 'right', got {self.side!r}")
        # rate 0 is allowed and means a closed opening
        if not (self.rate >= 0 and math.isfinite(self.rate)):
            raise ValueError(f"rate must be finite and non-negative, got {self.rate!r}")


def equilibrium_bath(side: str, temperature: float, rate: float, mass: float = 1.0) -> BathSpec:
    """Bath emitting velocities with density proportional to ``exp(-m |v|^2 / T) |v| cos``."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return BathSpec(side, rate, UniformLaw(-1.0, 1.0), CosineAngleLaw(),
                    MaxwellSpeedLaw(temperature, mass), temperature)


def equilibrium_normalization(temperature: float, mass: float = 1.0) -> float:
    """Constant ``c`` making ``c exp(-m beta |v|^2) |v| cos`` a probability density."""
    return 2.0 * (mass / temperature) ** 1.5 / math.sqrt(math.pi)


def equilibrium_velocity_sampler(temperature: float, mass: float, rng):
    """Draw ``(s, delta)`` from the equilibrium injection law."""
    law = MaxwellSpeedLaw(temperature, mass)
    s = law.sample(rng)
    delta = CosineAngleLaw().sample(rng)
    return s, delta


def sample_next_injection(bath: BathSpec, now: float, rng) -> Optional[InjectionEvent]:
    """Next emission after ``now``; ``None`` for a bath with zero rate."""
    if bath.rate == 0:
        return None
    tau = now + rng.exponential(1.0 / bath.rate)
    xi = bath.position_law.sample(rng)
    delta = bath.angle_law.sample(rng)
    s = bath.speed_law.sample(rng)
    return InjectionEvent(float(tau), float(xi), float(delta), float(s), bath.side)


def injection_to_particle(ev: InjectionEvent, side: str, dom: DomainSpec, pid=0) -> ParticleState:
    x = 0.0 if side == "left" else dom.width
    return ParticleState((x, ev.xi), injection_velocity(side, ev.delta, ev.s), pid)


def bath_rng(seed: int, replica: int = 0, bath_index: int = 0) -> np.random.Generator:
    """Independent stream for one bath of one replica.

    Streams are keyed by ``(replica, bath_index)`` below the master seed, so
    a replica's baths are reproducible on their own.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replica, bath_index)))


class BathStream:
    """Lazily sampled injection sequence of one bath; plugs into the simulator."""

    def __init__(self, bath: BathSpec, rng, start: float = 0.0):
        self.bath = bath
        self.rng = rng
        self._next = sample_next_injection(bath, start, rng)

    def peek(self) -> Optional[InjectionEvent]:
        return self._next

    def pop(self) -> InjectionEvent:
        ev = self._next
        self._next = sample_next_injection(self.bath, ev.tau, self.rng)
        return ev


def bath_streams(baths, seed: int, replica: int = 0, start: float = 0.0):
    return [BathStream(b, bath_rng(seed, replica, i), start) for i, b in enumerate(baths)]
