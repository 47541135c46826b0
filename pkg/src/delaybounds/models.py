"""Coupled delay oscillator models and polynomial majorants.

A model is a :class:`DelaySystem`

    x' = (A + G(t)) x + E(t) x(t - h0) + f(t, x, x(t - h1), ...) + F0 e(t)

whose nonlinearity ``f`` is a sum of elementary terms (monomials, Gaussian
bumps, tanh saturations), each acting on one output row.  Nonlinear argument
index 0 is the current state; index ``j >= 1`` is the state delayed by
``delays[j]``.  ``delays[0]`` is the lag of the linear ``E`` term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import UnsupportedNonlinearity

__all__ = [
    "Monomial",
    "GaussianBump",
    "TanhSaturation",
    "DelaySystem",
    "OscillatorParams",
    "MODELS",
    "build_vdp_system",
    "build_duffing_system",
    "build_gaussian_variant",
    "build_tanh_variant",
    "build_model",
    "gaussian_density",
    "polynomial_majorant",
    "PolynomialMajorant",
]

Coefficient = Union[float, Callable[[float], float]]


def _coeff(c, t):
    return c(t) if callable(c) else c


@dataclass(frozen=True)
class Monomial:
    """``coeff(t) * prod(x_arg[component] ** power)`` added to ``row``."""

    row: int
    coeff: Coefficient
    factors: Tuple[Tuple[int, int, int], ...]  # (component, argument, power)

    def evaluate(self, t, args):
        val = _coeff(self.coeff, t)
        for comp, arg, power in self.factors:
            val = val * args[arg][..., comp] ** power
        return val

    @property
    def arguments(self):
        return {arg for _, arg, _ in self.factors}


def gaussian_density(delta, q):
    """Normal density with standard deviation ``q`` evaluated at ``delta``."""
    return np.exp(-0.5 * (delta / q) ** 2) / (q * math.sqrt(2.0 * math.pi))


@dataclass(frozen=True)
class GaussianBump:
    """``coeff * density(x_arg[component] - center; width)`` added to ``row``."""

    row: int
    coeff: float
    component: int
    arg: int
    center: float
    width: float

    def evaluate(self, t, args):
        return self.coeff * gaussian_density(args[self.arg][..., self.component] - self.center, self.width)

    @property
    def arguments(self):
        return {self.arg}


@dataclass(frozen=True)
class TanhSaturation:
    """``coeff * tanh(slope * x_arg[component])`` added to ``row``."""

    row: int
    coeff: float
    component: int
    arg: int
    slope: float

    def evaluate(self, t, args):
        return self.coeff * np.tanh(self.slope * args[self.arg][..., self.component])

    @property
    def arguments(self):
        return {self.arg}


def _constant_delay(h):
    h = float(h)

    def delay(t):
        return h

    delay.value = h
    return delay


@dataclass(frozen=True, eq=False)
class DelaySystem:
    """Delay system with constant ``A``, zero-mean ``G``, delayed linear ``E``.

    ``delays`` holds callables ``h_j(t)``; ``h_min``/``h_max`` bound them on
    the horizon.  Arrays with leading batch axes are accepted everywhere.
    """

    name: str
    A: np.ndarray
    G: Callable[[float], np.ndarray]
    E: Callable[[float], np.ndarray]
    terms: Tuple = ()
    F0: float = 0.0
    e: Optional[Callable[[float], np.ndarray]] = None
    delays: Tuple[Callable[[float], float], ...] = ()
    h_min: float = 0.0
    h_max: float = 0.0
    t0: float = 0.0
    params: Optional["OscillatorParams"] = None

    def __post_init__(self):
        if not self.delays:
            raise ValueError("at least the linear delay h0 is required")
        if not (0 < self.h_min <= self.h_max < np.inf):
            raise ValueError(f"delay bounds must satisfy 0 < h_min <= h_max, got {self.h_min}, {self.h_max}")
        if self.F0 < 0:
            raise ValueError("forcing amplitude F0 must be nonnegative")
        for term in self.terms:
            if max(term.arguments) >= len(self.delays):
                raise ValueError(f"term {term} refers to an undefined delay")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_args(self) -> int:
        """Number of nonlinear arguments (current state plus delayed ones)."""
        return len(self.delays)

    @property
    def polynomial(self) -> bool:
        return all(isinstance(term, Monomial) for term in self.terms)

    def F(self, t) -> np.ndarray:
        if self.e is None or self.F0 == 0.0:
            return np.zeros(self.n)
        return self.F0 * np.asarray(self.e(t), dtype=float)

    def f(self, t, args: Sequence[np.ndarray]) -> np.ndarray:
        """Nonlinearity at ``args = [x(t), x(t - h1(t)), ...]``."""
        out = np.zeros(np.shape(args[0]))
        for term in self.terms:
            out[..., term.row] += term.evaluate(t, args)
        return out

    def nonlinear_args(self, t, x, past):
        args = [x]
        for j in range(1, len(self.delays)):
            args.append(past(t - self.delays[j](t)))
        return args

    def vector_field(self, t, x, past):
        """Right-hand side of the full delay system, for the engine."""
        out = x @ (self.A + self.G(t)).T
        out = out + past(t - self.delays[0](t)) @ self.E(t).T
        if self.terms:
            out = out + self.f(t, self.nonlinear_args(t, x, past))
        if self.F0:
            out = out + self.F(t)
        return out

    def check_delays(self, T: float, samples: int = 2001) -> None:
        ts = np.linspace(self.t0, T, samples)
        for h in self.delays:
            vals = np.array([h(t) for t in ts])
            if vals.min() < self.h_min * (1 - 1e-12) or vals.max() > self.h_max * (1 + 1e-12):
                raise ValueError("delay leaves its declared bounds on the horizon")


@dataclass(frozen=True)
class OscillatorParams:
    """Parameters of the coupled oscillator models.

    ``c1``/``c2`` are the damping coefficients and ``omega1_sq``/``omega2_sq``
    the stiffnesses.  ``mu1``/``mu2`` scale the cubic terms on rows 2 and 4;
    ``mu3``/``mu4`` scale the Gaussian or tanh terms on the same rows.  A
    nonlinear term enters the equations with a minus sign, ``-mu * (...)``.
    """

    mu1: float
    mu2: float
    h0: float
    h1: float
    d: float = 0.1
    c1: float = 0.4
    c2: float = 0.2
    omega1_sq: float = 1.0
    omega2_sq: float = 4.0
    a1: float = 0.1
    a2: float = 0.1
    b1: float = 0.1
    b2: float = 0.1
    r1: float = 3.14
    r2: float = 6.15
    s1: float = 3.1
    s2: float = 6.28
    F0: float = 0.0
    omega0: float = 5.43
    mu3: float = 0.0
    mu4: float = 0.0
    q: float = 1.0
    centers: Tuple[float, float, float, float] = (7.0, 7.0, 7.0, 7.0)
    k1: float = 1.0
    k2: float = 1.0
    t0: float = 0.0

    def __post_init__(self):
        if not (self.omega1_sq > 0 and self.omega2_sq > 0):
            raise ValueError("stiffnesses must be positive")
        if not self.q > 0:
            raise ValueError("Gaussian width q must be positive")
        if not (self.h0 > 0 and self.h1 > 0):
            raise ValueError("delays must be positive")
        if self.F0 < 0:
            raise ValueError("F0 must be nonnegative")
        object.__setattr__(self, "centers", tuple(float(c) for c in self.centers))

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown oscillator parameters: {sorted(unknown)}")
        kwargs = dict(data)
        if "centers" in kwargs:
            kwargs["centers"] = tuple(kwargs["centers"])
        return cls(**kwargs)

    def replace(self, **changes):
        return replace(self, **changes)


def _linear_part(p: OscillatorParams):
    d = p.d
    A = np.array(
        [
            [0.0, 1.0, 0.0, 0.0],
            [-(p.omega1_sq + d), -p.c1, d, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [d, 0.0, -(p.omega2_sq + d), -p.c2],
        ]
    )

    def G(t):
        g21 = p.a1 * math.sin(p.r1 * t) + p.a2 * math.sin(p.r2 * t)
        g43 = p.b1 * math.sin(p.s1 * t) + p.b2 * math.sin(p.s2 * t)
        out = np.zeros((4, 4))
        out[1, 0] = -g21
        out[3, 2] = -g43
        return out

    def e(t):
        return np.array([0.0, math.sin(p.omega0 * t), 0.0, 0.0])

    return A, G, e


def _cubic_terms(p: OscillatorParams, comps):
    return (
        Monomial(row=1, coeff=-p.mu1, factors=((comps[0], 1, 3),)),
        Monomial(row=3, coeff=-p.mu2, factors=((comps[1], 1, 3),)),
    )


# driven components of the cubic terms: velocities for vdp, positions for duffing
_CUBIC_COMPONENTS = {"vdp": (1, 3), "duffing": (0, 2)}


def _assemble(name, p: OscillatorParams, terms):
    A, G, e = _linear_part(p)
    return DelaySystem(
        name=name,
        A=A,
        G=G,
        E=G,
        terms=tuple(terms),
        F0=p.F0,
        e=e,
        delays=(_constant_delay(p.h0), _constant_delay(p.h1)),
        h_min=min(p.h0, p.h1),
        h_max=max(p.h0, p.h1),
        t0=p.t0,
        params=p,
    )


def build_vdp_system(p: OscillatorParams) -> DelaySystem:
    """Van der Pol-like pair: delayed cubic damping on the velocities."""
    return _assemble("vdp", p, _cubic_terms(p, _CUBIC_COMPONENTS["vdp"]))


def build_duffing_system(p: OscillatorParams) -> DelaySystem:
    """Duffing-like pair: delayed cubic stiffness on the positions."""
    return _assemble("duffing", p, _cubic_terms(p, _CUBIC_COMPONENTS["duffing"]))


def build_gaussian_variant(p: OscillatorParams, base: str = "vdp") -> DelaySystem:
    """Cubic model plus delayed Gaussian impulses on rows 2 and 4.

    The bumps are centred at ``p.centers`` so ``f(t, 0) != 0``: the origin is
    not an equilibrium and only boundedness can be assessed.
    """
    comps = _CUBIC_COMPONENTS[base]
    terms = _cubic_terms(p, comps) + (
        GaussianBump(row=1, coeff=-p.mu3, component=comps[0], arg=1, center=p.centers[comps[0]], width=p.q),
        GaussianBump(row=3, coeff=-p.mu4, component=comps[1], arg=1, center=p.centers[comps[1]], width=p.q),
    )
    return _assemble(f"{base}_gauss", p, terms)


def build_tanh_variant(p: OscillatorParams, base: str = "vdp") -> DelaySystem:
    """Cubic model plus delayed tanh saturation on rows 2 and 4."""
    comps = _CUBIC_COMPONENTS[base]
    terms = _cubic_terms(p, comps) + (
        TanhSaturation(row=1, coeff=-p.mu3, component=comps[0], arg=1, slope=p.k1),
        TanhSaturation(row=3, coeff=-p.mu4, component=comps[1], arg=1, slope=p.k2),
    )
    return _assemble(f"{base}_tanh", p, terms)


MODELS = ("vdp", "duffing", "vdp_gauss", "duffing_gauss", "vdp_tanh", "duffing_tanh")


def build_model(model: str, p: OscillatorParams) -> DelaySystem:
    if model == "vdp":
        return build_vdp_system(p)
    if model == "duffing":
        return build_duffing_system(p)
    base, _, variant = model.partition("_")
    if base in _CUBIC_COMPONENTS and variant == "gauss":
        return build_gaussian_variant(p, base)
    if base in _CUBIC_COMPONENTS and variant == "tanh":
        return build_tanh_variant(p, base)
    raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")


@dataclass(frozen=True)
class PolynomialMajorant:
    """``L(t, xi_0, ..., xi_m) = sum |a(t)| prod xi_arg ** power``.

    Obtained from a monomial list by replacing every component magnitude with
    the norm of the whole argument vector it belongs to.
    """

    monomials: Tuple[Monomial, ...] = field(default_factory=tuple)

    def __call__(self, t, *xis):
        total = 0.0
        for mono in self.monomials:
            val = abs(_coeff(mono.coeff, t))
            for _, arg, power in mono.factors:
                val = val * np.asarray(xis[arg]) ** power
            total = total + val
        return total

    @property
    def degree(self) -> int:
        return max((sum(p for _, _, p in m.factors) for m in self.monomials), default=0)


def polynomial_majorant(terms) -> PolynomialMajorant:
    """Nonlinear Lipschitz majorant of a polynomial nonlinearity."""
    monos = []
    for term in terms:
        if not isinstance(term, Monomial):
            raise UnsupportedNonlinearity(f"{type(term).__name__} has no polynomial majorant")
        monos.append(term)
    return PolynomialMajorant(tuple(monos))
