"""Scalar majorant equations and bilateral bounds on the solution norm.

The residual ``z_K = x - Y_K`` is bounded in the eigenbasis of ``A`` by the
nonnegative solution ``Z_K`` of a scalar delay equation

    Z' = drift(t) Z + lin_delay(t) Z(t - h0)
         + sum_j sum_l c_{j,l}(t) Z(t - h_j)^l + offset(t),   Z = 0 on history,

and then ``|Y_K| - |V| Z <= |x| <= |Y_K| + |V| Z``.  ``baseline_bounds``
gives the older pair of bounds obtained without successive approximations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .cascade import CascadeResult
from .engine import StepperConfig, Trajectory, _make_mesh, integrate
from .errors import MeshMismatch, MissingIterate, UnsupportedNonlinearity
from .models import DelaySystem, Monomial, build_model, polynomial_majorant
from .spectral import EigenData

__all__ = [
    "MajorantSpec",
    "resolve_convention",
    "BoundTrace",
    "CONVENTIONS",
    "NONLINEAR_SCALES",
    "stage_grid",
    "cubic_residual_majorant",
    "residual_majorant",
    "integrate_majorant",
    "bilateral_bounds",
    "baseline_bounds",
]

# "auto": oscillator for the cubic oscillator models, general otherwise
# "oscillator": drift alpha1 + |G_x|, delayed coefficient |G_x| (the oscillator form, E = G)
# "general": drift alpha1 + |g| with the imaginary diagonal removed, delayed coefficient |E_x|
CONVENTIONS = ("auto", "oscillator", "general")

# factor applied to the nonlinear residual before it enters the scalar equation:
# "column" = |V^-1 e_row| per output row, "norm" = |V^-1|, "none" = 1
NONLINEAR_SCALES = ("column", "norm", "none")


def stage_grid(mesh: np.ndarray) -> np.ndarray:
    """Mesh nodes interleaved with step midpoints (the RK4 stage times)."""
    grid = np.empty(2 * len(mesh) - 1)
    grid[0::2] = mesh
    grid[1::2] = mesh[:-1] + 0.5 * np.diff(mesh)
    return grid


class _Table:
    """Time function tabulated on the stage grid, with a direct fallback."""

    __slots__ = ("grid", "values", "fallback", "inv_half", "t0", "tol")

    def __init__(self, grid, values, fallback):
        self.grid = grid
        self.values = values
        self.fallback = fallback
        self.t0 = grid[0]
        half = grid[1] - grid[0] if len(grid) > 1 else 1.0
        self.inv_half = 1.0 / half
        self.tol = 1e-9 * half

    def __call__(self, t):
        k = int(round((t - self.t0) * self.inv_half))
        if 0 <= k < len(self.grid) and abs(self.grid[k] - t) <= self.tol:
            return self.values[k]
        return self.fallback(np.array([t]))[0]


@dataclass(frozen=True, eq=False)
class MajorantSpec:
    """Coefficients of the scalar residual equation as functions of time.

    ``poly_coeffs(t)`` has shape ``(*batch, n_args, degree)``; entry
    ``[..., j, l - 1]`` multiplies ``Z(t - h_j)**l`` (argument 0 is the
    current time).  ``offset(t)`` has shape ``batch``.  All coefficients
    except ``drift`` are nonnegative.
    """

    drift: Callable
    lin_delay_coeff: Callable
    poly_coeffs: Callable
    offset: Callable
    batch_shape: tuple = ()
    n_args: int = 1
    degree: int = 0
    convention: str = "oscillator"
    nonlinear_scale: str = "column"
    K: int = 0


def resolve_convention(system: DelaySystem, convention: str) -> str:
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}; expected one of {CONVENTIONS}")
    if convention == "auto":
        return "oscillator" if system.name in ("vdp", "duffing") else "general"
    return convention


def _linear_coefficients(system: DelaySystem, eig: EigenData, ts, convention):
    convention = resolve_convention(system, convention)
    Gs = np.stack([system.G(t) for t in ts])
    Gx = eig.Vinv @ Gs @ eig.V
    if convention == "oscillator":
        gx = np.linalg.norm(Gx, ord=2, axis=(1, 2))
        Es = np.stack([system.E(t) for t in ts])
        ex = np.linalg.norm(eig.Vinv @ Es @ eig.V, ord=2, axis=(1, 2))
        return eig.alpha1 + gx, ex
    diag_imag = np.einsum("kii->ki", Gx).imag
    g = Gx.copy()
    idx = np.arange(system.n)
    g[:, idx, idx] -= 1j * diag_imag
    gn = np.linalg.norm(g, ord=2, axis=(1, 2))
    Es = np.stack([system.E(t) for t in ts])
    ex = np.linalg.norm(eig.Vinv @ Es @ eig.V, ord=2, axis=(1, 2))
    return eig.alpha1 + gn, ex


def _row_scales(eig: EigenData, mode):
    if mode == "column":
        return np.linalg.norm(eig.Vinv, axis=0)
    if mode == "norm":
        return np.full(eig.V.shape[0], eig.normVinv)
    if mode == "none":
        return np.ones(eig.V.shape[0])
    raise ValueError(f"unknown nonlinear scale {mode!r}; expected one of {NONLINEAR_SCALES}")


def _single_variable_monomials(system: DelaySystem):
    monos = []
    for term in system.terms:
        if not isinstance(term, Monomial):
            raise UnsupportedNonlinearity(
                f"{type(term).__name__} terms have no residual majorant; use the |Y_K| threshold estimator"
            )
        if len(term.factors) != 1:
            raise UnsupportedNonlinearity("residual majorant supports single-variable monomials c * x_i**p")
        monos.append(term)
    return monos


def residual_majorant(
    eig: EigenData,
    system: DelaySystem,
    cascade: CascadeResult,
    K: Optional[int] = None,
    *,
    convention: str = "auto",
    nonlinear_scale: str = "column",
    grid: Optional[np.ndarray] = None,
) -> MajorantSpec:
    """Scalar equation coefficients for the residual after ``K`` approximations.

    For a monomial ``c x_i**p`` evaluated at ``t - h_j`` the increment
    ``(w + Y_i)**p - Y'_i**p`` with ``|w| <= kappa_i Z`` is bounded by
    ``sum_l binom(p, l) kappa_i**l Z**l |Y_i|**(p - l) + |Y_i**p - Y'_i**p|``
    where ``Y = Y_K`` and ``Y' = Y_{K-1}`` at the lagged time.  The linear
    residual forcing ``|V^-1 (G y_K + E y_K(t - h0))|`` joins the offset.
    """
    K = cascade.K if K is None else K
    convention = resolve_convention(system, convention)
    if K > cascade.K or K < 1:
        raise MissingIterate(f"cascade depth {cascade.K} is smaller than requested K={K}")
    monos = _single_variable_monomials(system)
    scales = _row_scales(eig, nonlinear_scale)
    mesh = cascade.mesh
    grid = stage_grid(mesh) if grid is None else grid
    batch_shape = cascade.phi_s.shape[:-1]
    n_args = system.n_args
    degree = max((m.factors[0][2] for m in monos), default=0)
    Y_K = cascade.Y(K)
    Y_prev = cascade.Y(K - 1)
    y_K = cascade.y(K)
    delays = system.delays
    kappa = eig.kappa

    def lagged(traj, ts, arg):
        if arg == 0:
            return traj.at_times(ts)
        return traj.at_times(ts - np.array([delays[arg](t) for t in ts]))

    def coefficients(ts):
        poly = np.zeros((len(ts),) + batch_shape + (n_args, max(degree, 1)))
        offset = np.zeros((len(ts),) + batch_shape)
        cache = {}
        for mono in monos:
            comp, arg, p = mono.factors[0]
            if arg not in cache:
                prev = lagged(Y_prev, ts, arg) if Y_prev is not None else np.zeros((len(ts),) + batch_shape + (system.n,))
                cache[arg] = (lagged(Y_K, ts, arg), prev)
            Yk, Yp = cache[arg]
            yi = Yk[..., comp]
            ci = np.abs(np.array([mono.coeff(t) if callable(mono.coeff) else mono.coeff for t in ts]))
            ci = (ci * scales[mono.row]).reshape((len(ts),) + (1,) * len(batch_shape))
            abs_y = np.abs(yi)
            for l in range(1, p + 1):
                poly[..., arg, l - 1] += ci * math.comb(p, l) * kappa[comp] ** l * abs_y ** (p - l)
            offset += ci * np.abs(yi**p - Yp[..., comp] ** p)
        # linear residual forcing G y_K(t) + E y_K(t - h0)
        yk_now = y_K.at_times(ts)
        yk_lag = y_K.at_times(ts - np.array([delays[0](t) for t in ts]))
        Gs = np.stack([system.G(t) for t in ts])
        Es = np.stack([system.E(t) for t in ts])
        forcing = np.einsum("kij,k...j->k...i", Gs, yk_now) + np.einsum("kij,k...j->k...i", Es, yk_lag)
        offset += np.linalg.norm(np.einsum("ij,k...j->k...i", eig.Vinv, forcing), axis=-1)
        return poly, offset

    def linear(ts):
        return _linear_coefficients(system, eig, ts, convention)

    drift_v, lin_v = linear(grid)
    poly_v, offset_v = coefficients(grid)
    return MajorantSpec(
        drift=_Table(grid, drift_v, lambda ts: linear(ts)[0]),
        lin_delay_coeff=_Table(grid, lin_v, lambda ts: linear(ts)[1]),
        poly_coeffs=_Table(grid, poly_v, lambda ts: coefficients(ts)[0]),
        offset=_Table(grid, offset_v, lambda ts: coefficients(ts)[1]),
        batch_shape=batch_shape,
        n_args=n_args,
        degree=degree,
        convention=convention,
        nonlinear_scale=nonlinear_scale,
        K=K,
    )


def cubic_residual_majorant(
    eig: EigenData,
    p,
    which: str,
    cascade: CascadeResult,
    K: Optional[int] = None,
    **kwargs,
) -> MajorantSpec:
    """Residual majorant for the cubic oscillator models.

    ``p`` is either an :class:`OscillatorParams` (the model named ``which`` is
    built from it) or an already built :class:`DelaySystem`.
    """
    if which not in ("vdp", "duffing"):
        raise UnsupportedNonlinearity(f"model {which!r} has no cubic residual majorant")
    system = p if isinstance(p, DelaySystem) else build_model(which, p)
    return residual_majorant(eig, system, cascade, K, **kwargs)


def integrate_majorant(
    maj: MajorantSpec,
    delays: Sequence[Callable[[float], float]],
    T: float,
    cfg: StepperConfig,
    *,
    t0: float = 0.0,
    h_bounds=None,
    on_escape: str = "raise",
    stop=None,
) -> Trajectory:
    """Solve the scalar residual equation from a zero history.

    The returned trajectory has state shape ``(*batch, 1)``.
    """
    delays = tuple(delays)
    if h_bounds is None:
        probe = np.linspace(t0, T, 257)
        vals = np.array([[h(t) for t in probe] for h in delays])
        h_bounds = (float(vals.min()), float(vals.max()))
    h_min, h_max = h_bounds
    batch = maj.batch_shape
    args_used = range(maj.n_args) if maj.degree else ()

    def rhs(t, Z, past):
        z = Z[..., 0]
        out = maj.drift(t) * z + maj.lin_delay_coeff(t) * past(t - delays[0](t))[..., 0]
        if maj.degree:
            coeffs = maj.poly_coeffs(t)
            for j in args_used:
                zj = z if j == 0 else past(t - delays[j](t))[..., 0]
                c = coeffs[..., j, :]
                acc = c[..., -1]
                for l in range(maj.degree - 2, -1, -1):
                    acc = acc * zj + c[..., l]
                out = out + acc * zj
        out = out + maj.offset(t)
        return out[..., None]

    zero = np.zeros(batch + (1,))

    def history(t):
        return zero.copy()

    return integrate(
        rhs, history, (t0, T), cfg, min_delay=h_min, max_delay=h_max, on_escape=on_escape, stop=stop
    )


@dataclass(frozen=True, eq=False)
class BoundTrace:
    """Lower/upper envelopes of ``|x(t)|`` on the mesh.

    ``approx`` is ``|Y_K|`` (or NaN for baseline bounds), ``Z`` the scalar
    majorant, ``reference`` the optional directly simulated ``|x|``.
    """

    mesh: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    Z: np.ndarray
    approx: np.ndarray
    K: int
    normV: float
    reference: Optional[np.ndarray] = None
    kind: str = "cascade"

    @property
    def gap(self) -> np.ndarray:
        return self.upper - self.lower

    def with_reference(self, reference) -> "BoundTrace":
        reference = np.asarray(reference, dtype=float)
        if reference.shape != self.upper.shape:
            raise MeshMismatch(f"reference shape {reference.shape} does not match {self.upper.shape}")
        return replace(self, reference=reference)

    def violations(self, tol: float = 1e-3):
        """Nodes where the reference leaves ``[lower - tol, upper + tol]``."""
        if self.reference is None:
            raise ValueError("no reference attached")
        return np.flatnonzero(
            ((self.reference > self.upper + tol) | (self.reference < self.lower - tol)).reshape(len(self.mesh), -1).any(axis=1)
        )


def bilateral_bounds(cascade: CascadeResult, Z: Trajectory, eig: EigenData, K: Optional[int] = None) -> BoundTrace:
    """Combine ``|Y_K|`` with the residual majorant into lower/upper envelopes."""
    K = cascade.K if K is None else K
    mesh = cascade.mesh
    if abs(Z.t_end - mesh[-1]) > 1e-9 * max(1.0, abs(mesh[-1])) or abs(Z.t0 - mesh[0]) > 1e-12:
        raise MeshMismatch(f"majorant covers [{Z.t0}, {Z.t_end}], cascade [{mesh[0]}, {mesh[-1]}]")
    if len(Z.mesh) == len(mesh) and np.array_equal(Z.mesh, mesh):
        zvals = Z.states[..., 0]
    else:
        zvals = Z.at_times(mesh)[..., 0]
    # an escaped majorant gives no information: upper = inf, lower = 0
    zvals = np.where(np.isfinite(zvals), zvals, np.inf)
    approx = cascade.approximation_norms(K)
    radius = eig.normV * zvals
    upper = approx + radius
    lower = np.maximum(approx - radius, 0.0)
    return BoundTrace(mesh=mesh, lower=lower, upper=upper, Z=zvals, approx=approx, K=K, normV=eig.normV)


def baseline_bounds(
    system: DelaySystem,
    eig: EigenData,
    phi_s,
    T: float,
    cfg: StepperConfig,
    majorant=None,
) -> BoundTrace:
    """Bounds from the scalar pair without successive approximations.

    Upper: ``|V| Z`` with ``Z' = (alpha1 + |g|) Z + |E_x| Z(t - h0) + L_x + |F_x|``.
    Lower: ``z / |V^-1|`` with ``z' = (alphan - |g|) z - (|E_x| z(t - h0) + L_x + |F_x|)``,
    held at zero from its first nonpositive value on.  Both start from the
    constant history ``|V^-1 phi_s|``; ``L_x(xi) = |V^-1| L(|V| xi)``.
    """
    L = polynomial_majorant(system.terms) if majorant is None else majorant
    phi_s = np.asarray(phi_s, dtype=float)
    batch = phi_s.shape[:-1]
    start = np.linalg.norm(phi_s @ eig.Vinv.T, axis=-1)[..., None]
    delays = system.delays
    nV, nVi = eig.normV, eig.normVinv
    mesh_probe = stage_grid(_make_mesh(system.t0, T, cfg.step))
    drift_hi, lin = _linear_coefficients(system, eig, mesh_probe, "general")
    drift_lo = eig.alphan - (drift_hi - eig.alpha1)
    fx = np.array([np.linalg.norm(eig.Vinv @ system.F(t)) for t in mesh_probe])
    tab_hi = _Table(mesh_probe, drift_hi, lambda ts: _linear_coefficients(system, eig, ts, "general")[0])
    tab_lo = _Table(mesh_probe, drift_lo, lambda ts: eig.alphan + eig.alpha1 - _linear_coefficients(system, eig, ts, "general")[0])
    tab_lin = _Table(mesh_probe, lin, lambda ts: _linear_coefficients(system, eig, ts, "general")[1])
    tab_f = _Table(mesh_probe, fx, lambda ts: np.array([np.linalg.norm(eig.Vinv @ system.F(t)) for t in ts]))

    def Lx(t, z, past):
        xis = [nV * z] + [nV * past(t - delays[j](t))[..., 0] for j in range(1, len(delays))]
        return nVi * L(t, *xis)

    def rhs_hi(t, Z, past):
        z = Z[..., 0]
        out = tab_hi(t) * z + tab_lin(t) * past(t - delays[0](t))[..., 0] + Lx(t, z, past) + tab_f(t)
        return out[..., None]

    def rhs_lo(t, Z, past):
        z = Z[..., 0]
        out = tab_lo(t) * z - (tab_lin(t) * past(t - delays[0](t))[..., 0] + Lx(t, z, past) + tab_f(t))
        return out[..., None]

    def history(t):
        return start.copy()

    kw = dict(min_delay=system.h_min, max_delay=system.h_max, on_escape="continue")
    hi = integrate(rhs_hi, history, (system.t0, T), cfg, **kw)
    lo = integrate(rhs_lo, history, (system.t0, T), cfg, **kw)
    upper = nV * hi.states[..., 0]
    upper = np.where(np.isfinite(upper), upper, np.inf)
    z = lo.states[..., 0]
    dead = np.logical_or.accumulate(~(z > 0), axis=0)
    lower = np.where(dead, 0.0, z / nVi)
    return BoundTrace(
        mesh=hi.mesh,
        lower=lower,
        upper=upper,
        Z=hi.states[..., 0],
        approx=np.full(upper.shape, np.nan),
        K=0,
        normV=nV,
        kind="baseline",
    )
