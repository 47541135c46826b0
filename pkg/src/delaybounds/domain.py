"""Boundary estimation for stability and boundedness domains.

Constant histories ``phi_s`` are parameterized in double polar coordinates
and scanned along rays ``phi_s(rho) = polar_to_state(rho w1, th1, rho w2, th2)``.
Each ray is searched by doubling from a seed radius and then bisecting.  Three
evaluators decide whether a history is inside:

* ``reference``: direct simulation of the full delay system,
* ``scalar_bound``: the upper bilateral bound from the cascade and majorant,
* ``y_threshold``: the cascade approximation ``|Y_K|`` alone.

Every evaluator is batched: it accepts ``phi_s`` of shape ``(B, n)`` and runs
all rows through one integration.  The sweep advances all rays in lockstep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .bounds import _single_variable_monomials, bilateral_bounds, integrate_majorant, residual_majorant
from .cascade import solve_cascade
from .engine import StepperConfig, _make_mesh, integrate
from .errors import NoExceedanceFound, SeedExceeded
from .models import DelaySystem
from .spectral import EigenData

__all__ = [
    "ProbeResult",
    "BoundaryEstimate",
    "Prober",
    "METHODS",
    "polar_to_state",
    "ray_state",
    "probe_reference",
    "probe_scalar_bound",
    "probe_y_threshold",
    "radial_search",
    "sweep",
    "angle_grid",
]

METHODS = ("reference", "scalar_bound", "y_threshold")

INSIDE = "inside"
EXCEEDED = "exceeded"

# fraction of the horizon used by the decay test and the required shrink factor
TAIL_FRACTION = 0.1
TAIL_FACTOR = 0.1


def polar_to_state(r1, theta1, r2, theta2) -> np.ndarray:
    """``(r1 cos th1, r1 sin th1, r2 cos th2, r2 sin th2)``; broadcasts over inputs."""
    r1, theta1, r2, theta2 = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (r1, theta1, r2, theta2))
    )
    return np.stack([r1 * np.cos(theta1), r1 * np.sin(theta1), r2 * np.cos(theta2), r2 * np.sin(theta2)], axis=-1)


def ray_state(rho, direction) -> np.ndarray:
    """Point at scale ``rho`` on the ray ``direction = (th1, th2, w1, w2)``."""
    th1, th2, w1, w2 = direction
    rho = np.asarray(rho, dtype=float)
    return polar_to_state(rho * w1, th1, rho * w2, th2)


@dataclass(frozen=True)
class ProbeResult:
    """Verdict of one evaluator for one or many histories.

    For batched probes every field is an array over the batch.  ``escape_time``
    is NaN for histories that stay inside.
    """

    verdict: object
    escape_time: object
    peak: object

    @property
    def exceeded(self):
        return np.asarray(self.verdict) == EXCEEDED

    @property
    def inside(self):
        return ~self.exceeded


def _verdicts(norms, mesh, varpi, phi_s, tail_check, computed=None):
    """Threshold (and optional decay) verdicts from a ``(nodes, B)`` norm table.

    Rows past ``computed`` belong to a run stopped early and are ignored for
    the peak value.
    """
    bad = ~(norms < varpi)  # NaN and inf count as exceedance
    hit = bad.any(axis=0)
    first = np.argmax(bad, axis=0)
    escape = np.where(hit, mesh[first], np.nan)
    seen = norms[: len(mesh) if computed is None else computed]
    finite = np.where(np.isfinite(seen), seen, -np.inf)
    peak = np.where(np.isfinite(seen).all(axis=0), finite.max(axis=0), np.inf)
    if tail_check:
        t_tail = mesh[0] + (1.0 - TAIL_FRACTION) * (mesh[-1] - mesh[0])
        tail = norms[mesh >= t_tail]
        size = np.linalg.norm(phi_s, axis=-1)
        slow = ~(tail.max(axis=0) < TAIL_FACTOR * size) & (size > 0)
        escape = np.where(~hit & slow, mesh[-1], escape)
        hit = hit | slow
    verdict = np.where(hit, EXCEEDED, INSIDE)
    return ProbeResult(verdict=verdict, escape_time=escape, peak=peak)


def _finish(result: ProbeResult, single: bool) -> ProbeResult:
    if not single:
        return result
    return ProbeResult(
        verdict=str(result.verdict[0]), escape_time=float(result.escape_time[0]), peak=float(result.peak[0])
    )


def _as_batch(phi_s, n):
    phi_s = np.asarray(phi_s, dtype=float)
    single = phi_s.ndim == 1
    phi_s = phi_s.reshape(-1, n)
    return phi_s, single


def _threshold_stop(varpi, measure):
    seen = {}

    def stop(t, x):
        over = ~(measure(x) < varpi)
        seen["mask"] = over if "mask" not in seen else seen["mask"] | over
        return bool(seen["mask"].all())

    return stop


def _pad(norms, mesh, full_mesh):
    """Extend an early-stopped norm table to the full mesh with ``inf``."""
    if len(mesh) == len(full_mesh):
        return norms
    out = np.full((len(full_mesh),) + norms.shape[1:], np.inf)
    out[: len(mesh)] = norms
    return out


def _full_mesh(system, T, cfg):
    return _make_mesh(system.t0, T, cfg.step)


def probe_reference(
    system: DelaySystem,
    phi_s,
    T: float,
    varpi: float,
    cfg: StepperConfig,
    *,
    tail_check: Optional[bool] = None,
) -> ProbeResult:
    """Simulate the full system from the constant history ``phi_s``.

    Exceeded iff ``sup |x| >= varpi`` on ``[t0, T]`` or the solution escapes.
    With ``tail_check`` (default: when unforced) a solution that has not
    shrunk below ``0.1 |phi_s|`` over the last tenth of the horizon also counts
    as exceeded.
    """
    phi_s, single = _as_batch(phi_s, system.n)
    tail_check = system.F0 == 0 if tail_check is None else tail_check

    def history(t):
        return phi_s.copy()

    traj = integrate(
        system.vector_field,
        history,
        (system.t0, T),
        cfg,
        min_delay=system.h_min,
        max_delay=system.h_max,
        on_escape="continue",
        stop=_threshold_stop(varpi, lambda x: np.linalg.norm(x, axis=-1)),
    )
    mesh = _full_mesh(system, T, cfg)
    norms = _pad(traj.norms(), traj.mesh, mesh)
    return _finish(_verdicts(norms, mesh, varpi, phi_s, tail_check, len(traj.mesh)), single)


def _cascade_norms(system, phi_s, K, T, cfg, varpi):
    res = solve_cascade(
        system,
        phi_s,
        K,
        T,
        cfg,
        on_escape="continue",
        stop=_threshold_stop(varpi, lambda x: np.linalg.norm(x.sum(axis=-2), axis=-1)),
    )
    return res


def probe_y_threshold(
    system: DelaySystem,
    eig: Optional[EigenData],
    phi_s,
    K: int,
    T: float,
    varpi: float,
    cfg: StepperConfig,
    *,
    tail_check: Optional[bool] = None,
) -> ProbeResult:
    """Threshold test on the cascade approximation ``|Y_K|``; works for every model."""
    phi_s, single = _as_batch(phi_s, system.n)
    tail_check = system.F0 == 0 if tail_check is None else tail_check
    res = _cascade_norms(system, phi_s, K, T, cfg, varpi)
    mesh = _full_mesh(system, T, cfg)
    norms = _pad(res.approximation_norms(), res.mesh, mesh)
    return _finish(_verdicts(norms, mesh, varpi, phi_s, tail_check, len(res.mesh)), single)


def probe_scalar_bound(
    system: DelaySystem,
    eig: EigenData,
    phi_s,
    K: int,
    T: float,
    varpi: float,
    cfg: StepperConfig,
    *,
    tail_check: Optional[bool] = None,
    convention: str = "auto",
    nonlinear_scale: str = "column",
) -> ProbeResult:
    """Threshold test on the upper bound ``|Y_K| + |V| Z_K``.

    Because the upper bound dominates ``|x|``, an ``inside`` verdict here
    implies ``inside`` for the reference probe.  Raises
    UnsupportedNonlinearity for models without a polynomial majorant.
    """
    _single_variable_monomials(system)
    phi_s, single = _as_batch(phi_s, system.n)
    tail_check = system.F0 == 0 if tail_check is None else tail_check
    mesh = _full_mesh(system, T, cfg)
    res = _cascade_norms(system, phi_s, K, T, cfg, varpi)
    if len(res.mesh) < len(mesh):
        # every row already crossed the threshold with |Y_K| alone
        norms = _pad(res.approximation_norms(), res.mesh, mesh)
        return _finish(_verdicts(norms, mesh, varpi, phi_s, tail_check, len(res.mesh)), single)
    with np.errstate(over="ignore", invalid="ignore"):
        maj = residual_majorant(eig, system, res, K, convention=convention, nonlinear_scale=nonlinear_scale)
        approx = res.approximation_norms()
        t0, inv = mesh[0], 1.0 / cfg.step

        def measure(z):
            return approx[int(round((z_t[0] - t0) * inv))] + eig.normV * z[..., 0]

        z_t = [t0]
        base = _threshold_stop(varpi, measure)

        def stop(t, z):
            z_t[0] = t
            return base(t, z)

        Z = integrate_majorant(
            maj, system.delays, T, cfg, t0=system.t0, h_bounds=(system.h_min, system.h_max), on_escape="continue", stop=stop
        )
        if len(Z.mesh) < len(mesh):
            upper = _pad(approx[: len(Z.mesh)] + eig.normV * Z.states[..., 0], Z.mesh, mesh)
        else:
            upper = bilateral_bounds(res, Z, eig, K).upper
    return _finish(_verdicts(upper, mesh, varpi, phi_s, tail_check, len(Z.mesh)), single)


@dataclass(frozen=True)
class Prober:
    """Batched evaluator ``phi_s (B, n) -> exceeded (B,)`` for one method."""

    method: str
    system: DelaySystem
    T: float
    varpi: float
    cfg: StepperConfig
    K: int = 6
    eig: Optional[EigenData] = None
    tail_check: Optional[bool] = None
    options: Dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.method == "scalar_bound" and self.eig is None:
            raise ValueError("scalar_bound probing needs the eigendata of A")

    def probe(self, phi_s) -> ProbeResult:
        if self.method == "reference":
            return probe_reference(self.system, phi_s, self.T, self.varpi, self.cfg, tail_check=self.tail_check)
        if self.method == "y_threshold":
            return probe_y_threshold(
                self.system, self.eig, phi_s, self.K, self.T, self.varpi, self.cfg, tail_check=self.tail_check
            )
        return probe_scalar_bound(
            self.system, self.eig, phi_s, self.K, self.T, self.varpi, self.cfg, tail_check=self.tail_check, **self.options
        )

    def __call__(self, phi_s):
        return self.probe(np.atleast_2d(phi_s)).exceeded


def _search_rays(exceeded_fn, directions, rho_max, tol_rho, seed):
    """Lockstep doubling-then-bisection over many rays.

    ``exceeded_fn(phi_s (B, n)) -> bool (B,)``.  Returns radii and flags
    (``ok``, ``no_exceedance``, ``seed_exceeded``); unresolved radii are NaN.
    """
    if not tol_rho > 0:
        raise ValueError("tol_rho must be positive")
    if not 0 < seed <= rho_max:
        raise ValueError("seed must lie in (0, rho_max]")
    directions = np.asarray(directions, dtype=float).reshape(-1, 4)
    m = len(directions)
    lo = np.zeros(m)
    hi = np.full(m, np.nan)
    trial = np.full(m, float(seed))
    phase = np.zeros(m, dtype=int)  # 0 seed, 1 doubling, 2 bisection, 3 done
    flags = np.array(["ok"] * m, dtype=object)
    while True:
        active = np.flatnonzero(phase < 3)
        if not len(active):
            break
        d = directions[active]
        states = polar_to_state(trial[active] * d[:, 2], d[:, 0], trial[active] * d[:, 3], d[:, 1])
        out = np.asarray(exceeded_fn(states), dtype=bool)
        for j, idx in enumerate(active):
            rho, ex = trial[idx], out[j]
            if phase[idx] == 0 and ex:
                flags[idx] = "seed_exceeded"
                phase[idx] = 3
                continue
            if phase[idx] in (0, 1):
                if ex:
                    hi[idx] = rho
                    phase[idx] = 2
                else:
                    lo[idx] = rho
                    if rho >= rho_max:
                        flags[idx] = "no_exceedance"
                        phase[idx] = 3
                        continue
                    trial[idx] = min(2.0 * rho, rho_max)
                    phase[idx] = 1
                    continue
            else:
                if ex:
                    hi[idx] = rho
                else:
                    lo[idx] = rho
            if hi[idx] - lo[idx] <= tol_rho:
                phase[idx] = 3
            else:
                trial[idx] = 0.5 * (lo[idx] + hi[idx])
    radius = np.where(flags == "ok", lo, np.nan)
    return radius, flags


def radial_search(
    probe: Callable,
    direction,
    rho_max: float,
    tol_rho: float,
    seed: Optional[float] = None,
) -> float:
    """Largest inside scale along one ray, to within ``tol_rho``.

    ``probe(phi_s)`` returns True (or a ProbeResult / verdict string) when
    ``phi_s`` is outside.  The search doubles from ``seed`` until the first
    exceedance and bisects the last bracket; for non-monotone evaluators it
    returns the transition found by that scheme.
    """
    seed = min(tol_rho, rho_max) if seed is None else seed

    def exceeded_fn(states):
        out = []
        for phi in states:
            v = probe(phi)
            if isinstance(v, ProbeResult):
                v = v.exceeded
            elif isinstance(v, str):
                v = v == EXCEEDED
            out.append(bool(np.all(v)))
        return np.array(out)

    radius, flags = _search_rays(exceeded_fn, [direction], rho_max, tol_rho, seed)
    if flags[0] == "no_exceedance":
        raise NoExceedanceFound(f"still inside at rho_max={rho_max!r}")
    if flags[0] == "seed_exceeded":
        raise SeedExceeded(f"seed radius {seed!r} already exceeded")
    return float(radius[0])


def angle_grid(step: float = math.pi / 48) -> np.ndarray:
    """Angles ``0, step, ...`` covering ``[0, 2 pi)``."""
    count = int(round(2.0 * math.pi / step))
    if not math.isclose(count * step, 2.0 * math.pi, rel_tol=1e-9):
        raise ValueError("angular step must divide 2 pi")
    return step * np.arange(count)


@dataclass(frozen=True, eq=False)
class BoundaryEstimate:
    """Per-direction boundary radii and their projection onto the first plane.

    ``theta_grid`` holds ``(th1, th2)`` pairs; ``radius`` is NaN where
    ``flags`` is not ``ok``.  ``projection`` has one point per ``th1``: in
    slice mode the single ray, in envelope mode the minimum radius over
    ``th2`` (NaN when no ``th2`` resolved).
    """

    method: str
    theta_grid: np.ndarray
    radius: np.ndarray
    flags: np.ndarray
    weights: Tuple[float, float]
    mode: str
    projection_theta: np.ndarray
    projection_radius: np.ndarray
    projection: np.ndarray
    params: Dict = field(default_factory=dict)

    @property
    def resolved(self) -> np.ndarray:
        return self.flags == "ok"


def sweep(
    probe,
    grid: float = math.pi / 48,
    weights: Optional[Tuple[float, float]] = None,
    rho_max: float = 64.0,
    tol_rho: float = 1e-2,
    *,
    seed: Optional[float] = None,
    mode: str = "envelope",
    theta2: float = 0.0,
    theta1: Optional[Sequence[float]] = None,
    method: Optional[str] = None,
    params: Optional[Dict] = None,
) -> BoundaryEstimate:
    """Radial search over a double-polar angle grid.

    ``probe`` is a batched evaluator such as :class:`Prober`.  ``mode="slice"``
    searches one ray per ``th1`` with ``th2 = theta2`` and weights ``(1, 0)``
    unless given; ``mode="envelope"`` searches every ``(th1, th2)`` pair.
    """
    if mode not in ("slice", "envelope"):
        raise ValueError("mode must be 'slice' or 'envelope'")
    th1 = angle_grid(grid) if theta1 is None else np.asarray(theta1, dtype=float)
    if mode == "slice":
        pairs = np.stack([th1, np.full_like(th1, theta2)], axis=1)
    else:
        th2 = angle_grid(grid)
        pairs = np.stack(np.meshgrid(th1, th2, indexing="ij"), axis=-1).reshape(-1, 2)
    if weights is None:
        weights = (1.0, 0.0) if mode == "slice" else (1.0, 1.0)
    w1, w2 = (float(w) for w in weights)
    directions = np.column_stack([pairs, np.full(len(pairs), w1), np.full(len(pairs), w2)])
    seed = tol_rho if seed is None else seed
    radius, flags = _search_rays(probe, directions, rho_max, tol_rho, seed)
    if mode == "slice":
        proj_r = radius.copy()
    else:
        table = radius.reshape(len(th1), -1)
        with np.errstate(all="ignore"):
            proj_r = np.where(np.isnan(table).all(axis=1), np.nan, np.nanmin(np.where(np.isnan(table), np.inf, table), axis=1))
    projection = np.column_stack([proj_r * w1 * np.cos(th1), proj_r * w1 * np.sin(th1)])
    info = dict(params or {})
    info.update(grid=grid, rho_max=rho_max, tol_rho=tol_rho, seed=seed)
    return BoundaryEstimate(
        method=method or getattr(probe, "method", "custom"),
        theta_grid=pairs,
        radius=radius,
        flags=flags,
        weights=(w1, w2),
        mode=mode,
        projection_theta=th1,
        projection_radius=proj_r,
        projection=projection,
        params=info,
    )
