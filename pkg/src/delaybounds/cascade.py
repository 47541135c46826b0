"""Successive approximations y_1..y_K and their partial sums Y_K.

    y_1' = A y_1 + F(t),                                  y_1 = phi on history
    y_2' = A y_2 + G y_1 + E y_1(t-h0) + f(Y_1),           y_2 = 0 on history
    y_k' = A y_k + G y_{k-1} + E y_{k-1}(t-h0)
           + f(Y_{k-1}) - f(Y_{k-2}),                      y_k = 0 on history

Every forcing term depends only on lower iterates, so the block system is
lower triangular.  It is integrated as one stacked state of shape
``(..., K, n)``: row ``k`` only ever reads rows ``< k``, hence each iterate is
the solution of a linear constant-coefficient ODE with a known forcing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .engine import StepperConfig, Trajectory, integrate
from .errors import MissingIterate, NonFiniteState, NotHurwitz
from .models import DelaySystem
from .spectral import EigenData

__all__ = ["CascadeResult", "DecayReport", "solve_cascade", "check_decay", "default_decay_constant"]


@dataclass(frozen=True, eq=False)
class CascadeResult:
    """Iterates ``y_1..y_K`` and partial sums ``Y_1..Y_K`` as trajectories.

    ``phi_s`` may carry leading batch axes, in which case every trajectory
    does too.
    """

    iterates: List[Trajectory]
    partial_sums: List[Trajectory]
    K: int
    phi_s: np.ndarray
    system: DelaySystem

    @property
    def mesh(self) -> np.ndarray:
        return self.iterates[0].mesh

    def y(self, k: int) -> Trajectory:
        """Iterate ``y_k`` (1-based)."""
        if not 1 <= k <= self.K:
            raise MissingIterate(f"iterate {k} not available (depth {self.K})")
        return self.iterates[k - 1]

    def Y(self, k: int) -> Optional[Trajectory]:
        """Partial sum ``Y_k`` (1-based); ``Y_0`` is ``None`` (identically zero)."""
        if k == 0:
            return None
        if not 1 <= k <= self.K:
            raise MissingIterate(f"partial sum {k} not available (depth {self.K})")
        return self.partial_sums[k - 1]

    def approximation_norms(self, k: Optional[int] = None) -> np.ndarray:
        """``|Y_k|`` at every mesh node (defaults to ``k = K``)."""
        return self.Y(self.K if k is None else k).norms()


def _cascade_rhs(system: DelaySystem, K: int):
    A_T = system.A.T
    h0 = system.delays[0]
    nl_delays = system.delays[1:]
    has_terms = bool(system.terms)

    def rhs(t, Ys, past):
        out = Ys @ A_T
        if system.F0:
            out[..., 0, :] += system.F(t)
        if K == 1:
            return out
        lagged = past(t - h0(t))
        out[..., 1:, :] += Ys[..., :-1, :] @ system.G(t).T + lagged[..., :-1, :] @ system.E(t).T
        if has_terms:
            # f at Y_1..Y_{K-1}; the stacked cumulative sum gives all partial sums at once
            args = [np.cumsum(Ys[..., :-1, :], axis=-2)]
            for h in nl_delays:
                args.append(np.cumsum(past(t - h(t))[..., :-1, :], axis=-2))
            fv = system.f(t, args)
            out[..., 1, :] += fv[..., 0, :]
            if K > 2:
                out[..., 2:, :] += fv[..., 1:, :] - fv[..., :-1, :]
        return out

    return rhs


def _split_history(phi_s, k):
    if k == 0:

        def hist(t):
            return phi_s.copy()

    else:
        zeros = np.zeros_like(phi_s)

        def hist(t):
            return zeros.copy()

    return hist


def _sum_history(phi_s):
    def hist(t):
        return phi_s.copy()

    return hist


def solve_cascade(
    system: DelaySystem,
    phi_s,
    K: int,
    T: float,
    cfg: StepperConfig,
    *,
    on_escape: str = "raise",
    stop=None,
) -> CascadeResult:
    """Integrate the first ``K`` successive approximations with constant history ``phi_s``.

    With ``on_escape="raise"`` a blow-up raises NonFiniteState whose ``index``
    is the first iterate (1-based) that became non-finite.  Batched runs use
    ``"continue"``; ``stop(t, stacked_state)`` may end the run early.
    """
    if K < 1:
        raise ValueError("cascade depth K must be at least 1")
    phi_s = np.asarray(phi_s, dtype=float)
    if phi_s.shape[-1] != system.n:
        raise ValueError(f"phi_s must have trailing dimension {system.n}")
    stacked0 = np.zeros(phi_s.shape[:-1] + (K, system.n))
    stacked0[..., 0, :] = phi_s

    def history(t):
        return stacked0.copy()

    uses_past = K > 1
    try:
        traj = integrate(
            _cascade_rhs(system, K),
            history,
            (system.t0, T),
            cfg,
            min_delay=system.h_min if uses_past else None,
            max_delay=system.h_max,
            on_escape=on_escape,
            stop=stop,
        )
    except NonFiniteState as exc:
        bad = ~np.isfinite(exc.state).reshape(-1, K, system.n).any(axis=(0, 2))
        index = int(np.argmax(bad)) + 1
        raise NonFiniteState(f"iterate y_{index} blew up: {exc}", time=exc.time, index=index, state=exc.state) from exc

    iterates, sums = [], []
    run_s, run_d = None, None
    for k in range(K):
        s_k = traj.states[..., k, :]
        d_k = traj.derivs[..., k, :]
        iterates.append(
            Trajectory(
                t0=traj.t0,
                mesh=traj.mesh,
                states=np.ascontiguousarray(s_k),
                derivs=np.ascontiguousarray(d_k),
                history=_split_history(phi_s, k),
                h_max=traj.h_max,
                escaped=traj.escaped,
                escape_time=traj.escape_time,
            )
        )
        run_s = s_k.copy() if run_s is None else run_s + s_k
        run_d = d_k.copy() if run_d is None else run_d + d_k
        sums.append(
            Trajectory(
                t0=traj.t0,
                mesh=traj.mesh,
                states=run_s,
                derivs=run_d,
                history=_sum_history(phi_s),
                h_max=traj.h_max,
                escaped=traj.escaped,
                escape_time=traj.escape_time,
            )
        )
    return CascadeResult(iterates=iterates, partial_sums=sums, K=K, phi_s=phi_s, system=system)


@dataclass(frozen=True)
class DecayReport:
    tail_max: float
    threshold: float
    passed: bool
    eta: float
    t_tail: float


def default_decay_constant(eig: EigenData) -> float:
    """Heuristic O(F0) constant ``10 (1 + |V||V^-1|) / eta``."""
    return 10.0 * (1.0 + eig.normV * eig.normVinv) / eig.eta


def check_decay(
    res: CascadeResult,
    eig: EigenData,
    F0: float,
    tail_fraction: float = 0.2,
    decay_tol: float = 1e-4,
    C: Optional[float] = None,
) -> DecayReport:
    """Long-time envelope of ``|Y_K|``: vanishes for F0 = 0, is O(F0) otherwise."""
    if not eig.hurwitz:
        raise NotHurwitz(f"largest real part {eig.alpha1} is not negative")
    if not 0 < tail_fraction < 1:
        raise ValueError("tail_fraction must lie in (0, 1)")
    mesh = res.mesh
    t_tail = mesh[0] + (1.0 - tail_fraction) * (mesh[-1] - mesh[0])
    norms = res.approximation_norms()
    tail = norms[mesh >= t_tail]
    tail_max = float(np.max(tail)) if np.all(np.isfinite(tail)) else float("inf")
    if F0 == 0:
        threshold = decay_tol
    else:
        threshold = (default_decay_constant(eig) if C is None else C) * F0
    return DecayReport(
        tail_max=tail_max, threshold=threshold, passed=tail_max <= threshold, eta=eig.eta, t_tail=float(t_tail)
    )
