"""Fixed-step RK4 integration of ODEs and DDEs by the method of steps.

The solution is stored at the mesh nodes together with the right-hand side
evaluated there, which gives a C1 piecewise cubic Hermite interpolant.  A
delayed argument ``x(t - h)`` is resolved against that interpolant (or the
history function for ``t - h <= t0``).  Because the step never exceeds the
smallest delay, every delayed query falls on an already completed interval.

States may carry arbitrary leading batch dimensions: a right-hand side that
maps arrays of shape ``(B, n)`` to ``(B, n)`` integrates ``B`` independent
problems in one pass.  Non-finite values stay confined to their own batch row.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import NonFiniteState, OutOfDomain, StepExceedsMinDelay

__all__ = [
    "StepperConfig",
    "Trajectory",
    "integrate",
    "evaluate",
    "hermite",
    "constant_history",
    "zero_history",
]

# relative slack on node comparisons, in units of the step
_NODE_SLACK = 1e-9


@dataclass(frozen=True)
class StepperConfig:
    """Integrator settings.

    ``step`` is the fixed step size.  ``rtol``/``atol`` are not used by the
    fixed-step scheme; they are carried for validation runs and metadata.
    """

    step: float = 1e-3
    max_t: Optional[float] = None
    rtol: float = 1e-5
    atol: float = 1e-6

    def __post_init__(self):
        if not (self.step > 0 and np.isfinite(self.step)):
            raise ValueError(f"step must be positive, got {self.step!r}")


def hermite(s, hstep, y0, m0, y1, m1):
    """Cubic Hermite interpolant on one interval at fraction ``s`` in [0, 1]."""
    s2 = s * s
    s3 = s2 * s
    h00 = 2.0 * s3 - 3.0 * s2 + 1.0
    h10 = s3 - 2.0 * s2 + s
    h01 = -2.0 * s3 + 3.0 * s2
    h11 = s3 - s2
    return h00 * y0 + (h10 * hstep) * m0 + h01 * y1 + (h11 * hstep) * m1


def constant_history(value):
    value = np.asarray(value, dtype=float)

    def phi(t):
        return value.copy()

    return phi


def zero_history(shape):
    def phi(t):
        return np.zeros(shape)

    return phi


def _make_mesh(t0, t_end, step):
    n_steps = int(np.ceil((t_end - t0) / step - _NODE_SLACK))
    n_steps = max(n_steps, 1)
    mesh = t0 + step * np.arange(n_steps + 1, dtype=float)
    mesh[-1] = t_end
    return mesh


class _Dense:
    """Shared lookup logic for finished and partially built solutions."""

    __slots__ = ("t0", "mesh", "states", "derivs", "history", "step", "inv_step", "h_max")

    def __init__(self, t0, mesh, states, derivs, history, h_max):
        self.t0 = t0
        self.mesh = mesh
        self.states = states
        self.derivs = derivs
        self.history = history
        self.step = mesh[1] - mesh[0] if len(mesh) > 1 else 1.0
        self.inv_step = 1.0 / self.step
        self.h_max = h_max

    def lookup(self, t, last):
        """Value at time ``t`` using nodes ``0..last`` (derivs valid there)."""
        if t < self.t0:
            return np.asarray(self.history(t), dtype=float)
        mesh = self.mesh
        i = int((t - self.t0) * self.inv_step)
        if i >= last:
            if t > mesh[last] + _NODE_SLACK * self.step:
                raise StepExceedsMinDelay(
                    f"delayed query at t={t!r} beyond solved time {mesh[last]!r}; "
                    "the step must not exceed the smallest delay"
                )
            if t >= mesh[last]:
                return self.states[last]
            i = last - 1
        if mesh[i] > t:
            i -= 1
        elif mesh[i + 1] <= t:
            i += 1
            if i >= last:
                return self.states[last]
        t_i = mesh[i]
        if t == t_i:
            return self.states[i]
        hstep = mesh[i + 1] - t_i
        s = (t - t_i) / hstep
        return hermite(s, hstep, self.states[i], self.derivs[i], self.states[i + 1], self.derivs[i + 1])


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Dense numerical solution on ``[t0, mesh[-1]]`` plus its history.

    ``states[i]`` is the stored solution at ``mesh[i]``; ``derivs[i]`` the
    right-hand side there.  ``escaped`` marks a run cut short by a non-finite
    state, in which case ``escape_time`` is the first time the state blew up.
    """

    t0: float
    mesh: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    history: Callable
    h_max: float = 0.0
    escaped: bool = False
    escape_time: Optional[float] = None

    def __post_init__(self):
        for arr in (self.mesh, self.states, self.derivs):
            arr.flags.writeable = False
        object.__setattr__(
            self, "_dense", _Dense(self.t0, self.mesh, self.states, self.derivs, self.history, self.h_max)
        )

    @property
    def t_end(self) -> float:
        return float(self.mesh[-1])

    @property
    def shape(self):
        return self.states.shape[1:]

    def __call__(self, t):
        return evaluate(self, t)

    def at_times(self, times):
        """Evaluate at an array of times in ``[t0 - h_max, t_end]``."""
        times = np.asarray(times, dtype=float)
        if times.size and (
            times.min() < self.t0 - self.h_max - _NODE_SLACK or times.max() > self.t_end + _NODE_SLACK * 1e3
        ):
            raise OutOfDomain("times outside trajectory domain")
        before = times < self.t0
        if before.any():
            out = np.empty(times.shape + self.shape)
            out[before] = [np.asarray(self.history(s), dtype=float) for s in times[before]]
            if not before.all():
                out[~before] = self.at_times(times[~before])
            return out
        mesh = self.mesh
        if len(mesh) == 1:
            return np.broadcast_to(self.states[0], times.shape + self.shape).copy()
        idx = np.searchsorted(mesh, times, side="right") - 1
        idx = np.clip(idx, 0, len(mesh) - 2)
        hstep = mesh[idx + 1] - mesh[idx]
        s = (times - mesh[idx]) / hstep
        extra = (1,) * (self.states.ndim - 1)
        s = s.reshape(s.shape + extra)
        hs = hstep.reshape(hstep.shape + extra)
        out = hermite(s, hs, self.states[idx], self.derivs[idx], self.states[idx + 1], self.derivs[idx + 1])
        exact = np.flatnonzero(mesh[idx] == times)
        out[exact] = self.states[idx[exact]]
        return out

    def norms(self):
        """Euclidean norm of the state over the last axis at every node."""
        with np.errstate(over="ignore", invalid="ignore"):
            return np.linalg.norm(self.states, axis=-1)


def evaluate(traj: Trajectory, t: float) -> np.ndarray:
    """State at time ``t``; Hermite inside the mesh, history before ``t0``."""
    t = float(t)
    if t < traj.t0 - traj.h_max - _NODE_SLACK or t > traj.t_end:
        raise OutOfDomain(f"t={t!r} outside [{traj.t0 - traj.h_max!r}, {traj.t_end!r}]")
    out = traj._dense.lookup(t, len(traj.mesh) - 1)
    return np.array(out, dtype=float)


def integrate(
    rhs: Callable,
    history: Callable,
    t_span,
    cfg: StepperConfig,
    *,
    min_delay: Optional[float] = None,
    max_delay: float = 0.0,
    on_escape: str = "raise",
    stop: Optional[Callable] = None,
) -> Trajectory:
    """Integrate ``x' = rhs(t, x, past)`` with classical RK4 on a fixed mesh.

    ``past(s)`` returns the solution at an earlier time ``s``.  Pass
    ``min_delay`` (the smallest delay) whenever ``rhs`` reads the past so the
    step size can be validated up front.

    ``on_escape`` selects what happens when a state turns non-finite:
    ``"raise"`` raises NonFiniteState, ``"truncate"`` returns the trajectory up
    to the last finite node flagged ``escaped``, ``"continue"`` keeps going
    (batched runs where only some rows blow up).  ``stop(t, x)`` may end the
    run early after any step.
    """
    if on_escape not in ("raise", "truncate", "continue"):
        raise ValueError(f"unknown on_escape mode {on_escape!r}")
    t0, t_end = float(t_span[0]), float(t_span[1])
    if not t_end > t0:
        raise ValueError("t_span must be increasing")
    step = cfg.step
    if min_delay is not None and step > min_delay * (1.0 + 1e-12):
        raise StepExceedsMinDelay(f"step {step!r} exceeds the smallest delay {min_delay!r}")

    mesh = _make_mesh(t0, t_end, step)
    n_nodes = len(mesh)
    x0 = np.array(history(t0), dtype=float)
    states = np.empty((n_nodes,) + x0.shape)
    derivs = np.empty_like(states)
    states[0] = x0
    dense = _Dense(t0, mesh, states, derivs, history, max_delay)
    last = [0]

    def past(s):
        return dense.lookup(s, last[0])

    escaped = False
    escape_time = None
    end = n_nodes - 1
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n_nodes - 1):
            t = mesh[i]
            x = states[i]
            hs = mesh[i + 1] - t
            half = 0.5 * hs
            k1 = rhs(t, x, past)
            derivs[i] = k1
            last[0] = i
            k2 = rhs(t + half, x + half * k1, past)
            k3 = rhs(t + half, x + half * k2, past)
            k4 = rhs(t + hs, x + hs * k3, past)
            x_new = x + (hs / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            states[i + 1] = x_new
            if on_escape != "continue" and not np.isfinite(x_new).all():
                if on_escape == "raise":
                    raise NonFiniteState(
                        f"non-finite state at t={mesh[i + 1]!r}", time=float(mesh[i + 1]), state=x_new.copy()
                    )
                escaped = True
                escape_time = float(mesh[i + 1])
                end = i
                break
            if stop is not None and stop(mesh[i + 1], x_new):
                end = i + 1
                break
        last[0] = end
        if end == n_nodes - 1 or not escaped:
            derivs[end] = rhs(mesh[end], states[end], past)
    return Trajectory(
        t0=t0,
        mesh=mesh[: end + 1].copy(),
        states=states[: end + 1].copy(),
        derivs=derivs[: end + 1].copy(),
        history=history,
        h_max=float(max_delay),
        escaped=escaped,
        escape_time=escape_time,
    )
