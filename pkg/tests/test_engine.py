from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delaybounds import NonFiniteState, OutOfDomain, StepExceedsMinDelay, StepperConfig, evaluate, integrate
from delaybounds.engine import constant_history, zero_history


def decay_run(step, T=1.0):
    return integrate(lambda t, x, past: -x, constant_history([1.0]), (0.0, T), StepperConfig(step=step))


def delayed_decay(step, T=2.0):
    return integrate(
        lambda t, x, past: -past(t - 1.0),
        constant_history([1.0]),
        (0.0, T),
        StepperConfig(step=step),
        min_delay=1.0,
        max_delay=1.0,
    )


def method_of_steps_exact(t):
    # x = 1 on [-1, 0], then piecewise polynomials
    t = np.asarray(t, dtype=float)
    return np.where(t <= 0, 1.0, np.where(t <= 1, 1.0 - t, 0.5 * t**2 - 2.0 * t + 1.5))


def test_exponential_decay_endpoint():
    traj = decay_run(1e-3)
    assert abs(evaluate(traj, 1.0)[0] - math.exp(-1.0)) <= 1e-6


def test_exponential_decay_midpoint():
    traj = decay_run(1e-3)
    assert abs(evaluate(traj, 0.5)[0] - 0.6065307) <= 1e-6


def test_interpolation_between_nodes():
    traj = decay_run(1e-2)
    ts = np.linspace(0.0, 1.0, 777)
    err = np.abs(traj.at_times(ts)[:, 0] - np.exp(-ts))
    assert err.max() < 1e-9


def test_method_of_steps_values():
    traj = delayed_decay(1e-3)
    assert abs(evaluate(traj, 1.0)[0]) <= 1e-8
    assert abs(evaluate(traj, 2.0)[0] + 0.5) <= 1e-8


def test_method_of_steps_max_error():
    traj = delayed_decay(1e-3)
    ts = np.linspace(-1.0, 2.0, 3001)
    err = np.abs(traj.at_times(ts)[:, 0] - method_of_steps_exact(ts))
    assert err.max() <= 1e-8


def test_zero_is_fixed_point():
    traj = integrate(
        lambda t, x, past: np.sin(x) + past(t - 0.3) ** 3,
        zero_history(2),
        (0.0, 3.0),
        StepperConfig(step=0.01),
        min_delay=0.3,
        max_delay=0.3,
    )
    assert not traj.states.any()


def test_convergence_order():
    errors = []
    for step in (0.1, 0.05):
        traj = decay_run(step, T=2.0)
        errors.append(np.max(np.abs(traj.states[:, 0] - np.exp(-traj.mesh))))
    assert errors[0] / errors[1] >= 14.0


def test_dense_output_against_fine_run():
    ts = np.linspace(0.0, 2.0, 1001)
    rhs = lambda t, x, past: -past(t - 1.0) * (1.0 + 0.5 * np.sin(3 * t))
    runs = {}
    for step in (0.02, 0.002):
        runs[step] = integrate(rhs, constant_history([1.0]), (0.0, 2.0), StepperConfig(step=step), min_delay=1.0, max_delay=1.0)
    diff = np.abs(runs[0.02].at_times(ts) - runs[0.002].at_times(ts)).max()
    assert diff < 50 * 0.02**4


def test_nodes_reproduced_exactly():
    traj = delayed_decay(1e-2)
    for i in (0, 1, 57, 100, len(traj.mesh) - 1):
        assert np.array_equal(evaluate(traj, traj.mesh[i]), traj.states[i])
    assert np.array_equal(traj.at_times(traj.mesh), traj.states)


def test_continuity_at_nodes():
    traj = delayed_decay(1e-2)
    for i in range(1, len(traj.mesh) - 1, 37):
        eps = 1e-12
        left = evaluate(traj, traj.mesh[i] - eps)
        right = evaluate(traj, traj.mesh[i] + eps)
        assert abs(left[0] - right[0]) < 1e-10


def test_history_delegation():
    hist = lambda t: np.array([2.0 + t])
    traj = integrate(lambda t, x, past: -past(t - 0.5), hist, (0.0, 1.0), StepperConfig(step=0.1), min_delay=0.5, max_delay=0.5)
    assert evaluate(traj, -0.25)[0] == 1.75
    assert traj.at_times([-0.5, 0.0])[0, 0] == 1.5


def test_constant_solution_interpolates_constant():
    traj = integrate(lambda t, x, past: np.zeros_like(x), constant_history([3.0, -1.0]), (0.0, 1.0), StepperConfig(step=0.1))
    for t in np.linspace(0.0, 1.0, 13):
        assert np.array_equal(evaluate(traj, t), [3.0, -1.0])


def test_out_of_domain():
    traj = delayed_decay(1e-2)
    with pytest.raises(OutOfDomain):
        evaluate(traj, -1.5)
    with pytest.raises(OutOfDomain):
        evaluate(traj, 2.1)


def test_step_larger_than_delay_rejected():
    with pytest.raises(StepExceedsMinDelay):
        integrate(lambda t, x, past: -past(t - 0.1), constant_history([1.0]), (0, 1), StepperConfig(step=0.2), min_delay=0.1)


def test_blow_up_raises_and_truncates():
    rhs = lambda t, x, past: x**3
    with pytest.raises(NonFiniteState) as info:
        integrate(rhs, constant_history([1.0]), (0.0, 2.0), StepperConfig(step=1e-3))
    assert 0.4 < info.value.time < 0.6
    traj = integrate(rhs, constant_history([1.0]), (0.0, 2.0), StepperConfig(step=1e-3), on_escape="truncate")
    assert traj.escaped and 0.4 < traj.escape_time < 0.6
    assert np.isfinite(traj.states).all()


def test_batched_rows_are_independent():
    rhs = lambda t, x, past: -x * past(t - 0.2) ** 2
    batch = integrate(rhs, constant_history([[0.5], [1.5]]), (0, 3), StepperConfig(step=0.01), min_delay=0.2, max_delay=0.2)
    for row, x0 in enumerate((0.5, 1.5)):
        single = integrate(rhs, constant_history([x0]), (0, 3), StepperConfig(step=0.01), min_delay=0.2, max_delay=0.2)
        assert np.array_equal(batch.states[:, row], single.states)


def test_determinism():
    a, b = delayed_decay(1e-2), delayed_decay(1e-2)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.derivs, b.derivs)


def test_invalid_step():
    with pytest.raises(ValueError):
        StepperConfig(step=0.0)


@settings(max_examples=30, deadline=None)
@given(rate=st.floats(0.1, 3.0), x0=st.floats(-5.0, 5.0), t=st.floats(0.0, 2.0))
def test_linear_decay_property(rate, x0, t):
    traj = integrate(lambda s, x, past: -rate * x, constant_history([x0]), (0.0, 2.0), StepperConfig(step=1e-2))
    assert abs(evaluate(traj, t)[0] - x0 * math.exp(-rate * t)) <= 1e-7 * (1 + abs(x0))
