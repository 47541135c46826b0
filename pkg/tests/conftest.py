from __future__ import annotations

import numpy as np
import pytest

from delaybounds import OscillatorParams, StepperConfig, build_model, eigen_decompose


@pytest.fixture(scope="session")
def params():
    return OscillatorParams(mu1=1.0, mu2=1.0, h0=0.5, h1=1.0)


@pytest.fixture(scope="session")
def vdp(params):
    return build_model("vdp", params)


@pytest.fixture(scope="session")
def duffing(params):
    return build_model("duffing", params)


@pytest.fixture(scope="session")
def eig(vdp):
    return eigen_decompose(vdp.A)


@pytest.fixture(scope="session")
def coarse():
    return StepperConfig(step=0.01)


def linear_params(**extra):
    """Oscillator parameters with every nonlinear and time-varying term switched off."""
    base = dict(mu1=0.0, mu2=0.0, h0=0.5, h1=1.0, a1=0.0, a2=0.0, b1=0.0, b2=0.0, F0=0.0)
    base.update(extra)
    return OscillatorParams(**base)


def expm_oracle(A, t):
    """exp(A t) from a truncated Taylor series with scaling and squaring."""
    A = np.asarray(A, dtype=float) * t
    s = max(0, int(np.ceil(np.log2(max(np.abs(A).sum(axis=1).max(), 1e-300)))) + 1)
    B = A / 2**s
    out = np.eye(len(A))
    term = np.eye(len(A))
    for k in range(1, 30):
        term = term @ B / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out
