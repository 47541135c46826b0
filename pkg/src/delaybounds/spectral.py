"""Eigenbasis of the constant matrix and the norms built from it."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DefectiveMatrix

__all__ = ["EigenData", "eigen_decompose", "g_norm", "transformed_norm", "induced_norm"]


def induced_norm(M) -> float:
    """Spectral norm (largest singular value) of a real or complex matrix."""
    return float(np.linalg.norm(M, 2))


@dataclass(frozen=True, eq=False)
class EigenData:
    """Eigenvectors ``V`` (unit columns, first nonzero entry real positive),
    eigenvalues sorted by descending real part, and derived constants.

    ``kappa[i]`` is the absolute row sum of ``V``; ``alpha1``/``alphan`` are
    the largest/smallest real parts.
    """

    A: np.ndarray
    V: np.ndarray
    Vinv: np.ndarray
    lambdas: np.ndarray
    alpha1: float
    alphan: float
    kappa: np.ndarray
    normV: float
    normVinv: float

    @property
    def eta(self) -> float:
        return -self.alpha1

    @property
    def hurwitz(self) -> bool:
        return self.alpha1 < 0

    def to_eigen(self, M):
        """Similarity transform ``V^-1 M V``."""
        return self.Vinv @ M @ self.V


def _normalize_columns(V):
    V = V / np.linalg.norm(V, axis=0)
    for j in range(V.shape[1]):
        col = V[:, j]
        scale = np.max(np.abs(col))
        k = int(np.flatnonzero(np.abs(col) > 1e-12 * scale)[0])
        V[:, j] = col * (abs(col[k]) / col[k])
        # exact zero imaginary part on the pivot
        V[k, j] = abs(col[k])
    return V


def eigen_decompose(A, tol: float = 1e-10, policy: str = "strict", separation: float = 1e-8) -> EigenData:
    """Eigendecomposition of a small real matrix with simple eigenvalues.

    Eigenvalues are ordered by descending real part, ties broken by
    descending imaginary part.  Under ``policy="strict"`` eigenvalues closer
    than ``separation * max(1, |A|)`` raise DefectiveMatrix; ``"permissive"``
    only warns and proceeds if the residual checks pass.
    """
    if policy not in ("strict", "permissive"):
        raise ValueError(f"unknown policy {policy!r}")
    A = np.array(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("A must be square")
    lam, V = np.linalg.eig(A)
    lam = lam.astype(complex)
    order = np.lexsort((-lam.imag, -lam.real))
    lam = lam[order]
    V = _normalize_columns(V.astype(complex)[:, order])

    scale = max(1.0, induced_norm(A))
    gaps = np.abs(lam[:, None] - lam[None, :]) + np.diag(np.full(n, np.inf))
    if n > 1 and gaps.min() <= separation * scale:
        msg = f"repeated eigenvalues (min gap {gaps.min():.3e})"
        if policy == "strict":
            raise DefectiveMatrix(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)

    try:
        Vinv = np.linalg.inv(V)
    except np.linalg.LinAlgError as exc:
        raise DefectiveMatrix("eigenvector matrix is singular") from exc
    resid = induced_norm(A @ V - V * lam[None, :])
    if resid > tol * scale:
        raise DefectiveMatrix(f"eigen residual {resid:.3e} exceeds {tol * scale:.3e}")
    inv_resid = induced_norm(V @ Vinv - np.eye(n))
    if inv_resid > tol:
        raise DefectiveMatrix(f"inverse residual {inv_resid:.3e} exceeds {tol:.3e}")

    return EigenData(
        A=A,
        V=V,
        Vinv=Vinv,
        lambdas=lam,
        alpha1=float(lam[0].real),
        alphan=float(lam[-1].real),
        kappa=np.abs(V).sum(axis=1),
        normV=induced_norm(V),
        normVinv=induced_norm(Vinv),
    )


def transformed_norm(M, eig: EigenData, t: float) -> float:
    """``|V^-1 M(t) V|``; ``M`` may be a matrix or a function of time."""
    Mt = M(t) if callable(M) else M
    return induced_norm(eig.Vinv @ Mt @ eig.V)


def g_norm(G, eig: EigenData, t: float) -> float:
    """Norm of the eigenbasis perturbation with its imaginary diagonal removed."""
    Gt = G(t) if callable(G) else G
    Gx = eig.Vinv @ Gt @ eig.V
    Gx = Gx - 1j * np.diag(np.diag(Gx).imag)
    return induced_norm(Gx)
