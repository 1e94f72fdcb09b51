"""Empirical PCA, principal component regression and the oracle fit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectrum import Spectrum


class DataError(ValueError):
    """Non-finite or malformed design."""


class DegenerateFitError(ArithmeticError):
    """The fit needs the inverse of a zero eigenvalue."""


@dataclass(frozen=True)
class PcaDecomposition:
    lambda_hat: np.ndarray  # descending
    U_hat: np.ndarray  # column j is u_hat_{j+1}
    n: int

    @property
    def p(self) -> int:
        return int(self.lambda_hat.shape[0])

    def projector(self, lo: int, hi: int) -> np.ndarray:
        """Empirical projector onto columns lo..hi-1 (0-based, half-open)."""
        V = self.U_hat[:, lo:hi]
        return V @ V.T


def sample_covariance(X: np.ndarray) -> np.ndarray:
    n = X.shape[0]
    S = (X.T @ X) / n
    return 0.5 * (S + S.T)


def pca(X: np.ndarray, n: int | None = None) -> PcaDecomposition:
    """Eigendecomposition of the sample covariance (1/n) X^T X.

    Eigenvalues are sorted descending (stable for ties); values below the
    rank tolerance ``max(n, p) * eps * lambda_hat_1`` are set to 0.  Every
    eigenvector is signed so its largest-magnitude coordinate is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError("design must be a 2-d array")
    if not np.all(np.isfinite(X)):
        raise DataError("design contains non-finite entries")
    if n is None:
        n = X.shape[0]
    if n != X.shape[0]:
        raise DataError(f"n={n} does not match design with {X.shape[0]} rows")
    w, V = np.linalg.eigh(sample_covariance(X))
    order = np.argsort(-w, kind="stable")
    w = w[order]
    w[w <= max(X.shape) * np.finfo(np.float64).eps * max(w[0], 0.0)] = 0.0
    V = V[:, order]
    pivot = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[pivot, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    V = V * signs
    return PcaDecomposition(lambda_hat=w, U_hat=V, n=int(n))


@dataclass(frozen=True)
class PcrFit:
    d: int
    coeffs: np.ndarray
    lambda_hat_d: float
    thresholded: bool


@dataclass(frozen=True)
class OracleFit:
    d: int
    coeffs: np.ndarray
    lambda_hat_prime_d: float
    thresholded: bool


def _check_d(d: int, p: int) -> None:
    if not 1 <= d <= p:
        raise ValueError(f"cut dimension d={d} outside [1, {p}]")


def pcr_fit(decomp: PcaDecomposition, X: np.ndarray, Y: np.ndarray, d: int, spectrum: Spectrum | None = None, threshold: bool = True) -> PcrFit:
    """PCR in dimension d, zeroed when lambda_hat_d < lambda_d / 2.

    ``threshold=False`` (or no spectrum) returns the raw estimator.
    """
    _check_d(d, decomp.p)
    lam_d_hat = float(decomp.lambda_hat[d - 1])
    if threshold and spectrum is not None and lam_d_hat < spectrum.lam(d) / 2:
        return PcrFit(d, np.zeros(decomp.p), lam_d_hat, True)
    if not lam_d_hat > 0:
        raise DegenerateFitError(f"lambda_hat_{d} = 0")
    Ud = decomp.U_hat[:, :d]
    scores = Ud.T @ (X.T @ Y) / decomp.n  # (1/n) <S_n u_j, Y>
    coeffs = Ud @ (scores / decomp.lambda_hat[:d])
    return PcrFit(d, coeffs, lam_d_hat, False)


def oracle_fit(X: np.ndarray, Y: np.ndarray, d: int, spectrum: Spectrum | None = None, threshold: bool = True) -> OracleFit:
    """Least squares on the first d population coordinates.

    Thresholded to zero when the d-th eigenvalue of the projected empirical
    covariance falls below lambda_d / 2.
    """
    n, p = X.shape
    _check_d(d, p)
    Xd = X[:, :d]
    lam_prime = np.linalg.eigvalsh(sample_covariance(Xd))
    lam_prime_d = float(max(lam_prime[0], 0.0))  # ascending: index 0 is the d-th largest
    if threshold and spectrum is not None and lam_prime_d < spectrum.lam(d) / 2:
        return OracleFit(d, np.zeros(p), lam_prime_d, True)
    if not lam_prime_d > 0:
        raise DegenerateFitError("projected design is singular")
    sol, *_ = np.linalg.lstsq(Xd, Y, rcond=None)
    coeffs = np.zeros(p)
    coeffs[:d] = sol
    return OracleFit(d, coeffs, lam_prime_d, False)
