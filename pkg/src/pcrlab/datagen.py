"""Ground truth under a source condition and seeded design samples.

Everything lives in the population eigenbasis, so Sigma is diagonal and
Sigma^{1/2} is a coordinatewise scaling.  Random streams come from numpy's
Philox (64-bit counter-based) generator keyed by a ``SeedSequence``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectrum import ParameterError, Spectrum

FAMILIES = ("gaussian", "rademacher", "uniform")
H_MODES = ("random", "first", "flat")


def rng_for(*key: int) -> np.random.Generator:
    """Philox generator keyed by a tuple of non-negative integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


@dataclass(frozen=True)
class GroundTruth:
    spectrum: Spectrum
    s: float
    L: float
    h: np.ndarray
    f: np.ndarray
    sigma2: float

    @property
    def f_norm2(self) -> float:
        return float(self.f @ self.f)

    @property
    def f_l2_norm2(self) -> float:
        """||f||^2_{L^2(P^X)} = <f, Sigma f>."""
        return float(np.sum(self.spectrum.values * self.f**2))


def make_ground_truth(spectrum: Spectrum, s: float, L: float, seed: int = 0, h_mode: str = "random", sigma2: float = 1.0) -> GroundTruth:
    """Source element ``h`` with ``||h|| = L`` and target ``f = Sigma^s h``.

    h_mode: ``random`` (uniform on the sphere, seeded), ``first`` (L e_1) or
    ``flat`` (all coordinates equal).
    """
    if s < 0:
        raise ParameterError("smoothness s must be >= 0")
    if not L > 0:
        raise ParameterError("L must be > 0")
    if sigma2 < 0:
        raise ParameterError("sigma2 must be >= 0")
    p = spectrum.p
    if h_mode == "random":
        h = rng_for(int(seed), 0x5EED).standard_normal(p)
    elif h_mode == "first":
        h = np.zeros(p)
        h[0] = 1.0
    elif h_mode == "flat":
        h = np.ones(p)
    else:
        raise ParameterError(f"unknown h_mode {h_mode!r}")
    h = h * (L / np.linalg.norm(h))
    f = h if s == 0 else spectrum.values**s * h
    return GroundTruth(spectrum=spectrum, s=float(s), L=float(L), h=h, f=f, sigma2=float(sigma2))


@dataclass(frozen=True)
class DesignSample:
    X: np.ndarray
    eps: np.ndarray
    Y: np.ndarray
    n: int
    family: str
    seed: tuple


def _standardized(rng: np.random.Generator, family: str, shape) -> np.ndarray:
    if family == "gaussian":
        return rng.standard_normal(shape)
    if family == "rademacher":
        return 2.0 * rng.integers(0, 2, size=shape).astype(np.float64) - 1.0
    if family == "uniform":
        return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size=shape)
    raise ParameterError(f"unknown design family {family!r}")


def sample_design(gt: GroundTruth, n: int, family: str = "gaussian", seed=0) -> DesignSample:
    """Draw ``n`` i.i.d. pairs with ``X = Sigma^{1/2} Z`` and Gaussian noise.

    ``seed`` is an int or a tuple of ints; the design and the noise use
    separate child streams so changing sigma2 leaves X unchanged.
    """
    if n < 1:
        raise ParameterError("n must be >= 1")
    key = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    ss = np.random.SeedSequence([int(k) for k in key])
    design_ss, noise_ss = ss.spawn(2)
    Z = _standardized(np.random.Generator(np.random.Philox(design_ss)), family, (n, gt.spectrum.p))
    X = Z * np.sqrt(gt.spectrum.values)
    eps = np.sqrt(gt.sigma2) * np.random.Generator(np.random.Philox(noise_ss)).standard_normal(n)
    Y = X @ gt.f + eps
    return DesignSample(X=X, eps=eps, Y=Y, n=int(n), family=family, seed=key)


def dump_design(sample: DesignSample, path) -> None:
    """Write X, eps, Y as columns of a numeric CSV (17 significant digits)."""
    p = sample.X.shape[1]
    header = ",".join([f"x{j + 1}" for j in range(p)] + ["eps", "y"])
    table = np.column_stack([sample.X, sample.eps, sample.Y])
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt="%.17g")
