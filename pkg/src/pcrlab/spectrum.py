"""Eigenvalue models of the covariance operator and spectral-gap searches."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

KINDS = ("isotropic", "exponential", "polynomial", "approx_polynomial")


class ParameterError(ValueError):
    """Invalid model parameter."""


@dataclass(frozen=True)
class Spectrum:
    values: np.ndarray
    kind: str
    alpha: float = 0.0
    c_ev: float = 1.0
    seed: int | None = None

    @property
    def p(self) -> int:
        return int(self.values.shape[0])

    def lam(self, j: int) -> float:
        """1-based eigenvalue accessor."""
        return float(self.values[j - 1])

    def trace(self) -> float:
        return float(np.sum(self.values))

    def tail_trace(self, r: int) -> float:
        return float(np.sum(self.values[r:]))

    def to_record(self) -> dict:
        return {
            "kind": self.kind,
            "alpha": self.alpha,
            "c_ev": self.c_ev,
            "seed": self.seed,
            "values": [float(v) for v in self.values],
        }


def make_spectrum(kind: str, alpha: float = 0.0, p: int = 10, c_ev: float = 1.0, seed: int | None = 0) -> Spectrum:
    """Build one of the four eigenvalue models, truncated at dimension ``p``.

    ``approx_polynomial`` multiplies ``j**-alpha`` by i.i.d. log-uniform
    factors on ``[1/c_ev, c_ev]`` drawn from ``seed`` and sorts the result in
    descending order; the sorted sequence still lies inside the two-sided
    envelope ``c_ev**-1 j**-alpha <= lambda_j <= c_ev j**-alpha``.
    """
    kind = kind.lower()
    if kind not in KINDS:
        raise ParameterError(f"unknown spectrum kind {kind!r}; expected one of {KINDS}")
    p = int(p)
    if p < 1:
        raise ParameterError("p must be >= 1")
    if c_ev < 1:
        raise ParameterError("c_ev must be >= 1")
    j = np.arange(1, p + 1, dtype=np.float64)
    if kind == "isotropic":
        values = np.ones(p)
    elif kind == "exponential":
        if not alpha > 0:
            raise ParameterError("exponential decay needs alpha > 0")
        values = np.exp(-alpha * j)
    else:
        if not alpha > 1:
            raise ParameterError(f"{kind} decay needs alpha > 1")
        values = j ** (-alpha)
        if kind == "approx_polynomial" and c_ev > 1:
            rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(0 if seed is None else int(seed))))
            log_c = math.log(c_ev)
            u = np.exp(rng.uniform(-log_c, log_c, size=p))
            values = np.sort(values * u)[::-1].copy()
    values.setflags(write=False)
    return Spectrum(values=values, kind=kind, alpha=float(alpha), c_ev=float(c_ev), seed=seed)


def choose_truncation(kind: str, alpha: float, d_max: int, tail_tol: float = 1e-6, p_cap: int = 256) -> int:
    """Truncation dimension for rate studies.

    Smallest p with idealised tail trace below ``tail_tol * trace``, capped at
    ``p_cap``, and never below ``4 * d_max``.
    """
    floor = 4 * int(d_max)
    if kind == "exponential":
        # sum_{k>p} e^{-ak} = e^{-ap} / (e^a - 1), trace = 1 / (e^a - 1)
        p_tail = math.ceil(-math.log(tail_tol) / alpha)
    elif kind in ("polynomial", "approx_polynomial"):
        # integral bound: sum_{k>p} k^-a <= p^(1-a) / (a - 1)
        from scipy.special import zeta

        total = zeta(alpha)
        p_tail = math.ceil((tail_tol * total * (alpha - 1)) ** (-1.0 / (alpha - 1)))
    else:
        p_tail = floor
    return max(floor, min(p_tail, p_cap))


@dataclass(frozen=True)
class GapReport:
    r: int
    sum_below: float
    sum_above: float
    rel_gap: float
    defined: bool


def gap_report(spectrum: Spectrum, r: int) -> GapReport:
    p = spectrum.p
    if not 1 <= r < p:
        raise ParameterError(f"gap index r={r} outside [1, {p - 1}]")
    lam_r, lam_next = spectrum.lam(r), spectrum.lam(r + 1)
    if not lam_r > lam_next:
        return GapReport(r, math.nan, math.nan, math.nan, False)
    below, above = _kernels.gap_sums(spectrum.values, r, r)
    return GapReport(r, float(below[0]), float(above[0]), lam_r / (lam_r - lam_next), True)


@dataclass(frozen=True)
class GapSearch:
    """Result of a gap-index scan; ``criterion`` is the minimised maximum."""

    r: int
    criterion: float
    sum_norm: float
    rel_gap_norm: float
    window: tuple[int, int]
    report: GapReport


def _scan(spectrum: Spectrum, lo: int, hi: int, include_above: bool) -> GapSearch | None:
    hi = min(hi, spectrum.p - 1)
    if lo > hi:
        return None
    vals = spectrum.values
    below, above = _kernels.gap_sums(vals, lo, hi)
    r = np.arange(lo, hi + 1)
    gaps = vals[r - 1] - vals[r]
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(gaps > 0, vals[r - 1] / gaps, np.nan)
        sums = below + above if include_above else below
        sum_norm = sums / (r * np.log(np.e * r))
        rel_norm = rel / r
        crit = np.maximum(sum_norm, rel_norm)
    if np.all(np.isnan(crit)):
        return None
    i = int(np.nanargmin(crit))
    rr = int(r[i])
    return GapSearch(
        r=rr,
        criterion=float(crit[i]),
        sum_norm=float(sum_norm[i]),
        rel_gap_norm=float(rel_norm[i]),
        window=(lo, hi),
        report=gap_report(spectrum, rr),
    )


def find_gap_index_below(spectrum: Spectrum, d: int, c1: float) -> GapSearch | None:
    """Scan r in [ceil(c1 d), d] for the index with the best normalised gap sums.

    The normalised values ``sum_below / (r log(e r))`` and ``rel_gap / r`` of the
    minimiser are returned so callers can compare them with any constant.
    Returns None when every candidate has a zero gap.
    """
    if not 0 < c1 < 1:
        raise ParameterError("c1 must lie in (0, 1)")
    if d < 1 / c1:
        raise ParameterError(f"d={d} must be >= 1/c1={1 / c1:.6g}")
    return _scan(spectrum, max(1, math.ceil(c1 * d)), d, include_above=False)


def find_gap_index_above(spectrum: Spectrum, d: int, C1: float) -> GapSearch | None:
    """Scan r in [d, floor(C1 d)] using both gap sums (upper-window variant)."""
    if not C1 > 1:
        raise ParameterError("C1 must be > 1")
    if d < 1:
        raise ParameterError("d must be >= 1")
    return _scan(spectrum, d, math.floor(C1 * d), include_above=True)


@dataclass(frozen=True)
class Grouping:
    breakpoints: tuple[int, ...]  # r_0 = 0 < r_1 < ... < r_{d'}
    ratio_bound: float
    overshoot: float
    c2: float
    d: int

    @property
    def n_blocks(self) -> int:
        return len(self.breakpoints) - 1

    def blocks(self) -> list[range]:
        """1-based index blocks J_l = {r_{l-1}+1, ..., r_l}."""
        b = self.breakpoints
        return [range(b[l - 1] + 1, b[l] + 1) for l in range(1, len(b))]


def build_grouping(spectrum: Spectrum, d: int, C2: float, stop_at_d: bool = True) -> Grouping:
    """Greedy partition of {1..r_{d'}} into blocks of comparable eigenvalues.

    Each block end r_l is the largest index with
    ``lambda_{r_{l-1}+1} / lambda_{r_l} <= C2``, capped at p-1 and, when
    ``stop_at_d`` is set, at d.  Stops once r_l >= d.
    """
    p = spectrum.p
    if not C2 >= 1:
        raise ParameterError("C2 must be >= 1")
    if not 1 <= d < p:
        raise ParameterError(f"grouping needs 1 <= d < p, got d={d}, p={p}")
    vals = spectrum.values
    cap = min(p - 1, d) if stop_at_d else p - 1
    bps = [0]
    ratios = []
    while bps[-1] < d:
        start = bps[-1] + 1
        head = vals[start - 1]
        # non-increasing values => ratios head / vals[k] are non-decreasing in k
        ok = np.nonzero(head <= C2 * vals[start - 1 : cap])[0]
        if ok.size == 0:
            raise ParameterError(f"grouping stuck at index {start}: C2={C2} too small")
        end = start + int(ok[-1])
        ratios.append(head / vals[end - 1])
        bps.append(end)
        if end >= cap and end < d:
            raise ParameterError(f"grouping stuck at index {end}: cannot reach d={d} before p-1")
    return Grouping(
        breakpoints=tuple(bps),
        ratio_bound=float(max(ratios)),
        overshoot=bps[-1] / d,
        c2=float(C2),
        d=int(d),
    )


@dataclass
class EvepdSweep:
    alpha: float
    p: int
    r: np.ndarray
    sum_below: np.ndarray
    sum_above: np.ndarray
    normalized: np.ndarray = field(repr=False)

    @property
    def fitted_constant(self) -> float:
        return float(np.max(self.normalized))

    def top_decade_variation(self) -> float:
        """(max - min) / max of the normalised ratio over r in [r_max/10, r_max]."""
        top = self.normalized[self.r >= self.r[-1] / 10]
        return float((top.max() - top.min()) / top.max())


def evepd_sweep(alpha: float = 2.0, r_max: int = 10_000, r_min: int = 2, p: int | None = None) -> EvepdSweep:
    """Normalised gap sums (below + above) / (r log(e r)) for pure polynomial decay.

    The tail sum is truncated at ``p`` (default ``5 r_max + 1``); the missing
    part is O(r^alpha p^(1-alpha)).
    """
    if p is None:
        p = 5 * r_max + 1
    spec = make_spectrum("polynomial", alpha=alpha, p=p)
    below, above = _kernels.gap_sums(spec.values, r_min, r_max)
    r = np.arange(r_min, r_max + 1)
    norm = (below + above) / (r * np.log(np.e * r))
    return EvepdSweep(alpha=alpha, p=p, r=r, sum_below=below, sum_above=above, normalized=norm)
