"""Risk functionals, exact decompositions and deterministic bound terms.

Conventions: ``U = decomp.U_hat`` holds empirical eigenvectors as columns in
population-eigenbasis coordinates, so ``P_k`` is the k-th coordinate
projector and ``||P_k Phat_B||_2^2 = sum_{i in B} U[k, i]^2``.  Indices in
public signatures (d, r, s) are 1-based dimensions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .datagen import GroundTruth
from .estimators import DegenerateFitError, PcaDecomposition, sample_covariance
from .spectrum import Grouping, Spectrum

#: inequality checks allow this much relative rounding before flagging
INEQ_RTOL = 1e-12
#: scale floor for relative identity residuals
RESIDUAL_FLOOR = 1e-14


@dataclass(frozen=True)
class Check:
    """One deterministic inequality ``lhs <= rhs``."""

    name: str
    lhs: float
    rhs: float

    @property
    def violated(self) -> bool:
        slack = INEQ_RTOL * max(abs(self.lhs), abs(self.rhs))
        return bool(self.lhs > self.rhs + slack) or not (math.isfinite(self.lhs) and math.isfinite(self.rhs))


def relative_residual(lhs_terms, rhs_terms) -> float:
    """|sum(lhs) - sum(rhs)| over the larger side's magnitude.

    A side's magnitude is the sum of absolute values of its summands, so
    identities whose sides cancel internally are judged against the size of
    what cancels.  The scale is floored at ``RESIDUAL_FLOOR``.
    """
    lhs_terms = np.atleast_1d(np.asarray(lhs_terms, dtype=np.float64))
    rhs_terms = np.atleast_1d(np.asarray(rhs_terms, dtype=np.float64))
    diff = abs(math.fsum(lhs_terms) - math.fsum(rhs_terms))
    scale = max(np.sum(np.abs(lhs_terms)), np.sum(np.abs(rhs_terms)), RESIDUAL_FLOOR)
    return float(diff / scale)


# ---------------------------------------------------------------- helpers


def _lam(gt_or_spec) -> np.ndarray:
    spec = gt_or_spec.spectrum if isinstance(gt_or_spec, GroundTruth) else gt_or_spec
    return spec.values


def _tail_part(decomp: PcaDecomposition, vec: np.ndarray, d: int) -> np.ndarray:
    """Phat_{>d} vec, computed from the trailing eigenvectors."""
    V = decomp.U_hat[:, d:]
    return V @ (V.T @ vec)


def _head_part(decomp: PcaDecomposition, vec: np.ndarray, d: int) -> np.ndarray:
    V = decomp.U_hat[:, :d]
    return V @ (V.T @ vec)


def overlaps(decomp: PcaDecomposition, d: int) -> tuple[np.ndarray, np.ndarray]:
    """(a, b) with a_k = ||P_k Phat_{>d}||_2^2 and b_k = ||P_k Phat_{<=d}||_2^2."""
    p = decomp.p
    return _kernels.block_overlap(decomp.U_hat, d, p), _kernels.block_overlap(decomp.U_hat, 0, d)


def halving_flags(decomp: PcaDecomposition, spectrum: Spectrum, d: int) -> np.ndarray:
    """Boolean vector of {lambda_hat_j < lambda_j / 2}, j = 1..d."""
    return decomp.lambda_hat[:d] < spectrum.values[:d] / 2


# ---------------------------------------------------------------- risks


def prediction_error(coeffs: np.ndarray, gt: GroundTruth) -> float:
    """<fhat - f, Sigma (fhat - f)>."""
    e = coeffs - gt.f
    return float(np.sum(_lam(gt) * e * e))


def h_norm_error(coeffs: np.ndarray, gt: GroundTruth) -> float:
    e = coeffs - gt.f
    return float(e @ e)


def bias_variance(decomp: PcaDecomposition, gt: GroundTruth, d: int, n: int | None = None) -> tuple[float, float]:
    """Design-conditional bias and variance of the unthresholded PCR fit."""
    n = decomp.n if n is None else n
    lam_hat = decomp.lambda_hat[:d]
    if not lam_hat[-1] > 0:
        raise DegenerateFitError(f"lambda_hat_{d} = 0: decomposition undefined")
    lam = _lam(gt)
    g = _tail_part(decomp, gt.f, d)
    bias = float(np.sum(lam * g * g))
    tr_pj_sigma = lam @ (decomp.U_hat[:, :d] ** 2)  # tr(Phat_j Sigma) = u_j^T Sigma u_j
    variance = gt.sigma2 / n * float(np.sum(tr_pj_sigma / lam_hat))
    return bias, variance


def _pcr_linear_maps(decomp: PcaDecomposition, X: np.ndarray, d: int):
    """M = sum_{j<=d} lambda_hat_j^{-1} u_j u_j^T and B = M X^T / n."""
    lam_hat = decomp.lambda_hat[:d]
    if not lam_hat[-1] > 0:
        raise DegenerateFitError(f"lambda_hat_{d} = 0: decomposition undefined")
    Ud = decomp.U_hat[:, :d]
    M = (Ud / lam_hat) @ Ud.T
    B = (M @ X.T) / X.shape[0]
    return M, B


def conditional_mse_direct(decomp: PcaDecomposition, X: np.ndarray, gt: GroundTruth, d: int, n: int | None = None) -> tuple[float, float]:
    """Conditional prediction MSE from the explicit linear maps of the fit.

    fhat - f = (A - I) f + B eps with A = B X.  Returns the signal part
    ||(A - I) f||_Sigma^2 and the noise part sigma^2 tr(B^T Sigma B).
    """
    _, B = _pcr_linear_maps(decomp, X, d)
    lam = _lam(gt)
    resid = B @ (X @ gt.f) - gt.f
    signal = float(np.sum(lam * resid * resid))
    noise = gt.sigma2 * float(np.sum(lam[:, None] * B * B))
    return signal, noise


def conditional_h_error_direct(decomp: PcaDecomposition, X: np.ndarray, gt: GroundTruth, d: int) -> tuple[float, float]:
    """H-norm analogue of :func:`conditional_mse_direct`."""
    _, B = _pcr_linear_maps(decomp, X, d)
    resid = B @ (X @ gt.f) - gt.f
    return float(resid @ resid), gt.sigma2 * float(np.sum(B * B))


def bias_identity_rhs(decomp: PcaDecomposition, gt: GroundTruth, d: int) -> float:
    """Squared norm of the three-term expansion of Sigma^{1/2} Phat_{>d} f."""
    lam = _lam(gt)
    f = gt.f
    root = np.sqrt(lam)
    v = np.empty_like(f)
    v[:d] = root[:d] * _tail_part(decomp, f, d)[:d]
    v[d:] = root[d:] * f[d:] - root[d:] * _head_part(decomp, f, d)[d:]
    return float(v @ v)


@dataclass(frozen=True)
class ExcessRisk:
    value: float  # tr(Sigma (P_{<=d} - Phat_{<=d}))
    head_term: float  # sum_{j<=d} lambda_j ||P_j Phat_{>d}||^2
    tail_term: float  # sum_{k>d} lambda_k ||P_k Phat_{<=d}||^2
    recon_hat: float  # R(Phat_{<=d})
    recon_pop: float  # R(P_{<=d})
    trace_literal: float  # sum_{j<=d} lambda_j - sum_{j<=d} u_j^T Sigma u_j

    @property
    def recon_difference(self) -> float:
        return self.recon_hat - self.recon_pop


def excess_risk(decomp: PcaDecomposition, spectrum: Spectrum, d: int) -> ExcessRisk:
    """Excess reconstruction risk of the empirical rank-d projector.

    The main value uses ``1 - ||P_j Phat_{<=d}||^2 = ||P_j Phat_{>d}||^2`` to
    avoid subtracting two nearly equal partial traces; the reconstruction
    route evaluates R(Phat) = tr(Sigma Phat_{>d}) and R(P) = tr_{>d}(Sigma)
    independently.
    """
    lam = spectrum.values
    a, b = overlaps(decomp, d)
    head = float(np.sum(lam[:d] * a[:d]))
    tail = float(np.sum(lam[d:] * b[d:]))
    recon_hat = float(np.sum(lam * a))
    recon_pop = float(np.sum(lam[d:]))
    literal = float(np.sum(lam[:d]) - np.sum(lam * b))
    return ExcessRisk(head - tail, head, tail, recon_hat, recon_pop, literal)


def excess_risk_split(decomp: PcaDecomposition, spectrum: Spectrum, d: int, mu: float) -> tuple[float, float]:
    """(E_{<=d}(mu), E_{>d}(mu)); their sum is the excess risk for every mu."""
    lam = spectrum.values
    a, b = overlaps(decomp, d)
    e_le = float(np.sum((lam[:d] - mu) * a[:d]))
    e_gt = float(np.sum((mu - lam[d:]) * b[d:]))
    return e_le, e_gt


def partial_excess(decomp: PcaDecomposition, spectrum: Spectrum, r: int) -> float:
    """E_{<=r}(lambda_{r+1})."""
    return excess_risk_split(decomp, spectrum, r, spectrum.lam(r + 1))[0]


# ---------------------------------------------------------------- bounds


def bias_bounds(decomp: PcaDecomposition, gt: GroundTruth, d: int, r: int) -> list[Check]:
    """Bias against the gap-weighted bound and its two coarser forms."""
    lam = _lam(gt)
    p = decomp.p
    if not 1 <= r <= d or r >= p:
        raise ValueError(f"need 1 <= r <= d and r < p, got r={r}, d={d}, p={p}")
    lam_next = lam[r]
    f2 = gt.f_norm2
    g = _tail_part(decomp, gt.f, d)
    bias = float(np.sum(lam * g * g))
    w = lam[:r] - lam_next
    form_i = float(np.sum(w * g[:r] ** 2)) + lam_next * float(g @ g)
    # || sum_{j<=r} w_j^{1/2} P_j Phat_{>r} ||_inf
    op = np.linalg.norm(np.sqrt(w)[:, None] * decomp.U_hat[:r, r:], 2) if r < p else 0.0
    form_ii = lam_next * f2 + op**2 * f2
    form_iii = lam_next * f2 + partial_excess(decomp, gt.spectrum, r) * f2
    return [
        Check("bias_gapweighted", bias, form_i),
        Check("bias_opnorm", bias, form_ii),
        Check("bias_excess", bias, form_iii),
        Check("bias_gapweighted_vs_opnorm", form_i, form_ii),
        Check("bias_opnorm_vs_excess", form_ii, form_iii),
    ]


def eigen_constant(lam: np.ndarray, r: int, s: float) -> float:
    """Constant C with lambda_{r+1} (lambda_j^s - lambda_{r+1}^s)^2 <= C (lambda_j - lambda_{r+1})."""
    lam_next = lam[r]
    if s <= 0.5:
        return float(lam_next ** (2 * s))
    return float(max(lam_next ** (2 * s), 2 * s * lam[0] ** (2 * s - 1) * lam_next))


def source_bias_chain(decomp: PcaDecomposition, gt: GroundTruth, d: int, r: int) -> list[Check]:
    """Every explicit-constant step bounding the bias under f = Sigma^s h."""
    lam = _lam(gt)
    s = gt.s
    h2 = float(gt.h @ gt.h)
    lam_next = lam[r]
    ls_next = lam_next**s
    f = gt.f
    tail_d = _tail_part(decomp, f, d)
    tail_r = _tail_part(decomp, f, r)
    f_head = np.zeros_like(f)
    f_head[:r] = f[:r]
    f_tail = f - f_head
    proj_head = _tail_part(decomp, f_head, r)  # Phat_{>r} P_{<=r} f
    c = np.zeros_like(f)
    c[:r] = (lam[:r] ** s - ls_next) * gt.h[:r]
    mid_a = _tail_part(decomp, c, r)
    h_head = np.zeros_like(f)
    h_head[:r] = gt.h[:r]
    mid_b = _tail_part(decomp, h_head, r)
    a_r = _kernels.block_overlap(decomp.U_hat, r, decomp.p)[:r]  # ||P_j Phat_{>r}||^2
    diff2 = (lam[:r] ** s - ls_next) ** 2
    C = eigen_constant(lam, r, s)
    eig_lhs = lam_next * diff2
    eig_rhs = C * (lam[:r] - lam_next)
    worst = int(np.argmax(eig_lhs - eig_rhs))
    e_le = partial_excess(decomp, gt.spectrum, r)

    n_tail_d = float(tail_d @ tail_d)
    n_tail_r = float(tail_r @ tail_r)
    n_proj_head = float(proj_head @ proj_head)
    bias = float(np.sum(lam * tail_d * tail_d))
    return [
        Check("src_monotone_r", lam_next * n_tail_d, lam_next * n_tail_r),
        Check("src_split", n_tail_r, 2 * float(f_tail @ f_tail) + 2 * n_proj_head),
        Check("src_tail_source", float(f_tail @ f_tail), lam_next ** (2 * s) * h2),
        Check("src_head_triangle", n_proj_head, 2 * float(mid_a @ mid_a) + 2 * lam_next ** (2 * s) * float(mid_b @ mid_b)),
        Check("src_head_cauchy", n_proj_head, 2 * float(np.sum(diff2 * a_r)) * h2 + 2 * lam_next ** (2 * s) * h2),
        Check("src_eigen_ineq", float(eig_lhs[worst]), float(eig_rhs[worst])),
        Check("src_composed", bias, 6 * lam_next ** (1 + 2 * s) * h2 + (4 * C + lam[0] ** (2 * s)) * e_le * h2),
    ]


def grouped_cross_term(decomp: PcaDecomposition, spectrum: Spectrum, grouping: Grouping) -> float:
    """sum_{l>=2} lambda_{r_l}^{-1} sum_{k<=r_{l-1}} (lambda_k - lambda_{r_{l-1}+1}) ||Phat_{J_l} P_k||^2."""
    lam = spectrum.values
    bps = grouping.breakpoints
    total = 0.0
    for l in range(2, len(bps)):
        lo, hi = bps[l - 1], bps[l]
        ov = _kernels.block_overlap(decomp.U_hat, lo, hi)[:lo]
        total += float(np.sum((lam[:lo] - lam[lo]) * ov)) / lam[hi - 1]
    return total


@dataclass(frozen=True)
class VarianceBound:
    evaluated: bool
    lhs: float
    rhs: float
    cross: float
    halving_count: int
    c1: float
    c2: float

    def check(self) -> Check:
        return Check("variance_grouped", self.lhs, self.rhs)


def variance_bound(decomp: PcaDecomposition, gt: GroundTruth, grouping: Grouping, d: int, n: int | None = None) -> VarianceBound:
    """Weighted-trace variance sum against its grouped bound (on lambda_hat_d >= lambda_d / 2)."""
    spec = gt.spectrum
    lam = spec.values
    if grouping.d != d:
        raise ValueError(f"grouping built for d={grouping.d}, not d={d}")
    count = int(np.sum(halving_flags(decomp, spec, d)))
    if decomp.lambda_hat[d - 1] < lam[d - 1] / 2:
        return VarianceBound(False, math.nan, math.nan, math.nan, count, grouping.overshoot, grouping.ratio_bound)
    lhs = float(np.sum((lam @ decomp.U_hat[:, :d] ** 2) / decomp.lambda_hat[:d]))
    cross = grouped_cross_term(decomp, spec, grouping)
    c1, c2 = grouping.overshoot, grouping.ratio_bound
    rhs = 2 * c1 * c2 * d + 2 * cross + 2 * lam[0] / lam[d - 1] * count
    return VarianceBound(True, lhs, rhs, cross, count, c1, c2)


def final_remainders(decomp: PcaDecomposition, gt: GroundTruth, grouping: Grouping, d: int, r: int) -> tuple[float, float]:
    """(R1, R2) remainder terms of the conditional prediction-error bound."""
    spec = gt.spectrum
    h2 = float(gt.h @ gt.h)
    r1 = partial_excess(decomp, spec, r) * h2
    count = int(np.sum(halving_flags(decomp, spec, d)))
    r2 = grouped_cross_term(decomp, spec, grouping) + count / spec.lam(d)
    return r1, r2


def h_norm_bounds(decomp: PcaDecomposition, X: np.ndarray, gt: GroundTruth, d: int, r: int) -> Check | None:
    """Conditional H-norm error against its bound; None off the event."""
    spec = gt.spectrum
    lam = spec.values
    if decomp.lambda_hat[d - 1] < lam[d - 1] / 2:
        return None
    n = X.shape[0]
    signal, noise = conditional_h_error_direct(decomp, X, gt, d)
    count = int(np.sum(halving_flags(decomp, spec, d)))
    rem1 = count / lam[d - 1]
    P_hat = decomp.projector(0, r)
    P = np.zeros_like(P_hat)
    P[np.arange(r), np.arange(r)] = 1.0
    rem2 = 2 * np.linalg.norm(P_hat - P, 2) ** 2 * gt.f_norm2
    rhs = 2 * lam[r] ** (2 * gt.s) * float(gt.h @ gt.h) + 2 * gt.sigma2 / n * (float(np.sum(1 / lam[:d])) + rem1) + rem2
    return Check("h_norm", signal + noise, float(rhs))


@dataclass(frozen=True)
class Alignment:
    defined: bool
    lhs: float
    rhs: float
    event: bool

    def check(self) -> Check:
        return Check("projector_alignment", self.lhs, self.rhs)


def projector_alignment(decomp: PcaDecomposition, X: np.ndarray, spectrum: Spectrum, J: tuple[int, int]) -> Alignment:
    """Gap-weighted leakage of the empirical block projector out of J = {r+1..s}."""
    r, s = J
    lam = spectrum.values
    p = spectrum.p
    if not 0 <= r < s <= p:
        raise ValueError(f"invalid block J=({r}, {s}] for p={p}")
    inside = np.arange(r, s)
    outside = np.concatenate([np.arange(0, r), np.arange(s, p)])
    if outside.size == 0:
        return Alignment(True, 0.0, 0.0, True)
    g = np.min(np.abs(lam[inside][None, :] - lam[outside][:, None]), axis=1)
    if not np.all(g > 0):
        return Alignment(False, math.nan, math.nan, False)
    delta = np.diag(lam) - sample_covariance(X)
    U = decomp.U_hat
    leak = np.sum(U[np.ix_(outside, inside)] ** 2, axis=1)  # ||Phat_J P_k||^2
    lhs = float(np.sum(g * leak))
    rhs = 16 * float(np.sum(np.sum(delta[np.ix_(inside, outside)] ** 2, axis=0) / g))
    lam_hat_J = decomp.lambda_hat[inside]
    sep = np.abs(lam_hat_J[None, :] - lam[outside][:, None]) >= np.abs(lam[inside][None, :] - lam[outside][:, None]) / 2
    scale = 1 / np.sqrt(g)
    whitened = scale[:, None] * delta[np.ix_(outside, outside)] * scale[None, :]
    event = bool(np.all(sep)) and float(np.linalg.norm(whitened, 2)) <= 0.25
    return Alignment(True, lhs, rhs, event)


def isotropic_bias_expectation(p: int, d: int, f_norm2: float) -> float:
    """Expected PCR bias for an isotropic Gaussian design: (p - d) / p ||f||^2."""
    if not 0 <= d <= p:
        raise ValueError("need 0 <= d <= p")
    return (p - d) / p * f_norm2


def excess_risk_bound_rhs(spectrum: Spectrum, d: int, n: int, regime: str = "general", C: float = 1.0, c: float = 1.0) -> float:
    """Reference curves for the expected partial excess risk (user constants).

    regime: ``general`` (gap-sum bound with exponential remainder), ``crude``
    (gap-sum bound with the full trace), ``exponential`` (C d e^{-alpha d} / n)
    or ``polynomial`` (C d^{2-alpha} log(e d) / n).
    """
    if d <= 0:
        return 0.0
    lam = spectrum.values
    if regime == "exponential":
        return C * d * math.exp(-spectrum.alpha * d) / n
    if regime == "polynomial":
        return C * d ** (2 - spectrum.alpha) * math.log(math.e * d) / n
    if d >= spectrum.p:
        return 0.0
    gaps = lam[:d] - lam[d]
    if not np.all(gaps > 0):
        return math.inf
    weights = float(np.sum(lam[:d] / gaps))
    if regime == "crude":
        return C * weights * spectrum.trace() / n
    if regime == "general":
        lam_r, lam_next = lam[d - 1], lam[d]
        decay = math.exp(-c * n * (lam_r - lam_next) ** 2 / lam_r**2)
        return C * weights * spectrum.tail_trace(d) / n + C * weights * spectrum.trace() / n * decay
    raise ValueError(f"unknown regime {regime!r}")
