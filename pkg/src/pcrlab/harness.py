"""Seeded Monte Carlo studies: replicates, aggregation, rate fits.

Per-replicate randomness is keyed by ``(master_seed, n, replicate_index)``
through ``numpy.random.SeedSequence`` feeding a Philox generator, so any
replicate can be regenerated in isolation and the study result does not
depend on execution order or worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import risk
from .datagen import make_ground_truth, rng_for, sample_design
from .estimators import DegenerateFitError, oracle_fit, pca, pcr_fit
from .spectrum import ParameterError, build_grouping, find_gap_index_below, make_spectrum

SUITES = ("risk", "identities", "inequalities")


class ConfigError(ValueError):
    """Invalid study configuration."""


@dataclass(frozen=True)
class StudyConfig:
    kind: str = "polynomial"
    alpha: float = 2.0
    p: int | str = 50  # or "auto"
    c_ev: float = 1.0
    spectrum_seed: int = 0
    s: float = 0.0
    L: float = 1.0
    sigma2: float = 1.0
    h_mode: str = "random"
    family: str = "gaussian"
    n_grid: tuple[int, ...] = (200,)
    d_rule: str = "fixed"  # fixed | log | poly
    d: int = 5
    r_rule: str = "d"  # d | fixed | gap
    r: int = 1
    c1: float = 0.5
    grouping_c2: float = 4.0
    replicates: int = 100
    master_seed: int = 20240101
    suites: tuple[str, ...] = ("risk",)
    threads: int = 1
    p_cap: int = 256

    def validate(self) -> StudyConfig:
        grid = list(self.n_grid)
        if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("n_grid must be non-empty and strictly increasing")
        if min(grid) < 1:
            raise ConfigError("sample sizes must be >= 1")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.d_rule not in ("fixed", "log", "poly"):
            raise ConfigError(f"unknown d_rule {self.d_rule!r}")
        if self.r_rule not in ("d", "fixed", "gap"):
            raise ConfigError(f"unknown r_rule {self.r_rule!r}")
        bad = set(self.suites) - set(SUITES)
        if bad:
            raise ConfigError(f"unknown suites {sorted(bad)}")
        if self.grouping_c2 < 1:
            raise ConfigError("grouping_c2 must be >= 1")
        try:
            spec = self.spectrum()
        except ParameterError as exc:
            raise ConfigError(str(exc)) from exc
        for n in grid:
            d = self.d_for(n)
            if not 1 <= d <= spec.p:
                raise ConfigError(f"d={d} at n={n} outside [1, p={spec.p}]")
        return self

    def d_for(self, n: int) -> int:
        if self.d_rule == "fixed":
            return int(self.d)
        if self.d_rule == "log":
            x = math.log(n) / self.alpha
        else:
            x = n ** (1.0 / (2 * self.s * self.alpha + self.alpha + 1))
        return max(1, math.ceil(x - 1e-9))

    def resolved_p(self) -> int:
        if self.p != "auto":
            return int(self.p)
        from .spectrum import choose_truncation

        d_max = max(self.d_for(n) for n in self.n_grid)
        return choose_truncation(self.kind, self.alpha, d_max, p_cap=self.p_cap)

    def spectrum(self):
        return _spectrum(self.kind, self.alpha, self.resolved_p(), self.c_ev, self.spectrum_seed)

    def ground_truth(self):
        return make_ground_truth(self.spectrum(), self.s, self.L, seed=self.master_seed, h_mode=self.h_mode, sigma2=self.sigma2)


@lru_cache(maxsize=64)
def _spectrum(kind, alpha, p, c_ev, seed):
    return make_spectrum(kind, alpha=alpha, p=p, c_ev=c_ev, seed=seed)


# ------------------------------------------------------------ replicate


ALIGNMENT_COLUMNS = ("alignment_blocks", "alignment_events", "alignment_violations", "alignment_max_ratio")


@dataclass
class RiskReport:
    """Flat per-replicate record."""

    n: int
    d: int
    r: int
    index: int
    scalars: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    skipped: list = field(default_factory=list)  # checks not evaluated off their event

    @property
    def violations(self) -> int:
        return sum(c.violated for c in self.checks) + int(self.scalars.get("alignment_violations", 0))

    def to_record(self) -> dict:
        out = {"n": self.n, "d": self.d, "r": self.r, "index": self.index}
        out.update(self.scalars)
        out.update({f"flag_{k}": int(v) for k, v in self.flags.items()})
        out.update({f"resid_{k}": v for k, v in self.residuals.items()})
        for c in self.checks:
            out[f"{c.name}_lhs"] = c.lhs
            out[f"{c.name}_rhs"] = c.rhs
            out[f"{c.name}_violated"] = int(c.violated)
        for name in self.skipped:
            out[f"{name}_lhs"] = math.nan
            out[f"{name}_rhs"] = math.nan
            out[f"{name}_violated"] = 0
        out["violations"] = self.violations
        return out


def oracle_conditional_risk(X: np.ndarray, gt, d: int) -> tuple[float, float]:
    """Design-conditional (signal, noise) prediction MSE of the oracle fit."""
    Xd = X[:, :d]
    G = Xd.T @ Xd
    coef = np.linalg.solve(G, Xd.T @ (X @ gt.f))
    resid = -gt.f.copy()
    resid[:d] += coef
    lam = gt.spectrum.values
    signal = float(np.sum(lam * resid * resid))
    noise = gt.sigma2 * float(np.sum(lam[:d] * np.diag(np.linalg.inv(G))))
    return signal, noise


def _choose_r(cfg: StudyConfig, spec, d: int) -> int:
    if cfg.r_rule == "d":
        r = d
    elif cfg.r_rule == "fixed":
        r = min(int(cfg.r), d)
    else:
        found = find_gap_index_below(spec, d, cfg.c1) if d >= 1 / cfg.c1 else None
        r = found.r if found is not None else d
    return min(r, spec.p - 1)


def run_replicate(cfg: StudyConfig, n: int, index: int) -> RiskReport:
    """One seeded replicate: sample, fit, evaluate the configured suites.

    Degenerate fits never raise; they are recorded in ``flags``.
    """
    spec = cfg.spectrum()
    gt = cfg.ground_truth()
    d = cfg.d_for(n)
    r = _choose_r(cfg, spec, d) if d < spec.p else d
    sample = sample_design(gt, n, cfg.family, seed=(cfg.master_seed, n, index))
    X, Y = sample.X, sample.Y
    dec = pca(X)
    rep = RiskReport(n=n, d=d, r=r, index=index)
    lam = spec.values
    halving = risk.halving_flags(dec, spec, d)
    rep.flags["event_lambda_d"] = not bool(dec.lambda_hat[d - 1] < lam[d - 1] / 2)
    rep.flags["any_halving"] = bool(np.any(halving))
    rep.scalars["halving_count"] = int(np.sum(halving))
    degenerate = not dec.lambda_hat[d - 1] > 0
    rep.flags["degenerate"] = degenerate
    f_l2 = gt.f_l2_norm2

    if "risk" in cfg.suites:
        fit = pcr_fit(dec, X, Y, d, spec)
        rep.flags["thresholded"] = fit.thresholded
        rep.scalars["pred_error"] = risk.prediction_error(fit.coeffs, gt)
        rep.scalars["h_error"] = risk.h_norm_error(fit.coeffs, gt)
        if degenerate:
            bias = variance = math.nan
        else:
            bias, variance = risk.bias_variance(dec, gt, d)
        rep.scalars["bias"] = bias
        rep.scalars["variance"] = variance
        rep.scalars["cond_risk"] = f_l2 if fit.thresholded else bias + variance
        try:
            ofit = oracle_fit(X, Y, d, spec)
            rep.flags["oracle_thresholded"] = ofit.thresholded
            rep.scalars["oracle_pred_error"] = risk.prediction_error(ofit.coeffs, gt)
            if ofit.thresholded:
                rep.scalars["oracle_cond_risk"] = f_l2
            else:
                rep.scalars["oracle_cond_risk"] = sum(oracle_conditional_risk(X, gt, d))
        except (DegenerateFitError, np.linalg.LinAlgError):
            rep.flags["oracle_thresholded"] = True
            rep.scalars["oracle_pred_error"] = math.nan
            rep.scalars["oracle_cond_risk"] = math.nan
        if d < spec.p:
            er = risk.excess_risk(dec, spec, d)
            rep.scalars["excess_risk"] = er.value
            e_le, e_gt = risk.excess_risk_split(dec, spec, d, spec.lam(d + 1))
            rep.scalars["excess_le"] = e_le
            rep.scalars["excess_gt"] = e_gt

    if "identities" in cfg.suites and not degenerate:
        rep.residuals.update(identity_residuals(dec, X, gt, d))

    if "inequalities" in cfg.suites and not degenerate and d < spec.p:
        checks, skipped, extra = inequality_checks(dec, X, gt, d, r, cfg.grouping_c2)
        rep.checks.extend(checks)
        rep.skipped.extend(skipped)
        rep.scalars.update(extra)
    return rep


def identity_residuals(dec, X, gt, d: int) -> dict:
    """Relative residuals of the exact identities on one instance."""
    spec = gt.spectrum
    bias, variance = risk.bias_variance(dec, gt, d)
    signal, noise = risk.conditional_mse_direct(dec, X, gt, d)
    out = {
        "bias_variance": risk.relative_residual([bias, variance], [signal, noise]),
        "bias_expansion": risk.relative_residual(bias, risk.bias_identity_rhs(dec, gt, d)),
    }
    if d < spec.p:
        er = risk.excess_risk(dec, spec, d)
        parts = [er.head_term, -er.tail_term]
        for label, mu in (("0", 0.0), ("next", spec.lam(d + 1)), ("top", spec.lam(1)), ("neg1", -1.0)):
            out[f"split_{label}"] = risk.relative_residual(risk.excess_risk_split(dec, spec, d, mu), parts)
        out["trace_recon"] = risk.relative_residual(parts, [er.recon_hat, -er.recon_pop])
    return out


INEQUALITY_CHECKS = (
    "bias_gapweighted",
    "bias_opnorm",
    "bias_excess",
    "bias_gapweighted_vs_opnorm",
    "bias_opnorm_vs_excess",
    "src_monotone_r",
    "src_split",
    "src_tail_source",
    "src_head_triangle",
    "src_head_cauchy",
    "src_eigen_ineq",
    "src_composed",
    "variance_grouped",
    "composed_excess",
    "h_norm",
)


def inequality_checks(dec, X, gt, d: int, r: int, c2: float):
    """All deterministic inequalities for one instance.

    Returns ``(checks, skipped_names, extra_scalars)``; checks conditional on
    an event are skipped when it fails.
    """
    spec = gt.spectrum
    n = X.shape[0]
    checks = list(risk.bias_bounds(dec, gt, d, r))
    skipped = []
    if gt.s > 0:
        checks.extend(risk.source_bias_chain(dec, gt, d, r))
    else:
        skipped.extend(n for n in INEQUALITY_CHECKS if n.startswith("src_"))
    grouping = build_grouping(spec, d, c2)
    vb = risk.variance_bound(dec, gt, grouping, d, n)
    extra = {"grouping_blocks": grouping.n_blocks, "grouping_c2": grouping.ratio_bound}
    r1, r2 = risk.final_remainders(dec, gt, grouping, d, r)
    extra["R1"], extra["R2"] = r1, r2
    if vb.evaluated:
        checks.append(vb.check())
        bias, variance = risk.bias_variance(dec, gt, d)
        excess_form = next(c.rhs for c in checks if c.name == "bias_excess")
        checks.append(risk.Check("composed_excess", bias + variance, excess_form + gt.sigma2 / n * vb.rhs))
        hn = risk.h_norm_bounds(dec, X, gt, d, r)
        checks.append(hn)
    else:
        skipped.extend(["variance_grouped", "composed_excess", "h_norm"])

    blocks = [(0, 1)] + [(b.start - 1, b.stop - 1) for b in grouping.blocks()]
    events = viol = 0
    worst = 0.0
    for J in dict.fromkeys(blocks):
        al = risk.projector_alignment(dec, X, spec, J)
        if al.defined and al.event:
            events += 1
            viol += al.check().violated
            if al.rhs > 0:
                worst = max(worst, al.lhs / al.rhs)
    extra.update(
        {
            "alignment_blocks": len(dict.fromkeys(blocks)),
            "alignment_events": events,
            "alignment_violations": viol,
            "alignment_max_ratio": worst,
        }
    )
    return checks, skipped, extra


# ------------------------------------------------------------ aggregation


@dataclass
class NSummary:
    n: int
    d: int
    replicates: int
    means: dict
    std_errors: dict
    se_defined: bool
    event_frequencies: dict
    max_residuals: dict
    violation_counts: dict
    total_violations: int


@dataclass
class StudyReport:
    config: StudyConfig
    per_n: list
    records: dict  # n -> list of flat records
    slope: dict | None = None
    oracle: dict | None = None

    def summary(self) -> dict:
        config = asdict(self.config)
        config.pop("threads")  # results do not depend on it
        out = {
            "config": config,
            "per_n": [asdict(s) for s in self.per_n],
            "total_violations": int(sum(s.total_violations for s in self.per_n)),
        }
        if self.slope is not None:
            out["slope"] = self.slope
        if self.oracle is not None:
            out["oracle"] = self.oracle
        return out


def _map(fn, items, threads: int):
    if threads == 1 or len(items) < 2:
        return [fn(x) for x in items]
    workers = None if threads <= 0 else threads
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def summarize(n: int, reports: list) -> NSummary:
    records = [r.to_record() for r in reports]
    R = len(records)
    numeric = [k for k in records[0] if k not in ("n", "d", "r", "index") and not k.startswith(("flag_", "resid_")) and not k.endswith("_violated")]
    means, ses = {}, {}
    for k in numeric:
        col = np.array([rec.get(k, math.nan) for rec in records], dtype=np.float64)
        col = col[np.isfinite(col)]
        means[k] = float(np.mean(col)) if col.size else math.nan
        ses[k] = float(np.std(col, ddof=1) / math.sqrt(col.size)) if col.size > 1 else math.nan
    freqs = {k[5:]: float(np.mean([rec[k] for rec in records])) for k in records[0] if k.startswith("flag_")}
    resid = {}
    for k in records[0]:
        if k.startswith("resid_"):
            resid[k[6:]] = float(max(rec.get(k, 0.0) for rec in records))
    viols = {}
    for rec in records:
        for k, v in rec.items():
            if k.endswith("_violated"):
                viols[k[:-9]] = viols.get(k[:-9], 0) + int(v)
    viols["projector_alignment"] = int(sum(rec.get("alignment_violations", 0) for rec in records))
    total = int(sum(rep.violations for rep in reports))
    return NSummary(
        n=n,
        d=reports[0].d,
        replicates=R,
        means=means,
        std_errors=ses,
        se_defined=R > 1,
        event_frequencies=freqs,
        max_residuals=resid,
        violation_counts=viols,
        total_violations=total,
    )


def mc_study(cfg: StudyConfig) -> StudyReport:
    """R seeded replicates per sample size, aggregated in index order."""
    cfg.validate()
    per_n, records, raw = [], {}, {}
    for n in cfg.n_grid:
        reports = _map(lambda i, n=n: run_replicate(cfg, n, i), list(range(cfg.replicates)), cfg.threads)
        per_n.append(summarize(n, reports))
        records[n] = [rep.to_record() for rep in reports]
    return StudyReport(config=cfg, per_n=per_n, records=records)


# ------------------------------------------------------------ rates


def fit_slope(x, y) -> tuple[float, float, float]:
    """Ordinary least squares y = slope x + intercept; returns (slope, intercept, r^2)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need at least two (x, y) pairs")
    if np.unique(x).size < 2:
        raise ValueError("abscissae are degenerate")
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def _transform(means: np.ndarray, ns: np.ndarray, compensation: str) -> np.ndarray:
    if compensation == "none":
        return np.log(means)
    if compensation == "log_over_n":
        return np.log(means * ns / np.log(ns))
    raise ValueError(f"unknown compensation {compensation!r}")


def rate_study(cfg: StudyConfig, statistic: str = "cond_risk", compensation: str = "none", bootstrap: int = 500, study: StudyReport | None = None) -> StudyReport:
    """Log-log slope of mean risk against n, with a replicate bootstrap interval.

    ``compensation='log_over_n'`` fits log(mean * n / log n) instead, whose
    target slope is 0 when the risk decays like log(n)/n.
    """
    if study is None:
        study = mc_study(replace(cfg, suites=tuple(sorted(set(cfg.suites) | {"risk"}))))
    ns = np.array([s.n for s in study.per_n], dtype=np.float64)
    cols = [np.array([rec[statistic] for rec in study.records[int(n)]], dtype=np.float64) for n in ns]
    means = np.array([np.mean(c) for c in cols])
    out = {"statistic": statistic, "compensation": compensation, "n": ns.tolist(), "mean": means.tolist()}
    if ns.size < 2 or np.any(~(means > 0)):
        out.update(slope=math.nan, intercept=math.nan, r2=math.nan, fit_skipped=True, ci=[math.nan, math.nan], ci_defined=False)
        study.slope = out
        return study
    slope, intercept, r2 = fit_slope(np.log(ns), _transform(means, ns, compensation))
    out.update(slope=slope, intercept=intercept, r2=r2, fit_skipped=False)
    if ns.size >= 4 and bootstrap > 0:
        rng = rng_for(cfg.master_seed, 0xB0075)
        boot = np.empty(bootstrap)
        for b in range(bootstrap):
            bm = np.array([np.mean(c[rng.integers(0, c.size, c.size)]) for c in cols])
            boot[b] = fit_slope(np.log(ns), _transform(bm, ns, compensation))[0] if np.all(bm > 0) else math.nan
        lo, hi = np.nanpercentile(boot, [2.5, 97.5])
        out.update(ci=[float(lo), float(hi)], ci_defined=True)
    else:
        out.update(ci=[math.nan, math.nan], ci_defined=False)
    study.slope = out
    return study


def oracle_comparison(cfg: StudyConfig, study: StudyReport | None = None, statistic: str = "cond_risk") -> dict:
    """Per-n ratio of mean PCR risk to mean oracle risk and its log-log slope."""
    if study is None:
        study = mc_study(replace(cfg, suites=tuple(sorted(set(cfg.suites) | {"risk"}))))
    f_l2 = cfg.ground_truth().f_l2_norm2
    ns, ratios, defined = [], [], []
    for s in study.per_n:
        pcr_col = np.array([rec[statistic] for rec in study.records[s.n]], dtype=np.float64)
        ora_col = np.array([rec[f"oracle_{statistic}"] for rec in study.records[s.n]], dtype=np.float64)
        num, den = float(np.nanmean(pcr_col)), float(np.nanmean(ora_col))
        ok = den > 1e-12 * f_l2 and num > 0
        ns.append(s.n)
        ratios.append(num / den if ok else math.nan)
        defined.append(bool(ok))
    out = {"n": ns, "ratio": ratios, "ratio_defined": defined}
    if sum(defined) >= 2:
        x = np.log([n for n, ok in zip(ns, defined) if ok])
        y = np.log([q for q, ok in zip(ratios, defined) if ok])
        slope, intercept, r2 = fit_slope(x, y)
        out.update(slope=slope, intercept=intercept, r2=r2)
    else:
        out.update(slope=math.nan, intercept=math.nan, r2=math.nan)
    study.oracle = out
    return out


def calibrate_ratio_ceiling(cfg: StudyConfig, pilot_seeds=(1, 2, 3), replicates: int = 50, margin: float = 1.25) -> dict:
    """Ceiling for the PCR/oracle ratio at the largest n from a few pilot runs."""
    n_max = max(cfg.n_grid)
    ratios = []
    for seed in pilot_seeds:
        pilot = replace(cfg, n_grid=(n_max,), replicates=replicates, master_seed=int(seed), suites=("risk",))
        ratios.append(oracle_comparison(pilot)["ratio"][0])
    return {"pilot_seeds": list(pilot_seeds), "pilot_ratios": ratios, "margin": margin, "ceiling": margin * float(np.nanmax(ratios))}


# ------------------------------------------------------------ instance grid


def instance_grid(count: int, master_seed: int = 7, cond_cap: float = 1e3) -> list[tuple[StudyConfig, int, int]]:
    """Seeded (config, n, index) triples spanning families x spectrum kinds.

    Dimensions satisfy p <= 50, n <= 200, d <= p/2 and, so that float64
    identities stay meaningful, lambda_1 / lambda_d <= ``cond_cap``.
    """
    kinds = [("exponential", 1.0, 1.0), ("polynomial", 2.0, 1.0), ("approx_polynomial", 2.0, 1.5), ("isotropic", 0.0, 1.0)]
    families = ("gaussian", "rademacher", "uniform")
    rng = rng_for(master_seed, 0x6E1D)
    out = []
    for i in range(count):
        kind, alpha, c_ev = kinds[i % len(kinds)]
        family = families[(i // len(kinds)) % len(families)]
        p = int(rng.choice([10, 20, 30, 50]))
        spec = make_spectrum(kind, alpha, p, c_ev, seed=i)
        d_ok = [d for d in range(1, p // 2 + 1) if spec.lam(1) / spec.lam(d) <= cond_cap]
        d = int(rng.choice(d_ok))
        n = int(rng.integers(max(20, 2 * d), 201))
        cfg = StudyConfig(
            kind=kind,
            alpha=alpha,
            p=p,
            c_ev=c_ev,
            spectrum_seed=i,
            s=float(rng.choice([0.0, 0.5, 1.0])),
            L=float(rng.choice([0.5, 1.0, 2.0])),
            sigma2=float(rng.choice([0.0, 0.25, 1.0])),
            h_mode=str(rng.choice(["random", "flat", "first"])),
            family=family,
            n_grid=(n,),
            d_rule="fixed",
            d=d,
            r_rule="fixed",
            r=int(rng.integers(1, d + 1)),
            grouping_c2=4.0,
            replicates=1,
            master_seed=int(master_seed) * 1000 + i,
            suites=("risk", "identities", "inequalities"),
        )
        out.append((cfg, n, i))
    return out
