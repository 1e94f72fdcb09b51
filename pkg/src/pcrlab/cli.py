"""Command-line front end: ``pcrlab {identities,inequalities,mc,rates,grouping}``.

Every command reads an optional YAML config, writes comma-separated tables
and a ``summary.json`` into ``--out`` (which must already exist) and a
``manifest.json`` listing the outputs.

Config schema (all sections optional, unknown keys are rejected)::

    study:          # StudyConfig fields; see pcrlab.harness.StudyConfig
      kind: polynomial
      n_grid: [200]
      ...
    grid:           # seeded instance grid for identities / inequalities
      instances: 100
      seed: 7
      cond_cap: 1000.0
    identities:
      tolerance: 1.0e-10
    mc:
      isotropic_se: 3.0     # isotropic runs: |mean bias - (p-d)/p ||f||^2| <= k SE
    rates:
      statistic: cond_risk
      compensation: none    # or log_over_n
      bootstrap: 500
      slope_target: auto    # -(2 s a + a)/(2 s a + a + 1) for d_rule poly, else 0
      slope_tol: 0.10
      oracle: true
      oracle_slope_tol: 0.10
      pilot_seeds: [1, 2, 3]
      pilot_replicates: 50
      pilot_margin: 1.25
    grouping:
      kind: polynomial
      alpha: 2.0
      p: 200
      c_ev: 1.0
      seed: 0
      d: 20
      c1: 0.5
      C1: 2.0
      c2: 4.0
      sweep: {alpha: 2.0, r_max: 10000, max_variation: 0.2}

When ``study`` is present, identities and inequalities run over the study's
replicates instead of the instance grid.

Random numbers: per-replicate Philox streams keyed by
``SeedSequence([master_seed, n, index])``; the design and the noise use the
two children of ``spawn(2)``.  Tables print floats with ``%.17g``; JSON
uses Python's shortest round-trip repr, which is also exact.

Exit codes: 0 all assertions pass, 1 assertion failure, 2 usage or config
error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import asdict, fields, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from . import __version__, risk
from .harness import (
    ConfigError,
    StudyConfig,
    _map,
    calibrate_ratio_ceiling,
    instance_grid,
    mc_study,
    oracle_comparison,
    rate_study,
    run_replicate,
)
from .spectrum import ParameterError, build_grouping, evepd_sweep, find_gap_index_above, find_gap_index_below, gap_report, make_spectrum

log = logging.getLogger("pcrlab")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

SECTIONS = {
    "study": None,
    "grid": {"instances": 100, "seed": 7, "cond_cap": 1e3},
    "identities": {"tolerance": 1e-10},
    "mc": {"isotropic_se": 3.0},
    "rates": {
        "statistic": "cond_risk",
        "compensation": "none",
        "bootstrap": 500,
        "slope_target": "auto",
        "slope_tol": 0.10,
        "oracle": True,
        "oracle_slope_tol": 0.10,
        "pilot_seeds": [1, 2, 3],
        "pilot_replicates": 50,
        "pilot_margin": 1.25,
    },
    "grouping": {
        "kind": "polynomial",
        "alpha": 2.0,
        "p": 200,
        "c_ev": 1.0,
        "seed": 0,
        "d": 20,
        "c1": 0.5,
        "C1": 2.0,
        "c2": 4.0,
        "sweep": {"alpha": 2.0, "r_max": 10_000, "max_variation": 0.2},
    },
}

# mc / rates defaults when the config has no study section
DEFAULT_STUDY = {
    "mc": {"kind": "isotropic", "p": 20, "s": 0.0, "L": 1.0, "h_mode": "random", "n_grid": [50], "d": 5, "replicates": 2000},
    "rates": {
        "kind": "polynomial",
        "alpha": 2.0,
        "p": "auto",
        "n_grid": [256, 512, 1024, 2048, 4096, 8192],
        "d_rule": "poly",
        "replicates": 300,
    },
}


class UsageError(Exception):
    pass


# ------------------------------------------------------------ config


def load_config(path: str | None) -> dict:
    raw = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        except yaml.YAMLError as exc:
            raise UsageError(f"config parse error: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError("config must be a mapping")
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}")
    out = {}
    for name, defaults in SECTIONS.items():
        given = raw.get(name)
        if defaults is None:
            out[name] = given
            continue
        given = given or {}
        if not isinstance(given, dict):
            raise UsageError(f"section {name!r} must be a mapping")
        bad = set(given) - set(defaults)
        if bad:
            raise UsageError(f"unknown keys in {name!r}: {sorted(bad)}")
        merged = {**defaults, **given}
        if name == "grouping":
            merged["sweep"] = {**defaults["sweep"], **(given.get("sweep") or {})}
        out[name] = merged
    return out


def study_from(section: dict | None, seed: int | None, threads: int | None, fallback: dict | None = None) -> StudyConfig:
    data = dict(fallback or {})
    data.update(section or {})
    names = {f.name for f in fields(StudyConfig)}
    bad = set(data) - names
    if bad:
        raise UsageError(f"unknown study keys: {sorted(bad)}")
    for key in ("n_grid", "suites"):
        if key in data:
            data[key] = tuple(data[key]) if isinstance(data[key], (list, tuple)) else (data[key],)
    if seed is not None:
        data["master_seed"] = seed
    if threads is not None:
        data["threads"] = threads
    try:
        return StudyConfig(**data).validate()
    except (ConfigError, ParameterError, TypeError) as exc:
        raise UsageError(str(exc)) from exc


# ------------------------------------------------------------ output


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def write_table(path: Path, rows: list[dict]) -> None:
    columns = list(dict.fromkeys(k for row in rows for k in row))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row.get(c, math.nan)) for c in columns])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(path: Path, data) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(data), fh, indent=2, allow_nan=False)
        fh.write("\n")


class Run:
    """Collects output files and writes the manifest."""

    def __init__(self, command: str, out_dir: Path, config: dict, seed):
        self.command = command
        self.out_dir = out_dir
        self.config = config
        self.seed = seed
        self.outputs: list[str] = []
        self.started = datetime.now(timezone.utc)
        self.t0 = time.perf_counter()

    def table(self, name: str, rows: list[dict]) -> None:
        write_table(self.out_dir / name, rows)
        self.outputs.append(name)

    def json(self, name: str, data) -> None:
        write_json(self.out_dir / name, data)
        self.outputs.append(name)

    def finish(self, status: int) -> int:
        manifest = {
            "command": self.command,
            "version": __version__,
            "master_seed": self.seed,
            "config": self.config,
            "started": self.started.isoformat(),
            "finished": datetime.now(timezone.utc).isoformat(),
            "elapsed_seconds": time.perf_counter() - self.t0,
            "exit_code": status,
            "outputs": [str(self.out_dir / name) for name in self.outputs],
        }
        write_json(self.out_dir / "manifest.json", manifest)
        return status


# ------------------------------------------------------------ suites


def _grid_or_study(conf: dict, args, suites: tuple[str, ...]):
    """Yield (cfg, n, index) work items and a label for the source."""
    if conf["study"] is not None:
        cfg = study_from(conf["study"], args.seed, args.threads)
        cfg = replace(cfg, suites=suites)
        items = [(cfg, n, i) for n in cfg.n_grid for i in range(cfg.replicates)]
        return items, cfg.threads, {"source": "study", "study": asdict(cfg)}
    g = conf["grid"]
    seed = int(g["seed"] if args.seed is None else args.seed)
    try:
        grid = instance_grid(int(g["instances"]), master_seed=seed, cond_cap=float(g["cond_cap"]))
    except (ParameterError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    items = [(replace(c, suites=suites), n, i) for c, n, i in grid]
    threads = 1 if args.threads is None else args.threads
    return items, threads, {"source": "grid", "grid": {**g, "seed": seed}}


def _instance_columns(cfg: StudyConfig) -> dict:
    return {
        "kind": cfg.kind,
        "family": cfg.family,
        "p": cfg.resolved_p(),
        "s": cfg.s,
        "L": cfg.L,
        "sigma2": cfg.sigma2,
        "h_mode": cfg.h_mode,
        "master_seed": cfg.master_seed,
    }


def cmd_identities(conf: dict, args) -> int:
    tol = float(conf["identities"]["tolerance"])
    items, threads, source = _grid_or_study(conf, args, ("identities",))
    reports = _map(lambda it: run_replicate(*it), items, threads)
    run = Run("identities", args.out, {**source, "identities": conf["identities"]}, source.get("grid", {}).get("seed", items[0][0].master_seed))
    rows, worst = [], {}
    for (cfg, _, _), rep in zip(items, reports):
        row = {"index": rep.index, "n": rep.n, "d": rep.d, **_instance_columns(cfg), "degenerate": int(rep.flags["degenerate"])}
        row.update(rep.residuals)
        rows.append(row)
        for k, v in rep.residuals.items():
            worst[k] = max(worst.get(k, 0.0), v)
    skipped = sum(rep.flags["degenerate"] for rep in reports)
    max_resid = max(worst.values()) if worst else math.nan
    passed = bool(worst) and all(v <= tol for v in worst.values())
    run.table("residuals.csv", rows)
    run.json("summary.json", {"instances": len(items), "skipped_degenerate": skipped, "tolerance": tol, "max_residuals": worst, "max_residual": max_resid, "passed": passed})
    print(f"identities: {len(items)} instances, max residual {max_resid:.3e} (tolerance {tol:.1e}) -> {'pass' if passed else 'FAIL'}")
    return run.finish(EXIT_OK if passed else EXIT_FAIL)


def cmd_inequalities(conf: dict, args) -> int:
    items, threads, source = _grid_or_study(conf, args, ("inequalities",))
    for cfg, _, _ in items[:1]:
        if cfg.grouping_c2 < 1:
            raise UsageError("grouping_c2 must be >= 1")
    try:
        reports = _map(lambda it: run_replicate(*it), items, threads)
    except ParameterError as exc:  # grouping cannot be built for this spectrum
        raise UsageError(f"malformed grouping: {exc}") from exc
    run = Run("inequalities", args.out, source, source.get("grid", {}).get("seed", items[0][0].master_seed))
    rows, counts, evaluated = [], {}, {}
    events = 0
    for (cfg, _, _), rep in zip(items, reports):
        rows.append({**_instance_columns(cfg), **rep.to_record()})
        for c in rep.checks:
            counts[c.name] = counts.get(c.name, 0) + int(c.violated)
            evaluated[c.name] = evaluated.get(c.name, 0) + 1
        counts["projector_alignment"] = counts.get("projector_alignment", 0) + int(rep.scalars.get("alignment_violations", 0))
        events += int(rep.scalars.get("alignment_events", 0))
    total = int(sum(rep.violations for rep in reports))
    run.table("replicates.csv", rows)
    run.json(
        "summary.json",
        {"replicates": len(items), "violation_counts": counts, "evaluated_counts": evaluated, "alignment_events": events, "total_violations": total, "passed": total == 0},
    )
    print(f"inequalities: {len(items)} replicates, {total} violations -> {'pass' if total == 0 else 'FAIL'}")
    return run.finish(EXIT_OK if total == 0 else EXIT_FAIL)


def cmd_mc(conf: dict, args) -> int:
    cfg = study_from(conf["study"], args.seed, args.threads, fallback=None if conf["study"] is not None else DEFAULT_STUDY["mc"])
    study = mc_study(cfg)
    run = Run("mc", args.out, {"study": asdict(cfg), "mc": conf["mc"]}, cfg.master_seed)
    summary = study.summary()
    failures = []
    if summary["total_violations"]:
        failures.append(f"{summary['total_violations']} inequality violations")
    if "identities" in cfg.suites:
        worst = max((v for s in study.per_n for v in s.max_residuals.values()), default=0.0)
        if worst > 1e-10:
            failures.append(f"identity residual {worst:.3e}")
    if cfg.kind == "isotropic" and "risk" in cfg.suites:
        k = float(conf["mc"]["isotropic_se"])
        f2 = cfg.ground_truth().f_norm2
        checks = []
        for s in study.per_n:
            expected = risk.isotropic_bias_expectation(cfg.resolved_p(), s.d, f2)
            mean, se = s.means.get("bias", math.nan), s.std_errors.get("bias", math.nan)
            within = bool(s.se_defined and abs(mean - expected) <= k * se)
            checks.append({"n": s.n, "d": s.d, "expected_bias": expected, "mean_bias": mean, "se": se, "se_defined": s.se_defined, "within": within})
            if s.se_defined and not within:
                failures.append(f"isotropic bias at n={s.n}, d={s.d}: {mean:.5g} vs {expected:.5g} (SE {se:.3g})")
        summary["isotropic_reference"] = checks
    rows = [rec for n in cfg.n_grid for rec in study.records[n]]
    run.table("replicates.csv", rows)
    summary["failures"] = failures
    run.json("summary.json", summary)
    for s in study.per_n:
        if not s.se_defined:
            print(f"mc: n={s.n}: single replicate, standard errors undefined")
    print(f"mc: {cfg.replicates} replicates x {len(cfg.n_grid)} sample sizes -> {'pass' if not failures else 'FAIL: ' + '; '.join(failures)}")
    return run.finish(EXIT_FAIL if failures else EXIT_OK)


def default_slope_target(cfg: StudyConfig, compensation: str) -> float:
    if compensation == "log_over_n" or cfg.d_rule != "poly":
        return 0.0
    a, s = cfg.alpha, cfg.s
    return -(2 * s * a + a) / (2 * s * a + a + 1)


def cmd_rates(conf: dict, args) -> int:
    rc = conf["rates"]
    cfg = study_from(conf["study"], args.seed, args.threads, fallback=None if conf["study"] is not None else DEFAULT_STUDY["rates"])
    if rc["compensation"] not in ("none", "log_over_n"):
        raise UsageError(f"unknown compensation {rc['compensation']!r}")
    target = default_slope_target(cfg, rc["compensation"]) if rc["slope_target"] == "auto" else float(rc["slope_target"])
    ceiling = None
    if rc["oracle"] and len(cfg.n_grid) >= 2:
        # fixed before the main run so the main seeds cannot influence it
        ceiling = calibrate_ratio_ceiling(cfg, pilot_seeds=tuple(rc["pilot_seeds"]), replicates=int(rc["pilot_replicates"]), margin=float(rc["pilot_margin"]))
    study = rate_study(cfg, statistic=rc["statistic"], compensation=rc["compensation"], bootstrap=int(rc["bootstrap"]))
    fit = study.slope
    failures = []
    if fit["fit_skipped"]:
        failures.append("rate fit skipped (non-positive mean risk)")
    elif abs(fit["slope"] - target) > float(rc["slope_tol"]):
        failures.append(f"slope {fit['slope']:.4f} outside {target:.4f} +/- {rc['slope_tol']}")
    oracle = None
    if rc["oracle"]:
        oracle = oracle_comparison(cfg, study=study, statistic=rc["statistic"])
        if math.isfinite(oracle["slope"]) and abs(oracle["slope"]) > float(rc["oracle_slope_tol"]):
            failures.append(f"oracle ratio slope {oracle['slope']:.4f} outside 0 +/- {rc['oracle_slope_tol']}")
        if ceiling is not None:
            last = oracle["ratio"][-1]
            oracle["ceiling"] = ceiling
            if not (math.isfinite(last) and last <= ceiling["ceiling"]):
                failures.append(f"ratio {last:.4f} at n={oracle['n'][-1]} above pilot ceiling {ceiling['ceiling']:.4f}")
    run = Run("rates", args.out, {"study": asdict(cfg), "rates": rc, "pilot_ceiling": ceiling}, cfg.master_seed)
    rows = [rec for n in cfg.n_grid for rec in study.records[n]]
    run.table("replicates.csv", rows)
    slope_rows = []
    for i, s in enumerate(study.per_n):
        row = {"n": s.n, "d": s.d, "mean": fit["mean"][i], "se": s.std_errors.get(rc["statistic"], math.nan)}
        if oracle is not None:
            row["oracle_mean"] = s.means.get(f"oracle_{rc['statistic']}", math.nan)
            row["ratio"] = oracle["ratio"][i]
        slope_rows.append(row)
    run.table("slopes.csv", slope_rows)
    summary = study.summary()
    summary["slope_target"] = target
    summary["slope_tol"] = rc["slope_tol"]
    summary["failures"] = failures
    run.json("summary.json", summary)
    ci = "CI flagged (fewer than 4 grid points)" if not fit.get("ci_defined") else f"CI [{fit['ci'][0]:.4f}, {fit['ci'][1]:.4f}]"
    print(f"rates: slope {fit['slope']:.4f} (target {target:.4f}), {ci}")
    if oracle is not None:
        print(f"rates: oracle ratio slope {oracle['slope']:.4f}, last ratio {oracle['ratio'][-1]:.4f}")
    print("rates: " + ("pass" if not failures else "FAIL: " + "; ".join(failures)))
    return run.finish(EXIT_FAIL if failures else EXIT_OK)


def cmd_grouping(conf: dict, args) -> int:
    g = conf["grouping"]
    sw = g["sweep"]
    try:
        spec = make_spectrum(g["kind"], alpha=float(g["alpha"]), p=int(g["p"]), c_ev=float(g["c_ev"]), seed=g["seed"] if args.seed is None else args.seed)
        d = int(g["d"])
        if not 1 <= d < spec.p:
            raise UsageError(f"grouping d={d} outside [1, p-1={spec.p - 1}]")
        if float(g["c2"]) < 1:
            raise UsageError("grouping c2 must be >= 1")
        reports = [gap_report(spec, r) for r in range(1, spec.p)]
        below = find_gap_index_below(spec, d, float(g["c1"]))
        above = find_gap_index_above(spec, d, float(g["C1"]))
        grouping = build_grouping(spec, d, float(g["c2"]))
    except ParameterError as exc:
        raise UsageError(str(exc)) from exc
    sweep = evepd_sweep(alpha=float(sw["alpha"]), r_max=int(sw["r_max"]))
    variation = sweep.top_decade_variation()
    run = Run("grouping", args.out, {"grouping": g}, g["seed"] if args.seed is None else args.seed)
    run.table("gaps.csv", [asdict(rep) for rep in reports])
    run.table("sweep.csv", [{"r": int(r), "sum_below": b, "sum_above": a, "normalized": q} for r, b, a, q in zip(sweep.r, sweep.sum_below, sweep.sum_above, sweep.normalized)])

    def search(res):
        if res is None:
            return {"defined": False}
        out = asdict(res)
        out["defined"] = True
        return out

    passed = variation < float(sw["max_variation"])
    run.json(
        "summary.json",
        {
            "spectrum": spec.to_record(),
            "gaps_defined": sum(rep.defined for rep in reports),
            "gaps_flagged": sum(not rep.defined for rep in reports),
            "gap_index_below": search(below),
            "gap_index_above": search(above),
            "grouping": {**asdict(grouping), "blocks": [[b.start, b.stop - 1] for b in grouping.blocks()]},
            "sweep": {"alpha": sweep.alpha, "p": sweep.p, "r_max": int(sweep.r[-1]), "fitted_constant": sweep.fitted_constant, "top_decade_variation": variation, "max_variation": sw["max_variation"], "passed": passed},
        },
    )
    print(f"grouping: {sum(not rep.defined for rep in reports)} of {len(reports)} gap indices flagged, {grouping.n_blocks} blocks")
    print(f"grouping: gap-sum sweep constant {sweep.fitted_constant:.4f}, top-decade variation {variation:.3%} -> {'pass' if passed else 'FAIL'}")
    return run.finish(EXIT_OK if passed else EXIT_FAIL)


COMMANDS = {
    "identities": cmd_identities,
    "inequalities": cmd_inequalities,
    "mc": cmd_mc,
    "rates": cmd_rates,
    "grouping": cmd_grouping,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcrlab", description="PCR simulation studies")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML config file (defaults built in)")
        p.add_argument("--out", default=".", type=Path, help="existing output directory")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--threads", type=int, help="worker cap, 0 = auto")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for usage
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if not args.out.is_dir():
            raise UsageError(f"output directory {args.out} does not exist")
        if args.seed is not None and args.seed < 0:
            raise UsageError("seed must be non-negative")
        if args.threads is not None and args.threads < 0:
            raise UsageError("threads must be >= 0")
        conf = load_config(args.config)
        return COMMANDS[args.command](conf, args)
    except UsageError as exc:
        print(f"pcrlab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:
        log.exception("unexpected failure")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
