"""Command-line entry point: ``shearlab {simulate,verify,scan,fit}``.

Exit codes: 0 success, 1 configuration or input error, 2 divergence (or any
run that did not complete), 3 when a verification check fails.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

from .checkpoint import write_checkpoint
from .config import Config, ConfigError, load_config
from .dynamics import Schedule, simulate
from .energy import CSV_COLUMNS, read_csv, write_csv
from .experiments import (FitResult, RunConfig, RunDiverged, loglog_slope, leave_one_out, bisect_threshold,
                          ed_rate_scaling, fit_exp_rate, fit_power_decay, initial_state, measure_ed_rate,
                          nonlinear_classifier)
from .inequalities import RatioReport, run_checks
from .params import ParameterError

log = logging.getLogger("shearlab")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_FAILED = 0, 1, 2, 3

REPORT_COLUMNS = ("lemma", "passed", "max_train", "C_fit", "heldout_ratio", "n_train", "n_heldout", "worst_point",
                  "extra")
ED_COLUMNS = ("kappa", "rate", "residual", "power", "T_max", "seed")
SWEEP_COLUMNS = ("kappa", "a_star", "verdict", "T_max", "seed")


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".12g")
    return str(v)


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def _out_dir(cfg: Config) -> Path:
    out = Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_config(cfg: Config) -> RunConfig:
    e = cfg.experiment
    return RunConfig(cfg.grid, cfg.physics, cfg.init.amplitude, cfg.init.seed, cfg.schedule, cfg.init.family,
                     cfg.init.band_limits, e.T_max, e.stability_factor, cfg.multipliers.J_sum)


# simulate -----------------------------------------------------------------

def cmd_simulate(cfg: Config) -> int:
    out = _out_dir(cfg)
    init = initial_state(cfg.grid, cfg.physics, cfg.init.amplitude, cfg.init.seed, cfg.init.family,
                         cfg.init.band_limits)
    ck_dir = out / "checkpoints"
    every = cfg.output.checkpoint_every
    if every:
        ck_dir.mkdir(exist_ok=True)

    def checkpoint(state, idx):
        write_checkpoint(state, ck_dir / f"state_{idx:06d}.cblb")

    res = simulate(init, cfg.physics, cfg.schedule, mparams=cfg.multipliers, checkpoint=checkpoint,
                   checkpoint_every=every)
    write_csv(res.rows, out / "diagnostics.csv")
    if every and res.status == "completed":
        write_checkpoint(res.final_state, ck_dir / "final.cblb")
    print(f"status={res.status} t={res.final_state.t:.6g} samples={len(res.rows)} csv={out / 'diagnostics.csv'}")
    if res.status != "completed":
        where = f" at t={res.t_diverged:.6g}" if res.t_diverged is not None else ""
        print(f"run did not complete: {res.status}{where}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


# verify -------------------------------------------------------------------

def write_reports(reports: list[RatioReport], path: Path) -> None:
    rows = [(r.lemma, r.passed, r.max_train, r.C_fit, r.heldout_ratio, r.n_train, r.n_heldout,
             json.dumps(r.worst_point, sort_keys=True), json.dumps(r.extra, sort_keys=True)) for r in reports]
    _write_rows(path, REPORT_COLUMNS, rows)


def cmd_verify(cfg: Config, lemma: str) -> int:
    try:
        reports = run_checks(lemma, cfg.verify)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_CONFIG
    out = _out_dir(cfg)
    write_reports(reports, out / "verify.csv")
    for r in reports:
        print(r.summary())
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAILED


# scan ---------------------------------------------------------------------

class ResumeCache:
    """Append-only JSON-lines record of finished member runs, keyed by a config digest."""

    def __init__(self, path: Path, digest: str):
        self.path = path
        self.digest = digest
        self.entries = {}
        if path.exists():
            for line in path.read_text().splitlines():
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    continue  # a torn final line from an interrupted run
                if rec.get("digest") == digest:
                    self.entries[tuple(rec["key"])] = rec["value"]

    def get(self, key):
        return self.entries.get(tuple(key))

    def put(self, key, value) -> None:
        self.entries[tuple(key)] = value
        with open(self.path, "a") as fh:
            fh.write(json.dumps({"digest": self.digest, "key": list(key), "value": value}) + "\n")


def _digest(cfg: Config) -> str:
    src = {k: v for k, v in cfg.source.items() if k not in ("output", "verify")}
    src["seed"] = cfg.init.seed
    return hashlib.sha256(json.dumps(src, sort_keys=True).encode()).hexdigest()[:16]


def _validate_members(cfg: Config) -> None:
    e = cfg.experiment
    if not e.kappas:
        raise ConfigError("experiment.kappas is empty; a scan needs at least one kappa")
    for kap in e.kappas:
        try:
            p = replace(cfg.physics, nu=kap, mu=kap)
            RunConfig(cfg.grid, p, cfg.init.amplitude, cfg.init.seed, cfg.schedule, cfg.init.family,
                      cfg.init.band_limits, e.T_max, e.stability_factor)
        except (ParameterError, ValueError) as exc:
            raise ConfigError(f"member run kappa={kap!r}: {exc}") from exc
    if e.mode in ("ed", "both"):
        ks = sorted(e.kappas)
        if len(ks) < 4 or math.log10(ks[-1] / ks[0]) < 3 - 1e-9:
            raise ConfigError(f"experiment.kappas={list(e.kappas)!r}: rate scaling needs at least 4 values "
                              "spanning 3 decades")


def _scan_ed(cfg: Config, rc: RunConfig, cache: ResumeCache, out: Path) -> dict:
    rows, fits = [], {}
    for kap in cfg.experiment.kappas:
        T_max = cfg.experiment.T_max if cfg.experiment.T_max is not None else 3.0 * kap ** (-1.0 / 3.0)
        hit = cache.get(("ed", kap))
        if hit is None:
            f = measure_ed_rate(rc, kap, T_max)
            hit = {"rate": f.value, "residual": f.residual, "power": f.extra.get("power", math.nan)}
            cache.put(("ed", kap), hit)
        fits[kap] = hit["rate"]
        rows.append((kap, hit["rate"], hit["residual"], hit["power"], T_max, cfg.init.seed))
        log.info("kappa=%g rate=%.6g", kap, hit["rate"])
    _write_rows(out / "ed_sweep.csv", ED_COLUMNS, rows)
    sc = ed_rate_scaling(list(fits), measure=lambda k: fits[k])
    return {"slope": sc.slope, "intercept": sc.intercept, "half_width": sc.half_width}


def _scan_threshold(cfg: Config, rc: RunConfig, cache: ResumeCache, out: Path) -> dict:
    e = cfg.experiment
    base = nonlinear_classifier(rc, max_substeps=e.max_substeps)

    def classify(kap, a):
        hit = cache.get(("threshold", kap, a))
        if hit is None:
            hit = bool(base(kap, a))
            cache.put(("threshold", kap, a), hit)
        return hit

    lo, hi = e.amplitude_range
    results = [bisect_threshold(k, classify, lo, hi, e.bisection_depth) for k in e.kappas]
    rows = []
    for r in results:
        T_max = e.T_max if e.T_max is not None else 5.0 * r.kappa ** (-1.0 / 3.0)
        rows.append((r.kappa, r.a_star, r.verdict, T_max, cfg.init.seed))
    _write_rows(out / "threshold_sweep.csv", SWEEP_COLUMNS, rows)
    good = sorted((r for r in results if r.verdict == "resolved"), key=lambda r: r.kappa)
    summary = {"censored": [r.kappa for r in results if r.verdict != "resolved"],
               "monotone_in_kappa": all(a.a_star <= b.a_star for a, b in zip(good, good[1:])),
               "bisection_monotone": all(r.monotone for r in results)}
    if len(good) >= 2:
        x, y = [r.kappa for r in good], [r.a_star for r in good]
        summary["alpha"], summary["intercept"] = loglog_slope(x, y)
        loo = leave_one_out(x, y)
        summary["jackknife"] = [min(loo), max(loo)] if loo else [summary["alpha"]] * 2
    else:
        summary["alpha"] = None
    return summary


def cmd_scan(cfg: Config) -> int:
    _validate_members(cfg)
    out = _out_dir(cfg)
    rc = _run_config(cfg)
    cache = ResumeCache(out / "resume.jsonl", _digest(cfg))
    summary = {"seed": cfg.init.seed, "mode": cfg.experiment.mode}
    try:
        if cfg.experiment.mode in ("ed", "both"):
            summary["ed"] = _scan_ed(cfg, rc, cache, out)
        if cfg.experiment.mode in ("threshold", "both"):
            summary["threshold"] = _scan_threshold(cfg, rc, cache, out)
    except RunDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    (out / "scan_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


# fit ----------------------------------------------------------------------

def _fit_dict(f: FitResult) -> dict:
    return {"value": f.value, "window": list(f.window), "residual": f.residual, "half_width": f.half_width,
            "n_points": f.n_points, "ok": f.ok}


def fit_csv(path) -> dict:
    """Re-fit exponents or slopes from a diagnostics, rate-sweep or threshold-sweep CSV."""
    path = Path(path)
    with open(path, newline="") as fh:
        header = tuple(next(csv.reader(fh), ()))
    if header == CSV_COLUMNS:
        rows = [r for r in read_csv(path) if r.flag != "diverged"]
        t_end = max((r.t for r in rows), default=0.0)
        window = (10.0, min(100.0, t_end))
        out = {"kind": "diagnostics"}
        for name in ("u2_L2", "u1neq_L2", "thetaneq_L2", "u2hat_L1"):
            series = [(r.t, getattr(r, name)) for r in rows if r.t > 0 and math.isfinite(getattr(r, name))]
            try:
                out[name] = _fit_dict(fit_power_decay(series, window))
            except ValueError as exc:
                out[name] = {"error": str(exc)}
        series = [(r.t, r.hs_half_norm) for r in rows if r.t > 0]
        try:
            out["hs_half_norm_rate"] = _fit_dict(fit_exp_rate(series, (rows[0].t, t_end), max_residual=math.inf))
        except (ValueError, IndexError) as exc:
            out["hs_half_norm_rate"] = {"error": str(exc)}
        return out
    with open(path, newline="") as fh:
        recs = list(csv.DictReader(fh))
    if header == ED_COLUMNS:
        kap = [float(r["kappa"]) for r in recs]
        rate = [float(r["rate"]) for r in recs]
        sc = ed_rate_scaling(kap, measure=dict(zip(kap, rate)).__getitem__)
        return {"kind": "ed_sweep", "slope": sc.slope, "intercept": sc.intercept, "half_width": sc.half_width}
    if header == SWEEP_COLUMNS:
        good = [(float(r["kappa"]), float(r["a_star"])) for r in recs if r["verdict"] == "resolved"]
        if len(good) < 2:
            return {"kind": "threshold_sweep", "alpha": None, "resolved": len(good)}
        x, y = zip(*good)
        alpha, icpt = loglog_slope(x, y)
        loo = leave_one_out(x, y)
        return {"kind": "threshold_sweep", "alpha": alpha, "intercept": icpt,
                "jackknife": [min(loo), max(loo)] if loo else [alpha, alpha]}
    raise ValueError(f"unrecognized CSV header in {path}: {', '.join(header)}")


def cmd_fit(csv_path, out_dir: Optional[str]) -> int:
    try:
        res = fit_csv(csv_path)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = json.dumps(res, indent=2, sort_keys=True)
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "fit.json").write_text(text + "\n")
    print(text)
    return EXIT_OK


# entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shearlab", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, metavar="PATH")
        p.add_argument("--out", metavar="DIR", help="output directory (overrides output.directory)")
        p.add_argument("--seed", type=int, metavar="N", help="override init.seed and verify.seed")

    common(sub.add_parser("simulate", help="run one trajectory; write diagnostics CSV and checkpoints"))
    v = sub.add_parser("verify", help="randomized inequality checks")
    common(v)
    v.add_argument("--lemma", default="all", metavar="ID", help="check id or 'all'")
    common(sub.add_parser("scan", help="rate-scaling and/or threshold sweep over experiment.kappas"))
    f = sub.add_parser("fit", help="re-fit from an existing CSV")
    f.add_argument("csv", metavar="CSV")
    f.add_argument("--out", metavar="DIR")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "fit":
        return cmd_fit(args.csv, args.out)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.out:
            cfg = cfg.with_output(args.out)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "verify":
            return cmd_verify(cfg, args.lemma)
        return cmd_scan(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
