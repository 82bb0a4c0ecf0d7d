"""Batch command-line front end.

Three subcommands: ``analyze`` runs the sensitivity grid on a dataset,
``simulate`` runs the bias/coverage study for the configured mechanism, and
``truth`` computes the projection ground truth alone.  Everything is driven
by one YAML config; outputs are deterministic given (config, seed) and
independent of the worker count.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .errors import AiiwError, ConfigError
from .estimator import contrast_grid, plausible_alpha_range, run_sensitivity
from .io import provenance_line, write_csv, write_json
from .records import ARMS
from .simulate import (compute_truth_multi, default_truth_seed, run_study,
                       with_targets)

ESTIMATE_COLUMNS = ["arm", "alpha", "t", "mu_hat", "se", "wald_lo", "wald_hi",
                    "percentile_lo", "percentile_hi", "boot_t_lo",
                    "boot_t_hi", "plausible"]
CONTOUR_COLUMNS = ["t", "alpha_intervention", "alpha_control", "effect",
                   "ci_low", "ci_high", "sign_class"]
STUDY_COLUMNS = ["alpha", "t", "true_value", "emp_mean", "abs_bias",
                 "cover_boot_t", "cover_percentile", "cover_wald",
                 "n_reps_used"]
TRUTH_COLUMNS = ["alpha", "t", "true_value"]


def _resolve_workers(flag_value) -> int:
    if flag_value is not None:
        workers = int(flag_value)
    else:
        raw = os.environ.get("AIIW_WORKERS", "1")
        try:
            workers = int(raw)
        except ValueError:
            raise ConfigError(f"AIIW_WORKERS={raw!r} is not an integer") \
                from None
    if workers < 1:
        raise ConfigError("worker count must be >= 1")
    return workers


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out) if getattr(args, "out", None) else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dgm_resolved(dgm) -> dict:
    return {
        "baseline_values": list(dgm.baseline_values),
        "baseline_probs": (list(dgm.baseline_probs)
                           if dgm.baseline_probs is not None else None),
        "rates": [{"edges": list(r.edges), "values": list(r.values)}
                  for r in dgm.rates],
        "gamma": dgm.gamma,
        "theta": list(dgm.theta),
        "dispersion": dgm.dispersion,
        "tau": dgm.tau,
        "n_strata": dgm.n_strata,
        "outcome_cap": dgm.outcome_cap,
        "alpha_true": dgm.alpha_true,
    }


def _truth_alphas(cfg: RunConfig) -> list[float]:
    if cfg.truth_alphas is not None:
        return list(cfg.truth_alphas)
    if cfg.study is not None:
        return list(cfg.study.alphas)
    merged = sorted({a for arm in cfg.arms.values() for a in arm.alphas})
    return merged


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_analyze(args) -> None:
    from .io import ingest
    cfg = load_config(args.config)
    workers = _resolve_workers(args.workers)
    by_arm = ingest(args.data)
    out = _out_dir(args, cfg)
    comment = provenance_line(cfg.sha256, cfg.seed)

    est_rows: list[list] = []
    diag_arms: dict[str, dict] = {}
    retained: dict[str, list] = {}
    for arm in ARMS:
        subjects = by_arm.get(arm)
        if not subjects:
            continue
        if arm not in cfg.arms:
            raise ConfigError(f"data contains arm {arm!r} but the config "
                              f"has no arms.{arm} block")
        arm_cfg = cfg.arms[arm]
        results, diag = run_sensitivity(
            subjects, cfg.spline, n_strata=cfg.n_strata, tau=cfg.tau,
            bandwidth=cfg.bandwidth, kernel=cfg.kernel,
            alphas=list(arm_cfg.alphas), targets=list(cfg.targets),
            n_boot=cfg.n_boot, seed=cfg.seed, arm_code=ARMS.index(arm),
            floor=cfg.positivity_floor, workers=workers,
            boot_tilt_table=cfg.boot_tilt_table)
        kept = plausible_alpha_range(results, arm_cfg.mu_min, arm_cfg.mu_max)
        retained[arm] = kept
        diag["mu_bounds"] = [arm_cfg.mu_min, arm_cfg.mu_max]
        diag["plausible_alphas"] = [res.alpha for res in kept]
        diag_arms[arm] = diag
        for res in results:
            for tgt in res.targets:
                pct = tgt.percentile_ci or (None, None)
                boot_t = tgt.boot_t_ci or (None, None)
                est_rows.append([arm, res.alpha, tgt.t, tgt.mu_hat, tgt.se,
                                 tgt.wald_ci[0], tgt.wald_ci[1],
                                 pct[0], pct[1], boot_t[0], boot_t[1],
                                 res.plausible])

    write_csv(out / "estimates.csv", ESTIMATE_COLUMNS, est_rows, comment)

    contour_rows: list[list] = []
    if "intervention" in retained and "control" in retained:
        # contrasts over the plausibility-retained grids only
        for row in contrast_grid(retained["intervention"],
                                 retained["control"], list(cfg.targets)):
            contour_rows.append([row["t"], row["alpha_a"], row["alpha_b"],
                                 row["effect"], row["ci_low"],
                                 row["ci_high"], row["sign_class"]])
    write_csv(out / "contour.csv", CONTOUR_COLUMNS, contour_rows, comment)
    write_json(out / "diagnostics.json", {"arms": diag_arms}, cfg.sha256,
               cfg.seed)


def _write_truth_csv(out: Path, truths: list, cfg: RunConfig,
                     comment: str) -> None:
    rows = []
    for res in truths:
        withtg = with_targets(res, cfg.targets, cfg.spline)
        for t, v in zip(withtg.targets, withtg.true_mu):
            rows.append([res.alpha, float(t), float(v)])
    write_csv(out / "truth.csv", TRUTH_COLUMNS, rows, comment)


def cmd_truth(args) -> None:
    cfg = load_config(args.config)
    if cfg.dgm is None:
        raise ConfigError("truth requires a dgm block in the config")
    out = _out_dir(args, cfg)
    comment = provenance_line(cfg.sha256, cfg.seed)
    truths = compute_truth_multi(cfg.dgm, _truth_alphas(cfg), cfg.truth_n,
                                 cfg.spline, default_truth_seed(cfg.seed))
    _write_truth_csv(out, truths, cfg, comment)
    write_json(out / "dgm.lock.json",
               {"dgm": _dgm_resolved(cfg.dgm), "truth_n": cfg.truth_n},
               cfg.sha256, cfg.seed)


def cmd_simulate(args) -> None:
    cfg = load_config(args.config)
    if cfg.dgm is None or cfg.study is None:
        raise ConfigError("simulate requires dgm and study blocks in "
                          "the config")
    workers = _resolve_workers(args.workers)
    out = _out_dir(args, cfg)
    comment = provenance_line(cfg.sha256, cfg.seed)
    study_cfg = cfg.study

    truth_list = compute_truth_multi(cfg.dgm, list(study_cfg.alphas),
                                     cfg.truth_n, cfg.spline,
                                     default_truth_seed(cfg.seed))
    truths = {res.alpha: res for res in truth_list}
    study = run_study(
        cfg.dgm, cfg.spline, alphas=list(study_cfg.alphas),
        targets=list(cfg.targets), n_per_rep=study_cfg.n_per_rep,
        reps=study_cfg.reps, n_boot=study_cfg.n_boot, seed=cfg.seed,
        bandwidth=cfg.bandwidth, kernel=cfg.kernel,
        floor=cfg.positivity_floor, workers=workers,
        corruption=study_cfg.corruption, truths=truths,
        fail_budget=study_cfg.fail_budget, arm=study_cfg.arm,
        boot_tilt_table=cfg.boot_tilt_table)

    write_csv(out / "study.csv", STUDY_COLUMNS,
              [[row[c] for c in STUDY_COLUMNS] for row in study.rows],
              comment)
    _write_truth_csv(out, truth_list, cfg, comment)
    write_json(out / "dgm.lock.json",
               {"dgm": _dgm_resolved(cfg.dgm), "truth_n": cfg.truth_n,
                "study": {"n_per_rep": study_cfg.n_per_rep,
                          "reps": study_cfg.reps,
                          "n_boot": study_cfg.n_boot,
                          "alphas": list(study_cfg.alphas),
                          "arm": study_cfg.arm,
                          "corruption": study_cfg.corruption,
                          "fail_budget": study_cfg.fail_budget,
                          "failures": study.failures}},
               cfg.sha256, cfg.seed)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aiiw",
        description="Sensitivity analysis for trials with outcome-"
                    "informative assessment times")
    sub = parser.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze",
                        help="run the sensitivity grid on a dataset")
    pa.add_argument("--data", required=True, help="long-format CSV")
    pa.add_argument("--config", required=True, help="YAML run config")
    pa.add_argument("--out", default=None,
                    help="output directory (default: config output_dir)")
    pa.add_argument("--workers", default=None, type=int,
                    help="bootstrap worker processes "
                         "(default: $AIIW_WORKERS or 1)")
    pa.set_defaults(func=cmd_analyze)

    ps = sub.add_parser("simulate", help="run the bias/coverage study")
    ps.add_argument("--config", required=True)
    ps.add_argument("--out", default=None)
    ps.add_argument("--workers", default=None, type=int)
    ps.set_defaults(func=cmd_simulate)

    pt = sub.add_parser("truth", help="compute projection ground truth")
    pt.add_argument("--config", required=True)
    pt.add_argument("--out", default=None)
    pt.set_defaults(func=cmd_truth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except AiiwError as exc:
        payload = {"error": type(exc).__name__, "message": str(exc)}
        for attr in ("line", "subject_id", "n_failed", "n_total", "alpha",
                     "mu"):
            value = getattr(exc, attr, None)
            if value is not None:
                payload[attr] = value
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
