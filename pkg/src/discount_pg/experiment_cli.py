"""Command-line harness: ``discount-pg stabilize|benchmark|oracle-check|gen-system``.

Exit codes: 0 success, 1 configuration error, 2 run or check failure.
Each trial derives every seed from ``(root seed, trial id, ...)``, so outputs
do not depend on ``--threads``. ``wall_ms`` is the only column that varies
between identical runs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import checks, oracle
from .config import ConfigError, RunConfig, load_check_config, load_config
from .linear_system import Simulator, random_system, write_system
from .stabilizer import Mode, StabilizationError, iteration_budget, run

log = logging.getLogger("discount_pg")

CSV_COLUMNS = ("i", "gamma", "alpha", "j_hat", "grad_norm", "rho_closed_loop", "j_exact", "wall_ms")
AGGREGATE_COLUMNS = ("iteration", "gamma_mean", "gamma_std", "gamma_opt_mean", "gamma_opt_std", "active_trials")

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 1, 2


def _num(x) -> str:
    """Shortest round-trip text for a float; empty for missing values."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def _json_num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else str(x)


def write_iterations(history, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for rec in history:
            w.writerow(
                [rec.i, _num(rec.gamma), _num(rec.alpha), _num(rec.j_hat), _num(rec.grad_norm),
                 _num(rec.rho), _num(rec.j_exact), f"{rec.wall_ms:.3f}"]
            )


def run_trial(cfg: RunConfig, trial_id: int, out_dir: Path, plots: bool) -> dict:
    """One stabilization run with its own seed stream; writes the trial artifacts."""
    out_dir.mkdir(parents=True, exist_ok=True)
    system = cfg.system.build(trial_id)
    stab = cfg.stabilizer
    plant = system if stab.mode is Mode.MODEL_BASED else Simulator(system)
    truth = system if cfg.ground_truth else None
    try:
        K, state = run(plant, cfg.cost, stab, K0=cfg.K0, truth=truth, stream=(trial_id,))
        outcome, reason = "Stabilized", None
        final_gamma = state.final_gamma
    except StabilizationError as exc:
        state, K = exc.state, exc.state.K
        outcome, reason = "Failed", exc.reason
        final_gamma = state.history[-1].gamma_new if state.history else stab.gamma0
        log.warning("trial %d failed: %s", trial_id, reason)

    final_rho = oracle.spectral_radius(system.closed_loop(K)) if cfg.ground_truth else None
    budget = None
    if state.jbar is not None:
        budget = iteration_budget(cfg.cost.sigma_min(), state.jbar, stab.gamma0)
    summary = {
        "outcome": outcome,
        "iterations_used": state.iteration,
        "total_trajectories": state.rollouts,
        "final_gamma": _json_num(final_gamma),
        "final_rho": _json_num(final_rho),
        "config_digest": cfg.digest,
        "seed": cfg.seed,
        "trial_id": trial_id,
        "reason": reason,
        "rollouts_exact": state.rollouts,
        "rollouts_n_plus_m": state.rollouts_n_plus_m,
        "jbar": _json_num(state.jbar),
        "budget": budget,
        "max_j_hat": _json_num(max((rec.j_hat for rec in state.history), default=None)),
        "K": np.asarray(K).tolist(),
    }
    write_iterations(state.history, out_dir / "iterations.csv")
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")

    gammas = [rec.gamma for rec in state.history]
    gamma_opt = None
    if cfg.ground_truth:
        gamma_opt = [1.0 / rec.rho**2 if rec.rho else math.inf for rec in state.history]
    if plots and gammas:
        from . import plots as figures

        figures.discount_path(gammas, gamma_opt, out_dir / "discount.png")
    return {"summary": summary, "gamma": gammas, "gamma_opt": gamma_opt}


def _run_trials(cfg: RunConfig, out_dir: Path, threads: int, plots: bool) -> list[dict]:
    ids = range(cfg.trials)
    dirs = [out_dir / f"trial_{t:03d}" for t in ids]
    if threads <= 1 or cfg.trials == 1:
        return [run_trial(cfg, t, d, plots) for t, d in zip(ids, dirs)]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run_trial, [cfg] * cfg.trials, ids, dirs, [plots] * cfg.trials))


def aggregate(results: list[dict]) -> tuple[list[dict], dict]:
    """Per-iteration bands over stabilized trials plus whole-benchmark totals.

    A finished trial contributes ``gamma = 1`` and its last ``1/rho^2`` to
    every later iteration, so the band is defined until the slowest trial ends.
    """
    done = [r for r in results if r["summary"]["outcome"] == "Stabilized"]
    rows = []
    length = max((len(r["gamma"]) for r in done), default=0)
    have_opt = bool(done) and all(r["gamma_opt"] is not None for r in done)
    for t in range(length):
        g = np.array([r["gamma"][t] if t < len(r["gamma"]) else 1.0 for r in done])
        row = {
            "iteration": t,
            "gamma_mean": g.mean(),
            "gamma_std": g.std(),
            "gamma_opt_mean": None,
            "gamma_opt_std": None,
            "active_trials": int(sum(t < len(r["gamma"]) for r in done)),
        }
        if have_opt:
            o = np.array([r["gamma_opt"][min(t, len(r["gamma_opt"]) - 1)] for r in done])
            row["gamma_opt_mean"], row["gamma_opt_std"] = o.mean(), o.std()
        rows.append(row)

    iters = [r["summary"]["iterations_used"] for r in done]
    summaries = [r["summary"] for r in results]
    agg = {
        "trials": len(results),
        "stabilized": len(done),
        "success_rate": len(done) / len(results) if results else 0.0,
        "iterations": None
        if not iters
        else {
            "mean": statistics.fmean(iters),
            "std": statistics.pstdev(iters),
            "median": statistics.median(iters),
            "min": min(iters),
            "max": max(iters),
        },
        "total_trajectories": sum(s["total_trajectories"] for s in summaries),
        "rollouts_n_plus_m": sum(s["rollouts_n_plus_m"] for s in summaries),
        "per_trial": [
            {k: s[k] for k in ("trial_id", "outcome", "iterations_used", "total_trajectories", "final_rho", "reason")}
            for s in summaries
        ],
    }
    return rows, agg


def write_aggregate(rows: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(AGGREGATE_COLUMNS)
        for row in rows:
            w.writerow(
                [row["iteration"], _num(row["gamma_mean"]), _num(row["gamma_std"]),
                 _num(row["gamma_opt_mean"]), _num(row["gamma_opt_std"]), row["active_trials"]]
            )


def _config_failure(out_dir: Path | None, exc: Exception) -> int:
    print(f"config error: {exc}", file=sys.stderr)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        summary = {"outcome": "ConfigError", "reason": str(exc)}
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return EXIT_CONFIG


def _out_dir(args, config_path: str) -> Path:
    return Path(args.out_dir) if args.out_dir else Path("runs") / Path(config_path).stem


def cmd_stabilize(args) -> int:
    out_dir = _out_dir(args, args.config)
    try:
        cfg = load_config(args.config, args.seed)
    except ConfigError as exc:
        return _config_failure(out_dir, exc)
    result = run_trial(cfg, 0, out_dir, cfg.plots and not args.no_plots)
    s = result["summary"]
    msg = f"{s['outcome']}: {s['iterations_used']} iterations, {s['total_trajectories']} rollouts"
    if s["final_rho"] is not None:
        msg += f", rho(A-BK) = {s['final_rho']}"
    print(msg if s["outcome"] == "Stabilized" else f"{msg}\nreason: {s['reason']}")
    return EXIT_OK if s["outcome"] == "Stabilized" else EXIT_FAILED


def cmd_benchmark(args) -> int:
    out_dir = _out_dir(args, args.config)
    try:
        cfg = load_config(args.config, args.seed)
    except ConfigError as exc:
        return _config_failure(out_dir, exc)
    if cfg.raw.get("long_running"):
        log.warning("this config is marked long-running")
    plots = cfg.plots and not args.no_plots
    results = _run_trials(cfg, out_dir, args.threads, plots)
    rows, agg = aggregate(results)
    agg.update(
        config_digest=cfg.digest,
        seed=cfg.seed,
        success_fraction=cfg.success_fraction,
        reference=cfg.raw.get("reference"),
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    write_aggregate(rows, out_dir / "aggregate.csv")
    (out_dir / "aggregate.json").write_text(json.dumps(agg, indent=2) + "\n")
    if plots and rows:
        from . import plots as figures

        col = {k: np.array([np.nan if r[k] is None else r[k] for r in rows], dtype=float) for k in rows[0]}
        figures.discount_band(
            col["iteration"], col["gamma_mean"], col["gamma_std"],
            col["gamma_opt_mean"], col["gamma_opt_std"], out_dir / "discount_band.png",
        )
    it = agg["iterations"]
    print(
        f"{agg['stabilized']}/{agg['trials']} stabilized"
        + (f", iterations mean {it['mean']:.1f} median {it['median']}" if it else "")
        + f", {agg['total_trajectories']} rollouts"
    )
    return EXIT_OK if agg["success_rate"] >= cfg.success_fraction else EXIT_FAILED


def cmd_oracle_check(args) -> int:
    out_dir = Path(args.out_dir) if args.out_dir else Path("runs") / "oracle_check"
    try:
        cfg = load_check_config(args.config, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    results = []
    for name in cfg.suites:
        res = checks.run_suite(name, cfg.instances.get(name), cfg.seed, cfg.inject_fault)
        results.append(res)
        status = "pass" if res.passed else "FAIL"
        print(f"{status} {name}: worst {res.worst:.3g} (tolerance {res.tolerance:.3g}) {res.detail}".rstrip())
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {"seed": cfg.seed, "inject_fault": cfg.inject_fault, "suites": [r.as_dict() for r in results]}
    (out_dir / "oracle_check.json").write_text(json.dumps(report, indent=2) + "\n")
    failed = [r for r in results if not r.passed]
    for r in failed:
        print(f"violated {r.invariant}", file=sys.stderr)
    return EXIT_FAILED if failed else EXIT_OK


def cmd_gen_system(args) -> int:
    try:
        sys_ = random_system(args.n, args.m, args.a_std, args.b_std, args.seed if args.seed is not None else 0)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_system(sys_, out)
    print(f"wrote {out}: n={sys_.n} m={sys_.m} rho(A)={oracle.spectral_radius(sys_.A):.6g}")
    return EXIT_OK


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # flags are accepted before or after the subcommand; the subparser copy must
    # not overwrite values given before it, hence SUPPRESS defaults there
    def d(value):
        return argparse.SUPPRESS if suppress else value

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default=d(None), help="output directory (default runs/<config name>)")
    common.add_argument("--seed", type=int, default=d(None), help="override the root seed")
    common.add_argument("--threads", type=int, default=d(1), help="worker processes for benchmark trials")
    common.add_argument("--no-plots", action="store_true", default=d(False), help="skip figure rendering")
    common.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    p = argparse.ArgumentParser(prog="discount-pg", description=__doc__.splitlines()[0], parents=[_global_flags(False)])
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (
        ("stabilize", cmd_stabilize, "run one stabilization"),
        ("benchmark", cmd_benchmark, "run independent trials and aggregate them"),
        ("oracle-check", cmd_oracle_check, "run the oracle property suites"),
    ):
        sp = sub.add_parser(name, help=help_, parents=[common])
        sp.add_argument("config")
        sp.set_defaults(func=fn)
    g = sub.add_parser("gen-system", help="write a random (A, B) matrix file", parents=[common])
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--m", type=int, required=True)
    g.add_argument("--a-std", type=float, default=0.1)
    g.add_argument("--b-std", type=float, default=1.0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_system)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
