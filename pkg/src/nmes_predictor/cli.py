"""Command-line front end: read a scenario file, run it, write CSVs and a summary.

Exit codes: 0 ok, 2 configuration error, 3 envelope or step-count failure,
4 constraint violation or divergence.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .config import ConfigError, ScenarioConfig, config_from_dict, load_config
from .dynamics import PlantModel, ReferenceSpec, plant_to_error, reference_build
from .envelopes import (EnvelopeError, EnvelopeSet, StepCountError, ValidationReport,
                        build_envelopes, validate_envelopes)
from .predictor import predict, prediction_truth
from .simulator import (SimConfig, Trajectory, check_lyapunov_decay, fit_decay_rate,
                        initial_history, make_schedule, run_closed_loop)

EXIT_OK, EXIT_CONFIG, EXIT_ENVELOPE, EXIT_CONSTRAINT = 0, 2, 3, 4


# -- scenario assembly ---------------------------------------------------

@dataclass
class Scenario:
    cfg: ScenarioConfig
    model: PlantModel
    ref: object
    env: EnvelopeSet
    sim: SimConfig


def build_model(cfg: ScenarioConfig) -> PlantModel:
    return PlantModel(**dataclasses.asdict(cfg.plant))


def build_reference(cfg: ScenarioConfig, model: PlantModel):
    rc = cfg.reference
    spec = ReferenceSpec(rc.kind, tuple(rc.amplitudes), tuple(rc.frequencies),
                         tuple(rc.phases), rc.offset)
    return reference_build(spec, model, cfg.delay.tau, horizon=cfg.sim.t0 + cfg.sim.horizon)


def build_scenario(cfg: ScenarioConfig, q0=None, qdot0=None, seed=None) -> Scenario:
    """Construct plant, reference, envelopes and the simulation set-up.

    ``q0``, ``qdot0`` and ``seed`` override the file values (used by sweeps).
    """
    model = build_model(cfg)
    try:
        ref = build_reference(cfg, model)
    except ValueError as exc:
        raise ConfigError(f"reference: {exc}") from exc
    cc, sc = cfg.controller, cfg.sim
    env = build_envelopes(model, ref, cc.mu, cc.eps, cfg.schedule.r, R_tilde=cc.R_tilde)
    q0 = sc.q0 if q0 is None else q0
    qdot0 = sc.qdot0 if qdot0 is None else qdot0
    if q0 == "reference":
        q0 = float(ref.q_d(sc.t0))
    if qdot0 == "reference":
        qdot0 = float(ref.qdot_d(sc.t0))
    seed = cfg.schedule.seed if seed is None else seed
    schedule = make_schedule(cfg.schedule.kind, cfg.schedule.r, sc.horizon, seed=seed)
    hist = initial_history(sc.initial_input.kind, ref, sc.t0, value=sc.initial_input.value)
    sim = SimConfig(model, ref, env, schedule, sc.horizon, float(q0), float(qdot0), hist,
                    h_plant=sc.h_plant, t0=sc.t0, mode=cc.mode, cap=cc.n_cap,
                    quad_tol=cc.quad_tol, predict_ahead=cc.predict)
    return Scenario(cfg, model, ref, env, sim)


# -- run summary ---------------------------------------------------------

def decay_window_start(cfg: ScenarioConfig) -> float:
    """Start of the decay-rate fit; defaults to ``t0 + 2 tau + 2 r``."""
    if cfg.sim.decay_window_start is not None:
        return cfg.sim.decay_window_start
    return cfg.sim.t0 + 2 * cfg.delay.tau + 2 * cfg.schedule.r


def summarize(traj: Trajectory, env: EnvelopeSet, cfg: ScenarioConfig) -> dict:
    """Scalar run statistics, each computed from the arrays written to the CSVs."""
    lyap = check_lyapunov_decay(traj, env)
    metric = traj.err_metric
    n_i = np.asarray(traj.samples["N_i"], dtype=float)
    try:
        omega_hat = fit_decay_rate(traj.t, metric, decay_window_start(cfg))
    except ValueError:
        omega_hat = float("nan")
    terminal = float(metric[-1])
    converged = bool(traj.status == "ok" and terminal < cfg.sim.converge_tol)
    return {
        "status": traj.status,
        "message": traj.message,
        "t_end": float(traj.t[-1]),
        "max_abs_q": float(np.max(np.abs(traj.q))),
        "terminal_metric": terminal,
        "max_metric": float(np.nanmax(metric)),
        "converged": converged,
        "omega": float(env.omega),
        "omega_hat": omega_hat,
        "omega_hat_ge_omega": bool(omega_hat >= env.omega),
        "lyapunov_intervals": lyap.intervals,
        "lyapunov_violations": lyap.violations,
        "lyapunov_worst_excess": lyap.worst_excess,
        "samples": int(n_i.size),
        "N_min": int(n_i.min()) if n_i.size else 0,
        "N_max": int(n_i.max()) if n_i.size else 0,
        "N_mean": float(n_i.mean()) if n_i.size else float("nan"),
        "certified_samples": int(np.count_nonzero(traj.samples["certified"])),
        "mode": cfg.controller.mode,
    }


def format_summary(summary: dict) -> str:
    lines = []
    for k, v in summary.items():
        if isinstance(v, bool):
            v = str(v).lower()
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def _write(out: Path, name: str, text: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _apply_overrides(cfg: ScenarioConfig, seed=None, mode=None) -> ScenarioConfig:
    if seed is not None:
        cfg.schedule.seed = seed
        cfg.validation.seed = seed
    if mode is not None:
        cfg.controller.mode = mode
    return cfg


# -- subcommands ---------------------------------------------------------

def run_scenario(cfg: ScenarioConfig, out_dir) -> tuple[int, dict]:
    """Validate envelopes, run the closed loop and write all artifacts to ``out_dir``.

    Returns ``(exit_status, summary)``; the summary is empty when the run
    stopped before simulating.
    """
    out = Path(out_dir)
    _write(out, "config.yaml", yaml.safe_dump(cfg.to_dict(), sort_keys=False))
    try:
        sc = build_scenario(cfg)
    except EnvelopeError as exc:
        print(f"envelope construction failed: {exc}", file=sys.stderr)
        return EXIT_ENVELOPE, {}
    report = validate_envelopes(sc.env, sc.model, sc.ref, n_samples=cfg.validation.n_samples,
                                seed=cfg.validation.seed)
    _write(out, "validation.csv", report.to_csv())
    if not report.ok:
        bad = ", ".join(c.ident for c in report.checks if not c.ok)
        print(f"envelope validation failed: {bad}", file=sys.stderr)
        return EXIT_ENVELOPE, {}
    try:
        traj = run_closed_loop(sc.sim)
    except StepCountError as exc:
        print(f"step count failed: {exc}", file=sys.stderr)
        return EXIT_ENVELOPE, {}
    _write(out, "trajectory.csv", traj.trajectory_csv())
    _write(out, "samples.csv", traj.samples_csv())
    summary = summarize(traj, sc.env, cfg)
    _write(out, "summary.txt", format_summary(summary))
    sys.stdout.write(format_summary(summary))
    if traj.status != "ok":
        print(f"run stopped: {traj.status}: {traj.message}", file=sys.stderr)
        return EXIT_CONSTRAINT, summary
    return EXIT_OK, summary


def cmd_validate(cfg: ScenarioConfig, out_dir) -> tuple[int, ValidationReport | None]:
    try:
        sc = build_scenario(cfg)
    except EnvelopeError as exc:
        print(f"envelope construction failed: {exc}", file=sys.stderr)
        return EXIT_ENVELOPE, None
    report = validate_envelopes(sc.env, sc.model, sc.ref, n_samples=cfg.validation.n_samples,
                                seed=cfg.validation.seed)
    text = report.to_csv()
    _write(Path(out_dir), "validation.csv", text)
    sys.stdout.write(text)
    return (EXIT_OK if report.ok else EXIT_ENVELOPE), report


def predict_demo(cfg: ScenarioConfig) -> tuple[int, dict]:
    """One prediction from the configured initial condition and initial input."""
    try:
        sc = build_scenario(cfg)
    except EnvelopeError as exc:
        print(f"envelope construction failed: {exc}", file=sys.stderr)
        return EXIT_ENVELOPE, {}
    env, sim = sc.env, sc.sim
    x0 = plant_to_error(sim.q0, sim.qdot0, sc.ref, sim.t0)
    try:
        res = predict(env, sim.t0, x0, sim.history, mode=cfg.controller.mode,
                      cap=cfg.controller.n_cap, quad_tol=cfg.controller.quad_tol)
    except StepCountError as exc:
        print(f"step count failed: {exc}", file=sys.stderr)
        return EXIT_ENVELOPE, {}
    truth, est = prediction_truth(sc.model, sc.ref, sim.t0, x0, sim.history)
    s = res.s_input
    out = {
        "s": s,
        "N_used": res.N_used,
        "certified": res.certified,
        "x_pred": [float(v) for v in res.x_pred],
        "truth": [float(v) for v in truth],
        "truth_estimate": float(est),
        "error": float(np.linalg.norm(res.x_pred - truth)),
        "euler_bound": float(env.euler_bound(s, res.N_used)),
        "bound_hypothesis_met": bool(res.N_used >= env.euler_min_steps(s)),
        "R_s": float(env.R_fn(s)),
    }
    for k, v in out.items():
        print(f"{k} = {v!r}" if not isinstance(v, bool) else f"{k} = {str(v).lower()}")
    return EXIT_OK, out


SWEEP_COLUMNS = ("seed", "q0", "qdot0", "status", "converged", "terminal_metric", "omega",
                 "omega_hat", "lyapunov_violations", "lyapunov_worst_excess", "max_abs_q")


def _sweep_job(args):
    cfg_dict, seed, q0, qdot0, out_dir = args
    cfg = config_from_dict(cfg_dict)
    sc = build_scenario(cfg, q0=q0, qdot0=qdot0, seed=seed)
    try:
        traj = run_closed_loop(sc.sim)
    except StepCountError as exc:
        return {"seed": seed, "q0": q0, "qdot0": qdot0, "status": "step_count",
                "message": str(exc)}
    out = Path(out_dir)
    _write(out, "trajectory.csv", traj.trajectory_csv())
    _write(out, "samples.csv", traj.samples_csv())
    summ = summarize(traj, sc.env, cfg)
    _write(out, "summary.txt", format_summary(summ))
    return {"seed": seed, "q0": q0, "qdot0": qdot0, **summ}


def sweep(cfg: ScenarioConfig, out_dir) -> tuple[int, list]:
    """Run every (seed, q0, qdot0) combination; write per-run files and ``sweep_summary.csv``."""
    sw = cfg.sweep
    seeds = sw.seeds or [cfg.schedule.seed]
    q0s = sw.q0 or [cfg.sim.q0]
    qd0s = sw.qdot0 or [cfg.sim.qdot0]
    out = Path(out_dir)
    try:
        build_scenario(cfg)
    except EnvelopeError as exc:
        print(f"envelope construction failed: {exc}", file=sys.stderr)
        return EXIT_ENVELOPE, []
    jobs = []
    for seed in seeds:
        for q0 in q0s:
            for qd0 in qd0s:
                name = f"seed{seed}_q{q0}_qd{qd0}"
                jobs.append((cfg.to_dict(), seed, q0, qd0, str(out / "runs" / name)))
    if sw.workers > 1:
        with ProcessPoolExecutor(max_workers=sw.workers) as pool:
            rows = list(pool.map(_sweep_job, jobs))
    else:
        rows = [_sweep_job(j) for j in jobs]

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for row in rows:
        w.writerow([_cell(row.get(k, "")) for k in SWEEP_COLUMNS])
    _write(out, "sweep_summary.csv", buf.getvalue())

    n_conv = sum(bool(r.get("converged")) for r in rows)
    finished = [r for r in rows if "terminal_metric" in r]
    print(f"converged {n_conv}/{len(rows)}")
    if finished:
        print(f"worst terminal_metric = {max(r['terminal_metric'] for r in finished)!r}")
        print(f"min omega_hat = {min(r['omega_hat'] for r in finished)!r} "
              f"(omega = {finished[0]['omega']!r})")
        print(f"worst lyapunov excess = {max(r['lyapunov_worst_excess'] for r in finished)!r}")
    if any(r["status"] == "step_count" for r in rows):
        return EXIT_ENVELOPE, rows
    if any(r["status"] != "ok" for r in rows):
        return EXIT_CONSTRAINT, rows
    return EXIT_OK, rows


def _cell(v):
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return v


# -- entry point ---------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="scenario YAML file")
    common.add_argument("--out", default=None, help="output directory (default: output.dir)")
    common.add_argument("--seed", type=int, default=None,
                        help="override the schedule and validation seeds")
    common.add_argument("--mode", choices=("certified", "practical"), default=None,
                        help="override controller.mode")
    ap = argparse.ArgumentParser(prog="nmes-predictor",
                                 description="Sampled-data predictor control of a delayed NMES plant")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common],
                   help="validate envelopes, simulate, write trajectory/sample CSVs and a summary")
    sub.add_parser("validate-envelopes", parents=[common],
                   help="sampled check of every design inequality; writes validation.csv")
    sub.add_parser("predict-demo", parents=[common],
                   help="one prediction from the configured initial state, with its error and bound")
    sub.add_parser("sweep", parents=[common],
                   help="run the sweep grid of seeds and initial conditions")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args.seed, args.mode)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or cfg.output.dir
    try:
        if args.command == "run":
            return run_scenario(cfg, out)[0]
        if args.command == "validate-envelopes":
            return cmd_validate(cfg, out)[0]
        if args.command == "predict-demo":
            return predict_demo(cfg)[0]
        return sweep(cfg, out)[0]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
