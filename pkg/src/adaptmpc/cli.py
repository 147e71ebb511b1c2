"""Command-line front end: governor / run / compare / check.

Exit codes: 0 ok, 2 infeasible governor, 3 divergence, 4 invariant violation
(with --strict, or from `check`), 5 configuration or I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import CONFIG_KEYS, ExperimentConfig, load_config, resolve_config
from .errors import ConfigurationError, DivergenceError, InfeasibleGovernorError
from .governor import ReferencePlan, solve_reference
from .orchestrator import (
    check_invariants,
    load_simlog,
    run_closed_loop,
    run_multi_agent,
    save_simlog,
)
from . import plots

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_DIVERGENCE = 3
EXIT_INVARIANT = 4
EXIT_CONFIG = 5


def _slug(model_name: str) -> str:
    return model_name.replace(":", "")


def _gather_raw(args) -> dict:
    file_values = load_config(args.config) if args.config else {}
    overrides = {}
    if getattr(args, "model", None):
        overrides["model"] = args.model
    if getattr(args, "out", None):
        overrides["out"] = args.out
    if getattr(args, "adaptation", None):
        overrides["adaptation"] = args.adaptation
    if getattr(args, "steps", None) is not None:
        overrides["steps"] = args.steps
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return resolve_config(file_values, overrides)


def _agent_configs(raw: dict) -> list:
    names = [n.strip() for n in str(raw["model"]).split(",") if n.strip()]
    return [ExperimentConfig.from_raw(raw, model_name=name) for name in names]


def _prepare(cfg: ExperimentConfig):
    """Build model and reference plan (cached CSV if configured and present)."""
    model = cfg.build_model()
    ref_path = cfg.reference
    if ref_path and os.path.exists(ref_path):
        plan = ReferencePlan.from_csv(ref_path)
    else:
        plan = solve_reference(
            model,
            cfg.x0,
            cfg.horizon_governor,
            cfg.Q,
            cfg.R,
            cfg.tightening(),
            options=cfg.governor_options(),
        )
    plan.header.update(cfg.echo())
    return model, plan


def cmd_governor(args) -> int:
    raw = _gather_raw(args)
    for cfg in _agent_configs(raw):
        try:
            model, plan = _prepare(cfg)
        except (InfeasibleGovernorError, ConfigurationError) as exc:
            print(f"{cfg.model_name}: infeasible governor: {exc}", file=sys.stderr)
            return EXIT_INFEASIBLE
        os.makedirs(cfg.out, exist_ok=True)
        path = os.path.join(cfg.out, f"{_slug(cfg.model_name)}_reference.csv")
        plan.to_csv(path)
        terminal_err = float(np.linalg.norm(plan.states[-1] - plan.x_e))
        print(
            f"{cfg.model_name}: reference with N={plan.N} written to {path}; "
            f"terminal error {terminal_err:.3e}; all tightened constraints satisfied"
        )
    return EXIT_OK


def _run_agent(cfg: ExperimentConfig, adaptation: bool | None = None, suffix=""):
    model, plan, tracking, loop, header, slug = _prepare_agent(cfg, adaptation, suffix)
    log = run_closed_loop(model, plan, tracking, loop, header)
    return model, plan, tracking, loop, log, slug


def _check_log(cfg, model, plan, tracking, loop, log):
    nominal = (not loop.adaptation) and model.W_norm_F == 0.0
    icfg = cfg.invariant_config(
        plan=plan, tracking=tracking, adaptation=loop.adaptation, nominal_descent=nominal
    )
    return check_invariants(log, model, icfg)


def _prepare_agent(cfg: ExperimentConfig, adaptation: bool | None = None, suffix=""):
    """Governor + reference CSV for one agent; returns the run_closed_loop args."""
    model, plan = _prepare(cfg)
    tracking = cfg.tracking_config(model)
    loop = cfg.loop_config(adaptation=adaptation)
    header = cfg.echo()
    header["adaptation"] = "on" if loop.adaptation else "off"
    os.makedirs(cfg.out, exist_ok=True)
    slug = _slug(cfg.model_name) + suffix
    ref_path = os.path.join(cfg.out, f"{slug}_reference.csv")
    plan.to_csv(ref_path)
    header["reference_csv"] = os.path.basename(ref_path)
    return model, plan, tracking, loop, header, slug


def cmd_run(args) -> int:
    raw = _gather_raw(args)
    worst = EXIT_OK
    prepared = []
    for cfg in _agent_configs(raw):
        try:
            prepared.append((cfg,) + _prepare_agent(cfg))
        except InfeasibleGovernorError as exc:
            print(f"{cfg.model_name}: {exc}", file=sys.stderr)
            return EXIT_INFEASIBLE
    results = run_multi_agent(
        [(model, plan, tracking, loop, header) for _, model, plan, tracking, loop, header, _ in prepared],
        parallel=args.parallel_agents,
    )
    for (cfg, model, plan, tracking, loop, _, slug), result in zip(prepared, results):
        if result.error is not None:
            exc = result.error
            if isinstance(exc, DivergenceError):
                print(f"{cfg.model_name}: divergence at step {exc.step}: {exc}", file=sys.stderr)
                return EXIT_DIVERGENCE
            raise exc
        log = result.log
        log_path = os.path.join(cfg.out, f"{slug}_run.csv")
        save_simlog(log, log_path)
        if log.steps > 0:
            plots.plot_run(log, plan, cfg.out, prefix=f"{slug}_run")
        report = _check_log(cfg, model, plan, tracking, loop, log)
        print(f"== {cfg.model_name} (adaptation {'on' if loop.adaptation else 'off'}) ==")
        print(report.to_text())
        print(f"log written to {log_path}")
        if not report.all_passed and args.strict:
            worst = EXIT_INVARIANT
    return worst


def _metrics(log, plan):
    T = log.steps
    x_ref = np.array([plan.state(t) for t in range(T + 1)])
    err = np.linalg.norm(log.states - x_ref, axis=1)
    quarter = max(1, T // 4)
    violations = int(np.sum(log.control_violation)) + int(np.sum(log.state_violation))
    return {
        "final_error": float(err[-1]),
        "rms_last_quarter": float(np.sqrt(np.mean(err[-quarter:] ** 2))),
        "peak_error": float(np.max(err)),
        "constraint_violations": violations,
    }


def cmd_compare(args) -> int:
    raw = _gather_raw(args)
    worst = EXIT_OK
    for cfg_on in _agent_configs(raw):
        cfg_off = ExperimentConfig.from_raw(dict(raw, adaptation="off"), cfg_on.model_name)
        cfg_on = ExperimentConfig.from_raw(dict(raw, adaptation="on"), cfg_on.model_name)
        slug = _slug(cfg_on.model_name)
        try:
            _, plan_on, _, _, log_on, _ = _run_agent(cfg_on, adaptation=True, suffix="_on")
            _, plan_off, _, _, log_off, _ = _run_agent(cfg_off, adaptation=False, suffix="_off")
        except InfeasibleGovernorError as exc:
            print(f"{cfg_on.model_name}: {exc}", file=sys.stderr)
            return EXIT_INFEASIBLE
        except DivergenceError as exc:
            print(f"{cfg_on.model_name}: divergence at step {exc.step}: {exc}", file=sys.stderr)
            return EXIT_DIVERGENCE
        save_simlog(log_on, os.path.join(cfg_on.out, f"{slug}_on_run.csv"))
        save_simlog(log_off, os.path.join(cfg_on.out, f"{slug}_off_run.csv"))
        if log_on.steps > 0:
            plots.plot_comparison(log_on, log_off, plan_on, cfg_on.out, prefix=f"{slug}_compare")
        m_on = _metrics(log_on, plan_on)
        m_off = _metrics(log_off, plan_off)
        print(f"== {cfg_on.model_name} comparison ==")
        print(f"{'metric':<24s} {'adaptive':>14s} {'mpc only':>14s}")
        for key in m_on:
            print(f"{key:<24s} {m_on[key]:>14.6e} {m_off[key]:>14.6e}")
        path = os.path.join(cfg_on.out, f"{slug}_metrics.csv")
        with open(path, "w") as fh:
            fh.write("metric,adaptive,mpc_only\n")
            for key in m_on:
                fh.write(f"{key},{m_on[key]:.17g},{m_off[key]:.17g}\n")
        print(f"metrics written to {path}")
    return worst


def cmd_check(args) -> int:
    try:
        log = load_simlog(args.logfile)
    except (OSError, ConfigurationError) as exc:
        print(f"cannot read log: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        raw_keys = {k: v for k, v in log.header.items() if k in CONFIG_KEYS}
        raw = resolve_config(raw_keys, {})
        cfg = ExperimentConfig.from_raw(raw, model_name=log.header.get("model", raw["model"]))
        model = cfg.build_model()
        plan = tracking = None
        ref_name = log.header.get("reference_csv")
        if ref_name:
            ref_path = os.path.join(os.path.dirname(os.path.abspath(args.logfile)), ref_name)
            if os.path.exists(ref_path):
                plan = ReferencePlan.from_csv(ref_path)
                tracking = cfg.tracking_config(model)
        adaptation = log.header.get("adaptation", "on") == "on"
        nominal = (not adaptation) and model.W_norm_F == 0.0
        icfg = cfg.invariant_config(
            plan=plan,
            tracking=tracking,
            adaptation=adaptation,
            nominal_descent=nominal and plan is not None,
        )
        report = check_invariants(log, model, icfg)
    except ConfigurationError as exc:
        print(f"bad log/config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(report.to_text())
    return EXIT_OK if report.all_passed else EXIT_INVARIANT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adaptmpc",
        description="Tube-based MPC with distributed discrete-time adaptation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_run_flags=True):
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--model", help="cstr | wingrock:1 | wingrock:2 (comma list for agents)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="seed echoed into output headers")
        if with_run_flags:
            p.add_argument("--adaptation", choices=["on", "off"])
            p.add_argument("--steps", type=int)
            p.add_argument("--strict", action="store_true", help="exit 4 on invariant failure")
            p.add_argument("--parallel-agents", action="store_true")

    p = sub.add_parser("governor", help="solve the offline reference problem")
    common(p, with_run_flags=False)
    p.set_defaults(func=cmd_governor)

    p = sub.add_parser("run", help="closed-loop run with CSV log and figures")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="adaptation on vs off under identical settings")
    common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("check", help="re-run the invariant checks on a saved log")
    p.add_argument("logfile")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
